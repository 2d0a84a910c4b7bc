#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "gflow/fields.hpp"
#include "gflow/io.hpp"

using namespace gflow;
using Catch::Approx;
using std::numbers::pi;

namespace {

Grid unit_line(int cells, int steps = 4) { return Grid::line(cells, 0.0, 1.0, steps, 1.0); }

double max_abs(const SpaceTimeField& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}

SpaceTimeField random_field(const Grid& g, int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  SpaceTimeField f(g, m, BoundaryKind::free);
  for (double& v : f.values()) v = U(rng);
  return f;
}

}  // namespace

TEST_CASE("grid validation", "[fields]") {
  CHECK_THROWS_AS(Grid::line(0, 0.0, 1.0, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Grid::line(4, 1.0, 1.0, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Grid::line(4, 0.0, 1.0, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Grid::line(4, 0.0, 1.0, 2, -1.0), std::invalid_argument);
  const Grid g = Grid::square(4, 8, {0, 0}, {1, 2}, 10, 0.5);
  CHECK(g.space_size() == 5u * 9u);
  CHECK(g.h(1) == Approx(0.25));
  CHECK(g.dt() == Approx(0.05));
  CHECK(g.t(10) == 0.5);
  CHECK(g.tau(10) == 1.0);
}

TEST_CASE("gradient of a constant is exactly zero", "[fields]") {
  for (auto bc : {BoundaryKind::free, BoundaryKind::periodic}) {
    const Grid g = Grid::square(7, 5, {-1, 0}, {1, 3}, 2, 1.0);
    auto u = SpaceTimeField::sample(g, 2, bc, [](const Point&, double) { return 0.3141592653589793; });
    const auto du = gradient(u);
    CHECK(du.components() == 4);
    for (double v : du.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("gradient of a linear field", "[fields]") {
  const Grid g = unit_line(16);
  auto u = SpaceTimeField::sample(g, 1, BoundaryKind::free, [](const Point& x, double) { return x[0]; });
  const auto du = gradient(u);
  for (int k = 0; k <= g.n_time_steps; ++k)
    for (std::size_t n = 0; n < g.space_size(); ++n) CHECK(std::abs(du(k, n, 0) - 1.0) < 1e-13);
}

TEST_CASE("gradient of sin(pi x) is second-order accurate", "[fields]") {
  const Grid g = unit_line(1024, 1);
  auto u = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                  [](const Point& x, double) { return std::sin(pi * x[0]); });
  const auto du = gradient(u);
  double err = 0.0;
  for (std::size_t n = 0; n < g.space_size(); ++n)
    err = std::max(err, std::abs(du(0, n, 0) - pi * std::cos(pi * g.point(n)[0])));
  const double h = g.h(0);
  CHECK(err <= 5.0 * (pi * h) * (pi * h));
}

TEST_CASE("gradient rejects coarse grids", "[fields]") {
  SpaceTimeField u(unit_line(2), 1, BoundaryKind::free);
  CHECK_THROWS_AS(gradient(u), std::invalid_argument);
}

TEST_CASE("lp_norm examples", "[fields]") {
  const Grid g = unit_line(1024, 8);
  SpaceTimeField zero(g, 1, BoundaryKind::free);
  CHECK(lp_norm(zero, 2.0) == 0.0);
  auto one = SpaceTimeField::sample(g, 1, BoundaryKind::free, [](const Point&, double) { return 1.0; });
  CHECK(std::abs(lp_norm(one, 2.0) - 1.0) <= 1e-12);
  auto s = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                  [](const Point& x, double) { return std::sin(pi * x[0]); });
  // int_0^1 sin^2(pi x) dx = 1/2
  CHECK(std::abs(lp_norm(s, 2.0) - std::sqrt(0.5)) <= 1e-6);
  CHECK_THROWS_AS(lp_norm(s, 0.5), std::invalid_argument);
}

TEST_CASE("lp_norm is homogeneous and satisfies the triangle inequality", "[fields][property]") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> P(1.0, 6.0), C(-5.0, 5.0);
  const Grid g = Grid::square(9, 6, {0, 0}, {2, 1}, 5, 0.7);
  for (int trial = 0; trial < 50; ++trial) {
    const double p = P(rng), c = C(rng);
    const auto a = random_field(g, 2, rng);
    const auto b = random_field(g, 2, rng);
    const double na = lp_norm(a, p);
    CHECK(std::abs(lp_norm(c * a, p) - std::abs(c) * na) <= 1e-12 * std::abs(c) * na);
    CHECK(lp_norm(a + b, p) <= na + lp_norm(b, p) + 1e-10);
  }
}

TEST_CASE("sw_distance of identical fields is zero", "[fields]") {
  std::mt19937_64 rng(3);
  const Grid g = unit_line(32, 6);
  const auto u = random_field(g, 1, rng);
  const auto bank = sine_test_bank(g, 1);
  const SwReport r = sw_distance(u, u, bank);
  CHECK(r.strong_lp_distance == 0.0);
  CHECK(r.weak_gradient_pairings.size() == 8u);
  for (const auto& [id, e] : r.weak_gradient_pairings) CHECK(e == 0.0);
}

TEST_CASE("sw_distance of an oscillating sequence member", "[fields]") {
  const int k = 64;
  const Grid g = unit_line(1024, 2);
  auto member = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                       [&](const Point& x, double) { return std::sin(k * pi * x[0]) / k; });
  SpaceTimeField limit(g, 1, BoundaryKind::free);
  // smooth test field psi(x) = x (1 - x) exp(x)
  auto psi = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                    [](const Point& x, double) { return x[0] * (1 - x[0]) * std::exp(x[0]); });
  std::vector<SpaceTimeField> bank{psi};
  const SwReport r = sw_distance(member, limit, bank);
  CHECK(r.strong_lp_distance <= (1.0 / k) * std::sqrt(0.5) * (1.0 + 1e-6));
  CHECK(r.weak_gradient_pairings[0].second <= 10.0 / k);
  // pi cos(64 pi x) has L2 norm pi sqrt(1/2): the gradient stays bounded
  CHECK(r.gradient_lp_bound == Approx(pi * std::sqrt(0.5)).epsilon(1e-2));
}

TEST_CASE("gradient bound of a unit-slope field", "[fields]") {
  const Grid g = unit_line(64, 3);
  auto u = SpaceTimeField::sample(g, 1, BoundaryKind::free, [](const Point& x, double) { return x[0]; });
  SpaceTimeField zero(g, 1, BoundaryKind::free);
  const auto r = sw_distance(u, zero, {});
  CHECK(std::abs(r.gradient_lp_bound - 1.0) <= 1e-10);
}

TEST_CASE("sw_distance rejects mismatched grids", "[fields]") {
  SpaceTimeField a(unit_line(8), 1, BoundaryKind::free), b(unit_line(16), 1, BoundaryKind::free);
  CHECK_THROWS_AS(sw_distance(a, b, {}), std::invalid_argument);
}

TEST_CASE("dirichlet fields keep zero traces", "[fields]") {
  const Grid g = Grid::square(6, 6, {0, 0}, {1, 1}, 3, 1.0);
  auto f = [](const Point& x, double t) { return 1.0 + x[0] * x[1] + t; };
  auto a = SpaceTimeField::sample(g, 1, BoundaryKind::dirichlet_zero, f);
  auto b = SpaceTimeField::sample(g, 1, BoundaryKind::dirichlet_zero, f);
  const auto c = 2.5 * (a + b) - a;
  CHECK(c.boundary() == BoundaryKind::dirichlet_zero);
  for (int k = 0; k <= g.n_time_steps; ++k)
    for (std::size_t n = 0; n < g.space_size(); ++n)
      if (g.on_boundary(n)) CHECK(c(k, n, 0) == 0.0);
  CHECK(max_abs(c) > 0.0);
}

TEST_CASE("time pairing telescopes for time-constant fields", "[fields]") {
  const Grid g = unit_line(20, 7);
  auto a = SpaceTimeField::sample(g, 1, BoundaryKind::free, [](const Point& x, double) { return std::cos(x[0]); });
  auto eta = SpaceTimeField::sample(g, 1, BoundaryKind::free, [&](const Point& x, double t) {
    return x[0] * x[0] * (1.0 - t) * (2.0 + t);
  });
  // eta(., T) = 0 with T = 1
  const double lhs = time_derivative_pairing(a, eta);
  const double rhs = -pairing(a.level_field(0), eta.level_field(0));
  CHECK(lhs == Approx(rhs).epsilon(1e-13));
}

TEST_CASE("binary snapshot layout", "[fields][io]") {
  const Grid g = Grid::square(3, 2, {0, 0}, {1, 1}, 1, 1.0);
  auto u = SpaceTimeField::sample(g, 2, BoundaryKind::free, [](const Point& x, double t, std::span<double> o) {
    o[0] = x[0] + 10 * x[1] + 100 * t;
    o[1] = -o[0];
  });
  std::stringstream ss;
  write_snapshot(ss, u);
  const std::string bytes = ss.str();
  // header: dim, m, cells_x, cells_y, steps (5 x int64) + 2 levels x 12 nodes x 2 comps
  REQUIRE(bytes.size() == 5 * 8 + 2 * 12 * 2 * 8);
  CHECK(static_cast<unsigned char>(bytes[0]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[16]) == 3);
  CHECK(static_cast<unsigned char>(bytes[24]) == 2);
  CHECK(static_cast<unsigned char>(bytes[32]) == 1);
  const SpaceTimeField back = read_snapshot(ss, &g);
  CHECK(back.values() == u.values());
}

TEST_CASE("csv columns", "[fields][io]") {
  const Grid g = unit_line(3, 1);
  SpaceTimeField u(g, 1, BoundaryKind::free);
  std::ostringstream os;
  write_field_csv(os, u);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "t,x,component,value");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 8);
}
