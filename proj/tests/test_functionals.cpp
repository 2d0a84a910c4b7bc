#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "gflow/functionals.hpp"
#include "oracles.hpp"

using namespace gflow;
using Catch::Approx;
using std::numbers::pi;
using std::numbers::sqrt2;

namespace {

FunctionalSpec dirichlet_density() {
  return make_p_laplace([](const Point&, double) { return 1.0; }, 2.0, 1, Domain{});
}

MatrixCoefficient scalar_matrix(std::function<double(const Point&)> a) {
  return [a](const Point& x, double) { return Mat2{a(x), 0.0, 0.0, a(x)}; };
}

SpaceTimeField linear_field(int cells = 64) {
  return SpaceTimeField::sample(Grid::line(cells, 0.0, 1.0, 4, 1.0), 1, BoundaryKind::free,
                                [](const Point& x, double) { return x[0]; });
}

}  // namespace

TEST_CASE("surface tension oracle", "[functionals][oracle]") {
  const double sigma = oracle::integrate([](double s) { return (1.0 - s * s) / sqrt2; }, -1.0, 1.0);
  CHECK(sigma == Approx(surface_tension).epsilon(1e-12));
  CHECK(surface_tension == Approx(0.942809).epsilon(1e-6));
}

TEST_CASE("Ginzburg-Landau density values", "[functionals]") {
  const auto gl = make_ginzburg_landau(1.0);
  const std::array<double, 1> zero{0.0};
  CHECK(gl.density({0, 0}, 0.0, zero, zero) == 0.25);
  auto one = SpaceTimeField::sample(Grid::line(16, -1.0, 1.0, 2, 1.0), 1, BoundaryKind::free,
                                    [](const Point&, double) { return 1.0; });
  CHECK(evaluate_functional(one, make_ginzburg_landau(0.3)) == 0.0);
  CHECK_THROWS_AS(make_ginzburg_landau(0.0), std::invalid_argument);
  CHECK_THROWS_AS(make_ginzburg_landau(-1.0), std::invalid_argument);
}

TEST_CASE("Ginzburg-Landau energy of a tanh layer", "[functionals]") {
  const double eps = 0.01;
  const Grid g = Grid::line(4096, -1.0, 1.0, 1, 1.0);
  auto v = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                  [&](const Point& x, double) { return std::tanh(x[0] / (sqrt2 * eps)); });
  const double F = evaluate_functional(v, make_ginzburg_landau(eps));
  CHECK(F == Approx(eps * 2.0 * sqrt2 / 3.0).epsilon(0.01));
}

TEST_CASE("Dirichlet and p-Laplace energies of v = x", "[functionals]") {
  const auto v = linear_field();
  CHECK(std::abs(evaluate_functional(v, dirichlet_density()) - 0.5) <= 1e-10);
  const Domain d{};
  CHECK(evaluate_functional(v, make_p_laplace([](const Point&, double) { return 1.0; }, 4.0, 1, d)) ==
        Approx(0.25).epsilon(1e-12));
  CHECK(evaluate_functional(v, make_p_laplace([](const Point&, double) { return 3.0; }, 3.0, 1, d)) ==
        Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(make_p_laplace([](const Point&, double) { return 1.0; }, 1.0, 1, d), std::invalid_argument);
  CHECK_THROWS_AS(make_p_laplace([](const Point& x, double) { return x[0] - 0.5; }, 2.0, 1, d),
                  std::invalid_argument);
}

TEST_CASE("filtration energies", "[functionals]") {
  const auto v = linear_field(256);
  const Domain d{};
  auto id = make_filtration(scalar_matrix([](const Point&) { return 1.0; }), {}, 1, d);
  CHECK(evaluate_functional(v, id) == Approx(0.5).epsilon(1e-12));
  auto two = make_filtration(scalar_matrix([](const Point&) { return 2.0; }), {}, 1, d);
  CHECK(evaluate_functional(v, two) == Approx(1.0).epsilon(1e-12));
  // a = 2 + sin(2 pi x / eps) averages to 2 over whole periods
  const double eps = 1.0 / 8.0;
  auto osc = make_filtration(scalar_matrix([eps](const Point& x) { return 2.0 + std::sin(2 * pi * x[0] / eps); }),
                             {}, 1, d);
  const double mean = oracle::integrate([eps](double x) { return 0.5 * (2.0 + std::sin(2 * pi * x / eps)); }, 0, 1);
  CHECK(evaluate_functional(v, osc) == Approx(mean).epsilon(1e-10));
  CHECK(mean == Approx(1.0).epsilon(1e-10));
}

TEST_CASE("filtration rejects indefinite coefficients with a location", "[functionals]") {
  Domain d;
  d.dim = 2;
  auto bad = [](const Point& x, double) { return Mat2{1.0, 0.0, 0.0, x[0] > 0.7 ? -1.0 : 1.0}; };
  try {
    make_filtration(bad, {}, 1, d);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("x=(") != std::string::npos);
  }
  auto asym = [](const Point&, double) { return Mat2{1.0, 0.5, 0.0, 1.0}; };
  CHECK_THROWS_AS(make_filtration(asym, {}, 1, d), std::invalid_argument);
}

TEST_CASE("non-finite densities report the sample point", "[functionals]") {
  FunctionalSpec s = dirichlet_density();
  s.density = [](const Point& x, double, std::span<const double>, std::span<const double>) {
    return x[0] > 0.5 ? std::nan("") : 0.0;
  };
  try {
    evaluate_functional(linear_field(8), s);
    FAIL("expected NonFiniteDensity");
  } catch (const NonFiniteDensity& e) {
    CHECK(e.where()[0] > 0.5);
  }
}

TEST_CASE("functional is additive over time windows", "[functionals][property]") {
  const Grid g = Grid::line(64, -1.0, 1.0, 12, 2.0);
  auto v = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                  [](const Point& x, double t) { return std::tanh(3 * x[0] - t) * (1 + t); });
  const auto spec = make_ginzburg_landau(0.2);
  const double whole = evaluate_functional(v, spec);
  for (int split : {1, 5, 11}) {
    const double parts = evaluate_functional(v, spec, std::pair{0, split}) +
                         evaluate_functional(v, spec, std::pair{split, 12});
    CHECK(parts == Approx(whole).epsilon(1e-10));
  }
}

TEST_CASE("Ginzburg-Landau functional is even in u", "[functionals][property]") {
  const Grid g = Grid::square(12, 9, {-1, -1}, {1, 1}, 3, 1.0);
  auto v = SpaceTimeField::sample(g, 1, BoundaryKind::free,
                                  [](const Point& x, double t) { return std::sin(2 * x[0] + x[1] * t) + 0.3; });
  const auto spec = make_ginzburg_landau(0.1, 2, Domain::of(g));
  CHECK(evaluate_functional(-1.0 * v, spec) == evaluate_functional(v, spec));
}

TEST_CASE("filtration energy without source is nonnegative", "[functionals][property]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-3, 3);
  Domain d;
  d.dim = 2;
  auto spec = make_filtration([](const Point& x, double) { return Mat2{2.0, 0.4 * x[0], 0.4 * x[0], 1.0}; }, {}, 1, d);
  const Grid g = Grid::square(8, 8, {0, 0}, {1, 1}, 2, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    SpaceTimeField v(g, 1, BoundaryKind::free);
    for (double& x : v.values()) x = U(rng);
    CHECK(evaluate_functional(v, spec) >= 0.0);
  }
}

TEST_CASE("growth validator examples", "[functionals][validators]") {
  FunctionalSpec zero = dirichlet_density();
  zero.density = [](const Point&, double, std::span<const double>, std::span<const double>) { return 0.0; };
  auto r0 = check_growth(zero, 100);
  CHECK(r0.pass);
  CHECK(r0.worst_ratio == 0.0);

  FunctionalSpec neg = zero;
  neg.density = [](const Point&, double, std::span<const double>, std::span<const double>) { return -1.0; };
  CHECK_FALSE(check_growth(neg, 100).pass);

  for (double eps : {1.0, 0.5, 0.1, 0.01}) {
    auto gl = make_ginzburg_landau(eps);
    CHECK(gl.growth_C == 2.0);
    auto r = check_growth(gl, 10000);
    CHECK(r.pass);
    CHECK(r.worst_ratio <= 2.0);
  }
  CHECK_THROWS_AS(check_growth(zero, 0), std::invalid_argument);
}

TEST_CASE("growth bound of the double well holds on a dense oracle sweep", "[functionals][oracle]") {
  // 1/4 (u^2-1)^2 + eps^2/2 |l|^2 <= 2 (1 + u^4 + l^4) for eps <= 1
  double worst = 0.0;
  for (double u = -50; u <= 50; u += 0.05)
    for (double l = 0; l <= 50; l += 0.25) {
      const double f = 0.25 * (u * u - 1) * (u * u - 1) + 0.5 * l * l;
      worst = std::max(worst, f / (1 + std::pow(u, 4) + std::pow(l, 4)));
    }
  CHECK(worst <= 2.0);
}

TEST_CASE("Hoelder validator examples", "[functionals][validators]") {
  const auto dir = dirichlet_density();
  const std::array<double, 1> u{0.7}, l{-2.0};
  CHECK(hoelder_ratio(dir, {0.5, 0}, 0.0, u, l, u, l) == 0.0);

  auto r = check_hoelder(dir, 10000);
  CHECK(r.pass);
  CHECK(r.worst_ratio <= 1.0);

  // |lambda|^{2p} grows faster than the declared exponent allows
  FunctionalSpec fast = dir;
  fast.density = [](const Point&, double, std::span<const double>, std::span<const double> lam) {
    return std::pow(lam[0] * lam[0], 2.0);
  };
  CHECK_FALSE(check_hoelder(fast, 10000).pass);
  CHECK_FALSE(check_growth(fast, 10000).pass);
}

TEST_CASE("built-in families pass both validators at declared constants", "[functionals][validators]") {
  Domain d1;
  Domain d2;
  d2.dim = 2;
  std::vector<FunctionalSpec> specs{
      make_ginzburg_landau(1.0), make_ginzburg_landau(0.05), make_ginzburg_landau(0.02, 2, d2),
      make_filtration(scalar_matrix([](const Point& x) { return 2.0 + std::sin(2 * pi * x[0] * 8); }), {}, 1, d1),
      make_filtration([](const Point&, double t) { return Mat2{2.0, 0.5, 0.5, 1.0 + t}; }, {}, 2, d2),
      make_p_laplace([](const Point& x, double) { return 1.5 + std::cos(x[0]); }, 4.0, 1, d1),
      make_p_laplace([](const Point&, double) { return 1.0; }, 1.5, 1, d1),
      make_p_laplace([](const Point&, double) { return 2.0; }, 3.0, 2, d2),
  };
  for (const auto& s : specs) {
    INFO(s.label);
    CHECK(check_growth(s, 10000).pass);
    CHECK(check_hoelder(s, 10000).pass);
  }
}

TEST_CASE("limit perimeter values", "[functionals]") {
  CHECK(limit_perimeter_value(0) == 0.0);
  CHECK(limit_perimeter_value(1) == Approx(0.942809).epsilon(1e-6));
  CHECK(limit_perimeter_value(2) == Approx(4.0 * sqrt2 / 3.0).epsilon(1e-15));
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      CHECK(limit_perimeter_value(a + b) == Approx(limit_perimeter_value(a) + limit_perimeter_value(b)));
  CHECK(limit_perimeter_value(1, Normalization::raw, 0.1) == Approx(0.0942809).epsilon(1e-5));
  CHECK_THROWS_AS(limit_perimeter_value(-1), std::invalid_argument);
}

TEST_CASE("two separated layers carry twice the surface tension", "[functionals]") {
  const double eps = 0.02;
  const Grid g = Grid::line(8192, -1.0, 1.0, 1, 1.0);
  auto v = SpaceTimeField::sample(g, 1, BoundaryKind::free, [&](const Point& x, double) {
    // phases -1 | +1 | -1 with layers at -0.4 and 0.4
    const double d = 0.4 - std::abs(x[0]);
    return std::tanh(d / (sqrt2 * eps));
  });
  const double normalized = evaluate_functional(v, make_ginzburg_landau(eps)) / eps;
  CHECK(normalized == Approx(limit_perimeter_value(2)).epsilon(1e-3));
}

TEST_CASE("homogenized coefficient in 1D", "[functionals]") {
  CHECK(homogenized_coefficient_1d([](double) { return 2.5; }) == Approx(2.5).epsilon(1e-14));
  const double pw = homogenized_coefficient_1d([](double y) { return y < 0.5 ? 1.0 : 3.0; });
  CHECK(pw == Approx(1.0 / (0.5 * (1.0 + 1.0 / 3.0))).epsilon(1e-14));
  CHECK(pw == Approx(1.5).epsilon(1e-14));
  const double inv = oracle::integrate([](double y) { return 1.0 / (2.0 + std::sin(2 * pi * y)); }, 0.0, 1.0);
  CHECK(inv == Approx(1.0 / std::sqrt(3.0)).epsilon(1e-10));
  const double s = homogenized_coefficient_1d([](double y) { return 2.0 + std::sin(2 * pi * y); });
  CHECK(std::abs(s - std::sqrt(3.0)) <= 1e-6);
  CHECK_THROWS_AS(homogenized_coefficient_1d([](double y) { return y - 0.5; }), std::invalid_argument);
}

TEST_CASE("family members share exponent and growth constant", "[functionals]") {
  FunctionalFamily fam;
  fam.kind = FamilyKind::ginzburg_landau;
  fam.member_at = [](double e) { return make_ginzburg_landau(e); };
  const std::array<double, 4> eps{0.1, 0.05, 0.025, 0.0125};
  CHECK(fam.uniform_growth(eps));
}
