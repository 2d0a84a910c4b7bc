#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "gflow/flows.hpp"

using namespace gflow;
using std::numbers::pi;

namespace {

double max_abs_diff(const SpaceTimeField& a, const SpaceTimeField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

FlowProblem heat_problem(int cells, int levels, int substeps, double T) {
  FlowProblem prob;
  prob.grid = Grid::line(cells, 0.0, 1.0, levels, T);
  prob.substeps = substeps;
  prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::dirichlet_zero,
                                      [](const Point& x) { return std::sin(pi * x[0]); });
  return prob;
}

FlowProblem kink_problem(int cells, double eps, int levels, int substeps, double T) {
  FlowProblem prob;
  prob.grid = Grid::line(cells, -1.0, 1.0, levels, T);
  prob.substeps = substeps;
  prob.boundary = FlowBoundary::clamped;
  prob.epsilon = eps;
  prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::free,
                                      [&](const Point& x) { return std::tanh(x[0] / (std::numbers::sqrt2 * eps)); });
  return prob;
}

// Smooth bump in space times (1 - t/T)(1 + t/T), clear of the boundary.
TestFunction bump_eta(const Grid& g, double centre, double radius, double amp, int id = 0) {
  TestFunction t;
  t.id = id;
  t.family = "bump";
  t.amplitude = amp;
  t.support = {{centre - radius, 0.0}, {centre + radius, 0.0}};
  t.eta = SpaceTimeField::sample(g, 1, BoundaryKind::free, [](const Point&, double) { return 0.0; });
  for (int k = 0; k <= g.n_time_steps; ++k) {
    const double tau = g.tau(k);
    const double time = k == g.n_time_steps ? 0.0 : (1.0 - tau) * (1.0 + tau);
    for (std::size_t n = 0; n < g.space_size(); ++n) {
      const double r = (g.point(n)[0] - centre) / radius;
      if (std::abs(r) < 1.0) t.eta(k, n, 0) = amp * time * std::exp(1.0 - 1.0 / (1.0 - r * r));
    }
  }
  return t;
}

const ScalarCoefficient unit = [](const Point&, double) { return 1.0; };

}  // namespace

TEST_CASE("phi maps", "[flows][phi]") {
  const PhiMap id = PhiMap::identity();
  for (double s : {-3.5, 0.0, 1e-300, 7.25}) {
    CHECK(id.apply(0, s) == s);
    CHECK(id.inverse(0, s) == s);
  }
  CHECK(id.check_monotone());

  const PhiMap pw = PhiMap::power(2.5);
  for (double s : {-4.0, -0.3, 0.0, 0.7, 9.0}) CHECK(std::abs(pw.inverse(0, pw.apply(0, s)) - s) <= 1e-12 * std::max(1.0, std::abs(s)));
  CHECK(pw.check_monotone());
  CHECK_THROWS_AS(PhiMap::power(0.0), std::invalid_argument);

  const PhiMap user = PhiMap::user({[](double s) { return s + s * s * s; }});
  for (double v : {-30.0, -1.0, 0.0, 0.5, 2.0, 1000.0}) {
    const double s = user.inverse(0, v);
    CHECK(std::abs(user.apply(0, s) - v) <= 1e-9 * std::max(1.0, std::abs(v)));
  }
  CHECK(user.check_monotone());
  CHECK_FALSE(PhiMap::user({[](double s) { return std::sin(s); }}).check_monotone());
}

TEST_CASE("heat benchmark matches separation of variables", "[flows][filtration]") {
  // u = exp(-pi^2 t) sin(pi x); 1024 cells, dt = 1e-4, T = 0.1
  const FlowProblem prob = heat_problem(1024, 10, 100, 0.1);
  const FlowSolution sol = solve_filtration(prob);
  const Grid& g = sol.field.grid();
  double err = 0.0;
  for (int k = 0; k <= g.n_time_steps; ++k)
    for (std::size_t n = 0; n < g.space_size(); ++n)
      err = std::max(err, std::abs(sol.field(k, n, 0) - std::exp(-pi * pi * g.t(k)) * std::sin(pi * g.point(n)[0])));
  CHECK(err <= 1e-3);
  CHECK(sol.energy_trace.size() == g.time_levels());
  for (std::size_t k = 1; k < sol.energy_trace.size(); ++k) CHECK(sol.energy_trace[k] <= sol.energy_trace[k - 1] + 1e-10);
  CHECK(sol.metadata.at("solver_steps") == "1000");
}

TEST_CASE("heat benchmark converges at first order in time", "[flows][filtration][refinement]") {
  auto error_at = [](int steps) {
    const FlowProblem prob = heat_problem(512, 1, steps, 0.1);
    const FlowSolution sol = solve_filtration(prob);
    const Grid& g = sol.field.grid();
    double err = 0.0;
    for (std::size_t n = 0; n < g.space_size(); ++n)
      err = std::max(err, std::abs(sol.field(1, n, 0) - std::exp(-pi * pi * 0.1) * std::sin(pi * g.point(n)[0])));
    return err;
  };
  const double e1 = error_at(25), e2 = error_at(50), e3 = error_at(100);
  CHECK(e1 / e2 == Catch::Approx(2.0).margin(0.25));
  CHECK(e2 / e3 == Catch::Approx(2.0).margin(0.25));
}

TEST_CASE("zero data stays zero", "[flows]") {
  FlowProblem prob = heat_problem(64, 4, 5, 0.1);
  prob.initial = SpatialField(prob.grid, 1, BoundaryKind::dirichlet_zero);
  const FlowSolution filt = solve_filtration(prob);
  for (double v : filt.field.values()) CHECK(v == 0.0);
  prob.p = 4.0;
  const FlowSolution plap = solve_p_laplace(prob);
  for (double v : plap.field.values()) CHECK(v == 0.0);
}

TEST_CASE("p = 2 reproduces the filtration heat run", "[flows][plap]") {
  FlowProblem prob = heat_problem(256, 10, 10, 0.05);
  prob.p = 2.0;
  const FlowSolution a = solve_filtration(prob);
  const FlowSolution b = solve_p_laplace(prob);
  CHECK(max_abs_diff(a.field, b.field) <= 1e-10);
  CHECK(b.metadata.at("delta_reg") == "1e-08");
}

TEST_CASE("p = 4 flow dissipates energy and diffuses faster on steep slopes", "[flows][plap]") {
  auto run = [](double p, int substeps) {
    FlowProblem prob = heat_problem(256, 10, substeps, 0.01);
    prob.p = p;
    return solve_p_laplace(prob);
  };
  const FlowSolution p4 = run(4.0, 20), p2 = run(2.0, 20);
  for (std::size_t k = 1; k < p4.energy_trace.size(); ++k) CHECK(p4.energy_trace[k] <= p4.energy_trace[k - 1] + 1e-10);
  const Grid& g = p4.field.grid();
  const std::size_t quarter = g.node(g.cells[0] / 4);  // |u_x| = pi cos(pi/4) > 1 here
  CHECK(p4.field(g.n_time_steps, quarter, 0) < p2.field(g.n_time_steps, quarter, 0));
  // halved-step oracle: the final energy is first-order accurate in dt
  const FlowSolution p4_half = run(4.0, 40), p4_quarter = run(4.0, 80);
  const double d1 = std::abs(p4.energy_trace.back() - p4_half.energy_trace.back());
  const double d2 = std::abs(p4_half.energy_trace.back() - p4_quarter.energy_trace.back());
  CHECK(d1 / d2 == Catch::Approx(2.0).margin(0.4));
}

TEST_CASE("periodic filtration conserves the integral of phi(u)", "[flows][filtration]") {
  FlowProblem prob;
  prob.grid = Grid::line(128, 0.0, 1.0, 10, 0.05);
  prob.substeps = 5;
  prob.boundary = FlowBoundary::periodic;
  prob.phi = PhiMap::power(2.0);
  prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::periodic,
                                      [](const Point& x) { return 1.0 + 0.5 * std::sin(2 * pi * x[0]); });
  const FlowSolution sol = solve_filtration(prob);
  const SpaceTimeField phiu = apply_phi(prob.phi, sol.field);
  const double m0 = phiu.level_field(0).integrate();
  for (int k = 1; k <= prob.grid.n_time_steps; ++k)
    CHECK(std::abs(phiu.level_field(k).integrate() - m0) <= 1e-8 * std::abs(m0));
  // phi_of_u convention: phi(u(0)) = u0
  for (std::size_t n = 0; n < prob.grid.space_size(); ++n)
    CHECK(std::abs(prob.phi.apply(0, sol.field(0, n, 0)) - prob.initial(n, 0)) <= 1e-12);
}

TEST_CASE("newton failure carries the time level and history", "[flows][filtration]") {
  FlowProblem prob = heat_problem(32, 2, 1, 0.1);
  prob.phi = PhiMap::power(3.0);
  prob.newton.max_iterations = 1;
  try {
    solve_filtration(prob);
    FAIL("expected SolverFailure");
  } catch (const SolverFailure& e) {
    CHECK(e.level() == 1);
    CHECK(e.residual_history().size() == 2u);
  }
}

TEST_CASE("stationary kink drifts less than 1e-3", "[flows][allen_cahn]") {
  const FlowProblem prob = kink_problem(2048, 0.05, 10, 100, 1.0);
  const FlowSolution sol = solve_allen_cahn(prob);
  double drift = 0.0;
  for (int k = 0; k <= prob.grid.n_time_steps; ++k)
    for (std::size_t n = 0; n < prob.grid.space_size(); ++n)
      drift = std::max(drift, std::abs(sol.field(k, n, 0) - prob.initial(n, 0)));
  CHECK(drift < 1e-3);
  for (std::size_t k = 1; k < sol.energy_trace.size(); ++k) CHECK(sol.energy_trace[k] <= sol.energy_trace[k - 1] + 1e-10);
}

TEST_CASE("allen-cahn maximum principle", "[flows][allen_cahn]") {
  FlowProblem prob;
  prob.grid = Grid::line(256, 0.0, 1.0, 20, 1.0);
  prob.substeps = 20;
  prob.boundary = FlowBoundary::clamped;
  prob.epsilon = 0.05;
  prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::free, [](const Point& x) {
    return 1.0 + 0.5 * std::pow(std::sin(3 * pi * x[0]), 2);
  });
  const FlowSolution above = solve_allen_cahn(prob);
  double lo = 1e300;
  for (double v : above.field.values()) lo = std::min(lo, v);
  CHECK(lo >= 1.0 - 1e-12);

  prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::free,
                                      [](const Point& x) { return std::cos(7 * pi * x[0]); });
  const FlowSolution inside = solve_allen_cahn(prob);
  double amax = 0.0;
  for (double v : inside.field.values()) amax = std::max(amax, std::abs(v));
  CHECK(amax <= 1.0 + 1e-12);
}

TEST_CASE("explicit stepping enforces the step limit", "[flows][allen_cahn]") {
  FlowProblem prob = kink_problem(64, 0.1, 1, 1, 0.1);
  prob.stepper = Stepper::explicit_euler;
  CHECK_THROWS_AS(solve_allen_cahn(prob), StepSizeError);
  // h = 1/32, eps = 0.1: limit 0.9 h^2 / (2 eps^2) ~ 4.4e-2
  prob.grid = prob.grid.with_time(1, 0.01);
  prob.substeps = 1;
  CHECK_NOTHROW(solve_allen_cahn(prob));
}

TEST_CASE("2D semi-implicit and explicit allen-cahn agree", "[flows][allen_cahn]") {
  FlowProblem prob;
  prob.grid = Grid::square(32, 32, {0.0, 0.0}, {1.0, 1.0}, 4, 0.02);
  prob.boundary = FlowBoundary::periodic;
  prob.epsilon = 0.05;
  prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::periodic, [](const Point& x) {
    return 0.6 * std::sin(2 * pi * x[0]) * std::cos(4 * pi * x[1]);
  });
  prob.substeps = 400;
  const FlowSolution semi = solve_allen_cahn(prob);
  prob.stepper = Stepper::explicit_euler;
  const FlowSolution expl = solve_allen_cahn(prob);
  CHECK(max_abs_diff(semi.field, expl.field) <= 1e-5);
  for (std::size_t k = 1; k < semi.energy_trace.size(); ++k) CHECK(semi.energy_trace[k] <= semi.energy_trace[k - 1]);
}

TEST_CASE("el_residual vanishes for the zero field", "[flows][residual]") {
  const Grid g = Grid::line(64, 0.0, 1.0, 8, 1.0);
  const FunctionalSpec dir = make_p_laplace(unit, 2.0, 1, Domain::of(g));
  SpaceTimeField zero(g, 1, BoundaryKind::dirichlet_zero);
  std::vector<TestFunction> bank{bump_eta(g, 0.5, 0.2, 1.0, 0), bump_eta(g, 0.3, 0.1, 3.0, 1)};
  const auto r = el_residuals(zero, SpatialField(g, 1), dir, PhiMap::identity(), bank);
  for (double v : r) CHECK(v == 0.0);
}

TEST_CASE("el_residual of the stationary kink", "[flows][residual]") {
  const double eps = 0.05;
  const FlowProblem prob = kink_problem(4096, eps, 4, 1, 1.0);
  const SpaceTimeField u = SpaceTimeField::constant_in_time(prob.initial, prob.grid);
  const FunctionalSpec gl = make_ginzburg_landau(eps, 1, Domain::of(prob.grid));
  std::vector<TestFunction> bank;
  for (int i = 0; i < 5; ++i) bank.push_back(bump_eta(prob.grid, -0.4 + 0.2 * i, 0.3, 1.0, i));
  double worst = 0.0;
  for (double r : el_residuals(u, prob.initial, gl, PhiMap::identity(), bank)) worst = std::max(worst, r);
  CHECK(worst <= 1e-6);
}

TEST_CASE("el_residual of the heat solution shrinks with the step", "[flows][residual][refinement]") {
  const FunctionalSpec dir = make_p_laplace(unit, 2.0, 1, Domain{});
  auto residual = [&](int steps, bool exact) {
    FlowProblem prob = heat_problem(512, steps, 1, 0.1);
    SpaceTimeField u;
    if (exact)
      u = SpaceTimeField::sample(prob.grid, 1, BoundaryKind::dirichlet_zero, [](const Point& x, double t) {
        return std::exp(-pi * pi * t) * std::sin(pi * x[0]);
      });
    else
      u = solve_filtration(prob).field;
    std::vector<TestFunction> bank{bump_eta(prob.grid, 0.5, 0.3, 1.0), bump_eta(prob.grid, 0.3, 0.15, 1.0, 1)};
    double w = 0.0;
    for (double r : el_residuals(u, prob.initial, dir, PhiMap::identity(), bank)) w = std::max(w, r);
    return w;
  };
  const double s1 = residual(25, false), s2 = residual(50, false);
  CHECK(s1 / s2 == Catch::Approx(2.0).margin(0.3));
  const double h2 = std::pow(1.0 / 512, 2);
  for (int steps : {25, 50, 100}) CHECK(residual(steps, true) <= 5.0 * (h2 + 0.1 / steps));
}

TEST_CASE("el_residual rejects eta with nonzero terminal values", "[flows][residual]") {
  const Grid g = Grid::line(32, 0.0, 1.0, 4, 1.0);
  TestFunction bad = bump_eta(g, 0.5, 0.2, 1.0);
  bad.eta(g.n_time_steps, g.node(16), 0) = 0.1;
  SpaceTimeField zero(g, 1, BoundaryKind::dirichlet_zero);
  const FunctionalSpec dir = make_p_laplace(unit, 2.0, 1, Domain::of(g));
  std::vector<TestFunction> bank{bad};
  CHECK_THROWS_AS(el_residuals(zero, SpatialField(g, 1), dir, PhiMap::identity(), bank), std::invalid_argument);
}

TEST_CASE("front radius of a sampled disc", "[flows][front]") {
  const Grid g = Grid::square(256, 256, {-1, -1}, {1, 1}, 1, 1.0);
  const SpatialField u = SpatialField::sample(g, 1, BoundaryKind::free, [](const Point& x) {
    return std::tanh((0.4 - std::hypot(x[0] - 0.1, x[1])) / (std::numbers::sqrt2 * 0.02));
  });
  CHECK(std::abs(front_radius(u) - 0.4) <= 1e-3);
}

TEST_CASE("checkpoint round trip", "[flows][io]") {
  const FlowSolution sol = solve_filtration(heat_problem(16, 2, 1, 0.1));
  const auto dir = std::filesystem::temp_directory_path() / "gflow_ckpt_test";
  std::filesystem::create_directories(dir);
  save_solution(sol, dir / "heat");
  std::ifstream bin(dir / "heat.bin", std::ios::binary);
  const SpaceTimeField back = read_snapshot(bin, &sol.field.grid());
  CHECK(back.values() == sol.field.values());
  std::ifstream meta(dir / "heat.meta");
  const auto md = read_metadata(meta);
  CHECK(md.at("scheme").find("filtration") != std::string::npos);
  CHECK(md.at("newton_tolerance") == "1e-11");
  std::filesystem::remove_all(dir);
}
