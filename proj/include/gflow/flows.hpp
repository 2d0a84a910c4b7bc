#pragma once

// Gradient-flow solvers: Allen-Cahn (finite differences, approximate
// factorisation), Newtonian filtration and p-Laplace evolution (P1
// elements, lumped mass, backward Euler), the weak Euler-Lagrange
// residual, and Phi-maps.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gflow/fields.hpp"
#include "gflow/functionals.hpp"
#include "gflow/io.hpp"
#include "gflow/test_functions.hpp"
#include "gflow/tridiagonal.hpp"

namespace gflow {

// ---------------------------------------------------------------------------
// Phi-maps

enum class PhiKind { identity, power, user_monotone };

inline const char* to_string(PhiKind k) {
  switch (k) {
    case PhiKind::identity: return "identity";
    case PhiKind::power: return "power";
    case PhiKind::user_monotone: return "user_monotone";
  }
  return "?";
}

/// Component-wise nondecreasing map R^m -> R^m.
class PhiMap {
 public:
  using Scalar = std::function<double(double)>;

  PhiMap() = default;

  static PhiMap identity(int m = 1) {
    PhiMap p;
    p.kind_ = PhiKind::identity;
    p.m_ = m;
    return p;
  }

  /// phi(s) = |s|^(gamma-1) s on every component.
  static PhiMap power(double gamma, int m = 1) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("phi: power exponent must be positive");
    PhiMap p;
    p.kind_ = PhiKind::power;
    p.m_ = m;
    p.gamma_ = gamma;
    return p;
  }

  /// One evaluator per component; inverses by bisection.
  static PhiMap user(std::vector<Scalar> components) {
    if (components.empty()) throw std::invalid_argument("phi: need at least one component");
    for (const auto& f : components)
      if (!f) throw std::invalid_argument("phi: empty component evaluator");
    PhiMap p;
    p.kind_ = PhiKind::user_monotone;
    p.m_ = int(components.size());
    p.user_ = std::move(components);
    return p;
  }

  PhiKind kind() const { return kind_; }
  int components() const { return m_; }
  double gamma() const { return gamma_; }
  bool is_identity() const { return kind_ == PhiKind::identity || (kind_ == PhiKind::power && gamma_ == 1.0); }

  std::string describe() const {
    if (kind_ == PhiKind::power) return "power(gamma=" + fmt_double(gamma_) + ")";
    return to_string(kind_);
  }

  double apply(int c, double s) const {
    switch (kind_) {
      case PhiKind::identity: return s;
      case PhiKind::power: return gamma_ == 1.0 ? s : std::copysign(std::pow(std::abs(s), gamma_), s);
      case PhiKind::user_monotone: return user_[std::size_t(c)](s);
    }
    return s;
  }

  double derivative(int c, double s) const {
    switch (kind_) {
      case PhiKind::identity: return 1.0;
      case PhiKind::power:
        if (gamma_ == 1.0) return 1.0;
        if (s == 0.0) return gamma_ > 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
        return gamma_ * std::pow(std::abs(s), gamma_ - 1.0);
      case PhiKind::user_monotone: {
        const double d = 1e-6 * std::max(1.0, std::abs(s));
        return (apply(c, s + d) - apply(c, s - d)) / (2.0 * d);
      }
    }
    return 1.0;
  }

  double inverse(int c, double v) const {
    switch (kind_) {
      case PhiKind::identity: return v;
      case PhiKind::power: return gamma_ == 1.0 ? v : std::copysign(std::pow(std::abs(v), 1.0 / gamma_), v);
      case PhiKind::user_monotone: return bisect(c, v);
    }
    return v;
  }

  /// Nondecreasing on `points` seeded samples of [-span, span] per component.
  bool check_monotone(std::size_t points = 1000, std::uint64_t seed = 0x9e37'79b9ULL, double span = 10.0) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-span, span);
    std::vector<double> s(points);
    for (int c = 0; c < m_; ++c) {
      for (double& v : s) v = U(rng);
      std::sort(s.begin(), s.end());
      for (std::size_t i = 1; i < s.size(); ++i)
        if (apply(c, s[i]) < apply(c, s[i - 1])) return false;
    }
    return true;
  }

 private:
  double bisect(int c, double v) const {
    double lo = -1.0, hi = 1.0;
    for (int i = 0; apply(c, lo) > v; ++i) {
      if (i > 1100) throw std::runtime_error("phi: inverse bracket not found");
      lo *= 2.0;
    }
    for (int i = 0; apply(c, hi) < v; ++i) {
      if (i > 1100) throw std::runtime_error("phi: inverse bracket not found");
      hi *= 2.0;
    }
    for (int it = 0; it < 2000 && hi - lo > 1e-12 * std::max(1.0, std::abs(lo)); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (apply(c, mid) < v) lo = mid;
      else hi = mid;
    }
    return 0.5 * (lo + hi);
  }

  PhiKind kind_ = PhiKind::identity;
  int m_ = 1;
  double gamma_ = 1.0;
  std::vector<Scalar> user_;
};

inline SpaceTimeField apply_phi(const PhiMap& phi, const SpaceTimeField& u) {
  SpaceTimeField out = u;
  if (phi.is_identity()) return out;
  const int m = u.components();
  auto& v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = phi.apply(int(i % std::size_t(m)), v[i]);
  return out;
}

inline SpatialField apply_phi(const PhiMap& phi, const SpatialField& u) {
  SpatialField out = u;
  if (phi.is_identity()) return out;
  const int m = u.components();
  auto& v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = phi.apply(int(i % std::size_t(m)), v[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Problem and solution types

enum class FlowBoundary { dirichlet_zero, clamped, periodic };
enum class InitialConvention { phi_of_u, direct };
enum class Stepper { semi_implicit, explicit_euler };

inline const char* to_string(FlowBoundary b) {
  switch (b) {
    case FlowBoundary::dirichlet_zero: return "dirichlet_zero";
    case FlowBoundary::clamped: return "clamped";
    case FlowBoundary::periodic: return "periodic";
  }
  return "?";
}
inline const char* to_string(InitialConvention c) { return c == InitialConvention::phi_of_u ? "phi_of_u" : "direct"; }
inline const char* to_string(Stepper s) { return s == Stepper::semi_implicit ? "semi_implicit" : "explicit_euler"; }

struct NewtonOptions {
  int max_iterations = 50;
  double tolerance = 1e-11;
};

/// Everything a solve needs. The grid's time axis fixes the recorded
/// levels; each recorded interval is split into `substeps` solver steps.
struct FlowProblem {
  Grid grid;
  int substeps = 1;
  int m = 1;
  SpatialField initial;  ///< u0; with phi_of_u the solver starts from phi^-1(u0)
  FlowBoundary boundary = FlowBoundary::dirichlet_zero;
  PhiMap phi = PhiMap::identity();
  InitialConvention convention = InitialConvention::phi_of_u;
  Stepper stepper = Stepper::semi_implicit;
  double step_safety = 0.9;

  // Allen-Cahn
  double epsilon = 0.05;
  double stabilization = 0.0;

  // filtration
  MatrixCoefficient diffusion;  ///< empty: identity
  VectorSource source;          ///< empty: h = 0
  bool time_dependent_coefficients = false;

  // p-Laplace
  ScalarCoefficient p_coefficient;  ///< empty: a = 1
  double p = 2.0;
  double delta_reg = 1e-8;
  double relaxation = 0.0;  ///< 0 picks 1.5/(p-1) for p > 2, else 1
  NewtonOptions newton;

  double solver_dt() const { return grid.dt() / substeps; }

  void validate() const {
    grid.validate();
    if (substeps < 1) throw std::invalid_argument("flow: substeps must be >= 1");
    if (m < 1) throw std::invalid_argument("flow: m must be >= 1");
    if (!initial.grid().same_space(grid) || initial.components() != m)
      throw std::invalid_argument("flow: initial field does not match the grid or m");
    if (phi.components() != m && phi.kind() == PhiKind::user_monotone)
      throw std::invalid_argument("flow: phi components do not match m");
    if (!(step_safety > 0.0 && step_safety <= 1.0)) throw std::invalid_argument("flow: step_safety must lie in (0,1]");
    for (double v : initial.values())
      if (!std::isfinite(v)) throw std::invalid_argument("flow: initial field is not finite");
    if (boundary == FlowBoundary::dirichlet_zero)
      for (std::size_t n = 0; n < grid.space_size(); ++n)
        if (grid.on_boundary(n))
          for (int c = 0; c < m; ++c)
            if (initial(n, c) != 0.0) throw std::invalid_argument("flow: initial field must vanish on the boundary");
    if (boundary == FlowBoundary::periodic)
      for (int a = 0; a < grid.dim; ++a)
        if (grid.cells[a] < 3) throw std::invalid_argument("flow: periodic axes need at least 3 cells");
  }
};

struct EstimateNorms {
  double dt_phi_l2 = 0.0;  ///< ||d_t Phi(u)||_{L2(Omega_T)}
  double v2_norm = 0.0;    ///< max_t ||u||_{L2(Omega)} + ||Du||_{L2(Omega_T)}
  double total() const { return dt_phi_l2 + v2_norm; }
};

struct FlowSolution {
  SpaceTimeField field;
  SpaceTimeField phi_time_derivative;
  SpatialField initial_data;
  std::vector<double> energy_trace;
  EstimateNorms estimate_norms;
  std::map<std::string, std::string> metadata;
};

class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, int level, std::vector<double> residuals = {})
      : std::runtime_error(what + " (time level " + std::to_string(level) + ")"), level_(level),
        residuals_(std::move(residuals)) {}
  int level() const { return level_; }
  const std::vector<double>& residual_history() const { return residuals_; }

 private:
  int level_;
  std::vector<double> residuals_;
};

class StepSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Checkpoint: `<stem>.bin` (snapshot layout) and `<stem>.meta` (key = value).
inline void save_solution(const FlowSolution& sol, const std::filesystem::path& stem) {
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  write_snapshot(bin, sol.field);
  std::ofstream meta(stem.string() + ".meta");
  auto m = sol.metadata;
  m["boundary"] = to_string(sol.field.boundary());
  m["t_final"] = fmt_double(sol.field.grid().t_final);
  m["lo_x"] = fmt_double(sol.field.grid().lo[0]);
  m["hi_x"] = fmt_double(sol.field.grid().hi[0]);
  if (sol.field.grid().dim == 2) {
    m["lo_y"] = fmt_double(sol.field.grid().lo[1]);
    m["hi_y"] = fmt_double(sol.field.grid().hi[1]);
  }
  write_metadata(meta, m);
  if (!bin || !meta) throw std::runtime_error("save_solution: write failed for " + stem.string());
}

namespace detail {

inline BoundaryKind field_boundary(FlowBoundary b) {
  switch (b) {
    case FlowBoundary::dirichlet_zero: return BoundaryKind::dirichlet_zero;
    case FlowBoundary::periodic: return BoundaryKind::periodic;
    case FlowBoundary::clamped: return BoundaryKind::free;
  }
  return BoundaryKind::free;
}

inline SpatialField starting_state(const FlowProblem& prob) {
  SpatialField u = prob.initial;
  if (prob.convention == InitialConvention::phi_of_u && !prob.phi.is_identity()) {
    auto& v = u.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = prob.phi.inverse(int(i % std::size_t(prob.m)), v[i]);
  }
  return u;
}

// Fills the derived parts of a solution once the field is complete.
inline void finish_solution(FlowSolution& sol, const FlowProblem& prob) {
  const Grid& g = sol.field.grid();
  const SpaceTimeField phiu = apply_phi(prob.phi, sol.field);
  sol.phi_time_derivative = SpaceTimeField(g, prob.m, BoundaryKind::free);
  const double dt = g.dt();
  const auto ws = g.space_weights();
  double dt_sq = 0.0;
  for (int k = 1; k <= g.n_time_steps; ++k) {
    auto a = phiu.level(k - 1), b = phiu.level(k);
    auto d = sol.phi_time_derivative.level(k);
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = (b[i] - a[i]) / dt;
      s += ws[i / std::size_t(prob.m)] * d[i] * d[i];
    }
    dt_sq += dt * s;
  }
  {
    auto d0 = sol.phi_time_derivative.level(0);
    auto d1 = sol.phi_time_derivative.level(1);
    std::copy(d1.begin(), d1.end(), d0.begin());
  }
  double sup = 0.0;
  for (int k = 0; k <= g.n_time_steps; ++k) sup = std::max(sup, lp_norm(sol.field.level_field(k), 2.0));
  const double grad = lp_norm(gradient(sol.field), 2.0);
  sol.estimate_norms = {std::sqrt(dt_sq), sup + grad};
  sol.initial_data = prob.initial;

  auto& md = sol.metadata;
  md["dt_solver"] = fmt_double(prob.solver_dt());
  md["dt_recorded"] = fmt_double(g.dt());
  md["substeps"] = std::to_string(prob.substeps);
  md["solver_steps"] = std::to_string(long(g.n_time_steps) * prob.substeps);
  md["recorded_levels"] = std::to_string(g.time_levels());
  md["boundary"] = to_string(prob.boundary);
  md["phi"] = prob.phi.describe();
  md["initial_convention"] = to_string(prob.convention);
  md["cells_x"] = std::to_string(g.cells[0]);
  if (g.dim == 2) md["cells_y"] = std::to_string(g.cells[1]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Allen-Cahn: u_t = eps^2 Lap u - (u^3 - u)

namespace detail {

class AllenCahnStepper {
 public:
  AllenCahnStepper(const FlowProblem& prob, double dt) : prob_(prob), g_(prob.grid), dt_(dt) {
    nx_ = g_.nodes(0);
    ny_ = g_.nodes(1);
    periodic_ = prob.boundary == FlowBoundary::periodic;
    const double e2 = prob.epsilon * prob.epsilon;
    alpha_ = 1.0 + prob.stabilization * dt;
    beta_ = dt * e2;
    for (int a = 0; a < g_.dim; ++a) {
      const double c = beta_ / (g_.h(a) * g_.h(a));
      if (periodic_) cyclic_[a] = CyclicTridiagonal(std::size_t(g_.cells[a]), -c, alpha_ + 2.0 * c);
      else {
        const std::size_t n = std::size_t(g_.cells[a] - 1);
        if (n >= 1) line_[a] = Tridiagonal(std::vector<double>(n, -c), std::vector<double>(n, alpha_ + 2.0 * c),
                                           std::vector<double>(n, -c));
      }
    }
    r_.assign(g_.space_size(), 0.0);
  }

  // Periodic: unknowns are nodes with i < cells (and j < cells), copies fill the rest.
  double lap(const std::vector<double>& u, int i, int j) const {
    auto at = [&](int ii, int jj) {
      if (periodic_) {
        ii = (ii + g_.cells[0]) % g_.cells[0];
        if (g_.dim == 2) jj = (jj + g_.cells[1]) % g_.cells[1];
      }
      return u[g_.node(ii, jj)];
    };
    const double c = at(i, j);
    double s = (at(i + 1, j) - 2.0 * c + at(i - 1, j)) / (g_.h(0) * g_.h(0));
    if (g_.dim == 2) s += (at(i, j + 1) - 2.0 * c + at(i, j - 1)) / (g_.h(1) * g_.h(1));
    return s;
  }

  bool active(int i, int j) const {
    if (periodic_) return i < g_.cells[0] && (g_.dim == 1 || j < g_.cells[1]);
    return i > 0 && i < g_.cells[0] && (g_.dim == 1 || (j > 0 && j < g_.cells[1]));
  }

  void step(std::vector<double>& u) {
    const double e2 = prob_.epsilon * prob_.epsilon;
    std::fill(r_.begin(), r_.end(), 0.0);
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) {
        if (!active(i, j)) continue;
        const std::size_t n = g_.node(i, j);
        const double v = u[n];
        r_[n] = dt_ * (e2 * lap(u, i, j) - (v * v * v - v));
      }
    if (prob_.stepper == Stepper::semi_implicit) solve_factored();
    for (std::size_t n = 0; n < u.size(); ++n) u[n] += r_[n];
    if (periodic_) fill_copies(u);
  }

  void fill_copies(std::vector<double>& u) const {
    for (int j = 0; j < ny_; ++j) u[g_.node(g_.cells[0], j)] = u[g_.node(0, j)];
    if (g_.dim == 2)
      for (int i = 0; i < nx_; ++i) u[g_.node(i, g_.cells[1])] = u[g_.node(i, 0)];
  }

  /// Discrete energy whose gradient is the scheme's spatial operator.
  double energy(const std::vector<double>& u) const {
    const double e2 = prob_.epsilon * prob_.epsilon;
    const double hx = g_.h(0), hy = g_.dim == 2 ? g_.h(1) : 1.0;
    double bulk = 0.0, grad = 0.0;
    auto F = [](double v) { return 0.25 * (v * v - 1.0) * (v * v - 1.0); };
    if (periodic_) {
      const int cy = g_.dim == 2 ? g_.cells[1] : 1;
      for (int j = 0; j < cy; ++j)
        for (int i = 0; i < g_.cells[0]; ++i) {
          const double v = u[g_.node(i, j)];
          bulk += hx * hy * F(v);
          const double dx = u[g_.node(i + 1, j)] - v;
          grad += hy / hx * dx * dx;
          if (g_.dim == 2) {
            const double dy = u[g_.node(i, j + 1)] - v;
            grad += hx / hy * dy * dy;
          }
        }
    } else {
      for (std::size_t n = 0; n < u.size(); ++n) bulk += g_.space_weight(n) * F(u[n]);
      for (int j = 0; j < ny_; ++j) {
        const double row = g_.dim == 2 ? ((j == 0 || j == g_.cells[1]) ? 0.5 : 1.0) : 1.0;
        for (int i = 0; i + 1 < nx_; ++i) {
          const double dx = u[g_.node(i + 1, j)] - u[g_.node(i, j)];
          grad += row * hy / hx * dx * dx;
        }
      }
      if (g_.dim == 2)
        for (int j = 0; j + 1 < ny_; ++j)
          for (int i = 0; i < nx_; ++i) {
            const double col = (i == 0 || i == g_.cells[0]) ? 0.5 : 1.0;
            const double dy = u[g_.node(i, j + 1)] - u[g_.node(i, j)];
            grad += col * hx / hy * dy * dy;
          }
    }
    return bulk + 0.5 * e2 * grad;
  }

 private:
  void solve_factored() {
    // x sweep: contiguous rows
    const int jlo = periodic_ || g_.dim == 1 ? 0 : 1;
    const int jhi = g_.dim == 1 ? 0 : g_.cells[1] - 1;
    for (int j = jlo; j <= jhi; ++j) {
      double* row = r_.data() + g_.node(0, j);
      if (periodic_) cyclic_[0].solve(std::span<double>(row, std::size_t(g_.cells[0])));
      else if (g_.cells[0] > 1) line_[0].solve(std::span<double>(row + 1, std::size_t(g_.cells[0] - 1)));
    }
    if (g_.dim == 1) return;
    for (double& v : r_) v *= alpha_;
    // y sweep: column-batched over whole rows
    const std::size_t w = std::size_t(nx_);
    if (periodic_) cyclic_[1].solve_columns(std::span<double>(r_.data(), std::size_t(g_.cells[1]) * w), w);
    else if (g_.cells[1] > 1)
      line_[1].solve_columns(std::span<double>(r_.data() + w, std::size_t(g_.cells[1] - 1) * w), w);
  }

  const FlowProblem& prob_;
  const Grid& g_;
  double dt_;
  int nx_ = 1, ny_ = 1;
  bool periodic_ = false;
  double alpha_ = 1.0, beta_ = 0.0;
  std::array<Tridiagonal, 2> line_;
  std::array<CyclicTridiagonal, 2> cyclic_;
  std::vector<double> r_;
};

}  // namespace detail

/// Semi-implicit (implicit diffusion by approximate factorisation, explicit
/// reaction, optional stabilisation S) or explicit Euler stepping.
/// `clamped` keeps boundary nodes at their initial values.
inline FlowSolution solve_allen_cahn(const FlowProblem& prob) {
  prob.validate();
  if (prob.m != 1) throw std::invalid_argument("allen_cahn: scalar fields only");
  if (!prob.phi.is_identity()) throw std::invalid_argument("allen_cahn: phi must be the identity");
  if (!(prob.epsilon > 0.0)) throw std::invalid_argument("allen_cahn: epsilon must be positive");
  if (prob.stabilization < 0.0) throw std::invalid_argument("allen_cahn: stabilization must be >= 0");
  const Grid& g = prob.grid;
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 3) throw std::invalid_argument("allen_cahn: need at least 3 cells per axis");
  const double dt = prob.solver_dt();
  if (prob.stepper == Stepper::explicit_euler) {
    double hmin2 = g.h(0) * g.h(0);
    if (g.dim == 2) hmin2 = std::min(hmin2, g.h(1) * g.h(1));
    const double limit = prob.step_safety * hmin2 / (2.0 * g.dim * prob.epsilon * prob.epsilon);
    if (dt > limit)
      throw StepSizeError("allen_cahn: explicit step " + fmt_double(dt) + " exceeds " + fmt_double(limit));
  }

  detail::AllenCahnStepper stepper(prob, dt);
  std::vector<double> u = detail::starting_state(prob).values();
  if (prob.boundary == FlowBoundary::periodic) stepper.fill_copies(u);

  FlowSolution sol;
  sol.field = SpaceTimeField(g, 1, detail::field_boundary(prob.boundary));
  auto store = [&](int k) {
    auto lvl = sol.field.level(k);
    std::copy(u.begin(), u.end(), lvl.begin());
    sol.energy_trace.push_back(stepper.energy(u));
  };
  store(0);
  for (int k = 1; k <= g.n_time_steps; ++k) {
    for (int s = 0; s < prob.substeps; ++s) stepper.step(u);
    for (double v : u)
      if (!std::isfinite(v)) throw SolverFailure("allen_cahn: non-finite state", k);
    store(k);
  }
  sol.metadata["scheme"] = prob.stepper == Stepper::semi_implicit
                               ? "allen_cahn semi-implicit (approximate factorisation, explicit reaction)"
                               : "allen_cahn explicit euler";
  sol.metadata["epsilon"] = fmt_double(prob.epsilon);
  sol.metadata["stabilization"] = fmt_double(prob.stabilization);
  sol.metadata["energy"] = "scheme-consistent discrete energy";
  detail::finish_solution(sol, prob);
  return sol;
}

// ---------------------------------------------------------------------------
// P1 elements for the filtration and p-Laplace flows

namespace detail {

struct P1Element {
  std::array<std::size_t, 3> nodes{};
  int count = 2;
  double area = 0.0;
  Point centroid{0.0, 0.0};
  std::array<std::array<double, 2>, 3> grad{};  ///< basis gradients
};

struct P1Mesh {
  const Grid* grid = nullptr;
  std::vector<int> dof;  ///< node -> unknown, -1 for Dirichlet nodes
  int ndof = 0;
  std::vector<double> mass;  ///< lumped (trapezoid) mass per unknown
  std::vector<P1Element> elements;

  P1Mesh(const Grid& g, FlowBoundary bc) : grid(&g) {
    if (bc == FlowBoundary::clamped) throw std::invalid_argument("p1: clamped boundary is not supported");
    const bool periodic = bc == FlowBoundary::periodic;
    dof.assign(g.space_size(), -1);
    const int cx = g.cells[0], cy = g.dim == 2 ? g.cells[1] : 0;
    for (std::size_t n = 0; n < g.space_size(); ++n) {
      auto [i, j] = g.node_ij(n);
      if (periodic) {
        if (i < cx && (g.dim == 1 || j < cy)) dof[n] = ndof++;
      } else if (!g.on_boundary(n)) {
        dof[n] = ndof++;
      }
    }
    if (periodic)
      for (std::size_t n = 0; n < g.space_size(); ++n) {
        auto [i, j] = g.node_ij(n);
        dof[n] = dof[g.node(i % cx, g.dim == 2 ? j % cy : 0)];
      }
    mass.assign(std::size_t(ndof), 0.0);
    for (std::size_t n = 0; n < g.space_size(); ++n)
      if (dof[n] >= 0) mass[std::size_t(dof[n])] += g.space_weight(n);

    const double hx = g.h(0);
    if (g.dim == 1) {
      for (int i = 0; i < cx; ++i) {
        P1Element e;
        e.count = 2;
        e.nodes = {g.node(i), g.node(i + 1), 0};
        e.area = hx;
        e.centroid = {g.coord(0, i) + 0.5 * hx, 0.0};
        e.grad[0] = {-1.0 / hx, 0.0};
        e.grad[1] = {1.0 / hx, 0.0};
        elements.push_back(e);
      }
      return;
    }
    const double hy = g.h(1);
    for (int j = 0; j < cy; ++j)
      for (int i = 0; i < cx; ++i) {
        const double x0 = g.coord(0, i), y0 = g.coord(1, j);
        P1Element lower;
        lower.count = 3;
        lower.nodes = {g.node(i, j), g.node(i + 1, j), g.node(i, j + 1)};
        lower.area = 0.5 * hx * hy;
        lower.centroid = {x0 + hx / 3.0, y0 + hy / 3.0};
        lower.grad[0] = {-1.0 / hx, -1.0 / hy};
        lower.grad[1] = {1.0 / hx, 0.0};
        lower.grad[2] = {0.0, 1.0 / hy};
        elements.push_back(lower);
        P1Element upper;
        upper.count = 3;
        upper.nodes = {g.node(i + 1, j + 1), g.node(i, j + 1), g.node(i + 1, j)};
        upper.area = 0.5 * hx * hy;
        upper.centroid = {x0 + 2.0 * hx / 3.0, y0 + 2.0 * hy / 3.0};
        upper.grad[0] = {1.0 / hx, 1.0 / hy};
        upper.grad[1] = {-1.0 / hx, 0.0};
        upper.grad[2] = {0.0, -1.0 / hy};
        elements.push_back(upper);
      }
  }

  /// Element gradient of a nodal vector (one component, node-indexed).
  std::array<double, 2> element_gradient(const P1Element& e, std::span<const double> u_nodes) const {
    std::array<double, 2> g{0.0, 0.0};
    for (int a = 0; a < e.count; ++a) {
      const double v = u_nodes[e.nodes[std::size_t(a)]];
      g[0] += v * e.grad[std::size_t(a)][0];
      g[1] += v * e.grad[std::size_t(a)][1];
    }
    return g;
  }

  /// K_ab = area * grad_a^T A grad_b with A from `coef(element)`.
  template <class Coef>
  Eigen::SparseMatrix<double> stiffness(Coef&& coef) const {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(elements.size() * 9);
    for (const auto& e : elements) {
      const Mat2 A = coef(e);
      for (int a = 0; a < e.count; ++a) {
        const int da = dof[e.nodes[std::size_t(a)]];
        if (da < 0) continue;
        const auto& ga = e.grad[std::size_t(a)];
        const double Ag0 = A[0] * ga[0] + A[1] * ga[1];
        const double Ag1 = A[2] * ga[0] + A[3] * ga[1];
        for (int b = 0; b < e.count; ++b) {
          const int db = dof[e.nodes[std::size_t(b)]];
          if (db < 0) continue;
          const auto& gb = e.grad[std::size_t(b)];
          trip.emplace_back(da, db, e.area * (Ag0 * gb[0] + Ag1 * gb[1]));
        }
      }
    }
    Eigen::SparseMatrix<double> K(ndof, ndof);
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
  }

  Eigen::VectorXd gather(std::span<const double> u_nodes) const {
    Eigen::VectorXd x(ndof);
    for (std::size_t n = 0; n < dof.size(); ++n)
      if (dof[n] >= 0) x[dof[n]] = u_nodes[n];
    return x;
  }

  void scatter(const Eigen::VectorXd& x, std::span<double> u_nodes) const {
    for (std::size_t n = 0; n < dof.size(); ++n) u_nodes[n] = dof[n] >= 0 ? x[dof[n]] : 0.0;
  }
};

inline Mat2 identity_mat(int dim) { return dim == 1 ? Mat2{1.0, 0.0, 0.0, 0.0} : Mat2{1.0, 0.0, 0.0, 1.0}; }

// Splits an interleaved level (node-major, m components) into per-component node vectors.
inline std::vector<std::vector<double>> split_components(std::span<const double> level, int m) {
  const std::size_t nn = level.size() / std::size_t(m);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m), std::vector<double>(nn));
  for (std::size_t n = 0; n < nn; ++n)
    for (int c = 0; c < m; ++c) out[std::size_t(c)][n] = level[n * std::size_t(m) + std::size_t(c)];
  return out;
}

inline void join_components(const std::vector<std::vector<double>>& comps, std::span<double> level) {
  const std::size_t m = comps.size();
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t n = 0; n < comps[c].size(); ++n) level[n * m + c] = comps[c][n];
}

class LinearSolver {
 public:
  void factor(const Eigen::SparseMatrix<double>& A, int level) {
    if (!analyzed_) {
      ldlt_.analyzePattern(A);
      analyzed_ = true;
    }
    ldlt_.factorize(A);
    if (ldlt_.info() != Eigen::Success) throw SolverFailure("linear solve: factorisation failed", level);
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& b, int level) const {
    Eigen::VectorXd x = ldlt_.solve(b);
    if (ldlt_.info() != Eigen::Success || !x.allFinite()) throw SolverFailure("linear solve: back-substitution failed", level);
    return x;
  }

 private:
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool analyzed_ = false;
};

}  // namespace detail

/// Backward Euler for d_t Phi(u) = div(A grad u) + h with Dirichlet-zero or
/// periodic boundary, solved per component by damped Newton.
inline FlowSolution solve_filtration(const FlowProblem& prob) {
  prob.validate();
  const Grid& g = prob.grid;
  const detail::P1Mesh mesh(g, prob.boundary);
  const int m = prob.m;
  const double dt = prob.solver_dt();
  const bool linear = prob.phi.is_identity();
  const bool frozen = !prob.time_dependent_coefficients;

  auto coef_at = [&](double t) {
    return [&, t](const detail::P1Element& e) {
      return prob.diffusion ? prob.diffusion(e.centroid, t) : detail::identity_mat(g.dim);
    };
  };
  Eigen::SparseMatrix<double> K = mesh.stiffness(coef_at(0.0));
  detail::LinearSolver lin;
  Eigen::SparseMatrix<double> Mdiag(mesh.ndof, mesh.ndof);
  {
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < mesh.ndof; ++i) t.emplace_back(i, i, mesh.mass[std::size_t(i)]);
    Mdiag.setFromTriplets(t.begin(), t.end());
  }
  const Eigen::Map<const Eigen::VectorXd> W(mesh.mass.data(), mesh.ndof);
  if (linear && frozen) lin.factor(Mdiag + dt * K, 0);

  auto source_nodes = [&](double t) {
    std::vector<Eigen::VectorXd> H(static_cast<std::size_t>(m), Eigen::VectorXd::Zero(mesh.ndof));
    if (!prob.source) return H;
    std::vector<double> buf(static_cast<std::size_t>(m));
    std::vector<bool> seen(std::size_t(mesh.ndof), false);
    for (std::size_t n = 0; n < g.space_size(); ++n) {
      const int d = mesh.dof[n];
      if (d < 0 || seen[std::size_t(d)]) continue;
      seen[std::size_t(d)] = true;
      prob.source(g.point(n), t, buf);
      for (int c = 0; c < m; ++c) H[std::size_t(c)][d] = buf[std::size_t(c)];
    }
    return H;
  };

  auto energy = [&](std::span<const double> level, double t) {
    const auto comps = detail::split_components(level, m);
    double e = 0.0;
    for (const auto& el : mesh.elements) {
      const Mat2 A = prob.diffusion ? prob.diffusion(el.centroid, t) : detail::identity_mat(g.dim);
      for (int c = 0; c < m; ++c) {
        const auto gr = mesh.element_gradient(el, comps[std::size_t(c)]);
        e += 0.5 * el.area * (A[0] * gr[0] * gr[0] + (A[1] + A[2]) * gr[0] * gr[1] + A[3] * gr[1] * gr[1]);
      }
    }
    if (prob.source) {
      std::vector<double> buf(static_cast<std::size_t>(m));
      for (std::size_t n = 0; n < g.space_size(); ++n) {
        prob.source(g.point(n), t, buf);
        for (int c = 0; c < m; ++c) e -= g.space_weight(n) * buf[std::size_t(c)] * comps[std::size_t(c)][n];
      }
    }
    return e;
  };

  FlowSolution sol;
  sol.field = SpaceTimeField(g, m, detail::field_boundary(prob.boundary));
  SpatialField u0 = detail::starting_state(prob);
  std::vector<std::vector<double>> state = detail::split_components(u0.values(), m);
  std::vector<Eigen::VectorXd> U(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c) {
    U[std::size_t(c)] = mesh.gather(state[std::size_t(c)]);
    mesh.scatter(U[std::size_t(c)], state[std::size_t(c)]);
  }
  detail::join_components(state, sol.field.level(0));
  sol.energy_trace.push_back(energy(sol.field.level(0), 0.0));

  auto phi_vec = [&](int c, const Eigen::VectorXd& x) {
    Eigen::VectorXd y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = prob.phi.apply(c, x[i]);
    return y;
  };

  int newton_total = 0, newton_max = 0;
  for (int k = 1; k <= g.n_time_steps; ++k) {
    for (int s = 1; s <= prob.substeps; ++s) {
      const double t_new = g.t(k - 1) + dt * s;
      if (!frozen) K = mesh.stiffness(coef_at(t_new));
      if (linear && !frozen) lin.factor(Mdiag + dt * K, k);
      const auto H = source_nodes(t_new);
      for (int c = 0; c < m; ++c) {
        Eigen::VectorXd& x = U[std::size_t(c)];
        const Eigen::VectorXd phi_old = phi_vec(c, x);
        const Eigen::VectorXd rhs_fixed = W.cwiseProduct(phi_old) + dt * W.cwiseProduct(H[std::size_t(c)]);
        const double scale = std::max(rhs_fixed.norm(), 1e-300);
        auto residual = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
          return W.cwiseProduct(phi_vec(c, y)) + dt * (K * y) - rhs_fixed;
        };
        Eigen::VectorXd R = residual(x);
        std::vector<double> history{R.norm() / scale};
        int it = 0;
        while (history.back() > prob.newton.tolerance) {
          if (it >= prob.newton.max_iterations)
            throw SolverFailure("filtration: Newton did not converge", k, history);
          ++it;
          Eigen::VectorXd d;
          if (linear) {
            d = lin.solve(-R, k);
          } else {
            Eigen::VectorXd dphi(x.size());
            for (Eigen::Index i = 0; i < x.size(); ++i)
              dphi[i] = std::clamp(prob.phi.derivative(c, x[i]), 1e-12, 1e12) * W[i];
            Eigen::SparseMatrix<double> J = dt * K;
            for (Eigen::Index i = 0; i < x.size(); ++i) J.coeffRef(i, i) += dphi[i];
            lin.factor(J, k);
            d = lin.solve(-R, k);
          }
          double step = 1.0;
          Eigen::VectorXd trial = x + d;
          Eigen::VectorXd Rt = residual(trial);
          while (Rt.norm() > R.norm() && step > 1e-6) {
            step *= 0.5;
            trial = x + step * d;
            Rt = residual(trial);
          }
          x = trial;
          R = Rt;
          history.push_back(R.norm() / scale);
          if (!x.allFinite()) throw SolverFailure("filtration: non-finite Newton iterate", k, history);
        }
        newton_total += it;
        newton_max = std::max(newton_max, it);
      }
    }
    for (int c = 0; c < m; ++c) mesh.scatter(U[std::size_t(c)], state[std::size_t(c)]);
    detail::join_components(state, sol.field.level(k));
    sol.energy_trace.push_back(energy(sol.field.level(k), g.t(k)));
  }
  sol.metadata["scheme"] = "filtration backward euler, P1 elements, lumped mass, damped newton";
  sol.metadata["newton_tolerance"] = fmt_double(prob.newton.tolerance);
  sol.metadata["newton_max_iterations"] = std::to_string(prob.newton.max_iterations);
  sol.metadata["newton_iterations_total"] = std::to_string(newton_total);
  sol.metadata["newton_iterations_max"] = std::to_string(newton_max);
  sol.metadata["energy"] = "P1 energy, coefficient at element centroids";
  detail::finish_solution(sol, prob);
  return sol;
}

inline double default_relaxation(double p) { return p > 2.0 ? 1.5 / (p - 1.0) : 1.0; }

/// Backward Euler for d_t Phi(u) = div(a |grad u|^(p-2) grad u), with the
/// diffusivity lagged (Kacanov) and regularised by delta_reg.
inline FlowSolution solve_p_laplace(const FlowProblem& prob) {
  prob.validate();
  if (!(prob.p > 1.0)) throw std::invalid_argument("p_laplace: p must exceed 1");
  if (!(prob.delta_reg >= 0.0)) throw std::invalid_argument("p_laplace: delta_reg must be >= 0");
  const Grid& g = prob.grid;
  const detail::P1Mesh mesh(g, prob.boundary);
  const int m = prob.m;
  const double dt = prob.solver_dt();
  const double p = prob.p;
  const double d2 = prob.delta_reg * prob.delta_reg;
  const double omega = prob.relaxation > 0.0 ? prob.relaxation : default_relaxation(p);
  const Eigen::Map<const Eigen::VectorXd> W(mesh.mass.data(), mesh.ndof);

  auto a_at = [&](const Point& x, double t) { return prob.p_coefficient ? prob.p_coefficient(x, t) : 1.0; };
  auto kappa = [&](double a, double G) { return p == 2.0 ? a : a * std::pow(G + d2, 0.5 * (p - 2.0)); };

  auto energy = [&](std::span<const double> level, double t) {
    const auto comps = detail::split_components(level, m);
    double e = 0.0;
    const double floor = p == 2.0 ? 0.0 : std::pow(d2, 0.5 * p);
    for (const auto& el : mesh.elements) {
      double G = 0.0;
      for (int c = 0; c < m; ++c) {
        const auto gr = mesh.element_gradient(el, comps[std::size_t(c)]);
        G += gr[0] * gr[0] + gr[1] * gr[1];
      }
      const double a = a_at(el.centroid, t);
      e += el.area * a / p * (p == 2.0 ? G : std::pow(G + d2, 0.5 * p) - floor);
    }
    return e;
  };

  FlowSolution sol;
  sol.field = SpaceTimeField(g, m, detail::field_boundary(prob.boundary));
  SpatialField u0 = detail::starting_state(prob);
  std::vector<std::vector<double>> state = detail::split_components(u0.values(), m);
  for (int c = 0; c < m; ++c) mesh.scatter(mesh.gather(state[std::size_t(c)]), state[std::size_t(c)]);
  detail::join_components(state, sol.field.level(0));
  sol.energy_trace.push_back(energy(sol.field.level(0), 0.0));

  detail::LinearSolver lin;
  std::vector<std::vector<double>> iter_nodes = state;
  int it_total = 0, it_max = 0;
  for (int k = 1; k <= g.n_time_steps; ++k) {
    for (int s = 1; s <= prob.substeps; ++s) {
      const double t_new = g.t(k - 1) + dt * s;
      std::vector<Eigen::VectorXd> Uold(static_cast<std::size_t>(m)), X(static_cast<std::size_t>(m));
      for (int c = 0; c < m; ++c) {
        Uold[std::size_t(c)] = mesh.gather(state[std::size_t(c)]);
        X[std::size_t(c)] = Uold[std::size_t(c)];
      }
      std::vector<double> history;
      int it = 0;
      for (;;) {
        if (it >= prob.newton.max_iterations)
          throw SolverFailure("p_laplace: lagged-diffusivity iteration stagnated", k, history);
        ++it;
        for (int c = 0; c < m; ++c) mesh.scatter(X[std::size_t(c)], iter_nodes[std::size_t(c)]);
        const Eigen::SparseMatrix<double> K = mesh.stiffness([&](const detail::P1Element& e) {
          double G = 0.0;
          for (int c = 0; c < m; ++c) {
            const auto gr = mesh.element_gradient(e, iter_nodes[std::size_t(c)]);
            G += gr[0] * gr[0] + gr[1] * gr[1];
          }
          const double kap = kappa(a_at(e.centroid, t_new), G);
          return Mat2{kap, 0.0, 0.0, g.dim == 2 ? kap : 0.0};
        });
        double change = 0.0, size = 0.0;
        for (int c = 0; c < m; ++c) {
          Eigen::VectorXd& x = X[std::size_t(c)];
          Eigen::VectorXd dphi(x.size()), rhs(x.size());
          for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double d = prob.phi.is_identity() ? 1.0 : std::clamp(prob.phi.derivative(c, x[i]), 1e-12, 1e12);
            dphi[i] = W[i] * d;
            rhs[i] = dphi[i] * x[i] - W[i] * (prob.phi.apply(c, x[i]) - prob.phi.apply(c, Uold[std::size_t(c)][i]));
          }
          Eigen::SparseMatrix<double> J = dt * K;
          for (Eigen::Index i = 0; i < x.size(); ++i) J.coeffRef(i, i) += dphi[i];
          lin.factor(J, k);
          const Eigen::VectorXd target = lin.solve(rhs, k);
          const Eigen::VectorXd next = x + omega * (target - x);
          change = std::max(change, (target - x).lpNorm<Eigen::Infinity>());
          size = std::max(size, next.lpNorm<Eigen::Infinity>());
          x = next;
        }
        history.push_back(change);
        if (!std::isfinite(change)) throw SolverFailure("p_laplace: non-finite iterate", k, history);
        if (change <= prob.newton.tolerance * std::max(size, 1e-300) || change == 0.0) break;
      }
      it_total += it;
      it_max = std::max(it_max, it);
      for (int c = 0; c < m; ++c) mesh.scatter(X[std::size_t(c)], state[std::size_t(c)]);
    }
    detail::join_components(state, sol.field.level(k));
    sol.energy_trace.push_back(energy(sol.field.level(k), g.t(k)));
  }
  sol.metadata["scheme"] = "p_laplace backward euler, P1 elements, lumped mass, relaxed lagged diffusivity";
  sol.metadata["p"] = fmt_double(p);
  sol.metadata["delta_reg"] = fmt_double(prob.delta_reg);
  sol.metadata["relaxation"] = fmt_double(omega);
  sol.metadata["iteration_tolerance"] = fmt_double(prob.newton.tolerance);
  sol.metadata["iteration_max"] = std::to_string(prob.newton.max_iterations);
  sol.metadata["iterations_total"] = std::to_string(it_total);
  sol.metadata["iterations_max_used"] = std::to_string(it_max);
  sol.metadata["energy"] = "P1 energy a/p ((|g|^2 + delta^2)^(p/2) - delta^p)";
  detail::finish_solution(sol, prob);
  return sol;
}

// ---------------------------------------------------------------------------
// Weak Euler-Lagrange residual

namespace detail {

/// f_lambda (m*dim components) and f_u (m components) at every sample of u.
inline std::pair<SpaceTimeField, SpaceTimeField> density_partials(const SpaceTimeField& u, const FunctionalSpec& spec) {
  const Grid& g = u.grid();
  const int m = u.components();
  if (spec.m != m || spec.dim != g.dim) throw std::invalid_argument("density partials: density does not match the field");
  if (!spec.d_u || !spec.d_lambda) throw std::invalid_argument("density partials: closed-form partials are required");
  const SpaceTimeField du = gradient(u);
  const int md = m * g.dim;
  SpaceTimeField flux(g, md, BoundaryKind::free), react(g, m, BoundaryKind::free);
  for (int k = 0; k <= g.n_time_steps; ++k) {
    const double t = g.t(k);
    for (std::size_t n = 0; n < g.space_size(); ++n) {
      const Point x = g.point(n);
      spec.d_lambda(x, t, u.at(k, n), du.at(k, n), std::span<double>(&flux(k, n, 0), std::size_t(md)));
      spec.d_u(x, t, u.at(k, n), du.at(k, n), std::span<double>(&react(k, n, 0), std::size_t(m)));
    }
  }
  return {std::move(flux), std::move(react)};
}

}  // namespace detail

/// Per-eta residual |-int Phi(u) d_t eta + int (f_lambda . D eta + f_u . eta)
/// - int u0 eta(., 0)| for a field u with initial data u0.
inline std::vector<double> el_residuals(const SpaceTimeField& u, const SpatialField& u0, const FunctionalSpec& spec,
                                        const PhiMap& phi, std::span<const TestFunction> bank) {
  const Grid& g = u.grid();
  const int m = u.components();
  if (spec.m != m || spec.dim != g.dim) throw std::invalid_argument("el_residual: density does not match the field");
  if (!spec.d_u || !spec.d_lambda) throw std::invalid_argument("el_residual: density partials are required");
  if (!u0.grid().same_space(g) || u0.components() != m) throw std::invalid_argument("el_residual: u0 mismatch");
  for (const auto& t : bank) {
    if (!t.eta.compatible(u)) throw std::invalid_argument("el_residual: test function grid mismatch");
    if (!t.terminal_zero())
      throw std::invalid_argument("el_residual: test function " + std::to_string(t.id) + " has eta(., T) != 0");
  }
  const auto [flux, react] = detail::density_partials(u, spec);
  const SpaceTimeField phiu = apply_phi(phi, u);
  std::vector<double> out;
  out.reserve(bank.size());
  for (const auto& t : bank) {
    const double time_term = -time_derivative_pairing(phiu, t.eta);
    const double space_term = pairing(flux, gradient(t.eta)) + pairing(react, t.eta);
    const double init_term = -pairing(u0, t.eta.level_field(0));
    out.push_back(std::abs(time_term + space_term + init_term));
  }
  return out;
}

inline double el_residual(const FlowSolution& sol, const FunctionalSpec& spec, const PhiMap& phi,
                          std::span<const TestFunction> bank) {
  double worst = 0.0;
  for (double r : el_residuals(sol.field, sol.initial_data, spec, phi, bank)) worst = std::max(worst, r);
  return worst;
}

// ---------------------------------------------------------------------------
// Front tracking

/// Mean distance from the centroid of the zero crossings of a 2D level,
/// crossings found by linear interpolation along grid lines. Returns 0 when
/// no crossing exists.
inline double front_radius(const SpatialField& u) {
  const Grid& g = u.grid();
  if (g.dim != 2) throw std::invalid_argument("front_radius: 2D fields only");
  std::vector<Point> pts;
  auto edge = [&](std::size_t a, std::size_t b) {
    const double va = u(a, 0), vb = u(b, 0);
    if ((va < 0.0) == (vb < 0.0)) return;
    const double s = va / (va - vb);
    const Point pa = g.point(a), pb = g.point(b);
    pts.push_back({pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])});
  };
  for (int j = 0; j <= g.cells[1]; ++j)
    for (int i = 0; i <= g.cells[0]; ++i) {
      if (i < g.cells[0]) edge(g.node(i, j), g.node(i + 1, j));
      if (j < g.cells[1]) edge(g.node(i, j), g.node(i, j + 1));
    }
  if (pts.empty()) return 0.0;
  Point c{0.0, 0.0};
  for (const auto& p : pts) {
    c[0] += p[0];
    c[1] += p[1];
  }
  c[0] /= double(pts.size());
  c[1] /= double(pts.size());
  double r = 0.0;
  for (const auto& p : pts) r += std::hypot(p[0] - c[0], p[1] - c[1]);
  return r / double(pts.size());
}

}  // namespace gflow
