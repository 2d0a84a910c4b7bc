#pragma once

// Parabolic-minimum certificate: slack(eta) = F(u - eta) - F(u)
// + int Phi(u) d_t eta + int u0 eta(., 0) over a seeded bank of smooth
// perturbations plus one gradient-informed adversarial perturbation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gflow/fields.hpp"
#include "gflow/flows.hpp"
#include "gflow/functionals.hpp"
#include "gflow/io.hpp"
#include "gflow/parallel.hpp"
#include "gflow/test_functions.hpp"

namespace gflow {

namespace detail {

// Uniform double in [0,1) from the top 53 bits; identical on every platform.
inline double unit_draw(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline double draw(std::mt19937_64& rng, double a, double b) { return a + (b - a) * unit_draw(rng); }

inline double bump_profile(double r2) { return r2 < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0; }

// C-infinity step: 0 for z <= 0, 1 for z >= 1.
inline double smooth_step(double z) {
  if (z <= 0.0) return 0.0;
  if (z >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / z), b = std::exp(-1.0 / (1.0 - z));
  return a / (a + b);
}

struct TimeFactor {
  int kind = 0;
  double operator()(double tau) const {
    switch (kind) {
      case 0: return 1.0 - tau;
      case 1: return 1.0 - tau * tau;
      case 2: return 1.0 - tau * tau * tau;
      default: return (1.0 - tau) * (1.0 - tau);
    }
  }
  std::string name() const {
    switch (kind) {
      case 0: return "(1-tau)";
      case 1: return "(1-tau^2)";
      case 2: return "(1-tau^3)";
      default: return "(1-tau)^2";
    }
  }
};

inline std::string box_text(const SupportBox& b, int dim) {
  std::string s = "[" + fmt_double(b.lo[0]) + "," + fmt_double(b.hi[0]) + "]";
  if (dim == 2) s += "x[" + fmt_double(b.lo[1]) + "," + fmt_double(b.hi[1]) + "]";
  return s;
}

}  // namespace detail

/// Seeded bank of smooth admissible perturbations: bumps exp(1 - 1/(1-r^2))
/// on random interior boxes and sine modes cut off by such a bump, each
/// times a time factor vanishing at T. Amplitudes are log-uniform in
/// [amp_lo, amp_hi] (uniform when amp_lo = 0; fixed when equal).
inline std::vector<TestFunction> generate_eta_bank(const Grid& g, int m, int count, std::uint64_t seed,
                                                   double amp_lo, double amp_hi) {
  if (count < 1) throw std::invalid_argument("eta bank: count must be >= 1");
  if (m < 1) throw std::invalid_argument("eta bank: m must be >= 1");
  if (!(amp_lo >= 0.0) || !(amp_hi >= amp_lo) || !std::isfinite(amp_hi))
    throw std::invalid_argument("eta bank: amplitude range must satisfy 0 <= lo <= hi");
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 8)
      throw std::invalid_argument("eta bank: support boxes need at least 8 cells per axis (axis " + std::to_string(a) +
                                  " has " + std::to_string(g.cells[a]) + ")");
  std::mt19937_64 rng(seed);
  std::vector<TestFunction> bank;
  bank.reserve(std::size_t(count));
  for (int id = 0; id < count; ++id) {
    TestFunction t;
    t.id = id;
    double amp = amp_lo;
    if (amp_hi > amp_lo)
      amp = amp_lo > 0.0 ? std::exp(detail::draw(rng, std::log(amp_lo), std::log(amp_hi)))
                         : detail::draw(rng, 0.0, amp_hi);
    t.amplitude = amp;
    const bool sine = detail::unit_draw(rng) < 0.5;
    std::array<int, 2> modes{1, 1};
    for (int a = 0; a < g.dim; ++a) {
      const double margin = 2.5 * g.h(a);
      const double span = (g.hi[std::size_t(a)] - g.lo[std::size_t(a)]) - 2.0 * margin;
      const double width = span * detail::draw(rng, 0.2, 0.6);
      const double start = g.lo[std::size_t(a)] + margin + detail::draw(rng, 0.0, span - width);
      t.support.lo[std::size_t(a)] = start;
      t.support.hi[std::size_t(a)] = start + width;
      modes[std::size_t(a)] = 1 + int(rng() % 4);
    }
    const detail::TimeFactor theta{int(rng() % 4)};
    std::vector<double> weight(static_cast<std::size_t>(m));
    double wmax = 0.0;
    for (double& w : weight) {
      w = detail::draw(rng, -1.0, 1.0);
      wmax = std::max(wmax, std::abs(w));
    }
    for (double& w : weight) w = wmax > 0.0 ? w / wmax : 1.0;

    t.family = amp == 0.0 ? "zero" : (sine ? "sine" : "bump");
    t.formula = (sine ? "sin(" + std::to_string(modes[0]) + (g.dim == 2 ? "," + std::to_string(modes[1]) : "") +
                            ")*bump"
                      : std::string("bump")) +
                detail::box_text(t.support, g.dim) + "*" + theta.name();

    std::vector<double> spatial(g.space_size(), 0.0);
    for (std::size_t n = 0; n < g.space_size(); ++n) {
      const Point x = g.point(n);
      double r2 = 0.0, s = 1.0;
      for (int a = 0; a < g.dim; ++a) {
        const double lo = t.support.lo[std::size_t(a)], hi = t.support.hi[std::size_t(a)];
        const double z = (2.0 * x[std::size_t(a)] - lo - hi) / (hi - lo);
        r2 += z * z;
        if (sine) s *= std::sin(modes[std::size_t(a)] * std::numbers::pi * (x[std::size_t(a)] - lo) / (hi - lo));
      }
      spatial[n] = r2 < 1.0 ? detail::bump_profile(r2) * s : 0.0;
    }
    t.eta = SpaceTimeField(g, m, BoundaryKind::free);
    for (int k = 0; k < g.n_time_steps; ++k) {
      const double tf = amp * theta(g.tau(k));
      for (std::size_t n = 0; n < g.space_size(); ++n)
        if (spatial[n] != 0.0)
          for (int c = 0; c < m; ++c) t.eta(k, n, c) = tf * weight[std::size_t(c)] * spatial[n];
    }
    require_admissible(t);
    bank.push_back(std::move(t));
  }
  return bank;
}

struct SlackTerms {
  double time_term = 0.0;       ///< int Phi(u) d_t eta
  double functional_gap = 0.0;  ///< F(u - eta) - F(u)
  double initial_term = 0.0;    ///< int u0 eta(., 0)
  double total() const { return time_term + functional_gap + initial_term; }
};

struct SlackEntry {
  int id = 0;
  std::string family;
  std::string formula;
  double amplitude = 0.0;
  SlackTerms terms;
  double slack = 0.0;
};

struct MinimalityReport {
  std::vector<SlackEntry> entries;
  double min_slack = 0.0;
  int worst_eta = -1;
  double tolerance_used = 0.0;
  bool pass = true;
};

struct MinimalityOptions {
  bool adversarial = true;
  int workers = 1;
  int adversarial_modes = 8;  ///< sine modes per axis in the adversarial basis
};

namespace detail {

inline void require_minimality_inputs(const SpaceTimeField& u, const PhiMap& phi, const SpatialField& u0,
                                      const FunctionalSpec& spec) {
  const Grid& g = u.grid();
  if (spec.m != u.components() || spec.dim != g.dim)
    throw std::invalid_argument("minimality: density does not match the field");
  if (!u0.grid().same_space(g) || u0.components() != u.components())
    throw std::invalid_argument("minimality: u0 does not match the field");
  if (phi.kind() == PhiKind::user_monotone && phi.components() != u.components())
    throw std::invalid_argument("minimality: phi components do not match the field");
}

inline void require_eta(const SpaceTimeField& u, const TestFunction& t) {
  if (!t.eta.compatible(u))
    throw std::invalid_argument("minimality: test function " + std::to_string(t.id) + " does not match the field");
  require_admissible(t);
}

// Pieces of the slack that do not depend on eta.
struct SlackContext {
  const SpaceTimeField& u;
  SpaceTimeField phiu;
  const SpatialField& u0;
  const FunctionalSpec& spec;
  double F_u;

  SlackContext(const SpaceTimeField& u_, const PhiMap& phi, const SpatialField& u0_, const FunctionalSpec& spec_)
      : u(u_), phiu(apply_phi(phi, u_)), u0(u0_), spec(spec_), F_u(evaluate_functional(u_, spec_)) {}

  SlackTerms terms(const SpaceTimeField& eta) const {
    SlackTerms s;
    s.time_term = time_derivative_pairing(phiu, eta);
    s.functional_gap = evaluate_functional(u - eta, spec) - F_u;
    s.initial_term = pairing(u0, eta.level_field(0));
    return s;
  }
};

}  // namespace detail

/// The three summands of slack(eta), evaluated from scratch.
inline SlackTerms slack_decomposition(const SpaceTimeField& u, const PhiMap& phi, const SpatialField& u0,
                                      const FunctionalSpec& spec, const TestFunction& eta) {
  detail::require_minimality_inputs(u, phi, u0, spec);
  detail::require_eta(u, eta);
  return detail::SlackContext(u, phi, u0, spec).terms(eta.eta);
}

/// 5 (h^2 + dt) times the largest |f| over the samples of u.
inline double calibrated_tolerance(const SpaceTimeField& u, const FunctionalSpec& spec) {
  const Grid& g = u.grid();
  const SpaceTimeField du = gradient(u);
  double scale = 0.0;
  for (int k = 0; k <= g.n_time_steps; ++k)
    for (std::size_t n = 0; n < g.space_size(); ++n)
      scale = std::max(scale, std::abs(spec.density(g.point(n), g.t(k), u.at(k, n), du.at(k, n))));
  const double h = g.max_h();
  return 5.0 * (h * h + g.dt()) * scale;
}

/// Descent direction of the slack's first variation in a smooth basis: a
/// C-infinity plateau over an interior box times tensor sine modes times
/// (1 - tau) tau^j, j = 0..2. The direction solves G c = -L, with L the
/// first variation on each basis function and G their H^1 Gram matrix, so
/// high modes are not over-weighted. The amplitude comes from a quadratic
/// fit of slack along the direction plus neighbouring scales.
inline TestFunction adversarial_eta(const SpaceTimeField& u, const PhiMap& phi, const SpatialField& u0,
                                    const FunctionalSpec& spec, int id, int modes = 8) {
  detail::require_minimality_inputs(u, phi, u0, spec);
  const Grid& g = u.grid();
  const int m = u.components();
  const int K = g.n_time_steps;
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 8) throw std::invalid_argument("adversarial eta: need at least 8 cells per axis");
  if (g.dim == 2) modes = std::min(modes, 6);
  const detail::SlackContext ctx(u, phi, u0, spec);

  SupportBox box;
  for (int a = 0; a < g.dim; ++a) {
    const double L = g.hi[std::size_t(a)] - g.lo[std::size_t(a)];
    const double margin = std::max(3.0 * g.h(a), 0.05 * L);
    box.lo[std::size_t(a)] = g.lo[std::size_t(a)] + margin;
    box.hi[std::size_t(a)] = g.hi[std::size_t(a)] - margin;
  }
  const Grid space = g.with_time(1, g.t_final);
  std::vector<SpatialField> shapes;
  const int ky_max = g.dim == 2 ? modes : 1;
  for (int ky = 1; ky <= ky_max; ++ky)
    for (int kx = 1; kx <= modes; ++kx)
      shapes.push_back(SpatialField::sample(space, 1, BoundaryKind::free, [&](const Point& x) {
        double s = 1.0;
        for (int a = 0; a < g.dim; ++a) {
          const double z = (x[std::size_t(a)] - box.lo[std::size_t(a)]) / (box.hi[std::size_t(a)] - box.lo[std::size_t(a)]);
          s *= detail::smooth_step(z / 0.15) * detail::smooth_step((1.0 - z) / 0.15);
          s *= std::sin((a == 0 ? kx : ky) * std::numbers::pi * z);
        }
        return s;
      }));
  std::vector<SpatialField> dshapes;
  for (const auto& sh : shapes) dshapes.push_back(gradient(sh));
  const int S = int(shapes.size()), J = 3;
  std::vector<std::vector<double>> theta(J, std::vector<double>(std::size_t(K) + 1, 0.0));
  for (int j = 0; j < J; ++j)
    for (int k = 0; k < K; ++k) theta[std::size_t(j)][std::size_t(k)] = (1.0 - g.tau(k)) * std::pow(g.tau(k), j);

  // Per (component, shape): level sums of the time, flux and reaction integrands.
  const auto partials = detail::density_partials(u, spec);
  const SpaceTimeField& flux = partials.first;
  const SpaceTimeField& react = partials.second;
  const std::size_t N = std::size_t(m) * std::size_t(S) * J;
  Eigen::VectorXd L = Eigen::VectorXd::Zero(Eigen::Index(N));
  const auto ws = g.space_weights();
  auto index = [&](int c, int i, int j) { return Eigen::Index((std::size_t(c) * std::size_t(S) + std::size_t(i)) * J + std::size_t(j)); };
  parallel_for(std::size_t(m) * std::size_t(S), 1, [&](std::size_t ci) {
    const int c = int(ci / std::size_t(S)), i = int(ci % std::size_t(S));
    const SpatialField& sh = shapes[std::size_t(i)];
    const SpatialField& dsh = dshapes[std::size_t(i)];
    std::vector<double> mid(std::size_t(K), 0.0), bulk(std::size_t(K) + 1, 0.0);
    for (int k = 0; k <= K; ++k) {
      double b = 0.0, t = 0.0;
      for (std::size_t n = 0; n < ws.size(); ++n) {
        const double v = sh(n, 0);
        if (v == 0.0) continue;
        double f = react(k, n, c) * v;
        for (int a = 0; a < g.dim; ++a) f += flux(k, n, c * g.dim + a) * dsh(n, a);
        b += ws[n] * f;
        if (k < K) t += ws[n] * 0.5 * (ctx.phiu(k, n, c) + ctx.phiu(k + 1, n, c)) * v;
      }
      bulk[std::size_t(k)] = b;
      if (k < K) mid[std::size_t(k)] = t;
    }
    double init = 0.0;
    for (std::size_t n = 0; n < ws.size(); ++n) init += ws[n] * u0(n, c) * sh(n, 0);
    for (int j = 0; j < J; ++j) {
      const auto& th = theta[std::size_t(j)];
      double v = th[0] * init;
      for (int k = 0; k < K; ++k) v += mid[std::size_t(k)] * (th[std::size_t(k) + 1] - th[std::size_t(k)]);
      for (int k = 0; k <= K; ++k) v -= g.time_weight(k) * th[std::size_t(k)] * bulk[std::size_t(k)];
      L(index(c, i, j)) = v;
    }
  });

  Eigen::MatrixXd Gs(S, S), Gt(J, J);
  for (int i = 0; i < S; ++i)
    for (int q = 0; q <= i; ++q) Gs(i, q) = Gs(q, i) = pairing(shapes[std::size_t(i)], shapes[std::size_t(q)]) +
                                                     pairing(dshapes[std::size_t(i)], dshapes[std::size_t(q)]);
  for (int j = 0; j < J; ++j)
    for (int r = 0; r < J; ++r) {
      double v = 0.0;
      for (int k = 0; k <= K; ++k) v += g.time_weight(k) * theta[std::size_t(j)][std::size_t(k)] * theta[std::size_t(r)][std::size_t(k)];
      Gt(j, r) = v;
    }
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(Eigen::Index(N), Eigen::Index(N));
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < S; ++i)
      for (int q = 0; q < S; ++q)
        for (int j = 0; j < J; ++j)
          for (int r = 0; r < J; ++r) G(index(c, i, j), index(c, q, r)) = Gs(i, q) * Gt(j, r);
  const Eigen::VectorXd coeff = G.ldlt().solve(-L);

  TestFunction t;
  t.id = id;
  t.family = "adversarial";
  t.support = box;
  t.eta = SpaceTimeField(g, m, BoundaryKind::free);
  SpaceTimeField direction(g, m, BoundaryKind::free);
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < J; ++j) {
        const double a = coeff(index(c, i, j));
        if (a == 0.0 || !std::isfinite(a)) continue;
        for (int k = 0; k < K; ++k) {
          const double w = a * theta[std::size_t(j)][std::size_t(k)];
          if (w != 0.0)
            for (std::size_t n = 0; n < ws.size(); ++n) direction(k, n, c) += w * shapes[std::size_t(i)](n, 0);
        }
      }
  double peak = 0.0;
  for (double v : direction.values()) peak = std::max(peak, std::abs(v));
  const std::string basis = "plateau" + detail::box_text(box, g.dim) + "*sin(k pi xi), k<=" + std::to_string(modes) +
                            "*(1-tau)tau^j, j<=2";
  if (peak == 0.0 || !std::isfinite(peak)) {
    t.formula = "zero (vanishing first variation) on " + basis;
    return t;
  }
  direction *= 1.0 / peak;

  double umax = 0.0;
  for (double v : u.values()) umax = std::max(umax, std::abs(v));
  const double s0 = 0.05 * std::max(umax, 1e-3);
  auto slack_at = [&](double s) { return ctx.terms(s * direction).total(); };
  const double v1 = slack_at(s0), v2 = slack_at(2.0 * s0);
  std::vector<std::pair<double, double>> tried{{s0, v1}, {2.0 * s0, v2}};
  const double B = (v2 - 2.0 * v1) / (2.0 * s0 * s0);
  const double A = (v1 - B * s0 * s0) / s0;
  if (B > 0.0 && A < 0.0) {
    const double star = std::clamp(-A / (2.0 * B), 1e-2 * s0, 1e3 * s0);
    for (double s : {star, 0.5 * star, 1.5 * star}) tried.emplace_back(s, slack_at(s));
  }
  auto best = std::min_element(tried.begin(), tried.end(),
                               [](const auto& x, const auto& y) { return x.second < y.second; });
  t.amplitude = best->first;
  t.eta = best->first * direction;
  t.formula = basis + ", H1-preconditioned first variation";
  require_admissible(t);
  return t;
}

/// Slack of every eta in the bank (plus the adversarial eta unless
/// disabled); pass iff min slack >= -tolerance. Never throws on a failing
/// verdict.
inline MinimalityReport check_parabolic_minimum(const SpaceTimeField& u, const PhiMap& phi, const SpatialField& u0,
                                                const FunctionalSpec& spec, std::span<const TestFunction> bank,
                                                double tolerance, const MinimalityOptions& opt = {}) {
  detail::require_minimality_inputs(u, phi, u0, spec);
  if (bank.empty()) throw std::invalid_argument("minimality: bank must not be empty");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("minimality: tolerance must be >= 0");
  const Grid& g = u.grid();
  for (std::size_t n = 0; n < g.space_size(); ++n)
    if (g.on_boundary(n))
      for (int k = 0; k <= g.n_time_steps; ++k)
        for (int c = 0; c < u.components(); ++c)
          if (u(k, n, c) != 0.0) throw std::invalid_argument("minimality: u must vanish on the boundary");
  for (const auto& t : bank) detail::require_eta(u, t);

  const detail::SlackContext ctx(u, phi, u0, spec);
  std::vector<const TestFunction*> all;
  for (const auto& t : bank) all.push_back(&t);
  TestFunction adv;
  if (opt.adversarial) {
    int next_id = 0;
    for (const auto& t : bank) next_id = std::max(next_id, t.id + 1);
    adv = adversarial_eta(u, phi, u0, spec, next_id, opt.adversarial_modes);
    all.push_back(&adv);
  }

  MinimalityReport r;
  r.tolerance_used = tolerance;
  r.entries.resize(all.size());
  parallel_for(all.size(), opt.workers, [&](std::size_t i) {
    const TestFunction& t = *all[i];
    SlackEntry e;
    e.id = t.id;
    e.family = t.family;
    e.formula = t.formula;
    e.amplitude = t.amplitude;
    e.terms = ctx.terms(t.eta);
    e.slack = e.terms.total();
    r.entries[i] = std::move(e);
  });
  r.min_slack = std::numeric_limits<double>::infinity();
  for (const auto& e : r.entries)
    if (e.slack < r.min_slack || (e.slack == r.min_slack && e.id < r.worst_eta)) {
      r.min_slack = e.slack;
      r.worst_eta = e.id;
    }
  r.pass = r.min_slack >= -tolerance;
  return r;
}

/// One row per eta: id, family, amplitude, slack.
inline void write_minimality_report(std::ostream& os, const MinimalityReport& r) {
  os << "# parabolic-minimum certificate\n";
  os << "# verdict " << (r.pass ? "pass" : "fail") << ", min_slack " << fmt_double(r.min_slack) << ", worst_eta "
     << r.worst_eta << ", tolerance " << fmt_double(r.tolerance_used) << "\n";
  os << "id family amplitude slack time_term functional_gap initial_term\n";
  for (const auto& e : r.entries)
    os << e.id << ' ' << e.family << ' ' << fmt_double(e.amplitude) << ' ' << fmt_double(e.slack) << ' '
       << fmt_double(e.terms.time_term) << ' ' << fmt_double(e.terms.functional_gap) << ' '
       << fmt_double(e.terms.initial_term) << '\n';
}

inline nlohmann::json minimality_summary(const MinimalityReport& r) {
  return {{"min_slack", r.min_slack},
          {"verdict", r.pass ? "pass" : "fail"},
          {"tolerance", r.tolerance_used},
          {"worst_eta", r.worst_eta},
          {"eta_count", r.entries.size()}};
}

/// u + amplitude * bump on a seeded interior box, constant in time: the
/// non-solution control.
inline SpaceTimeField bump_perturbation(const SpaceTimeField& u, std::uint64_t seed, double amplitude,
                                        SupportBox* where = nullptr) {
  const Grid& g = u.grid();
  std::mt19937_64 rng(seed);
  SupportBox box;
  for (int a = 0; a < g.dim; ++a) {
    const double lo = g.lo[std::size_t(a)], L = g.hi[std::size_t(a)] - lo;
    const double width = L * detail::draw(rng, 0.15, 0.35);
    const double start = lo + 0.1 * L + detail::draw(rng, 0.0, 0.8 * L - width);
    box.lo[std::size_t(a)] = start;
    box.hi[std::size_t(a)] = start + width;
  }
  if (where) *where = box;
  SpaceTimeField out = u;
  for (std::size_t n = 0; n < g.space_size(); ++n) {
    const Point x = g.point(n);
    double r2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const double z = (2.0 * x[std::size_t(a)] - box.lo[std::size_t(a)] - box.hi[std::size_t(a)]) /
                       (box.hi[std::size_t(a)] - box.lo[std::size_t(a)]);
      r2 += z * z;
    }
    const double b = amplitude * detail::bump_profile(r2);
    if (b != 0.0)
      for (int k = 0; k <= g.n_time_steps; ++k)
        for (int c = 0; c < u.components(); ++c) out(k, n, c) += b;
  }
  return out;
}

}  // namespace gflow
