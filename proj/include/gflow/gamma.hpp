#pragma once

// eps-sweeps: recovery sequences for the double-well family, flows across
// eps with convergence diagnostics against a limit candidate, and the
// minimality check of that candidate against the limit functional.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gflow/fields.hpp"
#include "gflow/flows.hpp"
#include "gflow/functionals.hpp"
#include "gflow/io.hpp"
#include "gflow/minimality.hpp"
#include "gflow/parallel.hpp"

namespace gflow {

/// Piecewise +-1 pattern on a 1D interval: sign `first_sign` left of the
/// first interface, alternating across each.
struct PhasePattern {
  std::vector<double> interfaces;
  int first_sign = 1;

  int count() const { return int(interfaces.size()); }

  int sign_at(double x) const {
    int s = first_sign;
    for (double p : interfaces)
      if (x > p) s = -s;
    return s;
  }

  void validate(const Grid& g) const {
    if (g.dim != 1) throw std::invalid_argument("phase pattern: 1D grids only");
    if (first_sign != 1 && first_sign != -1) throw std::invalid_argument("phase pattern: first_sign must be +-1");
    for (std::size_t i = 0; i < interfaces.size(); ++i) {
      if (!(interfaces[i] > g.lo[0] && interfaces[i] < g.hi[0]))
        throw std::invalid_argument("phase pattern: interface " + fmt_double(interfaces[i]) + " outside the domain");
      if (i > 0 && !(interfaces[i] > interfaces[i - 1]))
        throw std::invalid_argument("phase pattern: interfaces must be increasing");
    }
  }
};

/// Sharp +-1 field of the pattern (0 exactly on an interface node).
inline SpatialField sign_pattern(const Grid& g, const PhasePattern& pat) {
  pat.validate(g);
  return SpatialField::sample(g, 1, BoundaryKind::free, [&](const Point& x) {
    for (double p : pat.interfaces)
      if (x[0] == p) return 0.0;
    return double(pat.sign_at(x[0]));
  });
}

/// Time-constant field s(x) tanh(d(x)/(sqrt2 eps)), d the distance to the
/// nearest interface and s the pattern's sign.
inline SpaceTimeField recovery_sequence(const Grid& g, const PhasePattern& pat, double eps) {
  pat.validate(g);
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("recovery sequence: eps must be positive");
  const double min_gap = 6.0 * std::numbers::sqrt2 * eps;
  for (std::size_t i = 1; i < pat.interfaces.size(); ++i)
    if (pat.interfaces[i] - pat.interfaces[i - 1] <= min_gap)
      throw std::invalid_argument("recovery sequence: interfaces " + fmt_double(pat.interfaces[i - 1]) + " and " +
                                  fmt_double(pat.interfaces[i]) + " closer than 6 sqrt2 eps = " + fmt_double(min_gap));
  const double w = std::numbers::sqrt2 * eps;
  return SpaceTimeField::sample(g, 1, BoundaryKind::free, [&](const Point& x, double) {
    double d = std::numeric_limits<double>::infinity();
    for (double p : pat.interfaces) d = std::min(d, std::abs(x[0] - p));
    return pat.sign_at(x[0]) * (pat.interfaces.empty() ? 1.0 : std::tanh(d / w));
  });
}

/// Cell count for the double-well sweep: base_cells at base_eps, growing
/// like eps^(-3/2) so that h/eps shrinks along the sweep. Rounded up to even.
inline int gl_cells(double eps, int base_cells = 8192, double base_eps = 0.0125) {
  const int n = int(std::ceil(base_cells * std::pow(base_eps / eps, 1.5)));
  return n + (n & 1);
}

struct RecoveryRow {
  double eps = 0.0;
  int cells = 0;
  double normalized_energy = 0.0;  ///< F^eps / eps at t = 0
  double relative_error = 0.0;     ///< against count * 2 sqrt2 / 3
  double strong_l2 = 0.0;          ///< L2(Omega) distance to the sign pattern
};

/// Recovery members on (lo, hi) for each eps, each on gl_cells(eps) cells.
inline std::vector<RecoveryRow> recovery_table(const PhasePattern& pat, std::span<const double> eps_list, double lo,
                                               double hi, int base_cells = 8192, double base_eps = 0.0125) {
  std::vector<RecoveryRow> rows;
  for (double eps : eps_list) {
    const Grid g = Grid::line(gl_cells(eps, base_cells, base_eps), lo, hi, 1, 1.0);
    const SpatialField u = recovery_sequence(g, pat, eps).level_field(0);
    RecoveryRow r;
    r.eps = eps;
    r.cells = g.cells[0];
    r.normalized_energy = evaluate_energy(u, make_ginzburg_landau(eps, 1, Domain::of(g))) / eps;
    const double limit = limit_perimeter_value(pat.count());
    r.relative_error = limit > 0.0 ? std::abs(r.normalized_energy - limit) / limit : std::abs(r.normalized_energy);
    SpatialField diff = u;
    const SpatialField s = sign_pattern(g, pat);
    for (std::size_t n = 0; n < g.space_size(); ++n) diff(n, 0) -= s(n, 0);
    r.strong_l2 = lp_norm(diff, 2.0);
    rows.push_back(r);
  }
  return rows;
}

/// |int (Phi(seq_i) - Phi(limit)) . psi_j| for each member i and test field j.
inline std::vector<std::vector<double>> weak_l1_diagnostic(std::span<const SpatialField> seq, const SpatialField& limit,
                                                           const PhiMap& phi, std::span<const SpatialField> bank) {
  const SpatialField pl = apply_phi(phi, limit);
  std::vector<std::vector<double>> out;
  for (const auto& s : seq) {
    if (!s.grid().same_space(limit.grid()) || s.components() != limit.components())
      throw std::invalid_argument("weak_l1_diagnostic: member does not match the limit");
    SpatialField d = apply_phi(phi, s);
    for (std::size_t n = 0; n < d.size(); ++n)
      for (int c = 0; c < d.components(); ++c) d(n, c) -= pl(n, c);
    std::vector<double> row;
    for (const auto& psi : bank) {
      if (!psi.grid().same_space(d.grid()) || psi.components() != d.components())
        throw std::invalid_argument("weak_l1_diagnostic: test field does not match the limit");
      row.push_back(std::abs(pairing(d, psi)));
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline std::vector<std::vector<double>> weak_l1_diagnostic(std::span<const SpaceTimeField> seq,
                                                           const SpaceTimeField& limit, const PhiMap& phi,
                                                           std::span<const SpaceTimeField> bank) {
  const SpaceTimeField pl = apply_phi(phi, limit);
  std::vector<std::vector<double>> out;
  for (const auto& s : seq) {
    if (!s.compatible(limit)) throw std::invalid_argument("weak_l1_diagnostic: member does not match the limit");
    const SpaceTimeField d = apply_phi(phi, s) - pl;
    std::vector<double> row;
    for (const auto& psi : bank) {
      if (!psi.compatible(d)) throw std::invalid_argument("weak_l1_diagnostic: test field does not match the limit");
      row.push_back(std::abs(pairing(d, psi)));
    }
    out.push_back(std::move(row));
  }
  return out;
}

/// Spatial sine modes up to max_order per axis, one copy per component.
inline std::vector<SpatialField> sine_space_bank(const Grid& g, int components, int max_order = 8) {
  std::vector<SpatialField> out;
  for (const auto& f : sine_test_bank(g.with_time(1, g.t_final), components, max_order)) out.push_back(f.level_field(0));
  return out;
}

// ---- double-well and oscillating-coefficient families ----

inline FunctionalFamily ginzburg_landau_family(int interface_count, int dim = 1) {
  FunctionalFamily f;
  f.kind = FamilyKind::ginzburg_landau;
  f.member_at = [dim](double eps) {
    Domain d;
    d.dim = dim;
    return make_ginzburg_landau(eps, dim, d);
  };
  f.limit_value = [interface_count](const SpaceTimeField& u) {
    return limit_perimeter_value(interface_count) * u.grid().t_final;
  };
  f.normalization = Normalization::eps_divided;
  return f;
}

/// a(x/eps) with a 1-periodic; the limit is the constant harmonic mean.
inline FunctionalFamily oscillating_filtration_family(std::function<double(double)> a, Domain domain) {
  FunctionalFamily f;
  f.kind = FamilyKind::filtration;
  f.member_at = [a, domain](double eps) {
    return make_filtration([a, eps](const Point& x, double) {
      const double v = a(x[0] / eps);
      return Mat2{v, 0.0, 0.0, v};
    }, {}, 1, domain);
  };
  const double ah = homogenized_coefficient_1d(a);
  f.limit_spec = make_filtration([ah](const Point&, double) { return Mat2{ah, 0.0, 0.0, ah}; }, {}, 1, domain);
  f.normalization = Normalization::raw;
  return f;
}

// ---- sweeps ----

struct EtaBankConfig {
  int count = 64;
  std::uint64_t seed = 2024;
  double amp_lo = 1e-3;
  double amp_hi = 1.0;
};

struct SweepSetup {
  FunctionalFamily family;
  std::function<FlowProblem(double eps)> problem_at;
  std::function<FlowSolution(const FlowProblem&)> solve;
  /// Limit candidate sampled on a member's grid.
  std::function<SpaceTimeField(const Grid&)> limit_on;
  std::string limit_id;
  EtaBankConfig bank;
  int workers = 1;
  int test_modes = 8;
  bool member_minimality = true;
  /// Members run to t_final * eps^-exponent; diagnostics use the unscaled clock.
  double time_rescale_exponent = 0.0;
};

struct MemberRecord {
  double eps = 0.0;
  bool ok = false;
  std::string failure;
  int cells = 0;
  double functional_value = 0.0;  ///< F^eps(u^eps) over Omega_T
  double initial_energy = 0.0;    ///< F^eps(u^eps(., 0)), spatial
  double normalized_value = 0.0;  ///< initial_energy, divided by eps in the eps_divided convention
  SwReport sw;
  std::optional<double> min_slack;
  double slack_tolerance = 0.0;
  bool minimality_pass = false;
  std::string minimality_note;
  EstimateNorms norms;
  std::vector<double> energy_trace;
  bool energy_monotone = false;  ///< trace non-increasing up to 1e-10 per step
};

struct EpsSweepReport {
  std::vector<double> eps;
  std::vector<MemberRecord> members;
  std::string limit_id;
  double limit_value = std::numeric_limits<double>::quiet_NaN();
  Normalization normalization = Normalization::raw;
  double time_rescale_exponent = 0.0;
  std::optional<MinimalityReport> limit_minimality;
  std::string limit_note;

  bool complete() const {
    return std::all_of(members.begin(), members.end(), [](const MemberRecord& m) { return m.ok; });
  }
  /// Every member that was checked passed, and at least one was.
  bool members_pass_minimality() const {
    int checked = 0;
    for (const auto& m : members)
      if (m.min_slack) {
        ++checked;
        if (!m.minimality_pass) return false;
      }
    return checked > 0;
  }
};

namespace detail {

inline bool vanishes_on_boundary(const SpaceTimeField& u) {
  const Grid& g = u.grid();
  for (std::size_t n = 0; n < g.space_size(); ++n)
    if (g.on_boundary(n))
      for (int k = 0; k <= g.n_time_steps; ++k)
        for (int c = 0; c < u.components(); ++c)
          if (u(k, n, c) != 0.0) return false;
  return true;
}

inline bool bank_fits(const Grid& g) {
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 8) return false;
  return true;
}

}  // namespace detail

/// Solves every member (in parallel), records diagnostics against the limit
/// candidate, then checks the candidate against the limit functional.
/// A member failure marks its record and the sweep continues.
inline EpsSweepReport run_sweep(const SweepSetup& setup, std::span<const double> eps_list) {
  if (eps_list.empty()) throw std::invalid_argument("run_sweep: eps list is empty");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > 0.0)) throw std::invalid_argument("run_sweep: eps must be positive");
    if (i > 0 && !(eps_list[i] < eps_list[i - 1])) throw std::invalid_argument("run_sweep: eps list must be strictly decreasing");
  }
  if (!setup.family.member_at || !setup.problem_at || !setup.solve || !setup.limit_on)
    throw std::invalid_argument("run_sweep: incomplete setup");
  if (!setup.family.limit_spec && !setup.family.limit_value)
    throw std::invalid_argument("run_sweep: family has no limit");

  EpsSweepReport rep;
  rep.eps.assign(eps_list.begin(), eps_list.end());
  rep.limit_id = setup.limit_id;
  rep.normalization = setup.family.normalization;
  rep.time_rescale_exponent = setup.time_rescale_exponent;
  rep.members.resize(eps_list.size());

  parallel_for(eps_list.size(), setup.workers, [&](std::size_t i) {
    MemberRecord& r = rep.members[i];
    r.eps = eps_list[i];
    try {
      const FlowProblem prob = setup.problem_at(r.eps);
      FlowSolution sol;
      if (setup.time_rescale_exponent == 0.0) {
        sol = setup.solve(prob);
      } else {
        FlowProblem fast = prob;
        fast.grid.t_final *= std::pow(r.eps, -setup.time_rescale_exponent);
        sol = setup.solve(fast);
        SpaceTimeField slow(prob.grid, sol.field.components(), sol.field.boundary());
        std::copy(sol.field.values().begin(), sol.field.values().end(), slow.values().begin());
        sol.field = std::move(slow);
        detail::finish_solution(sol, prob);
        sol.metadata["time_rescale"] = fmt_double(fast.grid.t_final / prob.grid.t_final);
      }
      const Grid& g = sol.field.grid();
      const FunctionalSpec spec = setup.family.member_at(r.eps);
      r.cells = g.cells[0];
      r.functional_value = evaluate_functional(sol.field, spec);
      r.initial_energy = evaluate_energy(sol.field.level_field(0), spec, 0.0);
      r.normalized_value =
          setup.family.normalization == Normalization::eps_divided ? r.initial_energy / r.eps : r.initial_energy;
      const SpaceTimeField limit = setup.limit_on(g);
      const auto bank = sine_test_bank(g, sol.field.components() * g.dim, setup.test_modes);
      r.sw = sw_distance(sol.field, limit, bank);
      r.norms = sol.estimate_norms;
      r.energy_trace = sol.energy_trace;
      r.energy_monotone = true;
      for (std::size_t k = 1; k < r.energy_trace.size(); ++k)
        if (r.energy_trace[k] > r.energy_trace[k - 1] + 1e-10) r.energy_monotone = false;
      if (!setup.member_minimality) {
        r.minimality_note = "not requested";
      } else if (!detail::vanishes_on_boundary(sol.field)) {
        r.minimality_note = "not applicable: nonzero boundary values";
      } else if (!detail::bank_fits(g)) {
        r.minimality_note = "not applicable: fewer than 8 cells per axis";
      } else {
        const auto etas = generate_eta_bank(g, sol.field.components(), setup.bank.count, setup.bank.seed,
                                            setup.bank.amp_lo, setup.bank.amp_hi);
        r.slack_tolerance = calibrated_tolerance(sol.field, spec);
        const MinimalityReport m =
            check_parabolic_minimum(sol.field, prob.phi, sol.initial_data, spec, etas, r.slack_tolerance);
        r.min_slack = m.min_slack;
        r.minimality_pass = m.pass;
      }
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.failure = e.what();
    }
  });

  // The limit candidate lives on the grid of the smallest eps that completed.
  const MemberRecord* base = nullptr;
  std::optional<FlowProblem> base_prob;
  for (std::size_t i = rep.members.size(); i-- > 0;)
    if (rep.members[i].ok) {
      base = &rep.members[i];
      base_prob = setup.problem_at(base->eps);
      break;
    }
  if (!base) {
    rep.limit_note = "no member completed";
    return rep;
  }
  const SpaceTimeField limit = setup.limit_on(base_prob->grid);
  rep.limit_value = setup.family.limit_spec ? evaluate_functional(limit, *setup.family.limit_spec)
                                            : setup.family.limit_value(limit);
  if (!setup.family.limit_spec) {
    rep.limit_note = "no integral limit functional";
  } else if (!detail::vanishes_on_boundary(limit)) {
    rep.limit_note = "not applicable: nonzero boundary values";
  } else if (!detail::bank_fits(limit.grid())) {
    rep.limit_note = "not applicable: fewer than 8 cells per axis";
  } else {
    const PhiMap& phi = base_prob->phi;
    const SpatialField u0 = apply_phi(phi, limit.level_field(0));
    const auto etas = generate_eta_bank(limit.grid(), limit.components(), setup.bank.count, setup.bank.seed,
                                        setup.bank.amp_lo, setup.bank.amp_hi);
    const double tol = calibrated_tolerance(limit, *setup.family.limit_spec);
    rep.limit_minimality = check_parabolic_minimum(limit, phi, u0, *setup.family.limit_spec, etas, tol,
                                                   {.workers = setup.workers});
  }
  return rep;
}

// ---- serialisation ----

inline std::string sweep_csv_header() {
  return "eps,status,cells,functional_value,initial_energy,normalized_value,strong_l2,max_gradient_pairing,"
         "gradient_l2_bound,min_slack,slack_tolerance,dt_phi_l2,v2_norm,energy_monotone";
}

inline void write_sweep_csv(std::ostream& os, const EpsSweepReport& r) {
  os << sweep_csv_header() << '\n';
  for (const auto& m : r.members) {
    os << fmt_double(m.eps) << ',' << (m.ok ? "ok" : "failed") << ',' << m.cells << ',';
    if (!m.ok) {
      os << ",,,,,,,,,,\n";
      continue;
    }
    os << fmt_double(m.functional_value) << ',' << fmt_double(m.initial_energy) << ','
       << fmt_double(m.normalized_value) << ',' << fmt_double(m.sw.strong_lp_distance) << ','
       << fmt_double(m.sw.max_pairing_error()) << ',' << fmt_double(m.sw.gradient_lp_bound) << ','
       << (m.min_slack ? fmt_double(*m.min_slack) : "") << ','
       << (m.min_slack ? fmt_double(m.slack_tolerance) : "") << ',' << fmt_double(m.norms.dt_phi_l2) << ','
       << fmt_double(m.norms.v2_norm) << ',' << (m.energy_monotone ? 1 : 0) << '\n';
  }
}

inline nlohmann::json sweep_summary(const EpsSweepReport& r) {
  nlohmann::json j;
  j["eps"] = r.eps;
  j["limit_candidate"] = r.limit_id;
  j["limit_value"] = r.limit_value;
  j["normalization"] = to_string(r.normalization);
  j["time_rescale_exponent"] = r.time_rescale_exponent;
  j["complete"] = r.complete();
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& m : r.members)
    if (!m.ok) failures.push_back({{"eps", m.eps}, {"reason", m.failure}});
  j["failed_members"] = failures;
  if (r.limit_minimality) j["limit_minimality"] = minimality_summary(*r.limit_minimality);
  else j["limit_minimality"] = r.limit_note;
  return j;
}

/// Two-column (eps, value) files, one per diagnostic: (file name, contents).
inline std::vector<std::pair<std::string, std::string>> sweep_plot_files(const EpsSweepReport& r,
                                                                         const std::string& stem) {
  using Getter = std::function<std::optional<double>(const MemberRecord&)>;
  const std::vector<std::pair<std::string, Getter>> columns{
      {"normalized_value", [](const MemberRecord& m) { return std::optional(m.normalized_value); }},
      {"functional_value", [](const MemberRecord& m) { return std::optional(m.functional_value); }},
      {"strong_l2", [](const MemberRecord& m) { return std::optional(m.sw.strong_lp_distance); }},
      {"gradient_l2_bound", [](const MemberRecord& m) { return std::optional(m.sw.gradient_lp_bound); }},
      {"max_gradient_pairing", [](const MemberRecord& m) { return std::optional(m.sw.max_pairing_error()); }},
      {"min_slack", [](const MemberRecord& m) { return m.min_slack; }},
      {"v2_norm", [](const MemberRecord& m) { return std::optional(m.norms.v2_norm); }},
  };
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, get] : columns) {
    std::string body = "# eps " + name + "\n";
    for (const auto& m : r.members) {
      if (!m.ok) continue;
      const auto v = get(m);
      if (v) body += fmt_double(m.eps) + ' ' + fmt_double(*v) + '\n';
    }
    out.emplace_back(stem + "_" + name + ".dat", std::move(body));
  }
  return out;
}

}  // namespace gflow
