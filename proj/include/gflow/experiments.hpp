#pragma once

// The seven named experiments of the batch runner, their settings (read
// from a ConfigDocument), and the run/exit-code contract:
//   0 every check passed, 2 a check failed, 3 a solve failed, 4 bad config.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gflow/artifacts.hpp"
#include "gflow/config.hpp"
#include "gflow/fields.hpp"
#include "gflow/flows.hpp"
#include "gflow/functionals.hpp"
#include "gflow/gamma.hpp"
#include "gflow/io.hpp"
#include "gflow/minimality.hpp"

namespace gflow::lab {

enum ExitCode : int { exit_pass = 0, exit_assertion = 2, exit_solver = 3, exit_config = 4 };

struct CatalogEntry {
  std::string id;
  std::string module;
  std::string exercises;
};

inline const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries{
      {"allen_cahn_kink", "flows",
       "double-well gradient flow: stationary tanh layer, weak Euler-Lagrange residual, maximum principle"},
      {"allen_cahn_circle", "flows", "double-well gradient flow in 2D: shrinking circle against the curvature law"},
      {"heat_minimality", "minimality",
       "parabolic-minimum inequality for the heat flow: positive control across refinements, bump-perturbed "
       "negative control"},
      {"plap_dissipation", "flows", "p-Laplace evolution: energy decay and the discrete dissipation inequality"},
      {"homogenization_sweep", "gamma",
       "oscillating filtration coefficients: convergence to the harmonic-mean flow, minimality of the limit"},
      {"gl_gamma_sweep", "gamma",
       "double-well functionals as eps -> 0: recovery sequences, surface tension, flows from recovery data"},
      {"validators", "functionals",
       "growth and Hoelder-modulus conditions on the built-in densities and planted counterexamples"},
  };
  return entries;
}

inline std::string catalog_text() {
  std::string out;
  for (const auto& e : catalog()) {
    out += e.id;
    out.append(std::size_t(std::max<int>(1, 22 - int(e.id.size()))), ' ');
    out += "[" + e.module + "] " + e.exercises + "\n";
  }
  return out;
}

// ---- settings ----

struct Common {
  std::string id;
  std::filesystem::path output_dir;
  int workers = 1;
  bool operator==(const Common&) const = default;
};

struct KinkSettings {
  int cells = 2048;
  double lo = -1.0, hi = 1.0, t_final = 1.0, eps = 0.05;
  int levels = 10, substeps = 100;
  int residual_cells = 4096, residual_levels = 4, residual_substeps = 25;
  int bank_count = 16;
  std::uint64_t bank_seed = 2024;
  double amp_lo = 0.1, amp_hi = 1.0;
  int mp_cells = 256, mp_levels = 20, mp_substeps = 20;
  double mp_t_final = 1.0;
  double tol_drift = 1e-3, tol_residual = 1e-6, tol_max_principle = 1e-12;
  bool snapshot = true;
  bool operator==(const KinkSettings&) const = default;
};

struct CircleSettings {
  int cells = 512;
  double half_width = 0.5, eps = 0.02, r0 = 0.3, dt = 0.005, t_final = 104.0, record_every = 2.0;
  double tol_radius = 0.02, min_radius_factor = 4.0;
  bool snapshot = false;
  bool operator==(const CircleSettings&) const = default;
};

struct HeatSettings {
  std::vector<int> refinements{64, 128, 256};
  double t_final = 0.1, dt_factor = 1.0;
  int bank_count = 64;
  std::uint64_t bank_seed = 2024;
  double amp_lo = 1e-3, amp_hi = 1.0;
  int negative_cells = 128, negative_count = 10;
  std::uint64_t negative_seed = 1;
  double negative_amplitude = 0.2;
  double tol_factor = 5.0, flag_multiple = 10.0, order_band = 0.1;
  bool operator==(const HeatSettings&) const = default;
};

struct PlapSettings {
  int cells = 256, levels = 100, substeps = 10;
  double t_final = 0.1, t_compare = 0.01;
  std::vector<double> p{2.0, 4.0};
  double tol_energy_step = 1e-10, tol_halved_step = 0.02;
  bool operator==(const PlapSettings&) const = default;
};

struct HomogSettings {
  int cells = 1024, levels = 1000;
  double t_final = 0.1;
  std::vector<double> eps{0.25, 0.125, 0.0625, 0.03125};
  int bank_count = 64;
  std::uint64_t bank_seed = 2024;
  double amp_lo = 1e-3, amp_hi = 1.0;
  double tol_relative_l2 = 0.02, gradient_band = 0.1;
  bool operator==(const HomogSettings&) const = default;
};

struct GlSettings {
  std::vector<double> eps{0.1, 0.05, 0.025, 0.0125};
  int base_cells = 8192;
  double lo = -1.0, hi = 1.0;
  std::vector<double> interfaces{0.0};
  int first_sign = -1;
  double flow_t_final = 0.01, max_dt = 0.05, time_rescale_exponent = 2.0;
  int flow_levels = 10;
  double tol_recovery = 0.02, tol_flow_energy = 0.05, tol_liminf = 0.05;
  bool operator==(const GlSettings&) const = default;
};

struct ValidatorSettings {
  int samples = 10000;
  std::uint64_t seed = 0x5eed1a2b;
  bool operator==(const ValidatorSettings&) const = default;
};

using Settings = std::variant<KinkSettings, CircleSettings, HeatSettings, PlapSettings, HomogSettings, GlSettings,
                              ValidatorSettings>;

struct ExperimentConfig {
  Common common;
  Settings settings;
};

struct Overrides {
  std::optional<std::filesystem::path> output_dir;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline void require_decreasing(ConfigDocument& doc, const std::string& section, const std::string& key,
                               const std::vector<double>& v) {
  if (v.empty()) throw ConfigError(doc.source(), doc.line_of(section, key), section + "." + key + " is empty");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0))
      throw ConfigError(doc.source(), doc.line_of(section, key), section + "." + key + " entries must be positive");
    if (i > 0 && !(v[i] < v[i - 1]))
      throw ConfigError(doc.source(), doc.line_of(section, key), section + "." + key + " must be strictly decreasing");
  }
}

inline int as_int(long long v) { return int(v); }

inline KinkSettings read_kink(ConfigDocument& d) {
  KinkSettings s;
  s.cells = as_int(d.get_int("grid", "cells", s.cells, 8));
  s.lo = d.get_double("grid", "lo", s.lo);
  s.hi = d.get_double("grid", "hi", s.hi);
  s.t_final = d.get_positive("grid", "t_final", s.t_final);
  s.levels = as_int(d.get_int("grid", "levels", s.levels, 1));
  s.substeps = as_int(d.get_int("grid", "substeps", s.substeps, 1));
  s.eps = d.get_positive("model", "eps", s.eps);
  s.residual_cells = as_int(d.get_int("residual", "cells", s.residual_cells, 8));
  s.residual_levels = as_int(d.get_int("residual", "levels", s.residual_levels, 1));
  s.residual_substeps = as_int(d.get_int("residual", "substeps", s.residual_substeps, 1));
  s.bank_count = as_int(d.get_int("residual", "bank_count", s.bank_count, 1));
  s.amp_lo = d.get_positive("residual", "amplitude_min", s.amp_lo);
  s.amp_hi = d.get_positive("residual", "amplitude_max", s.amp_hi);
  s.bank_seed = std::uint64_t(d.get_int("seeds", "bank", (long long)s.bank_seed, 0));
  s.mp_cells = as_int(d.get_int("max_principle", "cells", s.mp_cells, 3));
  s.mp_levels = as_int(d.get_int("max_principle", "levels", s.mp_levels, 1));
  s.mp_substeps = as_int(d.get_int("max_principle", "substeps", s.mp_substeps, 1));
  s.mp_t_final = d.get_positive("max_principle", "t_final", s.mp_t_final);
  s.tol_drift = d.get_positive("tolerances", "drift", s.tol_drift);
  s.tol_residual = d.get_positive("tolerances", "residual", s.tol_residual);
  s.tol_max_principle = d.get_positive("tolerances", "max_principle", s.tol_max_principle);
  s.snapshot = d.get_bool("output", "snapshot", s.snapshot);
  if (!(s.lo < s.hi)) throw ConfigError(d.source(), d.line_of("grid", "hi"), "grid.lo must be below grid.hi");
  if (s.amp_lo > s.amp_hi)
    throw ConfigError(d.source(), d.line_of("residual", "amplitude_max"), "amplitude_min exceeds amplitude_max");
  return s;
}

inline CircleSettings read_circle(ConfigDocument& d) {
  CircleSettings s;
  s.cells = as_int(d.get_int("grid", "cells", s.cells, 8));
  s.half_width = d.get_positive("grid", "half_width", s.half_width);
  s.dt = d.get_positive("grid", "dt", s.dt);
  s.t_final = d.get_positive("grid", "t_final", s.t_final);
  s.record_every = d.get_positive("grid", "record_every", s.record_every);
  s.eps = d.get_positive("model", "eps", s.eps);
  s.r0 = d.get_positive("model", "r0", s.r0);
  s.tol_radius = d.get_positive("tolerances", "radius", s.tol_radius);
  s.min_radius_factor = d.get_positive("tolerances", "min_radius_factor", s.min_radius_factor);
  s.snapshot = d.get_bool("output", "snapshot", s.snapshot);
  const double levels = s.t_final / s.record_every, steps = s.record_every / s.dt;
  if (std::abs(levels - std::round(levels)) > 1e-9 * levels)
    throw ConfigError(d.source(), d.line_of("grid", "record_every"), "t_final must be a multiple of record_every");
  if (std::abs(steps - std::round(steps)) > 1e-9 * steps)
    throw ConfigError(d.source(), d.line_of("grid", "dt"), "record_every must be a multiple of dt");
  if (!(s.r0 < s.half_width))
    throw ConfigError(d.source(), d.line_of("model", "r0"), "model.r0 must fit inside the box");
  return s;
}

inline HeatSettings read_heat(ConfigDocument& d) {
  HeatSettings s;
  std::vector<long long> def(s.refinements.begin(), s.refinements.end());
  const auto cells = d.get_ints("grid", "cells", def, 8);
  s.refinements.assign(cells.begin(), cells.end());
  for (std::size_t i = 1; i < s.refinements.size(); ++i)
    if (s.refinements[i] <= s.refinements[i - 1])
      throw ConfigError(d.source(), d.line_of("grid", "cells"), "grid.cells must be increasing");
  s.t_final = d.get_positive("grid", "t_final", s.t_final);
  s.dt_factor = d.get_positive("grid", "dt_factor", s.dt_factor);
  s.bank_count = as_int(d.get_int("bank", "count", s.bank_count, 1));
  s.amp_lo = d.get_positive("bank", "amplitude_min", s.amp_lo);
  s.amp_hi = d.get_positive("bank", "amplitude_max", s.amp_hi);
  s.bank_seed = std::uint64_t(d.get_int("seeds", "bank", (long long)s.bank_seed, 0));
  s.negative_seed = std::uint64_t(d.get_int("seeds", "negative", (long long)s.negative_seed, 0));
  s.negative_cells = as_int(d.get_int("negative", "cells", s.negative_cells, 8));
  s.negative_count = as_int(d.get_int("negative", "count", s.negative_count, 1));
  s.negative_amplitude = d.get_positive("negative", "amplitude", s.negative_amplitude);
  s.tol_factor = d.get_positive("tolerances", "factor", s.tol_factor);
  s.flag_multiple = d.get_positive("tolerances", "flag_multiple", s.flag_multiple);
  s.order_band = d.get_positive("tolerances", "order_band", s.order_band);
  if (s.amp_lo > s.amp_hi)
    throw ConfigError(d.source(), d.line_of("bank", "amplitude_max"), "amplitude_min exceeds amplitude_max");
  return s;
}

inline PlapSettings read_plap(ConfigDocument& d) {
  PlapSettings s;
  s.cells = as_int(d.get_int("grid", "cells", s.cells, 8));
  s.levels = as_int(d.get_int("grid", "levels", s.levels, 1));
  s.substeps = as_int(d.get_int("grid", "substeps", s.substeps, 1));
  s.t_final = d.get_positive("grid", "t_final", s.t_final);
  s.t_compare = d.get_positive("grid", "t_compare", s.t_compare);
  s.p = d.get_doubles("model", "p", s.p);
  if (s.p.size() < 2) throw ConfigError(d.source(), d.line_of("model", "p"), "model.p needs at least two exponents");
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    if (!(s.p[i] > 1.0)) throw ConfigError(d.source(), d.line_of("model", "p"), "model.p entries must exceed 1");
    if (i > 0 && !(s.p[i] > s.p[i - 1]))
      throw ConfigError(d.source(), d.line_of("model", "p"), "model.p must be increasing");
  }
  const double k = s.t_compare / s.t_final * s.levels;
  if (!(s.t_compare <= s.t_final) || std::abs(k - std::round(k)) > 1e-9 * k)
    throw ConfigError(d.source(), d.line_of("grid", "t_compare"), "grid.t_compare must be a recorded time");
  s.tol_energy_step = d.get_positive("tolerances", "energy_step", s.tol_energy_step);
  s.tol_halved_step = d.get_positive("tolerances", "halved_step", s.tol_halved_step);
  return s;
}

inline HomogSettings read_homog(ConfigDocument& d) {
  HomogSettings s;
  s.cells = as_int(d.get_int("grid", "cells", s.cells, 8));
  s.levels = as_int(d.get_int("grid", "levels", s.levels, 1));
  s.t_final = d.get_positive("grid", "t_final", s.t_final);
  s.eps = d.get_doubles("sweep", "eps", s.eps);
  require_decreasing(d, "sweep", "eps", s.eps);
  s.bank_count = as_int(d.get_int("bank", "count", s.bank_count, 1));
  s.amp_lo = d.get_positive("bank", "amplitude_min", s.amp_lo);
  s.amp_hi = d.get_positive("bank", "amplitude_max", s.amp_hi);
  s.bank_seed = std::uint64_t(d.get_int("seeds", "bank", (long long)s.bank_seed, 0));
  s.tol_relative_l2 = d.get_positive("tolerances", "relative_l2", s.tol_relative_l2);
  s.gradient_band = d.get_positive("tolerances", "gradient_band", s.gradient_band);
  return s;
}

inline GlSettings read_gl(ConfigDocument& d) {
  GlSettings s;
  s.eps = d.get_doubles("sweep", "eps", s.eps);
  require_decreasing(d, "sweep", "eps", s.eps);
  s.base_cells = as_int(d.get_int("sweep", "base_cells", s.base_cells, 8));
  s.lo = d.get_double("sweep", "lo", s.lo);
  s.hi = d.get_double("sweep", "hi", s.hi);
  s.interfaces = d.get_doubles("sweep", "interfaces", s.interfaces);
  s.first_sign = as_int(d.get_int("sweep", "first_sign", s.first_sign, -1));
  if (s.first_sign != 1 && s.first_sign != -1)
    throw ConfigError(d.source(), d.line_of("sweep", "first_sign"), "sweep.first_sign must be 1 or -1");
  s.flow_t_final = d.get_positive("flow", "t_final", s.flow_t_final);
  s.flow_levels = as_int(d.get_int("flow", "levels", s.flow_levels, 1));
  s.max_dt = d.get_positive("flow", "max_dt", s.max_dt);
  s.time_rescale_exponent = d.get_double("flow", "time_rescale_exponent", s.time_rescale_exponent);
  s.tol_recovery = d.get_positive("tolerances", "recovery", s.tol_recovery);
  s.tol_flow_energy = d.get_positive("tolerances", "flow_energy", s.tol_flow_energy);
  s.tol_liminf = d.get_positive("tolerances", "liminf", s.tol_liminf);
  if (!(s.lo < s.hi)) throw ConfigError(d.source(), d.line_of("sweep", "hi"), "sweep.lo must be below sweep.hi");
  return s;
}

inline ValidatorSettings read_validators(ConfigDocument& d) {
  ValidatorSettings s;
  s.samples = as_int(d.get_int("validators", "samples", s.samples, 1));
  s.seed = std::uint64_t(d.get_int("seeds", "validators", (long long)s.seed, 0));
  return s;
}

inline void apply_seed(Settings& s, std::uint64_t seed) {
  std::visit([seed](auto& v) {
    using T = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<T, KinkSettings> || std::is_same_v<T, HomogSettings>) v.bank_seed = seed;
    else if constexpr (std::is_same_v<T, HeatSettings>) {
      v.bank_seed = seed;
      v.negative_seed = seed;
    } else if constexpr (std::is_same_v<T, ValidatorSettings>) v.seed = seed;
  }, s);
}

}  // namespace detail

/// Reads and validates a whole document; any problem is a ConfigError.
inline ExperimentConfig parse_config(ConfigDocument doc, const Overrides& ov = {}) {
  ExperimentConfig cfg;
  const auto id = doc.take("experiment", "id");
  if (!id) throw ConfigError(doc.source(), 0, "missing [experiment] id");
  cfg.common.id = id->value;
  bool known = false;
  for (const auto& e : catalog()) known = known || e.id == id->value;
  if (!known) throw ConfigError(doc.source(), id->line, "unknown experiment id '" + id->value + "' (see --list)");
  cfg.common.output_dir = doc.get_string("experiment", "output_dir", "out/" + cfg.common.id);
  cfg.common.workers = detail::as_int(doc.get_int("experiment", "workers", 1, 1));

  const std::string& x = cfg.common.id;
  if (x == "allen_cahn_kink") cfg.settings = detail::read_kink(doc);
  else if (x == "allen_cahn_circle") cfg.settings = detail::read_circle(doc);
  else if (x == "heat_minimality") cfg.settings = detail::read_heat(doc);
  else if (x == "plap_dissipation") cfg.settings = detail::read_plap(doc);
  else if (x == "homogenization_sweep") cfg.settings = detail::read_homog(doc);
  else if (x == "gl_gamma_sweep") cfg.settings = detail::read_gl(doc);
  else cfg.settings = detail::read_validators(doc);
  doc.reject_unused();

  if (ov.output_dir) cfg.common.output_dir = *ov.output_dir;
  if (ov.workers) {
    if (*ov.workers < 1) throw ConfigError("--workers", 0, "must be >= 1");
    cfg.common.workers = *ov.workers;
  }
  if (ov.seed) detail::apply_seed(cfg.settings, *ov.seed);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& ov = {}) {
  return parse_config(ConfigDocument::load(path), ov);
}

/// Built-in defaults for an experiment id.
inline ExperimentConfig default_config(const std::string& id, const Overrides& ov = {}) {
  std::istringstream in("[experiment]\nid = " + id + "\n");
  return parse_config(ConfigDocument::parse(in, "<defaults>"), ov);
}

// ---- outcome ----

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Outcome {
  std::string id;
  std::vector<Check> checks;
  std::vector<std::string> solver_failures;
  nlohmann::json numbers = nlohmann::json::object();

  void check(std::string name, bool pass, std::string detail) {
    checks.push_back({std::move(name), pass, std::move(detail)});
  }
  bool passed() const {
    return solver_failures.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
  int exit_code() const {
    if (!solver_failures.empty()) return exit_solver;
    return passed() ? exit_pass : exit_assertion;
  }
  const Check* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

namespace detail {

/// CSV text built row by row with shortest round-trip numbers.
class Csv {
 public:
  explicit Csv(const std::string& header) : text_(header + "\n") {}
  template <class... T>
  void row(const T&... cells) {
    bool first = true;
    ((text_ += (first ? "" : ","), text_ += cell(cells), first = false), ...);
    text_ += "\n";
  }
  const std::string& str() const { return text_; }

 private:
  template <class T>
  static std::string cell(const T& v) {
    if constexpr (std::is_same_v<T, bool>) return v ? "1" : "0";
    else if constexpr (std::is_integral_v<T>) return std::to_string(v);
    else if constexpr (std::is_floating_point_v<T>) return fmt_double(double(v));
    else return std::string(v);
  }
  std::string text_;
};

inline std::string snapshot_bytes(const SpaceTimeField& u) {
  std::ostringstream os(std::ios::binary);
  write_snapshot(os, u);
  return os.str();
}

inline std::string metadata_text(const FlowSolution& sol) {
  auto m = sol.metadata;
  const Grid& g = sol.field.grid();
  m["boundary"] = to_string(sol.field.boundary());
  m["t_final"] = fmt_double(g.t_final);
  m["lo_x"] = fmt_double(g.lo[0]);
  m["hi_x"] = fmt_double(g.hi[0]);
  if (g.dim == 2) {
    m["lo_y"] = fmt_double(g.lo[1]);
    m["hi_y"] = fmt_double(g.hi[1]);
  }
  std::ostringstream os;
  write_metadata(os, m);
  return os.str();
}

inline FlowProblem kink_problem(int cells, double lo, double hi, double eps, int levels, int substeps, double T) {
  FlowProblem p;
  p.grid = Grid::line(cells, lo, hi, levels, T);
  p.substeps = substeps;
  p.boundary = FlowBoundary::clamped;
  p.epsilon = eps;
  p.initial = SpatialField::sample(p.grid, 1, BoundaryKind::free,
                                   [&](const Point& x) { return std::tanh(x[0] / (std::numbers::sqrt2 * eps)); });
  return p;
}

// Heat benchmark: sin(pi x) on (0,1), dt = dt_factor h^2.
inline FlowProblem heat_problem(int cells, double t_final, double dt_factor) {
  FlowProblem p;
  const double h = 1.0 / cells;
  const int steps = std::max(1, int(std::lround(t_final / (dt_factor * h * h))));
  p.grid = Grid::line(cells, 0.0, 1.0, steps, t_final);
  p.initial = SpatialField::sample(p.grid, 1, BoundaryKind::dirichlet_zero,
                                   [](const Point& x) { return std::sin(std::numbers::pi * x[0]); });
  return p;
}

inline FunctionalSpec identity_filtration(const Grid& g) {
  return make_filtration([](const Point&, double) { return Mat2{1.0, 0.0, 0.0, 1.0}; }, {}, 1, Domain::of(g));
}

}  // namespace detail

// ---- experiments ----

inline Outcome run_allen_cahn_kink(const Common&, const KinkSettings& s, ArtifactWriter& out) {
  Outcome o;
  // Drift of the stationary layer.
  const FlowProblem prob = detail::kink_problem(s.cells, s.lo, s.hi, s.eps, s.levels, s.substeps, s.t_final);
  const FlowSolution sol = solve_allen_cahn(prob);
  const Grid& g = prob.grid;
  detail::Csv drift_csv("t,max_drift,energy");
  double drift = 0.0;
  bool monotone = true;
  for (int k = 0; k <= g.n_time_steps; ++k) {
    double d = 0.0;
    for (std::size_t n = 0; n < g.space_size(); ++n) d = std::max(d, std::abs(sol.field(k, n, 0) - prob.initial(n, 0)));
    drift = std::max(drift, d);
    if (k > 0 && sol.energy_trace[std::size_t(k)] > sol.energy_trace[std::size_t(k) - 1] + 1e-10) monotone = false;
    drift_csv.row(g.t(k), d, sol.energy_trace[std::size_t(k)]);
  }
  detail::Csv profile("x,u0,u_final");
  for (std::size_t n = 0; n < g.space_size(); ++n)
    profile.row(g.point(n)[0], prob.initial(n, 0), sol.field(g.n_time_steps, n, 0));
  out.write("kink_drift.csv", drift_csv.str());
  out.write("kink_profile.csv", profile.str());
  if (s.snapshot) {
    out.write("kink.bin", detail::snapshot_bytes(sol.field));
    out.write("kink.meta", detail::metadata_text(sol));
  }
  o.check("kink_drift", drift < s.tol_drift, "max drift " + fmt_double(drift) + " (limit " + fmt_double(s.tol_drift) + ")");
  o.check("kink_energy_monotone", monotone, "discrete energy non-increasing (1e-10 per level)");
  o.numbers["max_drift"] = drift;

  // Weak residual of the solved layer on the finer grid.
  const FlowProblem fine = detail::kink_problem(s.residual_cells, s.lo, s.hi, s.eps, s.residual_levels,
                                                s.residual_substeps, s.t_final);
  const FlowSolution fsol = solve_allen_cahn(fine);
  const auto bank = generate_eta_bank(fine.grid, 1, s.bank_count, s.bank_seed, s.amp_lo, s.amp_hi);
  const auto res = el_residuals(fsol.field, fsol.initial_data, make_ginzburg_landau(s.eps, 1, Domain::of(fine.grid)),
                                PhiMap::identity(), bank);
  detail::Csv res_csv("eta,family,amplitude,residual");
  double worst = 0.0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    res_csv.row(bank[i].id, bank[i].family, bank[i].amplitude, res[i]);
    worst = std::max(worst, res[i]);
  }
  out.write("kink_residual.csv", res_csv.str());
  o.check("kink_el_residual", worst <= s.tol_residual,
          "max residual " + fmt_double(worst) + " (limit " + fmt_double(s.tol_residual) + ") at " +
              std::to_string(s.residual_cells) + " cells");
  o.numbers["max_el_residual"] = worst;

  // Maximum principle from data >= 1 (boundary clamped at 1).
  FlowProblem mp;
  mp.grid = Grid::line(s.mp_cells, 0.0, 1.0, s.mp_levels, s.mp_t_final);
  mp.substeps = s.mp_substeps;
  mp.boundary = FlowBoundary::clamped;
  mp.epsilon = s.eps;
  mp.initial = SpatialField::sample(mp.grid, 1, BoundaryKind::free, [](const Point& x) {
    const double b = std::sin(std::numbers::pi * x[0]);
    return 1.0 + 0.5 * b * b + 0.25 * std::sin(6.0 * std::numbers::pi * x[0]) * b * b;
  });
  const FlowSolution msol = solve_allen_cahn(mp);
  detail::Csv mp_csv("t,min_u,max_u");
  double lowest = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= mp.grid.n_time_steps; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t n = 0; n < mp.grid.space_size(); ++n) {
      lo = std::min(lo, msol.field(k, n, 0));
      hi = std::max(hi, msol.field(k, n, 0));
    }
    lowest = std::min(lowest, lo);
    mp_csv.row(mp.grid.t(k), lo, hi);
  }
  out.write("max_principle.csv", mp_csv.str());
  o.check("max_principle", lowest >= 1.0 - s.tol_max_principle,
          "min u " + fmt_double(lowest) + " (floor 1 - " + fmt_double(s.tol_max_principle) + ")");
  o.numbers["max_principle_min_u"] = lowest;
  return o;
}

inline Outcome run_allen_cahn_circle(const Common&, const CircleSettings& s, ArtifactWriter& out) {
  Outcome o;
  const int levels = int(std::lround(s.t_final / s.record_every));
  FlowProblem p;
  p.grid = Grid::square(s.cells, s.cells, {-s.half_width, -s.half_width}, {s.half_width, s.half_width}, levels,
                        s.t_final);
  p.substeps = int(std::lround(s.record_every / s.dt));
  p.boundary = FlowBoundary::clamped;
  p.epsilon = s.eps;
  // Equilibrium layer across the circle, outside phase -1 (clamped on the box boundary).
  const double w = std::numbers::sqrt2 * s.eps;
  p.initial = SpatialField::sample(p.grid, 1, BoundaryKind::free, [&](const Point& x) {
    return std::tanh((s.r0 - std::hypot(x[0], x[1])) / w);
  });
  const FlowSolution sol = solve_allen_cahn(p);
  detail::Csv csv("t,radius,law_radius,relative_error_r2,checked");
  double worst = 0.0;
  int checked = 0;
  for (int k = 0; k <= levels; ++k) {
    const double t = p.grid.t(k);
    const double law2 = s.r0 * s.r0 - 2.0 * s.eps * s.eps * t;
    if (law2 <= 0.0) break;
    double r = 0.0;
    bool has_front = true;
    try {
      r = front_radius(sol.field.level_field(k));
    } catch (const std::exception&) {
      has_front = false;
    }
    const bool in_range = has_front && r > s.min_radius_factor * s.eps;
    const double rel = has_front ? std::abs(r * r - law2) / law2 : std::numeric_limits<double>::quiet_NaN();
    if (in_range) {
      ++checked;
      worst = std::max(worst, rel);
    }
    csv.row(t, has_front ? r : std::numeric_limits<double>::quiet_NaN(), std::sqrt(law2), rel, in_range);
  }
  out.write("circle_radius.csv", csv.str());
  if (s.snapshot) {
    out.write("circle.bin", detail::snapshot_bytes(sol.field));
    out.write("circle.meta", detail::metadata_text(sol));
  }
  o.check("circle_levels_checked", checked >= 2, std::to_string(checked) + " recorded levels with R > " +
                                                      fmt_double(s.min_radius_factor) + " eps");
  o.check("circle_curvature_law", checked >= 2 && worst <= s.tol_radius,
          "max relative R^2 error " + fmt_double(worst) + " (limit " + fmt_double(s.tol_radius) + ")");
  o.numbers["max_relative_error_r2"] = worst;
  o.numbers["levels_checked"] = checked;
  return o;
}

inline Outcome run_heat_minimality(const Common& c, const HeatSettings& s, ArtifactWriter& out) {
  Outcome o;
  detail::Csv summary("cells,h,dt,tolerance,min_slack,worst_eta,pass");
  std::vector<std::pair<double, double>> h_tol;
  bool all_pass = true, order_ok = true;
  for (int cells : s.refinements) {
    const FlowProblem p = detail::heat_problem(cells, s.t_final, s.dt_factor);
    const FlowSolution sol = solve_filtration(p);
    const FunctionalSpec spec = detail::identity_filtration(p.grid);
    const auto bank = generate_eta_bank(p.grid, 1, s.bank_count, s.bank_seed, s.amp_lo, s.amp_hi);
    const double tol = s.tol_factor / 5.0 * calibrated_tolerance(sol.field, spec);
    const MinimalityReport r =
        check_parabolic_minimum(sol.field, p.phi, sol.initial_data, spec, bank, tol, {.workers = c.workers});
    std::ostringstream rep;
    write_minimality_report(rep, r);
    out.write("minimality_" + std::to_string(cells) + ".txt", rep.str());
    summary.row(cells, p.grid.h(0), p.grid.dt(), tol, r.min_slack, r.worst_eta, r.pass);
    all_pass = all_pass && r.pass;
    h_tol.emplace_back(p.grid.h(0), tol);
  }
  // dt tracks h^2, so the tolerance should fall like h^2.
  for (std::size_t i = 1; i < h_tol.size(); ++i) {
    const double ratio = h_tol[i].second / h_tol[i - 1].second;
    const double expected = std::pow(h_tol[i].first / h_tol[i - 1].first, 2.0);
    if (std::abs(ratio / expected - 1.0) > s.order_band) order_ok = false;
  }
  out.write("minimality_summary.csv", summary.str());
  o.check("positive_control", all_pass, "heat solution passes at every refinement");
  o.check("tolerance_order", order_ok && s.refinements.size() >= 2,
          "tol shrinks like h^2 within " + fmt_double(s.order_band) + " across refinements");

  // Negative control: solution plus a time-constant interior bump.
  const FlowProblem p = detail::heat_problem(s.negative_cells, s.t_final, s.dt_factor);
  const FlowSolution sol = solve_filtration(p);
  const FunctionalSpec spec = detail::identity_filtration(p.grid);
  const auto bank = generate_eta_bank(p.grid, 1, s.bank_count, s.bank_seed, s.amp_lo, s.amp_hi);
  const double tol = s.tol_factor / 5.0 * calibrated_tolerance(sol.field, spec);
  detail::Csv neg("seed,min_slack,tolerance,ratio,worst_eta,flagged");
  int flagged = 0;
  for (int i = 0; i < s.negative_count; ++i) {
    const std::uint64_t seed = s.negative_seed + std::uint64_t(i);
    const SpaceTimeField bad = bump_perturbation(sol.field, seed, s.negative_amplitude);
    const MinimalityReport r =
        check_parabolic_minimum(bad, p.phi, sol.initial_data, spec, bank, tol, {.workers = c.workers});
    const bool hit = r.min_slack < -s.flag_multiple * tol;
    flagged += hit;
    neg.row(seed, r.min_slack, tol, -r.min_slack / tol, r.worst_eta, hit);
  }
  out.write("negative_control.csv", neg.str());
  o.check("negative_control", flagged == s.negative_count,
          std::to_string(flagged) + "/" + std::to_string(s.negative_count) + " perturbed fields below -" +
              fmt_double(s.flag_multiple) + " tol");
  o.numbers["negative_flagged"] = flagged;
  return o;
}

inline Outcome run_plap_dissipation(const Common&, const PlapSettings& s, ArtifactWriter& out) {
  Outcome o;
  const auto problem = [&](double p, int substeps) {
    FlowProblem prob;
    prob.grid = Grid::line(s.cells, 0.0, 1.0, s.levels, s.t_final);
    prob.substeps = substeps;
    prob.p = p;
    prob.initial = SpatialField::sample(prob.grid, 1, BoundaryKind::dirichlet_zero,
                                        [](const Point& x) { return std::sin(std::numbers::pi * x[0]); });
    return prob;
  };
  const int k_cmp = int(std::lround(s.t_compare / s.t_final * s.levels));
  detail::Csv cmp("p,energy_0,energy_compare,relative_decay,energy_compare_halved_step,halved_step_difference");
  std::vector<double> decay;
  for (double p : s.p) {
    const FlowProblem prob = problem(p, s.substeps);
    const FlowSolution sol = solve_p_laplace(prob);
    const FlowSolution ref = solve_p_laplace(problem(p, 2 * s.substeps));
    const Grid& g = prob.grid;
    const std::string tag = "p" + fmt_double(p);
    detail::Csv csv("t,energy,dissipated");
    bool monotone = true;
    double dissipated = 0.0;
    csv.row(0.0, sol.energy_trace[0], 0.0);
    for (int k = 1; k <= g.n_time_steps; ++k) {
      double q = 0.0;
      for (std::size_t n = 0; n < g.space_size(); ++n) {
        const double d = (sol.field(k, n, 0) - sol.field(k - 1, n, 0)) / g.dt();
        q += g.space_weight(n) * d * d;
      }
      dissipated += g.dt() * q;
      if (sol.energy_trace[std::size_t(k)] > sol.energy_trace[std::size_t(k) - 1] + s.tol_energy_step) monotone = false;
      csv.row(g.t(k), sol.energy_trace[std::size_t(k)], dissipated);
    }
    out.write("plap_energy_" + tag + ".csv", csv.str());

    // Implicit steps satisfy E(T) + int |u_t|^2 <= E(0).
    const double e0 = sol.energy_trace.front(), lhs = sol.energy_trace.back() + dissipated;
    const double ec = sol.energy_trace[std::size_t(k_cmp)], ec_ref = ref.energy_trace[std::size_t(k_cmp)];
    const double rel = std::abs(ec - ec_ref) / ec_ref;
    decay.push_back((e0 - ec) / e0);
    cmp.row(p, e0, ec, decay.back(), ec_ref, rel);
    o.check("energy_monotone_" + tag, monotone, "energy non-increasing, slack " + fmt_double(s.tol_energy_step));
    o.check("dissipation_" + tag, lhs <= e0 + s.tol_energy_step * g.n_time_steps,
            "E(T) + int |u_t|^2 = " + fmt_double(lhs) + " <= E(0) = " + fmt_double(e0));
    o.check("halved_step_" + tag, rel <= s.tol_halved_step,
            "energy at t=" + fmt_double(s.t_compare) + " within " + fmt_double(rel) + " of the halved-step run");
  }
  out.write("plap_comparison.csv", cmp.str());
  bool ordered = true;
  for (std::size_t i = 1; i < decay.size(); ++i) ordered = ordered && decay[i] > decay[i - 1];
  o.check("steeper_decays_faster", ordered,
          "relative energy decay at t=" + fmt_double(s.t_compare) + " increases with p when |Du| > 1");
  return o;
}

inline Outcome run_homogenization_sweep(const Common& c, const HomogSettings& s, ArtifactWriter& out) {
  Outcome o;
  const auto a = [](double y) { return 2.0 + std::sin(2.0 * std::numbers::pi * y); };
  const Grid g = Grid::line(s.cells, 0.0, 1.0, s.levels, s.t_final);
  const auto problem = [g](std::function<double(double)> coef) {
    FlowProblem p;
    p.grid = g;
    p.initial = SpatialField::sample(g, 1, BoundaryKind::dirichlet_zero,
                                     [](const Point& x) { return std::sin(std::numbers::pi * x[0]); });
    p.diffusion = [coef](const Point& x, double) {
      const double v = coef(x[0]);
      return Mat2{v, 0.0, 0.0, v};
    };
    return p;
  };
  const double ah = homogenized_coefficient_1d(a);
  const FlowSolution limit = solve_filtration(problem([ah](double) { return ah; }));
  SweepSetup setup;
  setup.family = oscillating_filtration_family(a, Domain::of(g));
  setup.problem_at = [&](double e) { return problem([a, e](double x) { return a(x / e); }); };
  setup.solve = solve_filtration;
  setup.limit_on = [&](const Grid&) { return limit.field; };
  setup.limit_id = "harmonic_mean_solution";
  setup.bank = {s.bank_count, s.bank_seed, s.amp_lo, s.amp_hi};
  setup.workers = c.workers;
  const EpsSweepReport r = run_sweep(setup, s.eps);
  for (const auto& m : r.members)
    if (!m.ok) o.solver_failures.push_back("eps " + fmt_double(m.eps) + ": " + m.failure);

  std::ostringstream csv;
  write_sweep_csv(csv, r);
  out.write("homogenization_sweep.csv", csv.str());
  for (const auto& [name, body] : sweep_plot_files(r, "homogenization")) out.write("plot/" + name, body);
  if (r.limit_minimality) {
    std::ostringstream rep;
    write_minimality_report(rep, *r.limit_minimality);
    out.write("limit_minimality.txt", rep.str());
  }
  out.write("homogenization_summary.json", sweep_summary(r).dump(2) + "\n");

  const double limit_norm = lp_norm(limit.field, 2.0);
  const double limit_grad = lp_norm(gradient(limit.field), 2.0);
  detail::Csv rel("eps,relative_l2");
  bool monotone = true, bounded = true;
  double last_rel = 0.0;
  for (std::size_t i = 0; i < r.members.size(); ++i) {
    const auto& m = r.members[i];
    if (!m.ok) continue;
    last_rel = m.sw.strong_lp_distance / limit_norm;
    rel.row(m.eps, last_rel);
    if (i > 0 && r.members[i - 1].ok && !(m.sw.strong_lp_distance < r.members[i - 1].sw.strong_lp_distance))
      monotone = false;
    if (m.sw.gradient_lp_bound > (1.0 + s.gradient_band) * limit_grad) bounded = false;
  }
  out.write("homogenization_relative_l2.csv", rel.str());
  o.check("distance_monotone", monotone && r.complete(), "L2(Omega_T) distance decreases with eps");
  o.check("distance_final", r.complete() && last_rel <= s.tol_relative_l2,
          "relative L2 distance " + fmt_double(last_rel) + " (limit " + fmt_double(s.tol_relative_l2) + ") at eps " +
              fmt_double(s.eps.back()));
  o.check("gradient_bounded", bounded, "gradient L2 norms within " + fmt_double(1.0 + s.gradient_band) +
                                           " x the limit's " + fmt_double(limit_grad));
  o.check("members_minimal", r.members_pass_minimality(), "every member passes against its own functional");
  o.check("limit_minimal", r.limit_minimality && r.limit_minimality->pass,
          r.limit_minimality ? "limit min_slack " + fmt_double(r.limit_minimality->min_slack) + ", tolerance " +
                                   fmt_double(r.limit_minimality->tolerance_used)
                             : r.limit_note);
  o.numbers["relative_l2_final"] = last_rel;
  return o;
}

inline Outcome run_gl_gamma_sweep(const Common& c, const GlSettings& s, ArtifactWriter& out) {
  Outcome o;
  const PhasePattern pat{s.interfaces, s.first_sign};
  const double limit = limit_perimeter_value(pat.count());
  const double base_eps = s.eps.back();

  const auto rows = recovery_table(pat, s.eps, s.lo, s.hi, s.base_cells, base_eps);
  detail::Csv rec("eps,cells,normalized_energy,relative_error,strong_l2");
  bool rec_monotone = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rec.row(rows[i].eps, rows[i].cells, rows[i].normalized_energy, rows[i].relative_error, rows[i].strong_l2);
    if (i > 0 && !(rows[i].relative_error < rows[i - 1].relative_error)) rec_monotone = false;
  }
  out.write("recovery.csv", rec.str());
  o.check("recovery_surface_tension", rows.back().relative_error <= s.tol_recovery,
          "|F/eps - limit|/limit = " + fmt_double(rows.back().relative_error) + " (tolerance " + fmt_double(s.tol_recovery) + ")" +
              " at eps " + fmt_double(rows.back().eps) + " (" + std::to_string(rows.back().cells) + " cells)");
  o.check("recovery_monotone", rec_monotone, "error decreases along the sweep");

  SweepSetup setup;
  setup.family = ginzburg_landau_family(pat.count());
  setup.problem_at = [&](double e) {
    FlowProblem p;
    p.grid = Grid::line(gl_cells(e, s.base_cells, base_eps), s.lo, s.hi, s.flow_levels, s.flow_t_final);
    const double fast_interval = s.flow_t_final * std::pow(e, -s.time_rescale_exponent) / s.flow_levels;
    p.substeps = std::max(1, int(std::ceil(fast_interval / s.max_dt - 1e-9)));
    p.boundary = FlowBoundary::clamped;
    p.epsilon = e;
    p.initial = recovery_sequence(p.grid, pat, e).level_field(0);
    return p;
  };
  setup.solve = solve_allen_cahn;
  setup.limit_on = [&](const Grid& g) { return SpaceTimeField::constant_in_time(sign_pattern(g, pat), g); };
  setup.limit_id = "sign_pattern";
  setup.workers = c.workers;
  setup.time_rescale_exponent = s.time_rescale_exponent;
  const EpsSweepReport r = run_sweep(setup, s.eps);
  for (const auto& m : r.members)
    if (!m.ok) o.solver_failures.push_back("eps " + fmt_double(m.eps) + ": " + m.failure);
  std::ostringstream csv;
  write_sweep_csv(csv, r);
  out.write("gl_sweep.csv", csv.str());
  for (const auto& [name, body] : sweep_plot_files(r, "gl")) out.write("plot/" + name, body);
  out.write("gl_summary.json", sweep_summary(r).dump(2) + "\n");

  bool within = true, monotone = true;
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& m : r.members) {
    if (!m.ok) continue;
    within = within && std::abs(m.normalized_value - limit) <= s.tol_flow_energy * limit;
    monotone = monotone && m.energy_monotone;
    lowest = std::min(lowest, m.normalized_value);
  }
  o.check("flow_initial_energy", within && r.complete(),
          "F(u(0))/eps within " + fmt_double(s.tol_flow_energy) + " of " + fmt_double(limit) + " for every member");
  o.check("flow_energy_monotone", monotone && r.complete(), "energy non-increasing along every member");
  o.check("liminf_bound", limit <= lowest * (1.0 + s.tol_liminf),
          fmt_double(limit) + " <= min F(u(0))/eps = " + fmt_double(lowest) + " + " + fmt_double(s.tol_liminf) +
              " slack");
  o.numbers["recovery_error_final"] = rows.back().relative_error;
  return o;
}

namespace detail {

struct NamedSpec {
  std::string name;
  FunctionalSpec spec;
  bool planted = false;  ///< expected to fail
  bool growth_fails = false, hoelder_fails = false;
};

inline std::vector<NamedSpec> validator_suite() {
  Domain d1, d2;
  d2.dim = 2;
  const double pi = std::numbers::pi;
  std::vector<NamedSpec> v;
  v.push_back({"ginzburg_landau eps=1", make_ginzburg_landau(1.0)});
  v.push_back({"ginzburg_landau eps=0.05", make_ginzburg_landau(0.05)});
  v.push_back({"ginzburg_landau 2d eps=0.02", make_ginzburg_landau(0.02, 2, d2)});
  v.push_back({"filtration 2+sin(16 pi x)", make_filtration([pi](const Point& x, double) {
                 const double a = 2.0 + std::sin(16.0 * pi * x[0]);
                 return Mat2{a, 0.0, 0.0, a};
               }, {}, 1, d1)});
  v.push_back({"filtration 2d anisotropic m=2",
               make_filtration([](const Point&, double t) { return Mat2{2.0, 0.5, 0.5, 1.0 + t}; }, {}, 2, d2)});
  v.push_back({"p_laplace p=4 a=1.5+cos x",
               make_p_laplace([](const Point& x, double) { return 1.5 + std::cos(x[0]); }, 4.0, 1, d1)});
  v.push_back({"p_laplace p=1.5", make_p_laplace([](const Point&, double) { return 1.0; }, 1.5, 1, d1)});
  v.push_back({"p_laplace 2d p=3", make_p_laplace([](const Point&, double) { return 2.0; }, 3.0, 2, d2)});

  // Planted counterexamples.
  NamedSpec neg{"planted: negative density", make_p_laplace([](const Point&, double) { return 1.0; }, 2.0, 1, d1), true,
                true, false};
  neg.spec.density = [](const Point&, double, std::span<const double>, std::span<const double> l) {
    return 0.5 * l[0] * l[0] - 1.0;
  };
  v.push_back(neg);
  NamedSpec fast{"planted: |lambda|^4 under declared p=2",
                 make_p_laplace([](const Point&, double) { return 1.0; }, 2.0, 1, d1), true, true, true};
  fast.spec.density = [](const Point&, double, std::span<const double>, std::span<const double> l) {
    return l[0] * l[0] * l[0] * l[0];
  };
  v.push_back(fast);
  NamedSpec jump{"planted: jump in u", make_p_laplace([](const Point&, double) { return 1.0; }, 2.0, 1, d1), true,
                 false, true};
  jump.spec.density = [](const Point&, double, std::span<const double> u, std::span<const double> l) {
    return 0.5 * l[0] * l[0] + (u[0] > 0.0 ? 0.5 : 0.0);
  };
  v.push_back(jump);
  return v;
}

}  // namespace detail

inline Outcome run_validators(const Common&, const ValidatorSettings& s, ArtifactWriter& out) {
  Outcome o;
  ValidatorOptions opt;
  opt.seed = s.seed;
  detail::Csv csv("density,check,expected,pass,worst_ratio,samples");
  bool builtins = true, planted = true;
  for (const auto& n : detail::validator_suite()) {
    const ValidatorResult g = check_growth(n.spec, std::size_t(s.samples), opt);
    const ValidatorResult h = check_hoelder(n.spec, std::size_t(s.samples), opt);
    csv.row(n.name, "growth", n.growth_fails ? "fail" : "pass", g.pass, g.worst_ratio, g.samples);
    csv.row(n.name, "hoelder", n.hoelder_fails ? "fail" : "pass", h.pass, h.worst_ratio, h.samples);
    if (!n.planted) builtins = builtins && g.pass && h.pass;
    else planted = planted && g.pass != n.growth_fails && h.pass != n.hoelder_fails;
  }
  out.write("validators.csv", csv.str());
  o.check("builtin_families_pass", builtins,
          "growth and Hoelder checks pass at declared constants over " + std::to_string(s.samples) + " samples");
  o.check("planted_counterexamples_fail", planted, "each planted density fails exactly the checks it violates");
  return o;
}

/// Runs one experiment into cfg.common.output_dir, writes summary.json and
/// the manifest, and returns the exit code. Progress goes to `log`.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log, Outcome* result = nullptr) {
  ArtifactWriter out(cfg.common.output_dir);
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  try {
    o = std::visit(
        [&](const auto& s) -> Outcome {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, KinkSettings>) return run_allen_cahn_kink(cfg.common, s, out);
          else if constexpr (std::is_same_v<T, CircleSettings>) return run_allen_cahn_circle(cfg.common, s, out);
          else if constexpr (std::is_same_v<T, HeatSettings>) return run_heat_minimality(cfg.common, s, out);
          else if constexpr (std::is_same_v<T, PlapSettings>) return run_plap_dissipation(cfg.common, s, out);
          else if constexpr (std::is_same_v<T, HomogSettings>) return run_homogenization_sweep(cfg.common, s, out);
          else if constexpr (std::is_same_v<T, GlSettings>) return run_gl_gamma_sweep(cfg.common, s, out);
          else return run_validators(cfg.common, s, out);
        },
        cfg.settings);
  } catch (const SolverFailure& e) {
    o.solver_failures.push_back(std::string(e.what()) + " (level " + std::to_string(e.level()) + ")");
  } catch (const std::exception& e) {
    o.solver_failures.push_back(e.what());
  }
  o.id = cfg.common.id;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::json j;
  j["experiment"] = o.id;
  j["exit_code"] = o.exit_code();
  j["verdict"] = o.passed() ? "pass" : "fail";
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& ch : o.checks) checks.push_back({{"name", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
  j["checks"] = checks;
  j["solver_failures"] = o.solver_failures;
  j["numbers"] = o.numbers;
  out.write("summary.json", j.dump(2) + "\n");
  out.write_manifest();

  for (const auto& ch : o.checks) log << (ch.pass ? "  ok    " : "  FAIL  ") << ch.name << ": " << ch.detail << "\n";
  for (const auto& f : o.solver_failures) log << "  SOLVER FAILURE: " << f << "\n";
  log << o.id << ": " << (o.passed() ? "pass" : "fail") << " (exit " << o.exit_code() << ", "
      << fmt_double(std::round(seconds * 10.0) / 10.0) << " s, " << out.hashes().size() << " files in "
      << cfg.common.output_dir.string() << ")\n";
  if (result) *result = o;
  return o.exit_code();
}

}  // namespace gflow::lab
