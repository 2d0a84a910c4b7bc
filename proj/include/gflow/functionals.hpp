#pragma once

// Integral functionals F(v) = int_{Omega_T} f(x, t, v, Dv) dx dt, sampled
// validators for the growth and Hoelder-modulus conditions, and the
// built-in density families (Ginzburg-Landau, filtration, p-Laplace).

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gflow/fields.hpp"

namespace gflow {

/// Sampling box for coefficient checks and validators.
struct Domain {
  int dim = 1;
  Point lo{0.0, 0.0};
  Point hi{1.0, 1.0};
  double t_final = 1.0;

  static Domain of(const Grid& g) { return {g.dim, g.lo, g.hi, g.t_final}; }
  Point at(const Point& unit) const {
    return {lo[0] + unit[0] * (hi[0] - lo[0]), dim == 2 ? lo[1] + unit[1] * (hi[1] - lo[1]) : 0.0};
  }
};

using DensityFn = std::function<double(const Point& x, double t, std::span<const double> u,
                                       std::span<const double> lambda)>;
using PartialFn = std::function<void(const Point& x, double t, std::span<const double> u,
                                     std::span<const double> lambda, std::span<double> out)>;
using ScalarCoefficient = std::function<double(const Point&, double)>;
using Mat2 = std::array<double, 4>;  // row-major; 1D uses entry 0
using MatrixCoefficient = std::function<Mat2(const Point&, double)>;
using VectorSource = std::function<void(const Point&, double, std::span<double>)>;

/// Density f(x, t, u, lambda) with u in R^m and lambda in R^{m*dim}
/// (row c holds du^c/dx_j), plus its structural constants.
struct FunctionalSpec {
  DensityFn density;
  PartialFn d_u;       ///< f_u, required by the weak residual
  PartialFn d_lambda;  ///< f_lambda, required by the weak residual
  int m = 1;
  int dim = 1;
  double p = 2.0;
  double growth_C = 1.0;
  double hoelder_alpha = 0.5;
  double hoelder_C = 1.0;
  std::string label;
  Domain domain;

  double conjugate_exponent() const { return p / (p - 1.0); }

  void validate() const {
    if (!density) throw std::invalid_argument("functional: missing density");
    if (!(p > 1.0)) throw std::invalid_argument("functional: p must exceed 1");
    if (!(hoelder_alpha > 0.0 && hoelder_alpha < 1.0))
      throw std::invalid_argument("functional: hoelder_alpha must lie in (0,1)");
    if (!(growth_C > 0.0) || !(hoelder_C > 0.0))
      throw std::invalid_argument("functional: constants must be positive");
    if (m < 1 || (dim != 1 && dim != 2)) throw std::invalid_argument("functional: bad m or dim");
  }
};

/// Raised when the density produces NaN/Inf; carries the sample location.
class NonFiniteDensity : public std::runtime_error {
 public:
  NonFiniteDensity(const Point& x, double t, double value)
      : std::runtime_error(describe(x, t, value)), x_(x), t_(t) {}
  const Point& where() const { return x_; }
  double when() const { return t_; }

 private:
  static std::string describe(const Point& x, double t, double v) {
    std::ostringstream os;
    os << "functional: non-finite density " << v << " at x=(" << x[0] << ", " << x[1] << "), t=" << t;
    return os.str();
  }
  Point x_;
  double t_;
};

namespace detail {

inline void require_compatible(const Grid& g, int m, const FunctionalSpec& spec) {
  if (m != spec.m || g.dim != spec.dim)
    throw std::invalid_argument("functional: field components/dimension do not match the density");
}

}  // namespace detail

/// int_Omega f(x, t, v, Dv) dx for a single time level.
inline double evaluate_energy(const SpatialField& v, const FunctionalSpec& spec, double t = 0.0) {
  detail::require_compatible(v.grid(), v.components(), spec);
  const SpatialField dv = gradient(v);
  const Grid& g = v.grid();
  double s = 0.0;
  for (std::size_t n = 0; n < g.space_size(); ++n) {
    const Point x = g.point(n);
    const double f = spec.density(x, t, v.at(n), dv.at(n));
    if (!std::isfinite(f)) throw NonFiniteDensity(x, t, f);
    s += g.space_weight(n) * f;
  }
  return s;
}

/// Per-level spatial integrals of the density (trapezoid in space).
inline std::vector<double> energy_per_level(const SpaceTimeField& v, const FunctionalSpec& spec) {
  detail::require_compatible(v.grid(), v.components(), spec);
  const Grid& g = v.grid();
  const SpaceTimeField dv = gradient(v);
  const auto ws = g.space_weights();
  std::vector<double> out(g.time_levels(), 0.0);
  for (int k = 0; k <= g.n_time_steps; ++k) {
    const double t = g.t(k);
    double s = 0.0;
    for (std::size_t n = 0; n < ws.size(); ++n) {
      const Point x = g.point(n);
      const double f = spec.density(x, t, v.at(k, n), dv.at(k, n));
      if (!std::isfinite(f)) throw NonFiniteDensity(x, t, f);
      s += ws[n] * f;
    }
    out[std::size_t(k)] = s;
  }
  return out;
}

/// F(v, Omega_T) by trapezoid quadrature in space and time. The optional
/// window [k_begin, k_end] restricts time to those levels, with trapezoid
/// end weights on the window ends, so windows sharing an endpoint add up.
inline double evaluate_functional(const SpaceTimeField& v, const FunctionalSpec& spec,
                                  std::optional<std::pair<int, int>> window = std::nullopt) {
  const Grid& g = v.grid();
  const auto e = energy_per_level(v, spec);
  const int k0 = window ? window->first : 0;
  const int k1 = window ? window->second : g.n_time_steps;
  if (k0 < 0 || k1 > g.n_time_steps || k0 > k1) throw std::invalid_argument("functional: bad time window");
  double s = 0.0;
  for (int k = k0; k <= k1; ++k) {
    const double w = (k == k0 || k == k1) ? 0.5 : 1.0;
    s += w * g.dt() * e[std::size_t(k)];
  }
  if (k0 == k1) return 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Validators

struct ValidatorResult {
  bool pass = true;
  double worst_ratio = 0.0;
  std::size_t samples = 0;
  std::string first_violation;
};

struct ValidatorOptions {
  std::uint64_t seed = 0x5eed'1a2bULL;
  double magnitude_min = 1e-3;
  double magnitude_max = 1e3;
};

namespace detail {

struct Sampler {
  std::mt19937_64 rng;
  ValidatorOptions opt;

  explicit Sampler(const ValidatorOptions& o) : rng(o.seed), opt(o) {}

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  double log_uniform(double a, double b) { return std::exp(uniform(std::log(a), std::log(b))); }

  // Random direction scaled to a log-uniform magnitude.
  void vector(std::span<double> out) {
    std::normal_distribution<double> nd(0.0, 1.0);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : out) {
        v = nd(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    const double r = log_uniform(opt.magnitude_min, opt.magnitude_max) / std::sqrt(norm);
    for (double& v : out) v *= r;
  }

  Point point(const Domain& d) { return d.at({uniform(0.0, 1.0), uniform(0.0, 1.0)}); }
  double time(const Domain& d) { return uniform(0.0, d.t_final); }
};

inline double norm(std::span<const double> v) { return euclidean(v); }

}  // namespace detail

/// Checks 0 <= f <= C (1 + |u|^p + |lambda|^p) on seeded samples and
/// reports max f / (1 + |u|^p + |lambda|^p).
inline ValidatorResult check_growth(const FunctionalSpec& spec, std::size_t sample_count,
                                    const ValidatorOptions& opt = {}) {
  if (sample_count < 1) throw std::invalid_argument("check_growth: sample_count must be >= 1");
  detail::Sampler s(opt);
  std::vector<double> u(std::size_t(spec.m)), lam(std::size_t(spec.m * spec.dim));
  ValidatorResult r;
  r.samples = sample_count;
  for (std::size_t i = 0; i < sample_count; ++i) {
    const Point x = s.point(spec.domain);
    const double t = s.time(spec.domain);
    s.vector(u);
    s.vector(lam);
    const double f = spec.density(x, t, u, lam);
    const double bound = 1.0 + std::pow(detail::norm(u), spec.p) + std::pow(detail::norm(lam), spec.p);
    const double ratio = f / bound;
    r.worst_ratio = std::max(r.worst_ratio, ratio);
    if (!(f >= 0.0) || !(ratio <= spec.growth_C)) {
      if (r.pass) {
        std::ostringstream os;
        os << "sample " << i << ": f=" << f << ", bound ratio " << ratio << " (C=" << spec.growth_C << ")";
        r.first_violation = os.str();
      }
      r.pass = false;
    }
  }
  return r;
}

/// Left side over right side of the Hoelder modulus condition for one pair;
/// 0 when both sides vanish.
inline double hoelder_ratio(const FunctionalSpec& spec, const Point& x, double t,
                            std::span<const double> u1, std::span<const double> l1,
                            std::span<const double> u2, std::span<const double> l2) {
  const double a = spec.hoelder_alpha;
  const double lhs = std::abs(spec.density(x, t, u1, l1) - spec.density(x, t, u2, l2));
  double du = 0.0, dl = 0.0;
  for (std::size_t i = 0; i < u1.size(); ++i) du += (u1[i] - u2[i]) * (u1[i] - u2[i]);
  for (std::size_t i = 0; i < l1.size(); ++i) dl += (l1[i] - l2[i]) * (l1[i] - l2[i]);
  const double q = spec.p - a;
  const double growth = 1.0 + std::pow(detail::norm(u1), q) + std::pow(detail::norm(u2), q) +
                        std::pow(detail::norm(l1), q) + std::pow(detail::norm(l2), q);
  const double rhs = (std::pow(std::sqrt(du), a) + std::pow(std::sqrt(dl), a)) * growth;
  if (lhs == 0.0) return 0.0;
  if (rhs == 0.0) return std::numeric_limits<double>::infinity();
  return lhs / (spec.hoelder_C * rhs);
}

/// Checks |f(u1,l1) - f(u2,l2)| <= C (|du|^a + |dl|^a)(1 + sum |.|^{p-a})
/// over seeded pairs: half independent, half nearby perturbations. The
/// reported ratio already divides by C, so it passes iff worst_ratio <= 1.
inline ValidatorResult check_hoelder(const FunctionalSpec& spec, std::size_t sample_count,
                                     const ValidatorOptions& opt = {}) {
  if (sample_count < 1) throw std::invalid_argument("check_hoelder: sample_count must be >= 1");
  detail::Sampler s(opt);
  const std::size_t nu = std::size_t(spec.m), nl = std::size_t(spec.m * spec.dim);
  std::vector<double> u1(nu), u2(nu), l1(nl), l2(nl), du(nu), dl(nl);
  ValidatorResult r;
  r.samples = sample_count;
  for (std::size_t i = 0; i < sample_count; ++i) {
    const Point x = s.point(spec.domain);
    const double t = s.time(spec.domain);
    s.vector(u1);
    s.vector(l1);
    if (i % 2 == 0) {
      s.vector(u2);
      s.vector(l2);
    } else {
      s.vector(du);
      s.vector(dl);
      const double su = s.log_uniform(1e-6, 1.0) * std::max(1.0, detail::norm(u1)) / detail::norm(du);
      const double sl = s.log_uniform(1e-6, 1.0) * std::max(1.0, detail::norm(l1)) / detail::norm(dl);
      for (std::size_t q = 0; q < nu; ++q) u2[q] = u1[q] + su * du[q];
      for (std::size_t q = 0; q < nl; ++q) l2[q] = l1[q] + sl * dl[q];
    }
    const double ratio = hoelder_ratio(spec, x, t, u1, l1, u2, l2);
    r.worst_ratio = std::max(r.worst_ratio, ratio);
    if (!(ratio <= 1.0)) {
      if (r.pass) {
        std::ostringstream os;
        os << "sample " << i << ": ratio " << ratio << " with C=" << spec.hoelder_C
           << ", alpha=" << spec.hoelder_alpha;
        r.first_violation = os.str();
      }
      r.pass = false;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Built-in families

/// Per-interface energy of the eps-normalized double-well functional,
/// int_{-1}^{1} (1 - s^2)/sqrt(2) ds = 2 sqrt(2) / 3.
inline constexpr double surface_tension = 2.0 * std::numbers::sqrt2 / 3.0;

/// f = 1/4 (u^2 - 1)^2 + eps^2/2 |lambda|^2, scalar, p = 4.
inline FunctionalSpec make_ginzburg_landau(double eps, int dim = 1, Domain domain = {}) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("ginzburg_landau: eps must be positive");
  FunctionalSpec s;
  const double e2 = eps * eps;
  s.density = [e2](const Point&, double, std::span<const double> u, std::span<const double> l) {
    const double w = u[0] * u[0] - 1.0;
    double g = 0.0;
    for (double v : l) g += v * v;
    return 0.25 * w * w + 0.5 * e2 * g;
  };
  s.d_u = [](const Point&, double, std::span<const double> u, std::span<const double>, std::span<double> out) {
    out[0] = u[0] * u[0] * u[0] - u[0];
  };
  s.d_lambda = [e2](const Point&, double, std::span<const double>, std::span<const double> l,
                    std::span<double> out) {
    for (std::size_t i = 0; i < l.size(); ++i) out[i] = e2 * l[i];
  };
  s.m = 1;
  s.dim = dim;
  s.p = 4.0;
  s.growth_C = 2.0 * std::max(1.0, e2);
  s.hoelder_alpha = 0.5;
  s.hoelder_C = 3.0 * std::max(1.0, e2);
  s.label = "ginzburg_landau(eps=" + std::to_string(eps) + ")";
  s.domain = domain;
  s.domain.dim = dim;
  s.validate();
  return s;
}

namespace detail {

// Lattice of sample points covering the domain (corners included).
template <class Visit>
void lattice(const Domain& d, int per_axis, int time_points, Visit&& visit) {
  const int ny = d.dim == 2 ? per_axis : 1;
  for (int k = 0; k < time_points; ++k) {
    const double t = time_points == 1 ? 0.0 : d.t_final * k / (time_points - 1);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < per_axis; ++i)
        visit(d.at({double(i) / (per_axis - 1), ny == 1 ? 0.0 : double(j) / (ny - 1)}), t);
  }
}

inline std::string where(const Point& x, double t) {
  std::ostringstream os;
  os << "x=(" << x[0] << ", " << x[1] << "), t=" << t;
  return os.str();
}

}  // namespace detail

/// f = 1/2 sum_k (Dv^k)^T A Dv^k - h . v for symmetric positive-definite A.
/// `source` may be empty (h = 0). A is sampled on a lattice over `domain`;
/// non-symmetric or non-positive samples are rejected with their location.
inline FunctionalSpec make_filtration(MatrixCoefficient coeff, VectorSource source, int m, Domain domain) {
  if (!coeff) throw std::invalid_argument("filtration: missing coefficient");
  double amax = 0.0, amin = std::numeric_limits<double>::infinity(), hmax = 0.0;
  std::vector<double> hbuf(std::size_t(m), 0.0);
  detail::lattice(domain, domain.dim == 2 ? 33 : 1025, 5, [&](const Point& x, double t) {
    const Mat2 a = coeff(x, t);
    double lo, hi;
    if (domain.dim == 1) {
      lo = hi = a[0];
    } else {
      if (std::abs(a[1] - a[2]) > 1e-12 * (std::abs(a[0]) + std::abs(a[3])))
        throw std::invalid_argument("filtration: coefficient not symmetric at " + detail::where(x, t));
      const double tr = 0.5 * (a[0] + a[3]);
      const double disc = std::sqrt(0.25 * (a[0] - a[3]) * (a[0] - a[3]) + a[1] * a[1]);
      lo = tr - disc;
      hi = tr + disc;
    }
    if (!(lo > 0.0) || !std::isfinite(hi))
      throw std::invalid_argument("filtration: coefficient not positive-definite at " + detail::where(x, t));
    amin = std::min(amin, lo);
    amax = std::max(amax, hi);
    if (source) {
      source(x, t, hbuf);
      hmax = std::max(hmax, euclidean(hbuf));
    }
  });
  const int dim = domain.dim;
  FunctionalSpec s;
  s.density = [coeff, source, m, dim](const Point& x, double t, std::span<const double> u,
                                      std::span<const double> l) {
    const Mat2 a = coeff(x, t);
    double q = 0.0;
    for (int c = 0; c < m; ++c) {
      const double* g = l.data() + c * dim;
      if (dim == 1) q += a[0] * g[0] * g[0];
      else q += a[0] * g[0] * g[0] + (a[1] + a[2]) * g[0] * g[1] + a[3] * g[1] * g[1];
    }
    double src = 0.0;
    if (source) {
      std::array<double, 8> h{};
      source(x, t, std::span<double>(h.data(), std::size_t(m)));
      for (int c = 0; c < m; ++c) src += h[std::size_t(c)] * u[std::size_t(c)];
    }
    return 0.5 * q - src;
  };
  s.d_u = [source, m](const Point& x, double t, std::span<const double>, std::span<const double>,
                      std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if (source) {
      source(x, t, out);
      for (double& v : out) v = -v;
    }
  };
  s.d_lambda = [coeff, m, dim](const Point& x, double t, std::span<const double>, std::span<const double> l,
                               std::span<double> out) {
    const Mat2 a = coeff(x, t);
    for (int c = 0; c < m; ++c) {
      const double* g = l.data() + c * dim;
      if (dim == 1) out[std::size_t(c)] = a[0] * g[0];
      else {
        out[std::size_t(c * 2)] = a[0] * g[0] + a[1] * g[1];
        out[std::size_t(c * 2 + 1)] = a[2] * g[0] + a[3] * g[1];
      }
    }
  };
  if (m > 8) throw std::invalid_argument("filtration: at most 8 components");
  s.m = m;
  s.dim = dim;
  s.p = 2.0;
  // Sampled sup of A gets a 5% margin.
  s.growth_C = 0.5 * 1.05 * amax + hmax;
  s.hoelder_alpha = 0.5;
  s.hoelder_C = 1.5 * (1.05 * amax + hmax);
  s.label = "filtration";
  s.domain = domain;
  s.validate();
  return s;
}

/// f = a(x,t)/p |lambda|^p with a bounded between positive constants.
inline FunctionalSpec make_p_laplace(ScalarCoefficient coeff, double p, int m, Domain domain) {
  if (!(p > 1.0)) throw std::invalid_argument("p_laplace: p must exceed 1");
  if (!coeff) throw std::invalid_argument("p_laplace: missing coefficient");
  double amax = 0.0;
  detail::lattice(domain, domain.dim == 2 ? 33 : 1025, 5, [&](const Point& x, double t) {
    const double a = coeff(x, t);
    if (!(a > 0.0) || !std::isfinite(a))
      throw std::invalid_argument("p_laplace: coefficient not positive at " + detail::where(x, t));
    amax = std::max(amax, a);
  });
  FunctionalSpec s;
  s.density = [coeff, p](const Point& x, double t, std::span<const double>, std::span<const double> l) {
    double g = 0.0;
    for (double v : l) g += v * v;
    return coeff(x, t) / p * (p == 2.0 ? g : std::pow(g, 0.5 * p));
  };
  s.d_u = [](const Point&, double, std::span<const double>, std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  s.d_lambda = [coeff, p](const Point& x, double t, std::span<const double>, std::span<const double> l,
                          std::span<double> out) {
    double g = 0.0;
    for (double v : l) g += v * v;
    const double k = g == 0.0 ? (p >= 2.0 ? (p == 2.0 ? 1.0 : 0.0) : 0.0) : std::pow(g, 0.5 * (p - 2.0));
    const double a = coeff(x, t);
    for (std::size_t i = 0; i < l.size(); ++i) out[i] = a * k * l[i];
  };
  s.m = m;
  s.dim = domain.dim;
  s.p = p;
  s.growth_C = 1.05 * amax / p;
  s.hoelder_alpha = 0.5;
  s.hoelder_C = 1.5 * 1.05 * amax;
  s.label = "p_laplace(p=" + std::to_string(p) + ")";
  s.domain = domain;
  s.validate();
  return s;
}

enum class Normalization { raw, eps_divided };

inline const char* to_string(Normalization n) { return n == Normalization::raw ? "raw" : "eps_divided"; }

/// Sharp-interface limit of the double-well functional per unit time:
/// interface_count * 2 sqrt(2)/3 in the eps-divided convention; the raw
/// convention returns the leading-order value eps * that.
inline double limit_perimeter_value(int interface_count, Normalization norm = Normalization::eps_divided,
                                    double eps = 1.0) {
  if (interface_count < 0) throw std::invalid_argument("limit_perimeter_value: negative interface count");
  const double v = interface_count * surface_tension;
  return norm == Normalization::eps_divided ? v : eps * v;
}

/// Effective coefficient 1 / int_0^1 dy / a(y) of a 1-periodic coefficient
/// (composite midpoint rule; spectrally accurate for smooth periodic a,
/// exact for piecewise constants with breakpoints on the sample lattice).
inline double homogenized_coefficient_1d(const std::function<double(double)>& a, int samples = 8192) {
  double s = 0.0, carry = 0.0;  // compensated sum
  for (int i = 0; i < samples; ++i) {
    const double y = (i + 0.5) / samples;
    const double v = a(y);
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("homogenized_coefficient_1d: coefficient not positive at y=" + std::to_string(y));
    const double term = 1.0 / v - carry;
    const double next = s + term;
    carry = (next - s) - term;
    s = next;
  }
  return samples / s;
}

enum class FamilyKind { ginzburg_landau, filtration, p_laplace, custom };

inline const char* to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::ginzburg_landau: return "ginzburg_landau";
    case FamilyKind::filtration: return "filtration";
    case FamilyKind::p_laplace: return "p_laplace";
    case FamilyKind::custom: return "custom";
  }
  return "?";
}

/// eps-indexed functionals F^eps and their limit.
struct FunctionalFamily {
  FamilyKind kind = FamilyKind::custom;
  std::function<FunctionalSpec(double eps)> member_at;
  std::optional<FunctionalSpec> limit_spec;                  ///< integral limit, when one exists
  std::function<double(const SpaceTimeField&)> limit_value;  ///< closed-form limit evaluator otherwise
  Normalization normalization = Normalization::raw;

  /// All sampled members share p and a growth constant.
  bool uniform_growth(std::span<const double> eps, std::size_t samples = 2000) const {
    std::optional<double> p;
    for (double e : eps) {
      const FunctionalSpec s = member_at(e);
      if (p && *p != s.p) return false;
      p = s.p;
      if (!check_growth(s, samples).pass) return false;
    }
    return true;
  }
};

}  // namespace gflow
