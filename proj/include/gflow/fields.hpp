#pragma once

// Space-time fields on uniform tensor grids over Omega x (0, T): storage,
// finite-difference gradients, trapezoid quadrature, L^p norms and the
// strong/weak ("sw") convergence diagnostics.

#include <algorithm>
#include <numbers>
#include <type_traits>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gflow {

using Point = std::array<double, 2>;

enum class BoundaryKind {
  dirichlet_zero,  ///< boundary samples are exactly zero at every time level
  periodic,        ///< last node on each axis duplicates the first
  free             ///< no constraint (derived fields, clamped far-field data)
};

inline const char* to_string(BoundaryKind b) {
  switch (b) {
    case BoundaryKind::dirichlet_zero: return "dirichlet_zero";
    case BoundaryKind::periodic: return "periodic";
    case BoundaryKind::free: return "free";
  }
  return "?";
}

/// Uniform node-centred grid on a box Omega (1 or 2 axes) times [0, T].
///
/// Axis `a` has `cells[a]` cells and `cells[a] + 1` nodes. Time has
/// `n_time_steps + 1` levels. In 1D the second axis is a single node.
struct Grid {
  int dim = 1;
  std::array<int, 2> cells{0, 0};
  Point lo{0.0, 0.0};
  Point hi{1.0, 1.0};
  int n_time_steps = 1;
  double t_final = 1.0;

  static Grid line(int cells, double lo, double hi, int n_time_steps, double t_final) {
    Grid g;
    g.dim = 1;
    g.cells = {cells, 0};
    g.lo = {lo, 0.0};
    g.hi = {hi, 0.0};
    g.n_time_steps = n_time_steps;
    g.t_final = t_final;
    g.validate();
    return g;
  }

  static Grid square(int cells_x, int cells_y, Point lo, Point hi, int n_time_steps,
                     double t_final) {
    Grid g;
    g.dim = 2;
    g.cells = {cells_x, cells_y};
    g.lo = lo;
    g.hi = hi;
    g.n_time_steps = n_time_steps;
    g.t_final = t_final;
    g.validate();
    return g;
  }

  void validate() const {
    if (dim != 1 && dim != 2) throw std::invalid_argument("grid: dim must be 1 or 2");
    for (int a = 0; a < dim; ++a) {
      if (cells[a] < 1) throw std::invalid_argument("grid: cells per axis must be positive");
      if (!(lo[a] < hi[a])) throw std::invalid_argument("grid: domain lower bound must be below upper bound");
    }
    if (n_time_steps < 1) throw std::invalid_argument("grid: n_time_steps must be positive");
    if (!(t_final > 0.0) || !std::isfinite(t_final))
      throw std::invalid_argument("grid: t_final must be positive");
    // addressable cell count
    const double total = double(nodes(0)) * double(nodes(1)) * double(n_time_steps + 1);
    if (total > 4.0e9) throw std::invalid_argument("grid: too many samples");
  }

  int nodes(int axis) const { return axis < dim ? cells[axis] + 1 : 1; }
  std::size_t space_size() const { return std::size_t(nodes(0)) * std::size_t(nodes(1)); }
  std::size_t time_levels() const { return std::size_t(n_time_steps) + 1; }
  double h(int axis) const { return (hi[axis] - lo[axis]) / cells[axis]; }
  double max_h() const { return dim == 1 ? h(0) : std::max(h(0), h(1)); }
  double dt() const { return t_final / n_time_steps; }
  double coord(int axis, int i) const {
    return i == cells[axis] ? hi[axis] : lo[axis] + h(axis) * i;
  }
  double t(int k) const { return k == n_time_steps ? t_final : t_final * double(k) / n_time_steps; }
  /// Normalized time k / n_time_steps; exactly 1 at the final level.
  double tau(int k) const { return double(k) / double(n_time_steps); }

  std::size_t node(int i, int j = 0) const { return std::size_t(i) + std::size_t(nodes(0)) * std::size_t(j); }
  std::pair<int, int> node_ij(std::size_t n) const {
    return {int(n % std::size_t(nodes(0))), int(n / std::size_t(nodes(0)))};
  }
  Point point(std::size_t n) const {
    auto [i, j] = node_ij(n);
    return {coord(0, i), dim == 2 ? coord(1, j) : 0.0};
  }
  bool on_boundary(std::size_t n) const {
    auto [i, j] = node_ij(n);
    if (i == 0 || i == cells[0]) return true;
    return dim == 2 && (j == 0 || j == cells[1]);
  }
  double volume() const {
    double v = hi[0] - lo[0];
    if (dim == 2) v *= hi[1] - lo[1];
    return v;
  }

  /// Same spatial shape and extents (time axis ignored).
  bool same_space(const Grid& o) const {
    return dim == o.dim && cells[0] == o.cells[0] && (dim == 1 || cells[1] == o.cells[1]) &&
           lo == o.lo && hi == o.hi;
  }
  bool same_shape(const Grid& o) const {
    return same_space(o) && n_time_steps == o.n_time_steps && t_final == o.t_final;
  }

  /// Trapezoid weight of spatial node n.
  double space_weight(std::size_t n) const {
    auto [i, j] = node_ij(n);
    double w = h(0) * ((i == 0 || i == cells[0]) ? 0.5 : 1.0);
    if (dim == 2) w *= h(1) * ((j == 0 || j == cells[1]) ? 0.5 : 1.0);
    return w;
  }
  double time_weight(int k) const { return dt() * ((k == 0 || k == n_time_steps) ? 0.5 : 1.0); }

  std::vector<double> space_weights() const {
    std::vector<double> w(space_size());
    for (std::size_t n = 0; n < w.size(); ++n) w[n] = space_weight(n);
    return w;
  }

  /// Copy of this grid with a different time axis.
  Grid with_time(int steps, double T) const {
    Grid g = *this;
    g.n_time_steps = steps;
    g.t_final = T;
    g.validate();
    return g;
  }
};

/// Single-time spatial field with m components, node-major layout.
class SpatialField {
 public:
  SpatialField() = default;
  SpatialField(Grid grid, int components, BoundaryKind bc = BoundaryKind::free)
      : grid_(std::move(grid)), m_(components), bc_(bc),
        values_(grid_.space_size() * std::size_t(components), 0.0) {
    if (components < 1) throw std::invalid_argument("field: components must be >= 1");
  }

  template <class F>
  static SpatialField sample(const Grid& grid, int m, BoundaryKind bc, F&& f) {
    SpatialField out(grid, m, bc);
    std::vector<double> buf(std::size_t(m), 0.0);
    for (std::size_t n = 0; n < grid.space_size(); ++n) {
      if constexpr (std::is_invocable_r_v<double, F, const Point&>) {
        out(n, 0) = f(grid.point(n));
        for (int c = 1; c < m; ++c) out(n, c) = out(n, 0);
      } else {
        f(grid.point(n), std::span<double>(buf));
        for (int c = 0; c < m; ++c) out(n, c) = buf[std::size_t(c)];
      }
    }
    out.enforce_boundary();
    return out;
  }

  const Grid& grid() const { return grid_; }
  int components() const { return m_; }
  BoundaryKind boundary() const { return bc_; }
  std::size_t size() const { return grid_.space_size(); }
  double& operator()(std::size_t n, int c) { return values_[n * std::size_t(m_) + std::size_t(c)]; }
  double operator()(std::size_t n, int c) const { return values_[n * std::size_t(m_) + std::size_t(c)]; }
  std::span<double> at(std::size_t n) { return {values_.data() + n * std::size_t(m_), std::size_t(m_)}; }
  std::span<const double> at(std::size_t n) const {
    return {values_.data() + n * std::size_t(m_), std::size_t(m_)};
  }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  void enforce_boundary() {
    if (bc_ == BoundaryKind::dirichlet_zero) {
      for (std::size_t n = 0; n < size(); ++n)
        if (grid_.on_boundary(n))
          for (int c = 0; c < m_; ++c) (*this)(n, c) = 0.0;
    } else if (bc_ == BoundaryKind::periodic) {
      for (std::size_t n = 0; n < size(); ++n) {
        auto [i, j] = grid_.node_ij(n);
        int si = i == grid_.cells[0] ? 0 : i;
        int sj = (grid_.dim == 2 && j == grid_.cells[1]) ? 0 : j;
        if (si != i || sj != j)
          for (int c = 0; c < m_; ++c) (*this)(n, c) = (*this)(grid_.node(si, sj), c);
      }
    }
  }

  /// Trapezoid integral of component c (or the sum over components when c < 0).
  double integrate(int c = -1) const {
    double s = 0.0;
    for (std::size_t n = 0; n < size(); ++n) {
      double v = 0.0;
      if (c >= 0) v = (*this)(n, c);
      else
        for (int q = 0; q < m_; ++q) v += (*this)(n, q);
      s += grid_.space_weight(n) * v;
    }
    return s;
  }

 private:
  Grid grid_;
  int m_ = 1;
  BoundaryKind bc_ = BoundaryKind::free;
  std::vector<double> values_;
};

/// u(x_i, t_k) in R^m on a tensor grid; layout is time-major, then
/// row-major space (x fastest), then component.
class SpaceTimeField {
 public:
  SpaceTimeField() = default;
  SpaceTimeField(Grid grid, int components, BoundaryKind bc)
      : grid_(std::move(grid)), m_(components), bc_(bc) {
    grid_.validate();
    if (components < 1) throw std::invalid_argument("field: components must be >= 1");
    values_.assign(grid_.time_levels() * grid_.space_size() * std::size_t(m_), 0.0);
  }

  /// f(x, t) -> double for every component, or f(x, t, span<double> out).
  template <class F>
  static SpaceTimeField sample(const Grid& grid, int m, BoundaryKind bc, F&& f) {
    SpaceTimeField out(grid, m, bc);
    std::vector<double> buf(std::size_t(m), 0.0);
    for (int k = 0; k <= grid.n_time_steps; ++k) {
      const double t = grid.t(k);
      for (std::size_t n = 0; n < grid.space_size(); ++n) {
        if constexpr (std::is_invocable_r_v<double, F, const Point&, double>) {
          const double v = f(grid.point(n), t);
          for (int c = 0; c < m; ++c) out(k, n, c) = v;
        } else {
          f(grid.point(n), t, std::span<double>(buf));
          for (int c = 0; c < m; ++c) out(k, n, c) = buf[std::size_t(c)];
        }
      }
    }
    out.enforce_boundary();
    return out;
  }

  /// Time-constant field built from a spatial field.
  static SpaceTimeField constant_in_time(const SpatialField& s, const Grid& grid) {
    if (!grid.same_space(s.grid())) throw std::invalid_argument("field: grid mismatch");
    SpaceTimeField out(grid, s.components(), s.boundary());
    for (int k = 0; k <= grid.n_time_steps; ++k) out.set_level(k, s);
    return out;
  }

  const Grid& grid() const { return grid_; }
  int components() const { return m_; }
  BoundaryKind boundary() const { return bc_; }
  std::size_t level_size() const { return grid_.space_size() * std::size_t(m_); }

  double& operator()(int k, std::size_t n, int c) { return values_[index(k, n, c)]; }
  double operator()(int k, std::size_t n, int c) const { return values_[index(k, n, c)]; }
  std::span<const double> at(int k, std::size_t n) const {
    return {values_.data() + index(k, n, 0), std::size_t(m_)};
  }
  std::span<double> level(int k) { return {values_.data() + std::size_t(k) * level_size(), level_size()}; }
  std::span<const double> level(int k) const {
    return {values_.data() + std::size_t(k) * level_size(), level_size()};
  }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  SpatialField level_field(int k) const {
    SpatialField s(grid_, m_, bc_);
    auto src = level(k);
    std::copy(src.begin(), src.end(), s.values().begin());
    return s;
  }
  void set_level(int k, const SpatialField& s) {
    if (s.components() != m_ || s.size() != grid_.space_size())
      throw std::invalid_argument("field: level shape mismatch");
    std::copy(s.values().begin(), s.values().end(), level(k).begin());
  }

  void enforce_boundary() {
    if (bc_ == BoundaryKind::free) return;
    for (int k = 0; k <= grid_.n_time_steps; ++k) {
      SpatialField s = level_field(k);
      s.enforce_boundary();
      set_level(k, s);
    }
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool compatible(const SpaceTimeField& o) const {
    return grid_.same_shape(o.grid_) && m_ == o.m_;
  }

  SpaceTimeField& operator+=(const SpaceTimeField& o) {
    require_compatible(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    bc_ = combine(bc_, o.bc_);
    return *this;
  }
  SpaceTimeField& operator-=(const SpaceTimeField& o) {
    require_compatible(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    bc_ = combine(bc_, o.bc_);
    return *this;
  }
  SpaceTimeField& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  friend SpaceTimeField operator+(SpaceTimeField a, const SpaceTimeField& b) { return a += b; }
  friend SpaceTimeField operator-(SpaceTimeField a, const SpaceTimeField& b) { return a -= b; }
  friend SpaceTimeField operator*(double s, SpaceTimeField a) { return a *= s; }

 private:
  std::size_t index(int k, std::size_t n, int c) const {
    return (std::size_t(k) * grid_.space_size() + n) * std::size_t(m_) + std::size_t(c);
  }
  void require_compatible(const SpaceTimeField& o) const {
    if (!compatible(o)) throw std::invalid_argument("field: grid or component mismatch");
  }
  // Zero traces survive sums of zero-trace fields (the sum of zeros is exactly zero).
  static BoundaryKind combine(BoundaryKind a, BoundaryKind b) { return a == b ? a : BoundaryKind::free; }

  Grid grid_;
  int m_ = 1;
  BoundaryKind bc_ = BoundaryKind::free;
  std::vector<double> values_;
};

namespace detail {

// d/dx_axis of a node-major scalar sequence `get(n)` at node n.
template <class Get>
double partial(const Grid& g, BoundaryKind bc, int axis, std::size_t n, Get&& get) {
  auto [i, j] = g.node_ij(n);
  const int idx = axis == 0 ? i : j;
  const int last = g.cells[axis];
  const double h = g.h(axis);
  auto at = [&](int q) { return axis == 0 ? get(g.node(q, j)) : get(g.node(i, q)); };
  if (bc == BoundaryKind::periodic) {
    const int prev = idx == 0 ? last - 1 : idx - 1;
    const int next = idx == last ? 1 : idx + 1;
    return (at(next) - at(prev)) / (2.0 * h);
  }
  const double u0 = at(idx);
  if (idx == 0) {
    // second-order one-sided, written in differences so constants give exactly 0
    return (4.0 * (at(1) - u0) - (at(2) - u0)) / (2.0 * h);
  }
  if (idx == last) {
    return -(4.0 * (at(last - 1) - u0) - (at(last - 2) - u0)) / (2.0 * h);
  }
  return (at(idx + 1) - at(idx - 1)) / (2.0 * h);
}

}  // namespace detail

/// Spatial Jacobian of a single-time field: component c*dim + j holds du^c/dx_j.
inline SpatialField gradient(const SpatialField& u) {
  const Grid& g = u.grid();
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 3) throw std::invalid_argument("gradient: grid needs at least 3 cells per axis");
  const int m = u.components();
  SpatialField out(g, m * g.dim, u.boundary() == BoundaryKind::periodic ? BoundaryKind::periodic
                                                                        : BoundaryKind::free);
  for (int c = 0; c < m; ++c)
    for (int a = 0; a < g.dim; ++a)
      for (std::size_t n = 0; n < g.space_size(); ++n)
        out(n, c * g.dim + a) =
            detail::partial(g, u.boundary(), a, n, [&](std::size_t q) { return u(q, c); });
  return out;
}

/// Spatial Jacobian at every time level (central differences, one-sided at
/// non-periodic boundaries); output has m * dim components.
inline SpaceTimeField gradient(const SpaceTimeField& u) {
  const Grid& g = u.grid();
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 3) throw std::invalid_argument("gradient: grid needs at least 3 cells per axis");
  const int m = u.components();
  SpaceTimeField out(g, m * g.dim,
                     u.boundary() == BoundaryKind::periodic ? BoundaryKind::periodic : BoundaryKind::free);
  for (int k = 0; k <= g.n_time_steps; ++k)
    for (int c = 0; c < m; ++c)
      for (int a = 0; a < g.dim; ++a)
        for (std::size_t n = 0; n < g.space_size(); ++n)
          out(k, n, c * g.dim + a) =
              detail::partial(g, u.boundary(), a, n, [&](std::size_t q) { return u(k, q, c); });
  return out;
}

inline double euclidean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Trapezoid-in-space-and-time integral of g(k, n).
template <class G>
double integrate_space_time(const Grid& grid, G&& g) {
  const auto ws = grid.space_weights();
  double total = 0.0;
  for (int k = 0; k <= grid.n_time_steps; ++k) {
    double s = 0.0;
    for (std::size_t n = 0; n < ws.size(); ++n) s += ws[n] * g(k, n);
    total += grid.time_weight(k) * s;
  }
  return total;
}

/// (int_{Omega_T} |u|^p dx dt)^{1/p}, |.| the Euclidean norm over components.
inline double lp_norm(const SpaceTimeField& u, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1");
  const double s = integrate_space_time(u.grid(), [&](int k, std::size_t n) {
    const double a = euclidean(u.at(k, n));
    return p == 2.0 ? a * a : std::pow(a, p);
  });
  return std::pow(s, 1.0 / p);
}

inline double lp_norm(const SpatialField& u, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1");
  double s = 0.0;
  for (std::size_t n = 0; n < u.size(); ++n) s += u.grid().space_weight(n) * std::pow(euclidean(u.at(n)), p);
  return std::pow(s, 1.0 / p);
}

/// int_{Omega_T} a : b (component-wise inner product).
inline double pairing(const SpaceTimeField& a, const SpaceTimeField& b) {
  if (!a.compatible(b)) throw std::invalid_argument("pairing: grid or component mismatch");
  const int m = a.components();
  return integrate_space_time(a.grid(), [&](int k, std::size_t n) {
    double s = 0.0;
    for (int c = 0; c < m; ++c) s += a(k, n, c) * b(k, n, c);
    return s;
  });
}

inline double pairing(const SpatialField& a, const SpatialField& b) {
  if (!a.grid().same_space(b.grid()) || a.components() != b.components())
    throw std::invalid_argument("pairing: grid or component mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    double v = 0.0;
    for (int c = 0; c < a.components(); ++c) v += a(n, c) * b(n, c);
    s += a.grid().space_weight(n) * v;
  }
  return s;
}

/// int_{Omega_T} a . d_t eta, with d_t eta on each interval taken as the
/// difference quotient and `a` averaged over the interval endpoints. For a
/// time-constant `a` the sum telescopes to -int a . eta(., 0) whenever
/// eta(., T) = 0.
inline double time_derivative_pairing(const SpaceTimeField& a, const SpaceTimeField& eta) {
  if (!a.compatible(eta)) throw std::invalid_argument("time pairing: grid or component mismatch");
  const Grid& g = a.grid();
  const auto ws = g.space_weights();
  const int m = a.components();
  double total = 0.0;
  for (int k = 0; k < g.n_time_steps; ++k) {
    double s = 0.0;
    for (std::size_t n = 0; n < ws.size(); ++n) {
      double v = 0.0;
      for (int c = 0; c < m; ++c)
        v += 0.5 * (a(k, n, c) + a(k + 1, n, c)) * (eta(k + 1, n, c) - eta(k, n, c));
      s += ws[n] * v;
    }
    total += s;
  }
  return total;
}

/// Strong/weak convergence diagnostics of one sequence member.
struct SwReport {
  double strong_lp_distance = 0.0;
  std::vector<std::pair<int, double>> weak_gradient_pairings;  ///< (test id, |pairing error|)
  double gradient_lp_bound = 0.0;

  double max_pairing_error() const {
    double m = 0.0;
    for (const auto& [id, e] : weak_gradient_pairings) m = std::max(m, e);
    return m;
  }
};

/// Strong L^p distance, gradient pairings against `test_bank` (fields with
/// m * dim components) and the L^p bound of the member's gradient.
inline SwReport sw_distance(const SpaceTimeField& member, const SpaceTimeField& limit,
                            std::span<const SpaceTimeField> test_bank, double p = 2.0) {
  if (!member.compatible(limit)) throw std::invalid_argument("sw_distance: grid mismatch");
  SwReport r;
  r.strong_lp_distance = lp_norm(member - limit, p);
  const SpaceTimeField dm = gradient(member);
  const SpaceTimeField dd = dm - gradient(limit);
  int id = 0;
  for (const auto& psi : test_bank) {
    if (!psi.compatible(dd))
      throw std::invalid_argument("sw_distance: test field must match grid with m*dim components");
    r.weak_gradient_pairings.emplace_back(id++, std::abs(pairing(dd, psi)));
  }
  r.gradient_lp_bound = lp_norm(dm, p);
  return r;
}

/// Tensor sine modes prod_a sin(k_a pi xi_a), xi_a in [0,1] the normalized
/// coordinate, 1 <= k_a <= max_order, copied to every one of `components`.
inline std::vector<SpaceTimeField> sine_test_bank(const Grid& grid, int components, int max_order = 8) {
  std::vector<SpaceTimeField> bank;
  const int ky_max = grid.dim == 2 ? max_order : 1;
  for (int ky = 1; ky <= ky_max; ++ky)
    for (int kx = 1; kx <= max_order; ++kx) {
      bank.push_back(SpaceTimeField::sample(grid, components, BoundaryKind::free,
                                            [&](const Point& x, double) {
        double v = std::sin(kx * std::numbers::pi * (x[0] - grid.lo[0]) / (grid.hi[0] - grid.lo[0]));
        if (grid.dim == 2) v *= std::sin(ky * std::numbers::pi * (x[1] - grid.lo[1]) / (grid.hi[1] - grid.lo[1]));
        return v;
      }));
    }
  return bank;
}

}  // namespace gflow
