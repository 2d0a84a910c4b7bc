#pragma once

// Pre-factored constant tridiagonal systems, solved on many right-hand
// sides (rows of a 2D array at once for the strided direction).

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace gflow::detail {

/// LU factors of a tridiagonal matrix with sub/diag/super bands.
class Tridiagonal {
 public:
  Tridiagonal() = default;
  Tridiagonal(std::vector<double> sub, std::vector<double> diag, std::vector<double> super)
      : a_(std::move(sub)), b_(std::move(diag)), c_(std::move(super)) {
    const std::size_t n = b_.size();
    cp_.assign(n, 0.0);
    inv_.assign(n, 0.0);
    double d = b_[0];
    if (d == 0.0) throw std::runtime_error("tridiagonal: zero pivot");
    inv_[0] = 1.0 / d;
    cp_[0] = n > 1 ? c_[0] * inv_[0] : 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      d = b_[i] - a_[i] * cp_[i - 1];
      if (d == 0.0) throw std::runtime_error("tridiagonal: zero pivot");
      inv_[i] = 1.0 / d;
      cp_[i] = i + 1 < n ? c_[i] * inv_[i] : 0.0;
    }
  }

  std::size_t size() const { return b_.size(); }

  /// In-place solve of one contiguous right-hand side.
  void solve(std::span<double> x) const {
    const std::size_t n = size();
    x[0] *= inv_[0];
    for (std::size_t i = 1; i < n; ++i) x[i] = (x[i] - a_[i] * x[i - 1]) * inv_[i];
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= cp_[i] * x[i + 1];
  }

  /// Solves along the slow index of a row-major array: column i of the
  /// (size() x width) block `x` is one system. Rows are visited in order,
  /// so the inner loop is contiguous.
  void solve_columns(std::span<double> x, std::size_t width) const {
    const std::size_t n = size();
    for (std::size_t q = 0; q < width; ++q) x[q] *= inv_[0];
    for (std::size_t i = 1; i < n; ++i) {
      double* row = x.data() + i * width;
      const double* prev = row - width;
      for (std::size_t q = 0; q < width; ++q) row[q] = (row[q] - a_[i] * prev[q]) * inv_[i];
    }
    for (std::size_t i = n - 1; i-- > 0;) {
      double* row = x.data() + i * width;
      const double* next = row + width;
      for (std::size_t q = 0; q < width; ++q) row[q] -= cp_[i] * next[q];
    }
  }

 private:
  std::vector<double> a_, b_, c_, cp_, inv_;
};

/// Cyclic tridiagonal system (periodic second difference), solved by the
/// Sherman-Morrison correction of a factored tridiagonal.
class CyclicTridiagonal {
 public:
  CyclicTridiagonal() = default;
  /// Constant bands: off-diagonal `off`, diagonal `diag`, n unknowns.
  CyclicTridiagonal(std::size_t n, double off, double diag) : n_(n) {
    if (n < 3) throw std::runtime_error("cyclic tridiagonal: need at least 3 unknowns");
    gamma_ = -diag;
    std::vector<double> a(n, off), b(n, diag), c(n, off);
    b[0] = diag - gamma_;
    b[n - 1] = diag - off * off / gamma_;
    corner_ = off;
    base_ = Tridiagonal(a, b, c);
    z_.assign(n, 0.0);
    z_[0] = gamma_;
    z_[n - 1] = off;
    base_.solve(z_);
  }

  void solve(std::span<double> x) const {
    base_.solve(x);
    const double fact = (x[0] + corner_ * x[n_ - 1] / gamma_) / (1.0 + z_[0] + corner_ * z_[n_ - 1] / gamma_);
    for (std::size_t i = 0; i < n_; ++i) x[i] -= fact * z_[i];
  }

  void solve_columns(std::span<double> x, std::size_t width) const {
    base_.solve_columns(x, width);
    const double denom = 1.0 + z_[0] + corner_ * z_[n_ - 1] / gamma_;
    const double* first = x.data();
    const double* last = x.data() + (n_ - 1) * width;
    std::vector<double> fact(width);
    for (std::size_t q = 0; q < width; ++q) fact[q] = (first[q] + corner_ * last[q] / gamma_) / denom;
    for (std::size_t i = 0; i < n_; ++i) {
      double* row = x.data() + i * width;
      for (std::size_t q = 0; q < width; ++q) row[q] -= fact[q] * z_[i];
    }
  }

 private:
  std::size_t n_ = 0;
  double gamma_ = 0.0, corner_ = 0.0;
  Tridiagonal base_;
  std::vector<double> z_;
};

}  // namespace gflow::detail
