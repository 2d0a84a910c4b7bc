#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "gflow/fields.hpp"

namespace gflow {

struct SupportBox {
  Point lo{0.0, 0.0};
  Point hi{0.0, 0.0};
};

/// Grid-sampled perturbation eta(x, t) generated by a closed-form smooth
/// formula, vanishing at t = T and outside a box that keeps at least two
/// cells of clearance from the domain boundary.
struct TestFunction {
  int id = 0;
  std::string family;   ///< bump, sine, zero, adversarial
  std::string formula;  ///< generating formula, e.g. "bump*ramp(q=2)"
  double amplitude = 0.0;
  SupportBox support;
  SpaceTimeField eta;

  bool terminal_zero() const {
    for (double v : eta.level(eta.grid().n_time_steps))
      if (v != 0.0) return false;
    return true;
  }

  /// Support box clears the boundary by 2h and every sample outside it is 0.
  bool support_clear() const {
    const Grid& g = eta.grid();
    for (int a = 0; a < g.dim; ++a) {
      const double margin = 2.0 * g.h(a) * (1.0 - 1e-12);
      if (support.lo[std::size_t(a)] - g.lo[std::size_t(a)] < margin) return false;
      if (g.hi[std::size_t(a)] - support.hi[std::size_t(a)] < margin) return false;
    }
    for (int k = 0; k <= g.n_time_steps; ++k)
      for (std::size_t n = 0; n < g.space_size(); ++n) {
        const Point x = g.point(n);
        bool inside = true;
        for (int a = 0; a < g.dim; ++a)
          inside = inside && x[std::size_t(a)] > support.lo[std::size_t(a)] && x[std::size_t(a)] < support.hi[std::size_t(a)];
        if (!inside)
          for (int c = 0; c < eta.components(); ++c)
            if (eta(k, n, c) != 0.0) return false;
      }
    return true;
  }
};

inline void require_admissible(const TestFunction& t) {
  if (!t.terminal_zero())
    throw std::invalid_argument("test function " + std::to_string(t.id) + ": eta(., T) must vanish");
  if (!t.support_clear())
    throw std::invalid_argument("test function " + std::to_string(t.id) + ": support must clear the boundary");
}

}  // namespace gflow
