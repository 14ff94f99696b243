#pragma once

#include <stdexcept>
#include <string>

#include "mfpd/types.hpp"

namespace mfpd {

/// Forward/backward exploration inputs around a base point.
/// Invariant: x_plus - x_minus == 2 * epsilon * xi.
struct ProbePair {
  Vec x_plus;
  Vec x_minus;
  Vec xi;
  double epsilon = 0.0;
};

inline ProbePair probe_points(const Vec& x, const Vec& xi, double epsilon) {
  if (x.size() != xi.size()) {
    throw std::invalid_argument("probe_points: dim(x)=" + std::to_string(x.size()) +
                                " != dim(xi)=" + std::to_string(xi.size()));
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("probe_points: epsilon must be > 0");
  }
  return ProbePair{x + epsilon * xi, x - epsilon * xi, xi, epsilon};
}

/// Two-evaluation gradient estimate xi * (f_plus - f_minus) / (2 * epsilon).
///
/// Consumes already-measured scalars so noisy plant outputs plug in directly.
/// Exact (up to the xi xi^T gain) for quadratic objectives; O(epsilon^2)
/// biased otherwise.
inline Vec two_point_estimate(double f_plus, double f_minus, const Vec& xi,
                              double epsilon) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("two_point_estimate: epsilon must be > 0");
  }
  return xi * ((f_plus - f_minus) / (2.0 * epsilon));
}

}  // namespace mfpd
