#pragma once

#include <variant>
#include <vector>

#include "mfpd/types.hpp"

namespace mfpd {

/// Axis-aligned box, lower <= upper componentwise.
struct Box {
  Vec lower;
  Vec upper;

  Box() = default;
  Box(Vec lo, Vec hi);
  static Box scalar(double lo, double hi);
};

Vec project_box(const Vec& z, const Box& box);

/// Origin-centered disc of given radius in the (p, q) plane.
struct Disc {
  double radius = 0.0;
};

Vec2 project_disc(const Vec2& pq, const Disc& disc);

/// Intersection of an interval on p with an apparent-power disc on (p, q).
/// The per-DER feasible set: battery/PV power box times inverter rating.
struct BoxDiscSet {
  double p_min = 0.0;
  double p_max = 0.0;
  double radius = 0.0;

  bool empty() const { return p_min > radius || p_max < -radius; }
};

/// Euclidean projection onto box-and-disc via Dykstra's alternating scheme.
Vec2 project_box_disc(const Vec2& pq, const BoxDiscSet& set, double tol = 1e-10,
                      int max_sweeps = 500);

/// Multiplier set [0, cap] per constraint.
struct DualBox {
  Vec lambda_max;
};

Vec project_dual(const Vec& lambda, const DualBox& dual_box);

/// Cartesian product of per-block sets; the primal feasible set X^(k).
struct ProductSet {
  using Block = std::variant<Box, BoxDiscSet>;
  std::vector<Block> blocks;

  int dim() const;
  Vec project(const Vec& z) const;
};

}  // namespace mfpd
