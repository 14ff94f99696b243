#include "mfpd/sets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mfpd/errors.hpp"

namespace mfpd {

Box::Box(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) {
    throw std::invalid_argument("Box: lower/upper dimension mismatch");
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (lower[i] > upper[i]) {
      throw std::invalid_argument("Box: lower > upper at component " + std::to_string(i));
    }
  }
}

Box Box::scalar(double lo, double hi) {
  Vec l(1), u(1);
  l[0] = lo;
  u[0] = hi;
  return Box(std::move(l), std::move(u));
}

Vec project_box(const Vec& z, const Box& box) {
  if (z.size() != box.lower.size()) {
    throw std::invalid_argument("project_box: dimension mismatch");
  }
  return z.cwiseMax(box.lower).cwiseMin(box.upper);
}

Vec2 project_disc(const Vec2& pq, const Disc& disc) {
  const double norm = pq.norm();
  if (norm <= disc.radius) return pq;
  return pq * (disc.radius / norm);
}

Vec2 project_box_disc(const Vec2& pq, const BoxDiscSet& set, double tol, int max_sweeps) {
  if (set.empty()) {
    throw InfeasibleSetError("project_box_disc: p-interval [" + std::to_string(set.p_min) +
                             ", " + std::to_string(set.p_max) +
                             "] does not intersect the disc of radius " +
                             std::to_string(set.radius));
  }
  const Disc disc{set.radius};
  const auto clamp_p = [&](Vec2 v) {
    v[0] = std::clamp(v[0], set.p_min, set.p_max);
    return v;
  };

  Vec2 x = pq;
  Vec2 corr_box = Vec2::Zero();
  Vec2 corr_disc = Vec2::Zero();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const Vec2 y = clamp_p(x + corr_box);
    corr_box = x + corr_box - y;
    const Vec2 x_next = project_disc(y + corr_disc, disc);
    corr_disc = y + corr_disc - x_next;

    const double change = (x_next - x).norm();
    x = x_next;
    const double box_violation =
        std::max(set.p_min - x[0], x[0] - set.p_max);
    const double disc_violation = x.norm() - set.radius;
    if (change < tol && box_violation < 1e-9 && disc_violation < 1e-9) {
      // Snap residual tolerance-level slack so the result is feasible.
      return project_disc(clamp_p(x), disc);
    }
  }
  throw NumericError("project_box_disc did not converge", max_sweeps);
}

Vec project_dual(const Vec& lambda, const DualBox& dual_box) {
  if (lambda.size() != dual_box.lambda_max.size()) {
    throw std::invalid_argument("project_dual: dimension mismatch");
  }
  return lambda.cwiseMax(0.0).cwiseMin(dual_box.lambda_max);
}

int ProductSet::dim() const {
  int d = 0;
  for (const auto& block : blocks) {
    if (std::holds_alternative<Box>(block)) {
      d += static_cast<int>(std::get<Box>(block).lower.size());
    } else {
      d += 2;
    }
  }
  return d;
}

Vec ProductSet::project(const Vec& z) const {
  if (z.size() != dim()) {
    throw std::invalid_argument("ProductSet::project: dimension mismatch");
  }
  Vec out(z.size());
  Eigen::Index offset = 0;
  for (const auto& block : blocks) {
    if (std::holds_alternative<Box>(block)) {
      const Box& box = std::get<Box>(block);
      const Eigen::Index d = box.lower.size();
      out.segment(offset, d) = project_box(z.segment(offset, d), box);
      offset += d;
    } else {
      const BoxDiscSet& set = std::get<BoxDiscSet>(block);
      out.segment<2>(offset) = project_box_disc(z.segment<2>(offset), set);
      offset += 2;
    }
  }
  return out;
}

}  // namespace mfpd
