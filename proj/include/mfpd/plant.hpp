#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mfpd/types.hpp"

namespace mfpd {

/// Input -> output map evaluated by the steppers. Implementations must be
/// reentrant over immutable model data.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  /// Exact (noiseless) output at input x and time step k.
  virtual Vec evaluate(const Vec& x, int k) const = 0;
};

/// y = C x + D w^(k) + y0. D and the disturbance trajectory may be empty.
struct LinearPlant : Plant {
  Mat C;
  Mat D;
  Vec y0;
  std::vector<Vec> w_trajectory;

  int input_dim() const override { return static_cast<int>(C.cols()); }
  int output_dim() const override { return static_cast<int>(C.rows()); }
  Vec evaluate(const Vec& x, int k) const override;
};

Vec evaluate_linear(const LinearPlant& plant, const Vec& x, int k);

struct FeederLine {
  int from = 0;
  int to = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
};

/// Single-phase radial/meshed feeder in per unit. Node 0 is the slack bus
/// (feeder head) with fixed voltage; nodes 1..n are PQ buses.
struct FeederModel {
  int n_nodes = 0;  // total including slack
  std::vector<FeederLine> lines;
  double s_base_mva = 1.0;
  double slack_voltage_pu = 1.0;

  int n_pq() const { return n_nodes - 1; }
};

void validate_feeder(const FeederModel& feeder);

/// Parses `from,to,r_pu,x_pu` CSV (header required).
FeederModel load_feeder_csv(const std::filesystem::path& path, double s_base_mva,
                            double slack_voltage_pu);

struct PowerFlowResult {
  Vec v_pu;        // |V| at PQ nodes 1..n
  Vec theta_rad;   // angles at PQ nodes 1..n
  double p0_pu = 0.0;  // active power injected at the feeder head
  int iterations = 0;
  double max_mismatch = 0.0;
};

/// Newton-Raphson on the polar mismatch equations, flat start, 1e-10 p.u.
/// convergence. Throws PowerFlowDivergence after 50 iterations.
PowerFlowResult solve_power_flow(const FeederModel& feeder, const Vec& p_injection_pu,
                                 const Vec& q_injection_pu, double tol = 1e-10,
                                 int max_iterations = 50);

/// Multiplicative Gaussian measurement noise, seeded per (seed, step, slot) so
/// the three per-step measurements draw independent reproducible streams.
struct NoiseModel {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

Vec measure(const Vec& y, const NoiseModel& noise, long step, int slot);

/// Central-difference estimate of dy/dx at x0; column j uses x0 +- fd_step e_j.
Mat numerical_jacobian(const Plant& plant, const Vec& x0, int k, double fd_step = 1e-5);
/// Serial reference for the OpenMP kernel above; kept for testing.
Mat numerical_jacobian_serial(const Plant& plant, const Vec& x0, int k,
                              double fd_step = 1e-5);

}  // namespace mfpd
