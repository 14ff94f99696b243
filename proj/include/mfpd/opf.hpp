#pragma once

#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "mfpd/engine.hpp"
#include "mfpd/plant.hpp"
#include "mfpd/sets.hpp"
#include "mfpd/types.hpp"

namespace mfpd {

/// Battery DER. Sign convention: x_p > 0 charges (consumes); the network
/// injection handed to the plant is -x_p. SOC follows
/// SOC' = SOC + eta*x_p*dt when charging and SOC + x_p*dt/eta when
/// discharging, clamped to the SOC window.
struct Battery {
  int node = 0;
  double soc_mwh = 0.0;
  double soc_min_mwh = 0.0;
  double soc_max_mwh = 0.0;
  double p_min_mw = 0.0;
  double p_max_mw = 0.0;
  double s_cap_mva = 0.0;
  double eta = 1.0;
  double ref_p_mw = 0.0;
  /// When set, the reference power steers SOC toward this target over
  /// ref_horizon_h hours instead of using ref_p_mw.
  std::optional<double> soc_ref_mwh;
  double ref_horizon_h = 1.0;
  double c_p = 0.0;
  double c_q = 0.0;
  double c_pref = 0.0;
};

/// PV inverter DER. x_p > 0 generates (injects); curtailment is x_p below the
/// available power. The reference power is the current available power.
struct Pv {
  int node = 0;
  double s_cap_mva = 0.0;
  std::function<double(int k)> available_mw;
  double c_p = 0.0;
  double c_q = 0.0;
  double c_pref = 0.0;
};

using Der = std::variant<Battery, Pv>;

int der_node(const Der& der);

/// Power interval intersecting the battery's power box with its one-step
/// energy window.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

Interval battery_power_bounds(const Battery& battery, double dt_hours);

struct SocUpdate {
  double soc_mwh = 0.0;
  bool clamped = false;
};

SocUpdate soc_update(const Battery& battery, double x_p_mw, double dt_hours);

/// Gradient of the local DER cost c_p p^2 + c_q q^2 + c_pref (p - p_ref)^2.
Vec2 der_local_gradient(const Der& der, const Vec2& x, int k);

/// Reference power for the local cost at step k.
double der_reference_power(const Der& der, int k);

/// Feasible set X_i at step k (battery bounds depend on the current SOC).
BoxDiscSet der_feasible_set(const Der& der, int k, double dt_hours);

/// Per-node voltage band in p.u.
struct VoltageLimits {
  Vec v_min;
  Vec v_max;

  static VoltageLimits uniform(int n_nodes, double lo, double hi);
};

/// g = (v - v_max, v_min - v), length 2n; positive entries are violations.
Vec voltage_constraints(const Vec& v, const VoltageLimits& limits);

/// The DER-independent scalar broadcast by the coordinator in [S2a]:
/// ([f0+ - f0-] + lambda^T [g+ - g-]) / (2 eps).
double coordinator_broadcast_scalar(double f0_plus, double f0_minus, const Vec& g_plus,
                                    const Vec& g_minus, const Vec& lambda, double epsilon);

/// Local primal update from the broadcast scalar and local data only.
Vec2 der_local_update(const Der& der, int k, const Vec2& x, const Vec2& xi, double s,
                      const Vec2& alpha, double reg_p, double dt_hours);

/// Central dual step for the voltage constraints.
Vec dual_update_voltage(const Vec& lambda, const Vec& g_measured, const Vec& alpha_dual,
                        double reg_d, const DualBox& dual_box);

/// Piecewise-linear per-node profile, interpolated at step times.
class Profile {
 public:
  Profile() = default;
  /// rows: (t_seconds, node, values...); one value column for PV, two for loads.
  void add_point(int node, double t_s, double p_mw, double q_mvar = 0.0);
  double p_mw(int node, double t_s) const;
  double q_mvar(int node, double t_s) const;
  bool has_node(int node) const;

 private:
  struct Point {
    double t_s, p_mw, q_mvar;
  };
  std::vector<std::vector<Point>> per_node_;
  const std::vector<Point>* node_points(int node) const;
};

/// Feeder wrapped as a Plant: input is the stacked (p, q) of every DER in MW,
/// output is (v_1..v_n, P0) in p.u. Loads enter as the exogenous input.
class FeederPlant : public Plant {
 public:
  FeederPlant(FeederModel feeder, std::vector<Der> fleet, Profile loads, double dt_s,
              double t_start_s = 0.0);

  int input_dim() const override { return 2 * static_cast<int>(fleet_.size()); }
  int output_dim() const override { return feeder_.n_pq() + 1; }
  Vec evaluate(const Vec& x_mw, int k) const override;

  const FeederModel& feeder() const { return feeder_; }
  const std::vector<Der>& fleet() const { return fleet_; }
  std::vector<Der>& fleet() { return fleet_; }
  double time_of_step(int k) const { return t_start_s_ + dt_s_ * k; }
  /// Nodal injections (p.u.) from loads only, before DER action.
  void base_injections(int k, Vec& p_pu, Vec& q_pu) const;

 private:
  FeederModel feeder_;
  std::vector<Der> fleet_;
  Profile loads_;
  double dt_s_ = 1.0;
  double t_start_s_ = 0.0;
};

/// One synchronous gather-and-broadcast round. The coordinator applies the
/// probe inputs, gathers measurements, broadcasts one scalar, and every DER
/// agent updates from local data; the dual step runs centrally.
class DistributedOpf {
 public:
  struct Options {
    Vec2 alpha_battery{0.0, 0.0};
    Vec2 alpha_pv{0.0, 0.0};
    double alpha_dual = 0.0;
    double reg_p = 0.0;
    double reg_d = 0.0;
    double epsilon_mw = 0.0;
    double dual_cap = 100.0;
    double dt_s = 1.0;
    ThirdMeasurement third = ThirdMeasurement::Independent;
  };

  DistributedOpf(FeederPlant& plant, const ExplorationSignal& signal,
                 const VoltageLimits& limits, std::function<double(int k)> p0_ref_pu,
                 const Options& options, const NoiseModel& noise);

  /// Runs step k; returns false (state untouched) if the plant diverged.
  void step();

  const Vec& x_mw() const { return x_; }
  const Vec& lambda() const { return lambda_; }
  long k() const { return k_; }
  /// True plant output at the applied control of the last step (v..., P0).
  const Vec& last_output() const { return last_output_; }
  const Vec& last_measured() const { return last_measured_; }
  double last_grad_norm() const { return last_grad_norm_; }
  double dt_hours() const { return options_.dt_s / 3600.0; }
  void set_state(const Vec& x_mw, const Vec& lambda, long k);

 private:
  FeederPlant& plant_;
  const ExplorationSignal& signal_;
  VoltageLimits limits_;
  std::function<double(int k)> p0_ref_pu_;
  Options options_;
  NoiseModel noise_;
  Vec x_;
  Vec lambda_;
  Vec last_output_;
  Vec last_measured_;
  double last_grad_norm_ = 0.0;
  long k_ = 0;
};

/// Monolithic statement of the same OPF as a TimeVaryingProblem over the
/// given plant; the distributed loop must reproduce engine::model_free_step
/// on this problem. Battery SOC state is read through the plant's fleet.
TimeVaryingProblem make_opf_problem(const FeederPlant& plant, const VoltageLimits& limits,
                                    std::function<double(int k)> p0_ref_pu, double reg_p,
                                    double reg_d, double dual_cap, double dt_hours);

/// Per-DER step sizes stacked in fleet order.
Vec stack_alphas(const std::vector<Der>& fleet, const Vec2& alpha_battery,
                 const Vec2& alpha_pv);

}  // namespace mfpd
