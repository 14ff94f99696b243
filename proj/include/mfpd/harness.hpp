#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfpd/engine.hpp"
#include "mfpd/opf.hpp"
#include "mfpd/types.hpp"

namespace mfpd {

/// Fully resolved experiment description: feeder, fleet, profiles, time grid,
/// algorithm parameters, noise, and reference trajectory.
struct ScenarioConfig {
  std::string name;

  std::filesystem::path feeder_file;
  double s_base_mva = 23.04;
  double slack_voltage_pu = 1.0;

  std::filesystem::path fleet_file;
  std::filesystem::path load_profile_file;
  std::filesystem::path pv_profile_file;

  double t_start_s = 0.0;
  double t_end_s = 0.0;
  double dt_s = 1.0;

  Vec2 alpha_battery{12.0, 12.0};
  Vec2 alpha_pv{2.0, 2.0};
  double alpha_dual = 10.0;
  double reg_p = 1e-5;
  double reg_d = 1e-3;

  double epsilon_mw = 0.0;  // defaults to 0.001*sqrt(2)*S_base when unset
  double probe_amplitude = 1.4142135623730951;
  /// Exact-period probe mode: integer cycles over this period. When absent,
  /// frequencies are spread over [band_f_min, band_f_max] (the paper band).
  std::optional<double> probe_period_s;
  double band_f_min_hz = 1.0 / 26.0;
  double band_f_max_hz = 1.0 / 7.1;

  double sigma = 1e-3;
  double v_min_pu = 0.96;
  double v_max_pu = 1.04;
  double dual_cap = 100.0;

  /// Reference feeder-head power, MW, piecewise-constant over absolute time.
  std::vector<std::pair<double, double>> p0_ref_points_mw;

  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  ThirdMeasurement third = ThirdMeasurement::Independent;

  long steps() const { return static_cast<long>(std::llround((t_end_s - t_start_s) / dt_s)); }
  double p0_ref_mw(double t_s) const;
};

ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Per-step simulation record. Row k holds the control applied during step k,
/// the true (noiseless) outputs it produced, the SOC at the start of the
/// step, and the multiplier after the step's dual update.
struct Trace {
  std::vector<double> t_s;
  std::vector<double> p0_pu;
  std::vector<double> p0_ref_pu;
  std::vector<double> lambda_norm;
  std::vector<double> lambda_max;
  std::vector<double> grad_norm;
  Mat v_pu;     // steps x n_pq
  Mat x_mw;     // steps x 2*n_der
  Mat soc_mwh;  // steps x n_battery

  long steps() const { return static_cast<long>(t_s.size()); }
};

struct MetricsReport {
  double nrmse = 0.0;
  double avv = 0.0;
  long steps = 0;
  double runtime_s = 0.0;
};

struct RunResult {
  MetricsReport metrics;
  Trace trace;
  std::filesystem::path trace_path;
  std::filesystem::path metrics_path;
};

struct RunOptions {
  bool controlled = true;
  bool write_outputs = true;
  std::string tag;  // appended to output file names
};

/// Builds the feeder plant and fleet from a scenario.
struct ScenarioInstance {
  FeederModel feeder;
  std::vector<Der> fleet;
  Profile loads;
  Profile pv_availability;
  VoltageLimits limits;
};

ScenarioInstance build_instance(const ScenarioConfig& config);

RunResult run_scenario(const ScenarioConfig& config, const RunOptions& options = {});

/// sqrt((1/K) * sum(((p0 - ref)/ref)^2)); every reference sample must be
/// nonzero.
double nrmse(const std::vector<double>& p0, const std::vector<double>& p0_ref);

/// (1/(N*K)) * sum of positive-part violations of the voltage band.
double avv(const Mat& v_pu, const VoltageLimits& limits);

struct SweepRow {
  double sigma = 0.0;
  double nrmse = 0.0;
  double avv = 0.0;
};

/// One run per sigma, sharing the seed structure; entries run in parallel.
std::vector<SweepRow> noise_sweep(const ScenarioConfig& config,
                                  const std::vector<double>& sigmas,
                                  bool write_outputs = true);

struct TargetPoint {
  long k = 0;
  double t_s = 0.0;
  Vec x_mw;
  Vec lambda;
  double p0_predicted_pu = 0.0;
};

/// Linearizes the feeder at the uncontrolled operating point every `stride`
/// steps and solves the frozen regularized saddle-point problem there.
std::vector<TargetPoint> solve_target_trajectory(const ScenarioConfig& config, long stride,
                                                 bool write_outputs = true);

void write_trace_csv(const std::filesystem::path& path, const Trace& trace,
                     const std::vector<Der>& fleet);
Trace read_trace_csv(const std::filesystem::path& path);

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& metrics);

/// Post-hoc feasibility audit of a trace against the scenario's constraint
/// data: SOC windows, battery/PV boxes, apparent-power discs, dual caps.
struct FeasibilityReport {
  double max_soc_violation_mwh = 0.0;
  double max_power_box_violation_mw = 0.0;
  double max_disc_violation_mva = 0.0;
  double max_dual_cap_violation = 0.0;

  double worst() const {
    return std::max({max_soc_violation_mwh, max_power_box_violation_mw,
                     max_disc_violation_mva, max_dual_cap_violation});
  }
};

FeasibilityReport check_trace_feasibility(const ScenarioConfig& config, const Trace& trace);

}  // namespace mfpd
