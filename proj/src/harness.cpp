#include "mfpd/harness.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mfpd/errors.hpp"

namespace mfpd {

using nlohmann::json;

double ScenarioConfig::p0_ref_mw(double t_s) const {
  if (p0_ref_points_mw.empty()) {
    throw ConfigError("scenario has no p0 reference points");
  }
  double value = p0_ref_points_mw.front().second;
  for (const auto& [t, mw] : p0_ref_points_mw) {
    if (t_s < t) break;
    value = mw;
  }
  return value;
}

namespace {

// json access with field-path error reporting.
const json& require_field(const json& node, const std::string& key, const std::string& path) {
  const auto it = node.find(key);
  if (it == node.end()) {
    throw ConfigError("scenario: missing field `" + path + "`");
  }
  return *it;
}

template <typename T>
T as(const json& node, const std::string& path) {
  try {
    return node.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("scenario: field `" + path + "` has the wrong type");
  }
}

template <typename T>
T field(const json& node, const std::string& key, const std::string& path) {
  return as<T>(require_field(node, key, path + key), path + key);
}

template <typename T>
T field_or(const json& node, const std::string& key, const std::string& path, T fallback) {
  const auto it = node.find(key);
  if (it == node.end()) return fallback;
  return as<T>(*it, path + key);
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double cell_or(const std::vector<std::string>& cells, std::size_t idx, double fallback) {
  if (idx >= cells.size() || cells[idx].empty()) return fallback;
  return std::stod(cells[idx]);
}

}  // namespace

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("scenario " + path.string() + ": parse error: " + e.what());
  }
  const auto base_dir = path.parent_path();
  const auto resolve = [&](const std::string& p) { return base_dir / p; };

  ScenarioConfig config;
  config.name = field_or<std::string>(j, "name", "", path.stem().string());

  const json& feeder = require_field(j, "feeder", "feeder");
  config.feeder_file = resolve(field<std::string>(feeder, "file", "feeder."));
  config.s_base_mva = field_or<double>(feeder, "s_base_mva", "feeder.", 23.04);
  config.slack_voltage_pu = field_or<double>(feeder, "slack_voltage_pu", "feeder.", 1.0);
  if (!(config.s_base_mva > 0.0)) throw ConfigError("scenario: feeder.s_base_mva must be > 0");

  config.fleet_file = resolve(field<std::string>(j, "fleet_file", ""));
  config.load_profile_file = resolve(field<std::string>(j, "load_profile", ""));
  config.pv_profile_file = resolve(field<std::string>(j, "pv_profile", ""));

  const json& time = require_field(j, "time", "time");
  config.t_start_s = field_or<double>(time, "t_start_s", "time.", 0.0);
  config.t_end_s = field<double>(time, "t_end_s", "time.");
  config.dt_s = field_or<double>(time, "dt_s", "time.", 1.0);
  if (!(config.dt_s > 0.0)) throw ConfigError("scenario: time.dt_s must be > 0");
  if (!(config.t_end_s > config.t_start_s)) {
    throw ConfigError("scenario: time.t_end_s must exceed time.t_start_s");
  }

  if (j.contains("steps")) {
    const json& steps = j["steps"];
    const double a_bt = field_or<double>(steps, "alpha_battery", "steps.", 12.0);
    const double a_pv = field_or<double>(steps, "alpha_pv", "steps.", 2.0);
    config.alpha_battery = Vec2(field_or<double>(steps, "alpha_battery_p", "steps.", a_bt),
                                field_or<double>(steps, "alpha_battery_q", "steps.", a_bt));
    config.alpha_pv = Vec2(field_or<double>(steps, "alpha_pv_p", "steps.", a_pv),
                           field_or<double>(steps, "alpha_pv_q", "steps.", a_pv));
    config.alpha_dual = field_or<double>(steps, "alpha_dual_voltage", "steps.", 10.0);
  }

  if (j.contains("regularization")) {
    config.reg_p = field_or<double>(j["regularization"], "p", "regularization.", 1e-5);
    config.reg_d = field_or<double>(j["regularization"], "d", "regularization.", 1e-3);
  }
  if (!(config.reg_p > 0.0) || !(config.reg_d > 0.0)) {
    throw ConfigError("scenario: regularization p and d must be > 0");
  }

  config.epsilon_mw = 0.001 * 1.4142135623730951 * config.s_base_mva;
  if (j.contains("probe")) {
    const json& probe = j["probe"];
    config.epsilon_mw = field_or<double>(probe, "epsilon_mw", "probe.", config.epsilon_mw);
    config.probe_amplitude =
        field_or<double>(probe, "amplitude", "probe.", config.probe_amplitude);
    if (probe.contains("period_s")) {
      config.probe_period_s = field<double>(probe, "period_s", "probe.");
    }
    config.band_f_min_hz = field_or<double>(probe, "band_f_min_hz", "probe.", config.band_f_min_hz);
    config.band_f_max_hz = field_or<double>(probe, "band_f_max_hz", "probe.", config.band_f_max_hz);
  }
  if (!(config.epsilon_mw > 0.0)) throw ConfigError("scenario: probe.epsilon_mw must be > 0");

  if (j.contains("noise")) {
    config.sigma = field_or<double>(j["noise"], "sigma", "noise.", 1e-3);
  }
  if (config.sigma < 0.0) throw ConfigError("scenario: noise.sigma must be >= 0");

  if (j.contains("voltage_limits")) {
    config.v_min_pu = field_or<double>(j["voltage_limits"], "v_min_pu", "voltage_limits.", 0.96);
    config.v_max_pu = field_or<double>(j["voltage_limits"], "v_max_pu", "voltage_limits.", 1.04);
  }
  if (!(config.v_min_pu < config.v_max_pu)) {
    throw ConfigError("scenario: voltage_limits needs v_min_pu < v_max_pu");
  }

  config.dual_cap = field_or<double>(j, "dual_cap", "", 100.0);

  const json& ref = require_field(j, "p0_reference", "p0_reference");
  const json& points = require_field(ref, "points_mw", "p0_reference.points_mw");
  for (const auto& point : points) {
    if (!point.is_array() || point.size() != 2) {
      throw ConfigError("scenario: p0_reference.points_mw entries must be [t_s, MW] pairs");
    }
    config.p0_ref_points_mw.emplace_back(point[0].get<double>(), point[1].get<double>());
  }
  if (config.p0_ref_points_mw.empty()) {
    throw ConfigError("scenario: p0_reference.points_mw must not be empty");
  }
  for (std::size_t i = 1; i < config.p0_ref_points_mw.size(); ++i) {
    if (config.p0_ref_points_mw[i].first <= config.p0_ref_points_mw[i - 1].first) {
      throw ConfigError("scenario: p0_reference.points_mw must be strictly time-sorted");
    }
  }

  config.seed = field_or<std::uint64_t>(j, "seed", "", 1);
  config.output_dir = field_or<std::string>(j, "output_dir", "", "out");
  const std::string third = field_or<std::string>(j, "third_measurement", "", "independent");
  if (third == "independent") {
    config.third = ThirdMeasurement::Independent;
  } else if (third == "average") {
    config.third = ThirdMeasurement::AverageOfProbes;
  } else {
    throw ConfigError("scenario: third_measurement must be `independent` or `average`");
  }
  return config;
}

namespace {

Profile load_load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open load profile " + path.string());
  Profile profile;
  std::string line;
  std::getline(in, line);  // header
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() < 4) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected `t_seconds,node,p_MW,q_MVAr`");
    }
    profile.add_point(std::stoi(cells[1]), std::stod(cells[0]), std::stod(cells[2]),
                      std::stod(cells[3]));
  }
  return profile;
}

Profile load_pv_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open PV profile " + path.string());
  Profile profile;
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() < 3) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected `t_seconds,node,p_available_MW`");
    }
    profile.add_point(std::stoi(cells[1]), std::stod(cells[0]), std::stod(cells[2]));
  }
  return profile;
}

std::vector<Der> load_fleet_csv(const std::filesystem::path& path,
                                std::shared_ptr<const Profile> pv_profile, double t_start_s,
                                double dt_s) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open fleet file " + path.string());
  std::vector<Der> fleet;
  std::string line;
  std::getline(in, line);  // header
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() < 3) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": short fleet row");
    }
    const int node = std::stoi(cells[0]);
    const std::string& kind = cells[1];
    if (kind == "battery") {
      Battery battery;
      battery.node = node;
      battery.s_cap_mva = std::stod(cells[2]);
      battery.soc_mwh = cell_or(cells, 3, 0.0);
      battery.soc_min_mwh = cell_or(cells, 4, 0.0);
      battery.soc_max_mwh = cell_or(cells, 5, 0.0);
      battery.p_min_mw = cell_or(cells, 6, 0.0);
      battery.p_max_mw = cell_or(cells, 7, 0.0);
      battery.eta = cell_or(cells, 8, 0.9);
      battery.c_p = cell_or(cells, 9, 1.0 / 6.0 * 1e-4);
      battery.c_q = cell_or(cells, 10, 1.0 / 6.0 * 1e-4);
      battery.c_pref = cell_or(cells, 11, 1.0 / 6.0 * 1e-4);
      if (battery.soc_mwh < battery.soc_min_mwh || battery.soc_mwh > battery.soc_max_mwh) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": initial SOC outside its bounds");
      }
      if (battery.p_min_mw > 0.0 || battery.p_max_mw < 0.0) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": battery power box must contain zero");
      }
      if (!(battery.eta > 0.0) || battery.eta > 1.0) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": battery efficiency must be in (0, 1]");
      }
      fleet.emplace_back(battery);
    } else if (kind == "pv") {
      Pv pv;
      pv.node = node;
      pv.s_cap_mva = std::stod(cells[2]);
      pv.c_p = cell_or(cells, 9, 1e-5);
      pv.c_q = cell_or(cells, 10, 1e-5);
      pv.c_pref = cell_or(cells, 11, 1e-3);
      if (!pv_profile.has_node(node)) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": no PV availability profile for node " + std::to_string(node));
      }
      const double cap = pv.s_cap_mva;
      pv.available_mw = [&pv_profile, node, t_start_s, dt_s, cap](int k) {
        const double avail = pv_profile.p_mw(node, t_start_s + dt_s * k);
        return std::clamp(avail, 0.0, cap);
      };
      fleet.emplace_back(pv);
    } else {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": DER kind must be `battery` or `pv`, got `" + kind + "`");
    }
  }
  if (fleet.empty()) throw ConfigError("fleet file " + path.string() + " lists no DERs");
  return fleet;
}

}  // namespace

ScenarioInstance build_instance(const ScenarioConfig& config) {
  ScenarioInstance instance;
  instance.feeder =
      load_feeder_csv(config.feeder_file, config.s_base_mva, config.slack_voltage_pu);
  instance.loads = load_load_profile(config.load_profile_file);
  instance.pv_availability = load_pv_profile(config.pv_profile_file);
  instance.fleet = load_fleet_csv(config.fleet_file, instance.pv_availability,
                                  config.t_start_s, config.dt_s);
  for (const auto& der : instance.fleet) {
    if (der_node(der) < 1 || der_node(der) >= instance.feeder.n_nodes) {
      throw ConfigError("fleet DER node " + std::to_string(der_node(der)) +
                        " is not a PQ node of the feeder");
    }
  }
  instance.limits =
      VoltageLimits::uniform(instance.feeder.n_pq(), config.v_min_pu, config.v_max_pu);
  return instance;
}

namespace {

ExplorationSignal make_scenario_signal(const ScenarioConfig& config, int channels) {
  std::vector<double> frequencies;
  if (config.probe_period_s) {
    std::vector<long> multiples(channels);
    std::iota(multiples.begin(), multiples.end(), 1);
    frequencies = assign_frequencies(channels, IntegerCycles{*config.probe_period_s, multiples});
  } else {
    frequencies =
        assign_frequencies(channels, Band{config.band_f_min_hz, config.band_f_max_hz});
  }
  auto signal = make_sinusoid_bank(channels, frequencies, config.probe_amplitude);
  signal.dt_s = config.dt_s;
  return signal;
}

int count_batteries(const std::vector<Der>& fleet) {
  int count = 0;
  for (const auto& der : fleet) {
    if (std::holds_alternative<Battery>(der)) ++count;
  }
  return count;
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& config, const RunOptions& options) {
  const auto wall_start = std::chrono::steady_clock::now();
  ScenarioInstance instance = build_instance(config);
  const long K = config.steps();
  const int n_pq = instance.feeder.n_pq();
  const int n_der = static_cast<int>(instance.fleet.size());
  const int n_batteries = count_batteries(instance.fleet);

  FeederPlant plant(instance.feeder, std::move(instance.fleet), std::move(instance.loads),
                    config.dt_s, config.t_start_s);
  const ScenarioConfig* cfg = &config;
  const auto ref_pu = [cfg](int k) {
    return cfg->p0_ref_mw(cfg->t_start_s + cfg->dt_s * k) / cfg->s_base_mva;
  };

  Trace trace;
  trace.t_s.resize(K);
  trace.p0_pu.resize(K);
  trace.p0_ref_pu.resize(K);
  trace.lambda_norm.assign(K, 0.0);
  trace.lambda_max.assign(K, 0.0);
  trace.grad_norm.assign(K, 0.0);
  trace.v_pu.resize(K, n_pq);
  trace.x_mw = Mat::Zero(K, 2 * n_der);
  trace.soc_mwh.resize(K, n_batteries);

  const auto record_socs = [&](long k) {
    int bi = 0;
    for (const auto& der : plant.fleet()) {
      if (std::holds_alternative<Battery>(der)) {
        trace.soc_mwh(k, bi++) = std::get<Battery>(der).soc_mwh;
      }
    }
  };

  if (options.controlled) {
    DistributedOpf::Options opf_options;
    opf_options.alpha_battery = config.alpha_battery;
    opf_options.alpha_pv = config.alpha_pv;
    opf_options.alpha_dual = config.alpha_dual;
    opf_options.reg_p = config.reg_p;
    opf_options.reg_d = config.reg_d;
    opf_options.epsilon_mw = config.epsilon_mw;
    opf_options.dual_cap = config.dual_cap;
    opf_options.dt_s = config.dt_s;
    opf_options.third = config.third;
    const ExplorationSignal signal = make_scenario_signal(config, 2 * n_der);
    const NoiseModel noise{config.sigma, config.seed};
    DistributedOpf opf(plant, signal, instance.limits, ref_pu, opf_options, noise);

    for (long k = 0; k < K; ++k) {
      record_socs(k);
      trace.x_mw.row(k) = opf.x_mw().transpose();
      try {
        opf.step();
      } catch (const StepAborted& e) {
        throw StepAborted("scenario `" + config.name + "` halted: " + e.what(), k);
      }
      trace.t_s[k] = config.t_start_s + config.dt_s * k;
      trace.p0_ref_pu[k] = ref_pu(static_cast<int>(k));
      trace.p0_pu[k] = opf.last_output()[n_pq];
      trace.v_pu.row(k) = opf.last_output().head(n_pq).transpose();
      trace.lambda_norm[k] = opf.lambda().norm();
      trace.lambda_max[k] = opf.lambda().size() > 0 ? opf.lambda().maxCoeff() : 0.0;
      trace.grad_norm[k] = opf.last_grad_norm();
    }
  } else {
    const Vec x0 = Vec::Zero(2 * n_der);
    for (long k = 0; k < K; ++k) {
      record_socs(k);
      const Vec y = plant.evaluate(x0, static_cast<int>(k));
      trace.t_s[k] = config.t_start_s + config.dt_s * k;
      trace.p0_ref_pu[k] = ref_pu(static_cast<int>(k));
      trace.p0_pu[k] = y[n_pq];
      trace.v_pu.row(k) = y.head(n_pq).transpose();
    }
  }

  RunResult result;
  result.trace = std::move(trace);
  result.metrics.nrmse = nrmse(result.trace.p0_pu, result.trace.p0_ref_pu);
  result.metrics.avv = avv(result.trace.v_pu, instance.limits);
  result.metrics.steps = K;
  result.metrics.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  if (options.write_outputs) {
    std::filesystem::create_directories(config.output_dir);
    const std::string stem = options.tag.empty() ? std::string("trace") : "trace_" + options.tag;
    result.trace_path = config.output_dir / (stem + ".csv");
    result.metrics_path =
        config.output_dir /
        ((options.tag.empty() ? std::string("metrics") : "metrics_" + options.tag) + ".json");
    write_trace_csv(result.trace_path, result.trace, plant.fleet());
    write_metrics_json(result.metrics_path, result.metrics);
  }
  return result;
}

double nrmse(const std::vector<double>& p0, const std::vector<double>& p0_ref) {
  if (p0.size() != p0_ref.size()) {
    throw std::invalid_argument("nrmse: trace length mismatch");
  }
  if (p0.empty()) throw MetricError("nrmse: empty trace");
  double acc = 0.0;
  for (std::size_t k = 0; k < p0.size(); ++k) {
    if (p0_ref[k] == 0.0) {
      throw MetricError("nrmse undefined: reference sample " + std::to_string(k) + " is zero");
    }
    const double rel = (p0[k] - p0_ref[k]) / p0_ref[k];
    acc += rel * rel;
  }
  return std::sqrt(acc / static_cast<double>(p0.size()));
}

double avv(const Mat& v_pu, const VoltageLimits& limits) {
  if (v_pu.cols() != limits.v_min.size()) {
    throw std::invalid_argument("avv: node count mismatch");
  }
  if (v_pu.rows() == 0) throw MetricError("avv: empty trace");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < v_pu.rows(); ++k) {
    for (Eigen::Index i = 0; i < v_pu.cols(); ++i) {
      acc += std::max(0.0, v_pu(k, i) - limits.v_max[i]) +
             std::max(0.0, limits.v_min[i] - v_pu(k, i));
    }
  }
  return acc / (static_cast<double>(v_pu.rows()) * static_cast<double>(v_pu.cols()));
}

std::vector<SweepRow> noise_sweep(const ScenarioConfig& config,
                                  const std::vector<double>& sigmas, bool write_outputs) {
  std::vector<SweepRow> rows(sigmas.size());
  if (write_outputs) std::filesystem::create_directories(config.output_dir);
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    try {
      ScenarioConfig entry = config;
      entry.sigma = sigmas[i];
      RunOptions options;
      options.write_outputs = write_outputs;
      char tag[32];
      std::snprintf(tag, sizeof tag, "sigma_%g", sigmas[i]);
      options.tag = tag;
      const RunResult result = run_scenario(entry, options);
      rows[i] = SweepRow{sigmas[i], result.metrics.nrmse, result.metrics.avv};
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  if (write_outputs && !rows.empty()) {
    std::ofstream out(config.output_dir / "sweep.csv");
    out << "sigma,nrmse,avv\n";
    char buffer[128];
    for (const auto& row : rows) {
      std::snprintf(buffer, sizeof buffer, "%.17g,%.17g,%.17g\n", row.sigma, row.nrmse,
                    row.avv);
      out << buffer;
    }
  }
  return rows;
}

std::vector<TargetPoint> solve_target_trajectory(const ScenarioConfig& config, long stride,
                                                 bool write_outputs) {
  if (stride <= 0) throw std::invalid_argument("solve_target_trajectory: stride must be > 0");
  ScenarioInstance instance = build_instance(config);
  FeederPlant plant(instance.feeder, std::move(instance.fleet), std::move(instance.loads),
                    config.dt_s, config.t_start_s);
  const int n_pq = plant.feeder().n_pq();
  const ScenarioConfig* cfg = &config;
  const auto ref_pu = [cfg](int k) {
    return cfg->p0_ref_mw(cfg->t_start_s + cfg->dt_s * k) / cfg->s_base_mva;
  };
  const double dt_hours = config.dt_s / 3600.0;

  std::vector<TargetPoint> points;
  for (long k = 0; k < config.steps(); k += stride) {
    // Linearize the feeder at the uncontrolled operating point of step k and
    // solve the frozen saddle-point problem on that linear surrogate.
    const Vec x0 = Vec::Zero(plant.input_dim());
    LinearPlant surrogate;
    surrogate.C = numerical_jacobian(plant, x0, static_cast<int>(k));
    surrogate.y0 = plant.evaluate(x0, static_cast<int>(k));

    TimeVaryingProblem problem = make_opf_problem(plant, instance.limits, ref_pu,
                                                  config.reg_p, config.reg_d,
                                                  config.dual_cap, dt_hours);
    const Mat C = surrogate.C;
    problem.model_matrix = [C](int) { return C; };

    SaddlePoint saddle;
    try {
      saddle = saddle_point_oracle(problem, static_cast<int>(k), surrogate);
    } catch (const NumericError& e) {
      throw NumericError("target trajectory at step " + std::to_string(k) + ": " + e.what(),
                         e.iterations);
    }
    TargetPoint point;
    point.k = k;
    point.t_s = config.t_start_s + config.dt_s * k;
    point.x_mw = saddle.x;
    point.lambda = saddle.lambda;
    point.p0_predicted_pu = (surrogate.y0 + surrogate.C * saddle.x)[n_pq];
    points.push_back(std::move(point));
  }

  if (write_outputs) {
    std::filesystem::create_directories(config.output_dir);
    std::ofstream out(config.output_dir / "target.csv");
    out << "k,t_s,p0_predicted_pu,lambda_norm";
    for (int i = 0; i < plant.input_dim() / 2; ++i) {
      out << ",x_p_" << i << ",x_q_" << i;
    }
    out << "\n";
    char buffer[64];
    for (const auto& point : points) {
      out << point.k;
      std::snprintf(buffer, sizeof buffer, ",%.17g", point.t_s);
      out << buffer;
      std::snprintf(buffer, sizeof buffer, ",%.17g", point.p0_predicted_pu);
      out << buffer;
      std::snprintf(buffer, sizeof buffer, ",%.17g", point.lambda.norm());
      out << buffer;
      for (Eigen::Index i = 0; i < point.x_mw.size(); ++i) {
        std::snprintf(buffer, sizeof buffer, ",%.17g", point.x_mw[i]);
        out << buffer;
      }
      out << "\n";
    }
  }
  return points;
}

void write_trace_csv(const std::filesystem::path& path, const Trace& trace,
                     const std::vector<Der>& fleet) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write trace to " + path.string());
  out << "t_s,p0_pu,p0_ref_pu,lambda_norm,lambda_max,grad_norm";
  for (Eigen::Index i = 0; i < trace.v_pu.cols(); ++i) out << ",v_" << (i + 1);
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    out << ",x_p_" << i << ",x_q_" << i;
  }
  int bi = 0;
  for (const auto& der : fleet) {
    if (std::holds_alternative<Battery>(der)) out << ",soc_" << bi++;
  }
  out << "\n";

  char buffer[64];
  const auto put = [&](double v, bool lead_comma = true) {
    std::snprintf(buffer, sizeof buffer, lead_comma ? ",%.17g" : "%.17g", v);
    out << buffer;
  };
  for (long k = 0; k < trace.steps(); ++k) {
    put(trace.t_s[k], false);
    put(trace.p0_pu[k]);
    put(trace.p0_ref_pu[k]);
    put(trace.lambda_norm[k]);
    put(trace.lambda_max[k]);
    put(trace.grad_norm[k]);
    for (Eigen::Index i = 0; i < trace.v_pu.cols(); ++i) put(trace.v_pu(k, i));
    for (Eigen::Index i = 0; i < trace.x_mw.cols(); ++i) put(trace.x_mw(k, i));
    for (Eigen::Index i = 0; i < trace.soc_mwh.cols(); ++i) put(trace.soc_mwh(k, i));
    out << "\n";
  }
}

Trace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("trace " + path.string() + " is empty");
  const auto header = split_csv_row(line);

  int n_v = 0, n_x = 0, n_soc = 0;
  for (const auto& name : header) {
    if (name.rfind("v_", 0) == 0) ++n_v;
    if (name.rfind("x_p_", 0) == 0 || name.rfind("x_q_", 0) == 0) ++n_x;
    if (name.rfind("soc_", 0) == 0) ++n_soc;
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() != header.size()) {
      throw ConfigError("trace " + path.string() + ": ragged row");
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) row[i] = std::stod(cells[i]);
    rows.push_back(std::move(row));
  }

  Trace trace;
  const long K = static_cast<long>(rows.size());
  trace.t_s.resize(K);
  trace.p0_pu.resize(K);
  trace.p0_ref_pu.resize(K);
  trace.lambda_norm.resize(K);
  trace.lambda_max.resize(K);
  trace.grad_norm.resize(K);
  trace.v_pu.resize(K, n_v);
  trace.x_mw.resize(K, n_x);
  trace.soc_mwh.resize(K, n_soc);
  for (long k = 0; k < K; ++k) {
    const auto& row = rows[static_cast<std::size_t>(k)];
    std::size_t c = 0;
    trace.t_s[k] = row[c++];
    trace.p0_pu[k] = row[c++];
    trace.p0_ref_pu[k] = row[c++];
    trace.lambda_norm[k] = row[c++];
    trace.lambda_max[k] = row[c++];
    trace.grad_norm[k] = row[c++];
    for (int i = 0; i < n_v; ++i) trace.v_pu(k, i) = row[c++];
    for (int i = 0; i < n_x; ++i) trace.x_mw(k, i) = row[c++];
    for (int i = 0; i < n_soc; ++i) trace.soc_mwh(k, i) = row[c++];
  }
  return trace;
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& metrics) {
  json j;
  j["nrmse"] = metrics.nrmse;
  j["avv"] = metrics.avv;
  j["steps"] = metrics.steps;
  j["runtime_s"] = metrics.runtime_s;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write metrics to " + path.string());
  out << j.dump(2) << "\n";
}

FeasibilityReport check_trace_feasibility(const ScenarioConfig& config, const Trace& trace) {
  ScenarioInstance instance = build_instance(config);
  const double dt_hours = config.dt_s / 3600.0;
  FeasibilityReport report;

  for (long k = 0; k < trace.steps(); ++k) {
    int bi = 0;
    for (std::size_t i = 0; i < instance.fleet.size(); ++i) {
      const double x_p = trace.x_mw(k, 2 * static_cast<Eigen::Index>(i));
      const double x_q = trace.x_mw(k, 2 * static_cast<Eigen::Index>(i) + 1);
      const double apparent = std::sqrt(x_p * x_p + x_q * x_q);
      if (std::holds_alternative<Battery>(instance.fleet[i])) {
        const Battery& battery = std::get<Battery>(instance.fleet[i]);
        const double soc = trace.soc_mwh(k, bi++);
        report.max_soc_violation_mwh =
            std::max({report.max_soc_violation_mwh, battery.soc_min_mwh - soc,
                      soc - battery.soc_max_mwh});
        const double lo =
            std::max(battery.p_min_mw, (battery.soc_min_mwh - soc) / dt_hours);
        const double hi =
            std::min(battery.p_max_mw, (battery.soc_max_mwh - soc) / dt_hours);
        report.max_power_box_violation_mw =
            std::max({report.max_power_box_violation_mw, lo - x_p, x_p - hi});
        report.max_disc_violation_mva =
            std::max(report.max_disc_violation_mva, apparent - battery.s_cap_mva);
      } else {
        const Pv& pv = std::get<Pv>(instance.fleet[i]);
        const double avail = pv.available_mw(static_cast<int>(k));
        report.max_power_box_violation_mw =
            std::max({report.max_power_box_violation_mw, -x_p, x_p - avail});
        report.max_disc_violation_mva =
            std::max(report.max_disc_violation_mva, apparent - pv.s_cap_mva);
      }
    }
    report.max_dual_cap_violation =
        std::max(report.max_dual_cap_violation, trace.lambda_max[k] - config.dual_cap);
  }
  return report;
}

}  // namespace mfpd
