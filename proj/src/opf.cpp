#include "mfpd/opf.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#include "mfpd/errors.hpp"

namespace mfpd {

int der_node(const Der& der) {
  return std::visit([](const auto& d) { return d.node; }, der);
}

Interval battery_power_bounds(const Battery& battery, double dt_hours) {
  if (!(dt_hours > 0.0)) throw std::invalid_argument("battery_power_bounds: dt must be > 0");
  const double lo =
      std::max(battery.p_min_mw, (battery.soc_min_mwh - battery.soc_mwh) / dt_hours);
  const double hi =
      std::min(battery.p_max_mw, (battery.soc_max_mwh - battery.soc_mwh) / dt_hours);
  if (lo > hi) {
    throw NumericError("battery power window is empty; SOC outside its bounds", 0);
  }
  return Interval{lo, hi};
}

SocUpdate soc_update(const Battery& battery, double x_p_mw, double dt_hours) {
  const double delta = x_p_mw >= 0.0 ? battery.eta * x_p_mw * dt_hours
                                     : x_p_mw * dt_hours / battery.eta;
  const double raw = battery.soc_mwh + delta;
  const double clamped = std::clamp(raw, battery.soc_min_mwh, battery.soc_max_mwh);
  return SocUpdate{clamped, clamped != raw};
}

double der_reference_power(const Der& der, int k) {
  if (std::holds_alternative<Pv>(der)) {
    return std::get<Pv>(der).available_mw(k);
  }
  const Battery& battery = std::get<Battery>(der);
  if (battery.soc_ref_mwh) {
    const double drive = (*battery.soc_ref_mwh - battery.soc_mwh) / battery.ref_horizon_h;
    return std::clamp(drive, battery.p_min_mw, battery.p_max_mw);
  }
  return battery.ref_p_mw;
}

Vec2 der_local_gradient(const Der& der, const Vec2& x, int k) {
  const double ref = der_reference_power(der, k);
  return std::visit(
      [&](const auto& d) {
        return Vec2(2.0 * d.c_p * x[0] + 2.0 * d.c_pref * (x[0] - ref),
                    2.0 * d.c_q * x[1]);
      },
      der);
}

BoxDiscSet der_feasible_set(const Der& der, int k, double dt_hours) {
  if (std::holds_alternative<Pv>(der)) {
    const Pv& pv = std::get<Pv>(der);
    return BoxDiscSet{0.0, std::max(0.0, pv.available_mw(k)), pv.s_cap_mva};
  }
  const Battery& battery = std::get<Battery>(der);
  const Interval window = battery_power_bounds(battery, dt_hours);
  return BoxDiscSet{window.lo, window.hi, battery.s_cap_mva};
}

VoltageLimits VoltageLimits::uniform(int n_nodes, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("voltage limits need v_min < v_max");
  VoltageLimits limits;
  limits.v_min = Vec::Constant(n_nodes, lo);
  limits.v_max = Vec::Constant(n_nodes, hi);
  return limits;
}

Vec voltage_constraints(const Vec& v, const VoltageLimits& limits) {
  if (v.size() != limits.v_min.size()) {
    throw std::invalid_argument("voltage_constraints: dimension mismatch");
  }
  Vec g(2 * v.size());
  g.head(v.size()) = v - limits.v_max;
  g.tail(v.size()) = limits.v_min - v;
  return g;
}

double coordinator_broadcast_scalar(double f0_plus, double f0_minus, const Vec& g_plus,
                                    const Vec& g_minus, const Vec& lambda, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("coordinator_broadcast_scalar: epsilon must be > 0");
  }
  double dual_term = 0.0;
  if (lambda.size() > 0) {
    dual_term = lambda.dot(g_plus - g_minus);
  }
  return ((f0_plus - f0_minus) + dual_term) / (2.0 * epsilon);
}

Vec2 der_local_update(const Der& der, int k, const Vec2& x, const Vec2& xi, double s,
                      const Vec2& alpha, double reg_p, double dt_hours) {
  const Vec2 grad = der_local_gradient(der, x, k);
  Vec2 raw;
  for (int i = 0; i < 2; ++i) {
    raw[i] = (1.0 - alpha[i] * reg_p) * x[i] - alpha[i] * (grad[i] + xi[i] * s);
  }
  // The update is applied during the next interval; project onto that set.
  return project_box_disc(raw, der_feasible_set(der, k + 1, dt_hours));
}

Vec dual_update_voltage(const Vec& lambda, const Vec& g_measured, const Vec& alpha_dual,
                        double reg_d, const DualBox& dual_box) {
  if (lambda.size() != g_measured.size() || lambda.size() != alpha_dual.size()) {
    throw std::invalid_argument("dual_update_voltage: dimension mismatch");
  }
  Vec next(lambda.size());
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    next[j] = (1.0 - alpha_dual[j] * reg_d) * lambda[j] + alpha_dual[j] * g_measured[j];
  }
  return project_dual(next, dual_box);
}

void Profile::add_point(int node, double t_s, double p_mw, double q_mvar) {
  if (node < 0) throw ConfigError("profile node must be nonnegative");
  if (node >= static_cast<int>(per_node_.size())) {
    per_node_.resize(static_cast<std::size_t>(node) + 1);
  }
  auto& points = per_node_[static_cast<std::size_t>(node)];
  if (!points.empty() && t_s < points.back().t_s) {
    throw ConfigError("profile rows must be time-sorted per node");
  }
  points.push_back(Point{t_s, p_mw, q_mvar});
}

const std::vector<Profile::Point>* Profile::node_points(int node) const {
  if (node < 0 || node >= static_cast<int>(per_node_.size())) return nullptr;
  const auto& points = per_node_[static_cast<std::size_t>(node)];
  return points.empty() ? nullptr : &points;
}

bool Profile::has_node(int node) const { return node_points(node) != nullptr; }

namespace {

double interpolate(const std::vector<Profile::Point>& points, double t_s,
                   double Profile::Point::* field) {
  if (t_s <= points.front().t_s) return points.front().*field;
  if (t_s >= points.back().t_s) return points.back().*field;
  const auto it = std::lower_bound(
      points.begin(), points.end(), t_s,
      [](const Profile::Point& p, double t) { return p.t_s < t; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double w = (t_s - lo.t_s) / (hi.t_s - lo.t_s);
  return (1.0 - w) * (lo.*field) + w * (hi.*field);
}

}  // namespace

double Profile::p_mw(int node, double t_s) const {
  const auto* points = node_points(node);
  return points ? interpolate(*points, t_s, &Point::p_mw) : 0.0;
}

double Profile::q_mvar(int node, double t_s) const {
  const auto* points = node_points(node);
  return points ? interpolate(*points, t_s, &Point::q_mvar) : 0.0;
}

FeederPlant::FeederPlant(FeederModel feeder, std::vector<Der> fleet, Profile loads,
                         double dt_s, double t_start_s)
    : feeder_(std::move(feeder)),
      fleet_(std::move(fleet)),
      loads_(std::move(loads)),
      dt_s_(dt_s),
      t_start_s_(t_start_s) {
  validate_feeder(feeder_);
  for (const auto& der : fleet_) {
    const int node = der_node(der);
    if (node < 1 || node >= feeder_.n_nodes) {
      throw ConfigError("DER node " + std::to_string(node) + " is not a PQ node");
    }
  }
}

void FeederPlant::base_injections(int k, Vec& p_pu, Vec& q_pu) const {
  const int n = feeder_.n_pq();
  const double t = time_of_step(k);
  p_pu = Vec::Zero(n);
  q_pu = Vec::Zero(n);
  for (int node = 1; node <= n; ++node) {
    // Loads consume: negative injection.
    p_pu[node - 1] = -loads_.p_mw(node, t) / feeder_.s_base_mva;
    q_pu[node - 1] = -loads_.q_mvar(node, t) / feeder_.s_base_mva;
  }
}

Vec FeederPlant::evaluate(const Vec& x_mw, int k) const {
  if (x_mw.size() != input_dim()) {
    throw std::invalid_argument("FeederPlant: expected " + std::to_string(input_dim()) +
                                " inputs, got " + std::to_string(x_mw.size()));
  }
  Vec p_pu, q_pu;
  base_injections(k, p_pu, q_pu);
  for (std::size_t i = 0; i < fleet_.size(); ++i) {
    const int node = der_node(fleet_[i]);
    // Batteries consume when charging (x_p > 0); PV generates.
    const double sign = std::holds_alternative<Battery>(fleet_[i]) ? -1.0 : 1.0;
    p_pu[node - 1] += sign * x_mw[2 * i] / feeder_.s_base_mva;
    q_pu[node - 1] += sign * x_mw[2 * i + 1] / feeder_.s_base_mva;
  }
  const PowerFlowResult pf = solve_power_flow(feeder_, p_pu, q_pu);
  Vec y(output_dim());
  y.head(feeder_.n_pq()) = pf.v_pu;
  y[feeder_.n_pq()] = pf.p0_pu;
  return y;
}

namespace {

double p0_tracking_cost(const Vec& y, double ref_pu) {
  const double err = y[y.size() - 1] - ref_pu;
  return err * err;
}

}  // namespace

Vec stack_alphas(const std::vector<Der>& fleet, const Vec2& alpha_battery,
                 const Vec2& alpha_pv) {
  Vec alpha(2 * fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    const Vec2& a = std::holds_alternative<Battery>(fleet[i]) ? alpha_battery : alpha_pv;
    alpha[2 * i] = a[0];
    alpha[2 * i + 1] = a[1];
  }
  return alpha;
}

TimeVaryingProblem make_opf_problem(const FeederPlant& plant, const VoltageLimits& limits,
                                    std::function<double(int k)> p0_ref_pu, double reg_p,
                                    double reg_d, double dual_cap, double dt_hours) {
  const int n_pq = plant.feeder().n_pq();
  if (limits.v_min.size() != n_pq) {
    throw ConfigError("voltage limits must cover all PQ nodes");
  }
  TimeVaryingProblem problem;
  problem.n = plant.input_dim();
  problem.num_constraints = 2 * n_pq;
  problem.reg_p = reg_p;
  problem.reg_d = reg_d;

  const auto* fleet = &plant.fleet();
  problem.local_cost = [fleet](int k, const Vec& x) {
    double total = 0.0;
    for (std::size_t i = 0; i < fleet->size(); ++i) {
      const Vec2 xi(x[2 * i], x[2 * i + 1]);
      const double ref = der_reference_power((*fleet)[i], k);
      std::visit(
          [&](const auto& d) {
            total += d.c_p * xi[0] * xi[0] + d.c_q * xi[1] * xi[1] +
                     d.c_pref * (xi[0] - ref) * (xi[0] - ref);
          },
          (*fleet)[i]);
    }
    return total;
  };
  problem.local_cost_grad = [fleet](int k, const Vec& x) {
    Vec grad(x.size());
    for (std::size_t i = 0; i < fleet->size(); ++i) {
      const Vec2 g = der_local_gradient((*fleet)[i], Vec2(x[2 * i], x[2 * i + 1]), k);
      grad[2 * i] = g[0];
      grad[2 * i + 1] = g[1];
    }
    return grad;
  };
  problem.output_cost = [p0_ref_pu](int k, const Vec& y) {
    return p0_tracking_cost(y, p0_ref_pu(k));
  };
  problem.constraints = [limits, n_pq](int, const Vec& y) {
    return voltage_constraints(y.head(n_pq), limits);
  };
  problem.primal_set = [fleet, dt_hours](int k) {
    ProductSet set;
    set.blocks.reserve(fleet->size());
    for (const auto& der : *fleet) {
      set.blocks.push_back(der_feasible_set(der, k, dt_hours));
    }
    return set;
  };
  problem.dual_set = [n_pq, dual_cap](int) {
    return DualBox{Vec::Constant(2 * n_pq, dual_cap)};
  };

  // Model providers for the oracle/baseline; C from central differences.
  problem.output_cost_grad = [p0_ref_pu](int k, const Vec& y) {
    Vec g = Vec::Zero(y.size());
    g[y.size() - 1] = 2.0 * (y[y.size() - 1] - p0_ref_pu(k));
    return g;
  };
  problem.constraint_grads = [n_pq](int, const Vec& y) {
    Mat grads = Mat::Zero(y.size(), 2 * n_pq);
    for (int i = 0; i < n_pq; ++i) {
      grads(i, i) = 1.0;          // d(v_i - vmax_i)/dv_i
      grads(i, n_pq + i) = -1.0;  // d(vmin_i - v_i)/dv_i
    }
    return grads;
  };
  const Plant* plant_ptr = &plant;
  auto jacobian_cache = std::make_shared<std::map<int, Mat>>();
  problem.model_matrix = [plant_ptr, jacobian_cache](int k) {
    auto it = jacobian_cache->find(k);
    if (it == jacobian_cache->end()) {
      it = jacobian_cache
               ->emplace(k, numerical_jacobian(*plant_ptr,
                                               Vec::Zero(plant_ptr->input_dim()), k))
               .first;
    }
    return it->second;
  };
  return problem;
}

DistributedOpf::DistributedOpf(FeederPlant& plant, const ExplorationSignal& signal,
                               const VoltageLimits& limits,
                               std::function<double(int k)> p0_ref_pu,
                               const Options& options, const NoiseModel& noise)
    : plant_(plant),
      signal_(signal),
      limits_(limits),
      p0_ref_pu_(std::move(p0_ref_pu)),
      options_(options),
      noise_(noise) {
  if (signal_.n != plant_.input_dim()) {
    throw ConfigError("exploration signal channels must match 2 * fleet size");
  }
  if (limits_.v_min.size() != plant_.feeder().n_pq()) {
    throw ConfigError("voltage limits must cover all PQ nodes");
  }
  if (!(options_.epsilon_mw > 0.0)) {
    throw ConfigError("DistributedOpf needs a positive probe radius");
  }
  x_ = Vec::Zero(plant_.input_dim());
  lambda_ = Vec::Zero(2 * plant_.feeder().n_pq());
  last_output_ = Vec::Zero(plant_.output_dim());
  last_measured_ = last_output_;
}

void DistributedOpf::set_state(const Vec& x_mw, const Vec& lambda, long k) {
  if (x_mw.size() != x_.size() || lambda.size() != lambda_.size()) {
    throw std::invalid_argument("DistributedOpf::set_state: dimension mismatch");
  }
  x_ = x_mw;
  lambda_ = lambda;
  k_ = k;
}

void DistributedOpf::step() {
  const int k = static_cast<int>(k_);
  const int n_pq = plant_.feeder().n_pq();
  const double t = plant_.time_of_step(k);
  const Vec xi = sample(signal_, t);
  const double eps = options_.epsilon_mw;
  const double ref = p0_ref_pu_(k);

  Vec y_plus, y_minus, y_hat;
  double s = 0.0;
  try {
    // Gather: the coordinator applies the probe inputs and the control,
    // measuring the feeder response to each (exogenous loads held at step k).
    y_plus = measure(plant_.evaluate(x_ + eps * xi, k), noise_, k_, 0);
    y_minus = measure(plant_.evaluate(x_ - eps * xi, k), noise_, k_, 1);
    last_output_ = plant_.evaluate(x_, k);
    y_hat = options_.third == ThirdMeasurement::AverageOfProbes
                ? Vec(0.5 * (y_plus + y_minus))
                : measure(last_output_, noise_, k_, 2);
  } catch (const std::exception& e) {
    throw StepAborted(std::string("plant evaluation failed: ") + e.what(), k_);
  }
  last_measured_ = y_hat;

  const double f0_plus = p0_tracking_cost(y_plus, ref);
  const double f0_minus = p0_tracking_cost(y_minus, ref);
  const Vec g_plus = voltage_constraints(y_plus.head(n_pq), limits_);
  const Vec g_minus = voltage_constraints(y_minus.head(n_pq), limits_);
  s = coordinator_broadcast_scalar(f0_plus, f0_minus, g_plus, g_minus, lambda_, eps);

  // Commit battery SOC for the next interval before the fleet updates, so
  // every agent projects onto the energy window it will actually face.
  for (std::size_t i = 0; i < plant_.fleet().size(); ++i) {
    if (std::holds_alternative<Battery>(plant_.fleet()[i])) {
      auto& battery = std::get<Battery>(plant_.fleet()[i]);
      battery.soc_mwh = soc_update(battery, x_[2 * i], dt_hours()).soc_mwh;
    }
  }

  // Broadcast: each DER updates from (s, xi_i) and local data only.
  Vec x_next(x_.size());
  double grad_sq = 0.0;
  for (std::size_t i = 0; i < plant_.fleet().size(); ++i) {
    const Der& der = plant_.fleet()[i];
    const Vec2& alpha =
        std::holds_alternative<Battery>(der) ? options_.alpha_battery : options_.alpha_pv;
    const Vec2 xi_i(xi[2 * i], xi[2 * i + 1]);
    const Vec2 x_i(x_[2 * i], x_[2 * i + 1]);
    const Vec2 grad_i = der_local_gradient(der, x_i, k);
    grad_sq += (grad_i + xi_i * s).squaredNorm();
    const Vec2 updated = der_local_update(der, k, x_i, xi_i, s, alpha, options_.reg_p,
                                          dt_hours());
    x_next[2 * i] = updated[0];
    x_next[2 * i + 1] = updated[1];
  }
  last_grad_norm_ = std::sqrt(grad_sq);

  const Vec g_measured = voltage_constraints(y_hat.head(n_pq), limits_);
  const Vec alpha_dual = Vec::Constant(2 * n_pq, options_.alpha_dual);
  const DualBox dual_box{Vec::Constant(2 * n_pq, options_.dual_cap)};
  lambda_ = dual_update_voltage(lambda_, g_measured, alpha_dual, options_.reg_d, dual_box);

  x_ = x_next;
  ++k_;
}

}  // namespace mfpd
