#include "mfpd/plant.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mfpd/errors.hpp"
#include "mfpd/rng.hpp"

namespace mfpd {

Vec LinearPlant::evaluate(const Vec& x, int k) const { return evaluate_linear(*this, x, k); }

Vec evaluate_linear(const LinearPlant& plant, const Vec& x, int k) {
  if (x.size() != plant.C.cols()) {
    throw std::invalid_argument("evaluate_linear: input dimension mismatch");
  }
  Vec y = plant.C * x;
  if (plant.y0.size() > 0) {
    if (plant.y0.size() != y.size()) {
      throw std::invalid_argument("evaluate_linear: y0 dimension mismatch");
    }
    y += plant.y0;
  }
  if (!plant.w_trajectory.empty()) {
    if (k < 0 || k >= static_cast<int>(plant.w_trajectory.size())) {
      throw std::invalid_argument("evaluate_linear: step " + std::to_string(k) +
                                  " outside disturbance trajectory");
    }
    y += plant.D * plant.w_trajectory[static_cast<std::size_t>(k)];
  }
  return y;
}

void validate_feeder(const FeederModel& feeder) {
  if (feeder.n_nodes < 2) throw ConfigError("feeder needs at least two nodes");
  if (!(feeder.s_base_mva > 0.0)) throw ConfigError("feeder S_base must be positive");
  std::vector<std::vector<int>> adj(feeder.n_nodes);
  for (const auto& line : feeder.lines) {
    if (line.from < 0 || line.from >= feeder.n_nodes || line.to < 0 ||
        line.to >= feeder.n_nodes || line.from == line.to) {
      throw ConfigError("feeder line endpoints out of range");
    }
    if (line.r_pu < 0.0) throw ConfigError("feeder line resistance must be >= 0");
    if (line.r_pu == 0.0 && line.x_pu == 0.0) {
      throw ConfigError("feeder line impedance must be nonzero");
    }
    adj[line.from].push_back(line.to);
    adj[line.to].push_back(line.from);
  }
  std::vector<bool> seen(feeder.n_nodes, false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        frontier.push(v);
      }
    }
  }
  for (int i = 0; i < feeder.n_nodes; ++i) {
    if (!seen[i]) {
      throw ConfigError("feeder node " + std::to_string(i) + " unreachable from the slack");
    }
  }
}

FeederModel load_feeder_csv(const std::filesystem::path& path, double s_base_mva,
                            double slack_voltage_pu) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feeder file " + path.string());
  FeederModel feeder;
  feeder.s_base_mva = s_base_mva;
  feeder.slack_voltage_pu = slack_voltage_pu;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("feeder file is empty: " + path.string());
  int max_node = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    FeederLine fl;
    try {
      std::getline(ss, cell, ',');
      fl.from = std::stoi(cell);
      std::getline(ss, cell, ',');
      fl.to = std::stoi(cell);
      std::getline(ss, cell, ',');
      fl.r_pu = std::stod(cell);
      std::getline(ss, cell, ',');
      fl.x_pu = std::stod(cell);
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected `from,to,r_pu,x_pu`");
    }
    max_node = std::max({max_node, fl.from, fl.to});
    feeder.lines.push_back(fl);
  }
  feeder.n_nodes = max_node + 1;
  validate_feeder(feeder);
  return feeder;
}

namespace {

Eigen::MatrixXcd build_ybus(const FeederModel& feeder) {
  Eigen::MatrixXcd ybus = Eigen::MatrixXcd::Zero(feeder.n_nodes, feeder.n_nodes);
  for (const auto& line : feeder.lines) {
    const std::complex<double> y = 1.0 / std::complex<double>(line.r_pu, line.x_pu);
    ybus(line.from, line.from) += y;
    ybus(line.to, line.to) += y;
    ybus(line.from, line.to) -= y;
    ybus(line.to, line.from) -= y;
  }
  return ybus;
}

}  // namespace

PowerFlowResult solve_power_flow(const FeederModel& feeder, const Vec& p_injection_pu,
                                 const Vec& q_injection_pu, double tol,
                                 int max_iterations) {
  const int n = feeder.n_pq();
  if (p_injection_pu.size() != n || q_injection_pu.size() != n) {
    throw std::invalid_argument("solve_power_flow: injections must cover nodes 1..n");
  }
  const Eigen::MatrixXcd ybus = build_ybus(feeder);
  const Mat G = ybus.real();
  const Mat B = ybus.imag();

  // Flat start; node 0 pinned at the slack voltage, angle 0.
  Vec v = Vec::Ones(feeder.n_nodes);
  v[0] = feeder.slack_voltage_pu;
  Vec theta = Vec::Zero(feeder.n_nodes);

  Vec p_calc(feeder.n_nodes), q_calc(feeder.n_nodes);
  double max_mismatch = 0.0;
  for (int iter = 0; iter <= max_iterations; ++iter) {
    for (int i = 0; i < feeder.n_nodes; ++i) {
      double pi = 0.0, qi = 0.0;
      for (int j = 0; j < feeder.n_nodes; ++j) {
        const double tij = theta[i] - theta[j];
        pi += v[j] * (G(i, j) * std::cos(tij) + B(i, j) * std::sin(tij));
        qi += v[j] * (G(i, j) * std::sin(tij) - B(i, j) * std::cos(tij));
      }
      p_calc[i] = v[i] * pi;
      q_calc[i] = v[i] * qi;
    }

    Vec mismatch(2 * n);
    for (int i = 1; i <= n; ++i) {
      mismatch[i - 1] = p_injection_pu[i - 1] - p_calc[i];
      mismatch[n + i - 1] = q_injection_pu[i - 1] - q_calc[i];
    }
    max_mismatch = mismatch.cwiseAbs().maxCoeff();
    if (max_mismatch < tol) {
      PowerFlowResult result;
      result.v_pu = v.tail(n);
      result.theta_rad = theta.tail(n);
      result.p0_pu = p_calc[0];
      result.iterations = iter;
      result.max_mismatch = max_mismatch;
      return result;
    }
    if (iter == max_iterations) break;

    // Standard polar Jacobian [H N; M L] over the PQ unknowns.
    Mat jac(2 * n, 2 * n);
    for (int i = 1; i <= n; ++i) {
      for (int j = 1; j <= n; ++j) {
        const double tij = theta[i] - theta[j];
        if (i == j) {
          jac(i - 1, j - 1) = -q_calc[i] - B(i, i) * v[i] * v[i];
          jac(i - 1, n + j - 1) = p_calc[i] / v[i] + G(i, i) * v[i];
          jac(n + i - 1, j - 1) = p_calc[i] - G(i, i) * v[i] * v[i];
          jac(n + i - 1, n + j - 1) = q_calc[i] / v[i] - B(i, i) * v[i];
        } else {
          const double gc = G(i, j) * std::cos(tij) + B(i, j) * std::sin(tij);
          const double gs = G(i, j) * std::sin(tij) - B(i, j) * std::cos(tij);
          jac(i - 1, j - 1) = v[i] * v[j] * gs;
          jac(i - 1, n + j - 1) = v[i] * gc;
          jac(n + i - 1, j - 1) = -v[i] * v[j] * gc;
          jac(n + i - 1, n + j - 1) = v[i] * gs;
        }
      }
    }

    const Vec delta = jac.partialPivLu().solve(mismatch);
    if (!delta.allFinite()) {
      throw PowerFlowDivergence("singular power-flow Jacobian", iter, max_mismatch);
    }
    for (int i = 1; i <= n; ++i) {
      theta[i] += delta[i - 1];
      v[i] += delta[n + i - 1];
    }
    if (v.tail(n).minCoeff() <= 0.0) {
      throw PowerFlowDivergence("voltage collapsed below zero", iter, max_mismatch);
    }
  }
  throw PowerFlowDivergence("power flow did not converge", max_iterations, max_mismatch);
}

Vec measure(const Vec& y, const NoiseModel& noise, long step, int slot) {
  if (noise.sigma == 0.0) return y;
  RandomStream stream(noise.seed, static_cast<std::uint64_t>(step),
                      static_cast<std::uint64_t>(slot));
  Vec out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    out[i] = y[i] * (1.0 + noise.sigma * stream.next_normal());
  }
  return out;
}

namespace {

Mat jacobian_impl(const Plant& plant, const Vec& x0, int k, double fd_step, bool parallel) {
  if (x0.size() != plant.input_dim()) {
    throw std::invalid_argument("numerical_jacobian: x0 dimension mismatch");
  }
  if (!(fd_step > 0.0)) throw std::invalid_argument("numerical_jacobian: fd_step must be > 0");
  const int n = plant.input_dim();
  const int m = plant.output_dim();
  Mat jac(m, n);
  std::exception_ptr error;

#pragma omp parallel for if (parallel) schedule(dynamic)
  for (int j = 0; j < n; ++j) {
    try {
      Vec xp = x0;
      Vec xm = x0;
      xp[j] += fd_step;
      xm[j] -= fd_step;
      jac.col(j) = (plant.evaluate(xp, k) - plant.evaluate(xm, k)) / (2.0 * fd_step);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return jac;
}

}  // namespace

Mat numerical_jacobian(const Plant& plant, const Vec& x0, int k, double fd_step) {
  return jacobian_impl(plant, x0, k, fd_step, /*parallel=*/true);
}

Mat numerical_jacobian_serial(const Plant& plant, const Vec& x0, int k, double fd_step) {
  return jacobian_impl(plant, x0, k, fd_step, /*parallel=*/false);
}

}  // namespace mfpd
