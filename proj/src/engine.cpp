#include "mfpd/engine.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "mfpd/errors.hpp"
#include "mfpd/rng.hpp"
#include "mfpd/zograd.hpp"

namespace mfpd {

StepSizes StepSizes::uniform(int n, int m, double alpha_scalar, double alpha_dual_scalar,
                             double epsilon, double dt_s) {
  StepSizes sizes;
  sizes.alpha = Vec::Constant(n, alpha_scalar);
  sizes.alpha_dual = Vec::Constant(m, alpha_dual_scalar);
  sizes.epsilon = epsilon;
  sizes.dt_s = dt_s;
  return sizes;
}

double regularized_lagrangian(const TimeVaryingProblem& problem, int k, const Vec& x,
                              const Vec& lambda, const Vec& y) {
  double value = 0.0;
  if (problem.local_cost) value += problem.local_cost(k, x);
  if (problem.output_cost) value += problem.output_cost(k, y);
  if (lambda.size() > 0) {
    value += lambda.dot(problem.constraints(k, y));
  }
  value += 0.5 * problem.reg_p * x.squaredNorm();
  value -= 0.5 * problem.reg_d * lambda.squaredNorm();
  return value;
}

namespace {

void check_state(const PrimalDualState& state, const TimeVaryingProblem& problem,
                 const StepSizes& sizes) {
  if (state.x.size() != problem.n) {
    throw std::invalid_argument("state.x dimension does not match problem.n");
  }
  if (state.lambda.size() != problem.num_constraints) {
    throw std::invalid_argument("state.lambda dimension does not match problem constraints");
  }
  if (sizes.alpha.size() != problem.n || sizes.alpha_dual.size() != problem.num_constraints) {
    throw std::invalid_argument("step sizes do not match problem dimensions");
  }
  if (sizes.project_mode == ProjectMode::EveryPeriod && sizes.period_steps <= 0) {
    throw std::invalid_argument("EveryPeriod projection needs period_steps > 0");
  }
}

bool project_now(const StepSizes& sizes, long next_k) {
  if (sizes.project_mode == ProjectMode::EveryStep) return true;
  return next_k % sizes.period_steps == 0;
}

Vec dual_step(const Vec& lambda, const Vec& g_measured, const TimeVaryingProblem& problem,
              const StepSizes& sizes, const DualBox& dual_box) {
  Vec next(lambda.size());
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    next[j] = (1.0 - sizes.alpha_dual[j] * problem.reg_d) * lambda[j] +
              sizes.alpha_dual[j] * g_measured[j];
  }
  return project_dual(next, dual_box);
}

void fill_record(StepRecord* record, const PrimalDualState& next,
                 const TimeVaryingProblem& problem, int k, const Vec& y_hat,
                 double grad_norm) {
  if (!record) return;
  record->k = next.k;
  record->t_s = next.t_s;
  record->x = next.x;
  record->lambda = next.lambda;
  record->y_hat = y_hat;
  record->grad_norm = grad_norm;
  record->objective = (problem.local_cost ? problem.local_cost(k, next.x) : 0.0) +
                      (problem.output_cost ? problem.output_cost(k, y_hat) : 0.0);
}

}  // namespace

PrimalDualState model_free_step(const PrimalDualState& state,
                                const TimeVaryingProblem& problem, const Plant& plant,
                                const ExplorationSignal& signal, const StepSizes& sizes,
                                const NoiseModel& noise, StepRecord* record) {
  check_state(state, problem, sizes);
  if (signal.n != problem.n) {
    throw std::invalid_argument("exploration signal channel count does not match problem.n");
  }
  const int k = static_cast<int>(state.k);
  const Vec xi = sample(signal, state.t_s);

  Vec y_hat;
  double broadcast = 0.0;  // ([f0+ - f0-] + lambda^T [g+ - g-]) / (2 eps)
  try {
    if (sizes.epsilon > 0.0) {
      const ProbePair probes = probe_points(state.x, xi, sizes.epsilon);
      // [S1a]/[S1b]: the exogenous input w^(k) is held fixed across the
      // three evaluations (same k), so only the probe slot differs.
      const Vec y_plus = measure(plant.evaluate(probes.x_plus, k), noise, state.k, 0);
      const Vec y_minus = measure(plant.evaluate(probes.x_minus, k), noise, state.k, 1);
      y_hat = sizes.third == ThirdMeasurement::AverageOfProbes
                  ? Vec(0.5 * (y_plus + y_minus))
                  : measure(plant.evaluate(state.x, k), noise, state.k, 2);
      const double df0 = problem.output_cost(k, y_plus) - problem.output_cost(k, y_minus);
      double dual_term = 0.0;
      if (problem.num_constraints > 0) {
        dual_term = state.lambda.dot(problem.constraints(k, y_plus) -
                                     problem.constraints(k, y_minus));
      }
      broadcast = (df0 + dual_term) / (2.0 * sizes.epsilon);
    } else {
      // Degenerate probe: no exploration, measurement term vanishes.
      y_hat = measure(plant.evaluate(state.x, k), noise, state.k, 2);
    }
  } catch (const std::exception& e) {
    throw StepAborted(std::string("plant evaluation failed: ") + e.what(), state.k);
  }

  const Vec grad_local =
      problem.local_cost_grad ? problem.local_cost_grad(k, state.x) : Vec(Vec::Zero(problem.n));
  const Vec grad_hat = grad_local + xi * broadcast;

  Vec x_next(problem.n);
  for (int i = 0; i < problem.n; ++i) {
    x_next[i] = (1.0 - sizes.alpha[i] * problem.reg_p) * state.x[i] -
                sizes.alpha[i] * grad_hat[i];
  }

  PrimalDualState next;
  next.k = state.k + 1;
  next.t_s = state.t_s + sizes.dt_s;
  // The new iterate is applied during step k+1, so it must live in that
  // step's feasible set (battery energy windows and PV availability move).
  next.x = project_now(sizes, next.k)
               ? problem.primal_set(static_cast<int>(next.k)).project(x_next)
               : x_next;
  next.lambda = problem.num_constraints > 0
                    ? dual_step(state.lambda, problem.constraints(k, y_hat), problem,
                                sizes, problem.dual_set(k))
                    : state.lambda;

  fill_record(record, next, problem, k, y_hat, grad_hat.norm());
  return next;
}

PrimalDualState model_based_step(const PrimalDualState& state,
                                 const TimeVaryingProblem& problem, const Plant& plant,
                                 const StepSizes& sizes, const NoiseModel& noise,
                                 StepRecord* record) {
  check_state(state, problem, sizes);
  if (!problem.has_model()) {
    throw UnsupportedOperation("model_based_step requires model providers (C, grad f0, grad g)");
  }
  const int k = static_cast<int>(state.k);

  Vec y_hat;
  try {
    y_hat = measure(plant.evaluate(state.x, k), noise, state.k, 2);
  } catch (const std::exception& e) {
    throw StepAborted(std::string("plant evaluation failed: ") + e.what(), state.k);
  }

  const Mat C = problem.model_matrix(k);
  Vec output_term = problem.output_cost_grad(k, y_hat);
  if (problem.num_constraints > 0) {
    output_term += problem.constraint_grads(k, y_hat) * state.lambda;
  }
  const Vec grad_local =
      problem.local_cost_grad ? problem.local_cost_grad(k, state.x) : Vec(Vec::Zero(problem.n));
  const Vec grad = grad_local + C.transpose() * output_term;

  Vec x_next(problem.n);
  for (int i = 0; i < problem.n; ++i) {
    x_next[i] =
        (1.0 - sizes.alpha[i] * problem.reg_p) * state.x[i] - sizes.alpha[i] * grad[i];
  }

  PrimalDualState next;
  next.k = state.k + 1;
  next.t_s = state.t_s + sizes.dt_s;
  next.x = project_now(sizes, next.k)
               ? problem.primal_set(static_cast<int>(next.k)).project(x_next)
               : x_next;
  next.lambda = problem.num_constraints > 0
                    ? dual_step(state.lambda, problem.constraints(k, y_hat), problem,
                                sizes, problem.dual_set(k))
                    : state.lambda;

  fill_record(record, next, problem, k, y_hat, grad.norm());
  return next;
}

namespace {

// The primal-dual operator phi(z) = [grad_x L_{p,d}; -g(y(x)) + d*lambda]
// evaluated through the model providers with exact plant outputs.
Vec primal_dual_operator(const TimeVaryingProblem& problem, int k, const Plant& plant,
                         const Vec& x, const Vec& lambda) {
  const Vec y = plant.evaluate(x, k);
  Vec output_term = problem.output_cost_grad(k, y);
  if (problem.num_constraints > 0) {
    output_term += problem.constraint_grads(k, y) * lambda;
  }
  const Vec grad_local =
      problem.local_cost_grad ? problem.local_cost_grad(k, x) : Vec(Vec::Zero(problem.n));
  Vec phi(problem.n + problem.num_constraints);
  phi.head(problem.n) = grad_local + problem.model_matrix(k).transpose() * output_term +
                        problem.reg_p * x;
  if (problem.num_constraints > 0) {
    phi.tail(problem.num_constraints) =
        -problem.constraints(k, y) + problem.reg_d * lambda;
  }
  return phi;
}

Vec random_point_in_sets(const TimeVaryingProblem& problem, int k, RandomStream& rng,
                         double spread) {
  Vec z(problem.n + problem.num_constraints);
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = spread * rng.next_normal();
  z.head(problem.n) = problem.primal_set(k).project(z.head(problem.n));
  if (problem.num_constraints > 0) {
    z.tail(problem.num_constraints) =
        project_dual(z.tail(problem.num_constraints), problem.dual_set(k));
  }
  return z;
}

}  // namespace

TrackingAnalysis estimate_operator_constants(const TimeVaryingProblem& problem, int k,
                                             const Plant& plant, int n_pairs,
                                             std::uint64_t seed) {
  if (!problem.has_model()) {
    throw UnsupportedOperation("operator estimation requires model providers");
  }
  const int dim = problem.n + problem.num_constraints;
  RandomStream rng(seed, 0x6f70, static_cast<std::uint64_t>(k));

  auto phi = [&](const Vec& z) {
    return primal_dual_operator(problem, k, plant, z.head(problem.n),
                                z.tail(problem.num_constraints));
  };

  double eta = std::numeric_limits<double>::infinity();
  double lip = 0.0;
  for (int it = 0; it < n_pairs; ++it) {
    const Vec z1 = random_point_in_sets(problem, k, rng, 1.0 + it % 3);
    const Vec z2 = random_point_in_sets(problem, k, rng, 1.0 + it % 5);
    const double dist2 = (z1 - z2).squaredNorm();
    if (dist2 < 1e-16) continue;
    const Vec dphi = phi(z1) - phi(z2);
    eta = std::min(eta, dphi.dot(z1 - z2) / dist2);
    lip = std::max(lip, dphi.norm() / std::sqrt(dist2));
  }

  // Finite-difference operator Jacobian at a few base points; for affine
  // operators this pins the exact extreme eigen/singular values.
  for (int base = 0; base < 3; ++base) {
    const Vec z0 = random_point_in_sets(problem, k, rng, 0.5 + base);
    const Vec phi0 = phi(z0);
    const double h = 1e-6 * (1.0 + z0.norm());
    Mat jac(dim, dim);
    for (int j = 0; j < dim; ++j) {
      Vec z = z0;
      z[j] += h;
      jac.col(j) = (phi(z) - phi0) / h;
    }
    const Mat sym = 0.5 * (jac + jac.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
    eta = std::min(eta, eig.eigenvalues().minCoeff());
    Eigen::JacobiSVD<Mat> svd(jac);
    lip = std::max(lip, svd.singularValues().maxCoeff());
  }

  TrackingAnalysis analysis;
  analysis.eta_phi = eta;
  analysis.L_phi = lip;
  return analysis;
}

namespace {

// Frozen view of a time-varying problem: every provider sees the pinned step.
TimeVaryingProblem freeze_problem(const TimeVaryingProblem& problem, int k) {
  TimeVaryingProblem frozen = problem;
  if (problem.local_cost)
    frozen.local_cost = [&problem, k](int, const Vec& x) { return problem.local_cost(k, x); };
  if (problem.local_cost_grad)
    frozen.local_cost_grad = [&problem, k](int, const Vec& x) {
      return problem.local_cost_grad(k, x);
    };
  if (problem.output_cost)
    frozen.output_cost = [&problem, k](int, const Vec& y) { return problem.output_cost(k, y); };
  if (problem.constraints)
    frozen.constraints = [&problem, k](int, const Vec& y) { return problem.constraints(k, y); };
  frozen.primal_set = [&problem, k](int) { return problem.primal_set(k); };
  frozen.dual_set = [&problem, k](int) { return problem.dual_set(k); };
  if (problem.output_cost_grad)
    frozen.output_cost_grad = [&problem, k](int, const Vec& y) {
      return problem.output_cost_grad(k, y);
    };
  if (problem.constraint_grads)
    frozen.constraint_grads = [&problem, k](int, const Vec& y) {
      return problem.constraint_grads(k, y);
    };
  if (problem.model_matrix)
    frozen.model_matrix = [&problem, k](int) { return problem.model_matrix(k); };
  return frozen;
}

// Frozen plant view: evaluate always at the pinned step.
class FrozenPlant : public Plant {
 public:
  FrozenPlant(const Plant& inner, int k) : inner_(inner), k_(k) {}
  int input_dim() const override { return inner_.input_dim(); }
  int output_dim() const override { return inner_.output_dim(); }
  Vec evaluate(const Vec& x, int) const override { return inner_.evaluate(x, k_); }

 private:
  const Plant& inner_;
  int k_;
};

}  // namespace

SaddlePoint saddle_point_oracle(const TimeVaryingProblem& problem, int k,
                                const Plant& plant, double tol, long max_iterations) {
  if (!problem.has_model()) {
    throw UnsupportedOperation("saddle_point_oracle requires model providers");
  }
  const TrackingAnalysis constants = estimate_operator_constants(problem, k, plant);
  if (!(constants.eta_phi > 0.0)) {
    throw NumericError("operator is not strongly monotone; saddle point may not be unique", 0);
  }
  const double alpha = 0.9 * 0.5 * (2.0 * constants.eta_phi /
                                    (constants.L_phi * constants.L_phi));

  const TimeVaryingProblem frozen = freeze_problem(problem, k);
  const FrozenPlant frozen_plant(plant, k);
  StepSizes sizes = StepSizes::uniform(problem.n, problem.num_constraints, alpha, alpha,
                                       /*epsilon=*/0.0, /*dt_s=*/0.0);

  PrimalDualState state;
  state.x = frozen.primal_set(k).project(Vec::Zero(problem.n));
  state.lambda = problem.num_constraints > 0
                     ? project_dual(Vec::Zero(problem.num_constraints), frozen.dual_set(k))
                     : Vec(0);
  state.k = k;

  for (long it = 0; it < max_iterations; ++it) {
    PrimalDualState next = model_based_step(state, frozen, frozen_plant, sizes);
    const double move = (next.x - state.x).norm() +
                        (problem.num_constraints > 0 ? (next.lambda - state.lambda).norm() : 0.0);
    state = std::move(next);
    if (move < tol) {
      return SaddlePoint{state.x, state.lambda, it + 1};
    }
  }
  throw NumericError("saddle_point_oracle did not converge", max_iterations);
}

namespace {

void check_analysis(const TrackingAnalysis& analysis) {
  if (!(analysis.eta_phi > 0.0) || !(analysis.eta_phi <= analysis.L_phi)) {
    throw std::invalid_argument("TrackingAnalysis requires 0 < eta_phi <= L_phi");
  }
}

}  // namespace

double contraction_constant(double alpha, const TrackingAnalysis& analysis) {
  check_analysis(analysis);
  const double admissible = 2.0 * analysis.eta_phi / (analysis.L_phi * analysis.L_phi);
  if (!(alpha > 0.0) || !(alpha < admissible)) {
    throw std::invalid_argument("alpha must satisfy 0 < alpha < 2*eta/L^2 = " +
                                std::to_string(admissible));
  }
  return std::sqrt(1.0 - 2.0 * alpha * analysis.eta_phi +
                   alpha * alpha * analysis.L_phi * analysis.L_phi);
}

double tracking_error_bound(double alpha, const TrackingAnalysis& analysis) {
  if (analysis.eps_phi < 0.0 || analysis.sigma < 0.0) {
    throw std::invalid_argument("eps_phi and sigma must be nonnegative");
  }
  const double c = contraction_constant(alpha, analysis);
  return (alpha * analysis.eps_phi + analysis.sigma) / (1.0 - c);
}

PeriodDisplacement period_averaged_displacement(std::span<const PrimalDualState> trace,
                                                const Vec& x_at_period_start,
                                                const TimeVaryingProblem& problem, int k0,
                                                const Plant& plant, double alpha_scalar,
                                                long period_steps) {
  if (static_cast<long>(trace.size()) != period_steps + 1) {
    throw std::invalid_argument("trace must hold exactly period_steps + 1 states, got " +
                                std::to_string(trace.size()));
  }
  if ((trace.front().x - x_at_period_start).norm() > 1e-12) {
    throw std::invalid_argument("trace does not start at x_at_period_start");
  }
  if (!problem.has_model()) {
    throw UnsupportedOperation("period_averaged_displacement requires model providers");
  }

  const Vec phi = primal_dual_operator(problem, k0, plant, x_at_period_start,
                                       trace.front().lambda);
  PeriodDisplacement out;
  out.measured = trace.back().x - x_at_period_start;
  out.reference = -alpha_scalar * static_cast<double>(period_steps) * phi.head(problem.n);
  return out;
}

}  // namespace mfpd
