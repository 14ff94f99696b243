#pragma once

#include <functional>
#include <span>

#include "mfpd/plant.hpp"
#include "mfpd/sets.hpp"
#include "mfpd/signals.hpp"
#include "mfpd/types.hpp"

namespace mfpd {

/// Per-step problem data for the online saddle-point tracker.
///
/// The measurement-driven providers (local_cost*, output_cost, constraints)
/// are always required. The model providers (output_cost_grad,
/// constraint_grads, model_matrix) back the model-based baseline and the
/// saddle-point oracle; model-free stepping never touches them.
struct TimeVaryingProblem {
  int n = 0;                // primal dimension
  int num_constraints = 0;  // M
  double reg_p = 0.0;
  double reg_d = 0.0;

  std::function<double(int k, const Vec& x)> local_cost;   // f(x) = sum_i f_i
  std::function<Vec(int k, const Vec& x)> local_cost_grad;
  std::function<double(int k, const Vec& y)> output_cost;  // f0
  std::function<Vec(int k, const Vec& y)> constraints;     // g, length M
  std::function<ProductSet(int k)> primal_set;
  std::function<DualBox(int k)> dual_set;

  std::function<Vec(int k, const Vec& y)> output_cost_grad;  // df0/dy
  std::function<Mat(int k, const Vec& y)> constraint_grads;  // column j = dg_j/dy
  std::function<Mat(int k)> model_matrix;                    // C

  bool has_model() const {
    return static_cast<bool>(output_cost_grad) && static_cast<bool>(model_matrix) &&
           (num_constraints == 0 || static_cast<bool>(constraint_grads));
  }
};

struct PrimalDualState {
  Vec x;
  Vec lambda;
  long k = 0;
  double t_s = 0.0;
};

enum class ProjectMode { EveryStep, EveryPeriod };
enum class ThirdMeasurement { Independent, AverageOfProbes };

struct StepSizes {
  Vec alpha;       // per primal component
  Vec alpha_dual;  // per constraint
  double epsilon = 0.0;
  double dt_s = 1.0;
  ProjectMode project_mode = ProjectMode::EveryStep;
  long period_steps = 0;  // required for EveryPeriod
  ThirdMeasurement third = ThirdMeasurement::Independent;

  static StepSizes uniform(int n, int m, double alpha_scalar, double alpha_dual_scalar,
                           double epsilon, double dt_s = 1.0);
};

/// Per-step trace record consumed by the harness.
struct StepRecord {
  long k = 0;
  double t_s = 0.0;
  Vec x;
  Vec lambda;
  Vec y_hat;
  double grad_norm = 0.0;
  double objective = 0.0;  // f(x) + f0(y_hat)
};

/// L^(k)_{p,d}(x, lambda) evaluated at a given output vector y.
double regularized_lagrangian(const TimeVaryingProblem& problem, int k, const Vec& x,
                              const Vec& lambda, const Vec& y);

/// One step of the model-free primal-dual algorithm: forward/backward
/// exploration, control application, two-point gradient assembly, projected
/// primal and dual updates. Throws StepAborted (state unchanged) when the
/// plant cannot be evaluated.
PrimalDualState model_free_step(const PrimalDualState& state,
                                const TimeVaryingProblem& problem, const Plant& plant,
                                const ExplorationSignal& signal, const StepSizes& sizes,
                                const NoiseModel& noise, StepRecord* record = nullptr);

/// One step of the measurement-based (gradient-exact) baseline; requires the
/// model providers.
PrimalDualState model_based_step(const PrimalDualState& state,
                                 const TimeVaryingProblem& problem, const Plant& plant,
                                 const StepSizes& sizes, const NoiseModel& noise = {},
                                 StepRecord* record = nullptr);

struct SaddlePoint {
  Vec x;
  Vec lambda;
  long iterations = 0;
};

/// The unique saddle point of the regularized Lagrangian at frozen step k,
/// found by iterating the model-based step with an empirically safe constant
/// step size until successive iterates move less than tol.
SaddlePoint saddle_point_oracle(const TimeVaryingProblem& problem, int k,
                                const Plant& plant, double tol = 1e-10,
                                long max_iterations = 1000000);

/// Constants feeding the contraction/tracking bounds. eta/L are the strong
/// monotonicity and Lipschitz constants of the primal-dual operator; the
/// remaining entries bound temporal drift, measurement error, trajectory
/// drift, and operator error.
struct TrackingAnalysis {
  double eta_phi = 0.0;
  double L_phi = 0.0;
  double e_f = 0.0;
  double e_y = 0.0;
  double sigma = 0.0;
  double eps_phi = 0.0;
};

/// c = sqrt(1 - 2*alpha*eta + alpha^2*L^2); requires 0 < alpha < 2*eta/L^2.
double contraction_constant(double alpha, const TrackingAnalysis& analysis);

/// Asymptotic tracking bound (alpha*eps_phi + sigma) / (1 - c).
double tracking_error_bound(double alpha, const TrackingAnalysis& analysis);

/// Empirical (eta, L) for the model-based primal-dual operator at step k,
/// from random point pairs plus a finite-difference operator Jacobian (exact
/// for affine operators such as linear-plant QPs).
TrackingAnalysis estimate_operator_constants(const TimeVaryingProblem& problem, int k,
                                             const Plant& plant, int n_pairs = 64,
                                             std::uint64_t seed = 1);

struct PeriodDisplacement {
  Vec measured;   // x(end of period) - x(start)
  Vec reference;  // -alpha * period_steps * grad L_{p,d} at the period start
};

/// Realized displacement over one exploration period against the averaged
/// gradient reference; requires the model providers for the reference.
PeriodDisplacement period_averaged_displacement(std::span<const PrimalDualState> trace,
                                                const Vec& x_at_period_start,
                                                const TimeVaryingProblem& problem, int k0,
                                                const Plant& plant, double alpha_scalar,
                                                long period_steps);

}  // namespace mfpd
