#pragma once

#include <stdexcept>
#include <string>

namespace mfpd {

/// Bad scenario/signal configuration (duplicate frequencies, empty bands, schema errors).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Projection target is empty.
class InfeasibleSetError : public std::runtime_error {
 public:
  explicit InfeasibleSetError(const std::string& what) : std::runtime_error(what) {}
};

/// Iterative numeric routine failed to converge.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long iterations)
      : std::runtime_error(what + " (iterations=" + std::to_string(iterations) + ")"),
        iterations(iterations) {}
  long iterations;
};

/// Newton power flow did not converge; signals an infeasible operating point.
class PowerFlowDivergence : public std::runtime_error {
 public:
  PowerFlowDivergence(const std::string& what, int iterations, double max_mismatch)
      : std::runtime_error(what + " (iterations=" + std::to_string(iterations) +
                           ", max_mismatch=" + std::to_string(max_mismatch) + ")"),
        iterations(iterations),
        max_mismatch(max_mismatch) {}
  int iterations;
  double max_mismatch;
};

/// Operation needs model data (C, gradients) the problem does not supply.
class UnsupportedOperation : public std::runtime_error {
 public:
  explicit UnsupportedOperation(const std::string& what) : std::runtime_error(what) {}
};

/// A stepper aborted mid-step; the caller's state is unchanged.
class StepAborted : public std::runtime_error {
 public:
  StepAborted(const std::string& what, long step)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step(step) {}
  long step;
};

/// Metric is undefined for the given inputs (e.g. zero reference sample).
class MetricError : public std::runtime_error {
 public:
  explicit MetricError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mfpd
