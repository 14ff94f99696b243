#pragma once

#include <optional>
#include <vector>

#include "mfpd/types.hpp"

namespace mfpd {

/// Bank of deterministic sinusoidal probe waveforms, one per channel.
///
/// Channel i evaluates to amplitude * sin(2*pi*f_i*t). With the default
/// amplitude sqrt(2) and commensurate frequencies, the time-averaged outer
/// product over one common period is the identity matrix.
struct ExplorationSignal {
  int n = 0;
  double amplitude = 0.0;
  std::vector<double> frequencies_hz;
  /// Common period in seconds; present only when all frequencies are
  /// (detectably) rational multiples of a common base.
  std::optional<double> period_s;
  double dt_s = 1.0;
};

ExplorationSignal make_sinusoid_bank(int n, const std::vector<double>& frequencies_hz,
                                     double amplitude = 1.4142135623730951);

/// Frequency assignment: m_i integer cycles over an exact common period.
struct IntegerCycles {
  double period_s = 0.0;
  std::vector<long> multiples;
};

/// Frequency assignment: n equally spaced values in [f_min, f_max].
struct Band {
  double f_min_hz = 0.0;
  double f_max_hz = 0.0;
};

std::vector<double> assign_frequencies(int n, const IntegerCycles& mode);
std::vector<double> assign_frequencies(int n, const Band& mode);

Vec sample(const ExplorationSignal& signal, double t_s);

/// Riemann-sum estimate of (1/horizon) * integral of xi(t) xi(t)^T.
Mat empirical_covariance(const ExplorationSignal& signal, double t0_s, double horizon_s,
                         double dt_s);
/// Serial reference for the OpenMP kernel above; kept for testing.
Mat empirical_covariance_serial(const ExplorationSignal& signal, double t0_s,
                                double horizon_s, double dt_s);

}  // namespace mfpd
