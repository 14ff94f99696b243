#include "mfpd/signals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <string>

#include "mfpd/errors.hpp"

namespace mfpd {
namespace {

// A common period longer than this is useless for averaging; treat as absent.
constexpr double kMaxPeriodSeconds = 1.0e6;
constexpr long kMaxDenominator = 100000;

// Best rational approximation p/q with q <= kMaxDenominator (continued
// fractions). Returns false when no approximation matches f to 1e-9 relative.
bool to_rational(double f, long& p_out, long& q_out) {
  double x = f;
  long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  for (int it = 0; it < 64; ++it) {
    const double a_f = std::floor(x);
    if (a_f > 1e9) break;
    const long a = static_cast<long>(a_f);
    if (q1 > 0 && a > (kMaxDenominator - q0) / q1) break;
    const long p2 = a * p1 + p0;
    const long q2 = a * q1 + q0;
    p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    const double frac = x - a_f;
    if (frac < 1e-15) break;
    x = 1.0 / frac;
  }
  if (q1 == 0) return false;
  if (std::abs(f - static_cast<double>(p1) / static_cast<double>(q1)) > 1e-9 * std::abs(f)) {
    return false;
  }
  p_out = p1;
  q_out = q1;
  return true;
}

// lcm of the channel periods q_i/p_i, i.e. lcm(q)/gcd(p), with overflow guard.
std::optional<double> common_period(const std::vector<double>& frequencies) {
  long lcm_q = 1, gcd_p = 0;
  for (double f : frequencies) {
    long p = 0, q = 0;
    if (!to_rational(f, p, q)) return std::nullopt;
    const long g = std::gcd(lcm_q, q);
    if (lcm_q > std::numeric_limits<long>::max() / (q / g)) return std::nullopt;
    lcm_q *= q / g;
    gcd_p = std::gcd(gcd_p, p);
  }
  if (gcd_p == 0) return std::nullopt;
  const double period = static_cast<double>(lcm_q) / static_cast<double>(gcd_p);
  if (period > kMaxPeriodSeconds) return std::nullopt;
  return period;
}

void validate_frequencies(const std::vector<double>& frequencies) {
  std::set<double> seen;
  for (double f : frequencies) {
    if (!(f > 0.0)) {
      throw ConfigError("exploration frequency must be positive, got " + std::to_string(f));
    }
    if (!seen.insert(f).second) {
      throw ConfigError("duplicate exploration frequency " + std::to_string(f));
    }
  }
}

}  // namespace

ExplorationSignal make_sinusoid_bank(int n, const std::vector<double>& frequencies_hz,
                                     double amplitude) {
  if (n < 1) throw ConfigError("signal bank needs n >= 1 channels");
  if (static_cast<int>(frequencies_hz.size()) != n) {
    throw ConfigError("expected " + std::to_string(n) + " frequencies, got " +
                      std::to_string(frequencies_hz.size()));
  }
  validate_frequencies(frequencies_hz);

  ExplorationSignal s;
  s.n = n;
  s.amplitude = amplitude;
  s.frequencies_hz = frequencies_hz;
  s.period_s = common_period(frequencies_hz);
  return s;
}

std::vector<double> assign_frequencies(int n, const IntegerCycles& mode) {
  if (n < 1) throw ConfigError("assign_frequencies needs n >= 1");
  if (!(mode.period_s > 0.0)) throw ConfigError("integer-cycles mode needs period > 0");
  if (static_cast<int>(mode.multiples.size()) != n) {
    throw ConfigError("integer-cycles mode needs exactly n multiples");
  }
  std::set<long> seen;
  std::vector<double> out;
  out.reserve(n);
  for (long m : mode.multiples) {
    if (m <= 0) throw ConfigError("cycle multiples must be positive integers");
    if (!seen.insert(m).second) throw ConfigError("cycle multiples must be distinct");
    out.push_back(static_cast<double>(m) / mode.period_s);
  }
  return out;
}

std::vector<double> assign_frequencies(int n, const Band& mode) {
  if (n < 1) throw ConfigError("assign_frequencies needs n >= 1");
  if (!(mode.f_min_hz < mode.f_max_hz)) {
    throw ConfigError("band mode needs f_min < f_max");
  }
  if (!(mode.f_min_hz > 0.0)) throw ConfigError("band frequencies must be positive");

  std::vector<double> out;
  out.reserve(n);
  if (n == 1) {
    out.push_back(0.5 * (mode.f_min_hz + mode.f_max_hz));
    return out;
  }
  const double step = (mode.f_max_hz - mode.f_min_hz) / static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) {
    out.push_back(mode.f_min_hz + step * static_cast<double>(i));
  }
  validate_frequencies(out);
  return out;
}

Vec sample(const ExplorationSignal& signal, double t_s) {
  Vec xi(signal.n);
  for (int i = 0; i < signal.n; ++i) {
    xi[i] = signal.amplitude *
            std::sin(2.0 * std::numbers::pi * signal.frequencies_hz[i] * t_s);
  }
  return xi;
}

namespace {

Mat covariance_impl(const ExplorationSignal& signal, double t0_s, double horizon_s,
                    double dt_s, bool parallel) {
  if (!(horizon_s > 0.0)) throw ConfigError("covariance horizon must be positive");
  if (!(dt_s > 0.0)) throw ConfigError("covariance dt must be positive");
  const std::int64_t samples = std::llround(horizon_s / dt_s);
  const int n = signal.n;
  Mat acc = Mat::Zero(n, n);

  if (parallel) {
#pragma omp parallel
    {
      Mat local = Mat::Zero(n, n);
#pragma omp for nowait
      for (std::int64_t k = 0; k < samples; ++k) {
        const Vec xi = sample(signal, t0_s + static_cast<double>(k) * dt_s);
        local.noalias() += xi * xi.transpose();
      }
#pragma omp critical
      acc += local;
    }
  } else {
    for (std::int64_t k = 0; k < samples; ++k) {
      const Vec xi = sample(signal, t0_s + static_cast<double>(k) * dt_s);
      acc.noalias() += xi * xi.transpose();
    }
  }
  return acc * (dt_s / horizon_s);
}

}  // namespace

Mat empirical_covariance(const ExplorationSignal& signal, double t0_s, double horizon_s,
                         double dt_s) {
  return covariance_impl(signal, t0_s, horizon_s, dt_s, /*parallel=*/true);
}

Mat empirical_covariance_serial(const ExplorationSignal& signal, double t0_s,
                                double horizon_s, double dt_s) {
  return covariance_impl(signal, t0_s, horizon_s, dt_s, /*parallel=*/false);
}

}  // namespace mfpd
