#pragma once

#include <cmath>
#include <cstdint>

namespace mfpd {

/// Deterministic splitmix64 stream with Box-Muller normals. Self-contained so
/// traces are reproducible independent of standard-library internals.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : state_(seed) {}

  RandomStream(std::uint64_t seed, std::uint64_t key1, std::uint64_t key2) : state_(seed) {
    state_ = splitmix(state_ ^ (0x9e3779b97f4a7c15ULL + key1));
    state_ = splitmix(state_ ^ (0xbf58476d1ce4e5b9ULL + key2));
  }

  /// Uniform in [0, 1).
  double next_uniform() {
    state_ = splitmix(state_);
    return static_cast<double>(state_ >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  /// Standard normal.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_uniform();
    } while (u1 <= 0.0);
    const double u2 = next_uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586;
    spare_ = mag * std::sin(two_pi * u2);
    have_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mfpd
