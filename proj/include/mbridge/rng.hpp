#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace mbridge {

/// Deterministic RNG: a mt19937_64 engine with project-owned samplers, so the
/// sequence of draws depends only on the seed (stdlib distributions are
/// implementation-defined and would break bitwise reproducibility contracts).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi] via rejection-free modulo over a wide range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(engine_() % span);
  }

  /// Standard normal via Box-Muller. No spare caching: state is the engine alone.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates over indices [0, n).
  template <class Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  /// Mixes parts into a fresh seed; used to derive independent streams.
  static uint64_t mix(uint64_t a, uint64_t b);

 private:
  std::mt19937_64 engine_;
};

}  // namespace mbridge
