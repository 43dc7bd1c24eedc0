#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace maga {

// splitmix64. One u64 of state; each draw is
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
// Fixed-width integer arithmetic end to end, so streams are identical on
// every platform. Keep transcendental-free draws (next_unit, next_range,
// next_index) in anything that must reproduce byte-for-byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1): top 53 bits scaled by 2^-53.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform in [0, n). Modulo bias is ~n/2^64, irrelevant at our n.
  std::uint64_t next_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_index: n must be positive");
    return next_u64() % n;
  }

  // Marsaglia polar. Uses sqrt/log, so this is for parameter init only,
  // never for dataset pixels.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_unit() - 1.0;
      v = 2.0 * next_unit() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Decorrelates per-sample streams: run the index through one splitmix64 step
// seeded away from the base so sample k of seed s never aliases sample 0 of
// seed s+k.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  Rng r(seed ^ (0x632BE59BD9B4E019ULL + index * 0x9E3779B97F4A7C15ULL));
  return r.next_u64();
}

}  // namespace maga
