#pragma once

#include <cmath>
#include <cstdint>

#include "nfuse/vec.hpp"

namespace nfuse {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-seeded stream: hashing the key tuple gives independent streams for
/// (seed, view, pixel), (seed, iteration, ray) etc., so results never depend
/// on thread scheduling.
class StreamRng {
 public:
  explicit StreamRng(uint64_t k0, uint64_t k1 = 0, uint64_t k2 = 0,
                     uint64_t k3 = 0) {
    state_ = splitmix64(splitmix64(splitmix64(splitmix64(k0) ^ k1) ^ k2) ^ k3);
    if (state_ == 0) state_ = 0x853c49e6748fea9bULL;
  }

  uint64_t next_u64() {
    // xorshift64*
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n > 0.
  uint64_t below(uint64_t n) {
    // Multiply-shift; bias is negligible for n << 2^64.
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  double normal() {
    // Box-Muller, one value per call (no cached spare, keeps streams simple).
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec3 unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 2.0 * M_PI);
    const double r = std::sqrt(std::fmax(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
  }

  Vec3 in_unit_cube() { return {uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)}; }

 private:
  uint64_t state_;
};

}  // namespace nfuse
