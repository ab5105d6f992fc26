#pragma once

#include <cstdint>

#include "cbsr/mathutil.hpp"

namespace cbsr {

// Seeded, portable RNG used by every simulation component.
//
// Stream layout: a 64-bit seed is expanded by SplitMix64 into the 256-bit
// state of xoshiro256++. Substreams (one per replicate) are derived by
// hashing (seed, stream) through SplitMix64, so replicate r of a run is fully
// determined by (seed, r) and independent of execution order.
// Gaussian variates use inversion: Phi^-1(u) with u uniform on (0,1), so the
// draw sequence is reproducible given the documented quantile algorithm.

namespace detail {

struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    detail::SplitMix64 sm{seed};
    for (auto& word : s_) word = sm.next();
  }

  // Derived seed for substream `stream` of `seed` (replicate streams).
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    detail::SplitMix64 sm{seed ^ (0x9e3779b97f4a7c15ULL + stream)};
    sm.next();
    return sm.next();
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl64(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl64(s_[3], 45);
    return result;
  }

  // Uniform on (0,1): 53-bit mantissa, offset half an ulp away from 0 and 1.
  double uniform() {
    return (double(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() { return normal_quantile(uniform()); }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

 private:
  std::uint64_t s_[4];
};

}  // namespace cbsr
