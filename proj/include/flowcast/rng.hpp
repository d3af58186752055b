#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace flowcast {

using Rng = std::mt19937_64;

// Explicit draw primitives so streams are reproducible independent of the
// standard library's distribution implementations.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t bounded(Rng& rng, std::uint64_t n) {
  // Lemire's multiply-shift; the slight bias at 2^64 scale is irrelevant here.
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(rng()) * static_cast<unsigned __int128>(n)) >> 64);
}

/// Standard normal via Box-Muller (one value per call, no state).
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

/// Exponential with the given mean.
inline double exponential(Rng& rng, double mean) {
  double u = uniform01(rng);
  return -mean * std::log1p(-u);
}

/// In-place Fisher-Yates shuffle driven by `bounded`.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(bounded(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

/// Derive an independent deterministic stream from a base seed and tags.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{seed, tag, index};
  return Rng(seq);
}

}  // namespace flowcast
