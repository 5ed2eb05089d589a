#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace vfx {

using Rng = std::mt19937_64;

/// Uniform in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Index in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)); }

/// Standard normal via Box-Muller; stateless so that engine state alone
/// determines the stream (checkpoints store only the engine).
inline double normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Seed for item `index` of a stream, independent of consumption order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace vfx
