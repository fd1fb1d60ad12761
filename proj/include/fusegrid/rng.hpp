#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fusegrid {

/// splitmix64 finalizer; decorrelates derived seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for an independent stream (per case, per job, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(base ^ (a * 0xd6e8feb86659fd93ULL)) ^ (b * 0xa3b195354a39b70dULL));
}

using Rng = std::mt19937_64;

/// Draws below avoid std distributions on purpose: their output bits are
/// implementation-defined, and checkpoints/datasets must be reproducible
/// from the seed alone.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Modulo bias is below 2^-40 for any n here.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  return rng() % n;
}

/// Standard normal via Box-Muller (cosine half; the sine partner is unused).
inline double normal_draw(Rng& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

}  // namespace fusegrid
