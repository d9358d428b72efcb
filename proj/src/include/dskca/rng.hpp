#pragma once

// Counter-based random streams. Every draw is a pure function of
// (seed, tag, a, b, c), so feature blocks, permutations and init
// coefficients can be regenerated out of order, bit-identically.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dskca::rng {

// Stream tags keep independent uses of the same run seed from colliding.
inline constexpr std::uint64_t kTagFrequency = 1;
inline constexpr std::uint64_t kTagPhase = 2;
inline constexpr std::uint64_t kTagInitAlpha = 3;
inline constexpr std::uint64_t kTagEpochPerm = 4;
inline constexpr std::uint64_t kTagReplacementIndex = 5;
inline constexpr std::uint64_t kTagBandwidthSubsample = 6;
inline constexpr std::uint64_t kTagPairedRightSeed = 7;
inline constexpr std::uint64_t kTagSynthetic = 8;

// splitmix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t word(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ tag);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return mix64(h ^ c);
}

// Uniform on the open interval (0,1); endpoints are unreachable, so the
// inverse-CDF transforms below never hit a pole.
inline double u01(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                  std::uint64_t b, std::uint64_t c) {
  const std::uint64_t w = word(seed, tag, a, b, c);
  return (static_cast<double>(w >> 11) + 0.5) * 0x1.0p-53;
}

// One standard normal per (a,b,c) key; Box-Muller on two sub-draws.
inline double normal(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                     std::uint64_t b, std::uint64_t c) {
  const double u1 = u01(seed, tag, a, b, 2 * c);
  const double u2 = u01(seed, tag, a, b, 2 * c + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

// Standard Cauchy (location 0, scale 1) via inverse CDF.
inline double cauchy(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                     std::uint64_t b, std::uint64_t c) {
  return std::tan(std::numbers::pi * (u01(seed, tag, a, b, c) - 0.5));
}

// Laplace (location 0, scale s) via inverse CDF; branch-free in the draw.
inline double laplace(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                      std::uint64_t b, std::uint64_t c, double s) {
  const double u = u01(seed, tag, a, b, c) - 0.5;
  const double sign = u < 0.0 ? -1.0 : 1.0;
  return -s * sign * std::log1p(-2.0 * std::abs(u));
}

}  // namespace dskca::rng
