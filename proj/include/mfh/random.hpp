#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mfh {

/// Counter-based random numbers: every draw is a pure function of
/// (seed, particle, step, channel), so results do not depend on evaluation
/// order or threading.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
                                  std::uint64_t channel) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ particle);
  h = splitmix64(h ^ (step * 0x2545f4914f6cdd1dULL));
  return splitmix64(h ^ (channel * 0x9e3779b97f4a7c15ULL));
}

/// Uniform on the open interval (0, 1).
inline double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
                      std::uint64_t channel) {
  return to_unit(counter_hash(seed, particle, step, channel));
}

/// Standard normal via Box-Muller on two sub-streams of the same counter.
inline double normal(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
                     std::uint64_t channel) {
  const std::uint64_t base = counter_hash(seed, particle, step, channel);
  const double u1 = to_unit(splitmix64(base ^ 0x1ULL));
  const double u2 = to_unit(splitmix64(base ^ 0x2ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Poisson(lambda) by sequential inversion; intended for small lambda.
inline unsigned poisson(double lambda, double u) {
  double p = std::exp(-lambda);
  double cdf = p;
  unsigned k = 0;
  while (u > cdf && k < 1000) {
    ++k;
    p *= lambda / k;
    cdf += p;
  }
  return k;
}

}  // namespace mfh
