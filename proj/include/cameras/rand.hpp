#pragma once

// Deterministic sampling helpers built directly on mt19937_64 output, so
// streams are reproducible across standard library implementations.

#include <cmath>
#include <cstdint>
#include <random>

namespace cameras::rnd {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal via Box-Muller on open-interval uniforms.
inline double normal01(std::mt19937_64& rng) {
  double u1 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace cameras::rnd
