#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace qmcfem {

// Distributions are written out by hand because the standard library's are
// not reproducible across implementations; mt19937_64 itself is.

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

/// Standard normal by Box-Muller (one draw per call).
inline double standard_normal(std::mt19937_64& gen) {
  const double u1 = 1.0 - uniform01(gen);  // (0, 1]
  const double u2 = uniform01(gen);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// n points uniform on [-1/2, 1/2)^s, row-major.
inline std::vector<double> uniform_cube_points(std::mt19937_64& gen, std::size_t n, int s) {
  std::vector<double> p(n * static_cast<std::size_t>(s));
  for (double& v : p) v = uniform01(gen) - 0.5;
  return p;
}

}  // namespace qmcfem
