#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

#include "qmcfem/qmc.hpp"

namespace qmcfem {

/// A value that may be unavailable because a denominator guard failed.
template <class Y>
struct Guarded {
  Y value{};
  bool valid = false;
};

/// E = (Z_{m-1} Z'_m - Z_m Z'_{m-1}) / ((b Z_m - Z_{m-1}) Z_m).
/// Invalid (not thrown) unless Z_m > 0 and b Z_m - Z_{m-1} > 0.
template <class Y>
Guarded<Y> qmc_ratio_estimator(double z_m, double z_m1, const Y& zp_m, const Y& zp_m1, int b = 2) {
  Guarded<Y> r;
  const double denom = (b * z_m - z_m1) * z_m;
  r.value = Y(z_m1 * zp_m - z_m * zp_m1);
  if (!(z_m > 0.0) || !(b * z_m - z_m1 > 0.0) || !std::isfinite(denom)) return r;
  r.value = Y(r.value / denom);
  r.valid = true;
  return r;
}

/// c (Z zeta' + ||Z'|| zeta) / (Z^2 - c zeta Z), valid only for Z > c zeta.
inline Guarded<double> fem_ratio_bound(double z, double zp_norm, double zeta, double zetap, double c = 1.0) {
  if (zeta < 0.0 || zetap < 0.0 || zp_norm < 0.0 || !(c > 0.0))
    throw std::invalid_argument("fem_ratio_bound: negative input");
  Guarded<double> r;
  r.value = std::numeric_limits<double>::quiet_NaN();
  if (!(z > c * zeta) || !std::isfinite(zeta) || !std::isfinite(zetap)) return r;
  r.value = c * (z * zetap + zp_norm * zeta) / (z * z - c * zeta * z);
  r.valid = std::isfinite(r.value);
  return r;
}

/// Estimator components for one (m, h) pair. Invalid terms are NaN.
struct EstimatorReport {
  double qmc_term = std::numeric_limits<double>::quiet_NaN();
  double fem_term = std::numeric_limits<double>::quiet_NaN();
  double est = std::numeric_limits<double>::quiet_NaN();
  bool qmc_valid = false;
  bool fem_valid = false;
  // raw components
  double z = 0.0;
  double zp_norm = 0.0;
  double zeta = 0.0;
  double zetap = 0.0;

  bool valid() const { return qmc_valid && fem_valid; }
};

/// EST = ||E|| + fem bound; propagates invalid flags.
inline EstimatorReport combined_estimator(Guarded<double> qmc_norm, Guarded<double> fem_bound) {
  EstimatorReport r;
  r.qmc_valid = qmc_norm.valid;
  r.fem_valid = fem_bound.valid;
  r.qmc_term = qmc_norm.valid ? qmc_norm.value : std::numeric_limits<double>::quiet_NaN();
  r.fem_term = fem_bound.valid ? fem_bound.value : std::numeric_limits<double>::quiet_NaN();
  if (r.valid()) r.est = r.qmc_term + r.fem_term;
  return r;
}

/// zeta_{m,h}: mean of the per-point values.
inline double aggregate_zeta(std::span<const double> per_point, std::size_t expected_count) {
  for (double z : per_point)
    if (z < 0.0) throw std::invalid_argument("aggregate_zeta: negative per-point value");
  return qmc_mean(per_point, expected_count);
}

}  // namespace qmcfem
