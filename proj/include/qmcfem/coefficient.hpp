#pragma once

#include <span>
#include <variant>
#include <vector>

#include "qmcfem/geometry.hpp"

namespace qmcfem {

/// amplitude * sin(k1 x1) * sin(k2 x2)
struct SineMode {
  int k1 = 1;
  int k2 = 1;
  double amplitude = 0.0;
};

/// value * indicator of a rectangle. Gradient is taken as zero; estimators
/// assume the rectangle edges are resolved by the mesh.
struct BoxMode {
  Rect box;
  double value = 0.0;
};

using Mode = std::variant<SineMode, BoxMode>;

struct CoefficientSample {
  double value = 0.0;
  Vec2 grad{};
};

/// a(x, y) = psi_0(x) + sum_j y_j psi_j(x) with y in [-1/2, 1/2]^s.
///
/// psi_0 is a constant plus an optional list of mode terms. Construction
/// checks kappa > 0, sum_j b_j < 2 and (by sampling on a grid of the domain)
/// essinf psi_0 > kappa.
class AffineCoefficient {
 public:
  AffineCoefficient(double psi0_constant, std::vector<Mode> psi0_terms, std::vector<Mode> modes,
                    double kappa, Rect domain = {0.0, 0.0, 1.0, 1.0});

  int dimension() const { return static_cast<int>(modes_.size()); }
  double kappa() const { return kappa_; }
  std::span<const Mode> modes() const { return modes_; }
  /// b_j = ||psi_j||_inf / kappa (analytic bound for the built-in families).
  std::span<const double> b() const { return b_; }
  /// b'_j = ||psi_j||_{W^{1,inf}} bound.
  std::span<const double> b_prime() const { return b_prime_; }
  /// Grid-sampled essinf of psi_0 recorded at construction.
  double psi0_essinf() const { return psi0_essinf_; }

  /// Value and spatial gradient of a(x, y). Throws if y leaves the cube.
  CoefficientSample evaluate(Vec2 x, std::span<const double> y) const;

  /// out[0] = psi_0(x), out[j] = psi_j(x) for j = 1..s. `out` must hold s+1.
  void evaluate_modes(Vec2 x, std::span<CoefficientSample> out) const;

  /// Validates that y lies in the closed cube [-1/2,1/2]^s.
  void check_parameter(std::span<const double> y) const;

 private:
  double psi0_constant_;
  std::vector<Mode> psi0_terms_;
  std::vector<Mode> modes_;
  double kappa_;
  std::vector<double> b_;
  std::vector<double> b_prime_;
  double psi0_essinf_ = 0.0;
  int max_k1_ = 0;
  int max_k2_ = 0;
};

/// Combines mode values into a(x, y): modes[0] + sum_j y_j modes[j+1].
CoefficientSample combine_modes(std::span<const CoefficientSample> modes, std::span<const double> y);

/// The first s pairs (k1, k2) of N^2 ordered by k1^2 + k2^2, ties broken
/// lexicographically.
std::vector<std::pair<int, int>> ordered_frequency_pairs(int s);

/// psi_0 = 1/2, psi_j = sin(k_{j,1} x1) sin(k_{j,2} x2) / (k_{j,1}^2 + k_{j,2}^2)^2.
AffineCoefficient sine_modes(int s, double kappa = 0.25);

/// The 16-mode instance used throughout the experiments.
inline AffineCoefficient sine_modes_16() { return sine_modes(16); }

/// a(x, y) = value, no parametric modes.
AffineCoefficient constant_coefficient(double value);

}  // namespace qmcfem
