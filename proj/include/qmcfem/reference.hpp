#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "qmcfem/bip.hpp"

namespace qmcfem {

/// Pseudo-random reference for Z'/Z. One level is plain Monte Carlo on the
/// finest mesh; several levels form a multilevel telescoping sum in which
/// level l > 0 evaluates Theta and Theta' on meshes l and l-1 at the same y.
struct ReferenceSpec {
  /// Number of refinements of the initial mesh for each level, increasing.
  std::vector<int> mesh_levels{2};
  /// Samples per level; must be divisible by `batches`.
  std::vector<std::size_t> samples{10000};
  std::uint64_t seed = 20240601;
  int batches = 20;

  void validate() const;
};

struct ReferenceResult {
  double ratio = 0.0;
  double std_error = 0.0;  // batch-means standard error of the ratio
  double z = 0.0;
  double zp = 0.0;
  int finest_mesh_level = 0;
  int finest_dofs = 0;
  std::size_t total_samples = 0;
};

/// Builds the BIP model on a given mesh; called once per level.
using BipModelFactory = std::function<std::unique_ptr<BipModel>(int mesh_level)>;

/// Theta and Theta' for every sample of one level (and the coarse companion
/// for multilevel corrections), evaluated in parallel with fixed ordering.
ReferenceResult reference_ratio(const ReferenceSpec& spec, int s, const BipModelFactory& factory, int threads);

/// Variance/cost optimal multilevel allocation N_l proportional to
/// sqrt(V_l / C_l), scaled so that sum V_l / N_l = target_variance.
/// Rounded up to a multiple of `batches`.
std::vector<std::size_t> mlmc_allocation(std::span<const double> variances, std::span<const double> costs,
                                         double target_variance, int batches);

}  // namespace qmcfem
