#include "qmcfem/reference.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "qmcfem/errors.hpp"
#include "qmcfem/parallel.hpp"
#include "qmcfem/qmc.hpp"
#include "qmcfem/random.hpp"

namespace qmcfem {

void ReferenceSpec::validate() const {
  if (mesh_levels.empty()) throw ConfigError("reference needs at least one mesh level");
  if (mesh_levels.size() != samples.size()) throw ConfigError("reference levels and sample counts differ in length");
  if (batches < 2) throw ConfigError("reference needs at least two batches");
  for (std::size_t l = 0; l < mesh_levels.size(); ++l) {
    if (mesh_levels[l] < 0) throw ConfigError("reference mesh level must be nonnegative");
    if (l > 0 && mesh_levels[l] <= mesh_levels[l - 1]) throw ConfigError("reference mesh levels must increase");
    if (samples[l] == 0) throw ConfigError("reference sample budget is zero");
    if (samples[l] % static_cast<std::size_t>(batches) != 0)
      throw ConfigError("reference sample counts must be multiples of the batch count");
  }
}

namespace {

struct LevelSums {
  std::vector<double> z;   // per batch: sum of Theta differences
  std::vector<double> zp;  // per batch: sum of Theta' differences
};

LevelSums run_level(const BipModel& fine, const BipModel* coarse, std::span<const double> points, int s,
                    int batches, int threads) {
  const std::size_t n = points.size() / static_cast<std::size_t>(s);
  std::vector<double> th(n), thp(n);
  const int nw = worker_count(static_cast<int>(n), threads);
  std::vector<std::unique_ptr<SolverWorkspace>> wf(nw), wc(nw);
  for (int w = 0; w < nw; ++w) {
    wf[w] = std::make_unique<SolverWorkspace>(fine.space());
    if (coarse) wc[w] = std::make_unique<SolverWorkspace>(coarse->space());
  }
  parallel_for(static_cast<int>(n), threads, [&](int i, int w) {
    const auto y = points.subspan(static_cast<std::size_t>(i) * s, s);
    const LikelihoodSample a = fine.sample_plain(*wf[w], y);
    th[i] = a.theta;
    thp[i] = a.theta_prime;
    if (coarse) {
      const LikelihoodSample b = coarse->sample_plain(*wc[w], y);
      th[i] -= b.theta;
      thp[i] -= b.theta_prime;
    }
  });
  LevelSums r;
  const std::size_t per = n / static_cast<std::size_t>(batches);
  for (int b = 0; b < batches; ++b) {
    const auto lo = static_cast<std::size_t>(b) * per;
    r.z.push_back(detail::pairwise_sum<double>(std::span<const double>(th).subspan(lo, per)));
    r.zp.push_back(detail::pairwise_sum<double>(std::span<const double>(thp).subspan(lo, per)));
  }
  return r;
}

}  // namespace

ReferenceResult reference_ratio(const ReferenceSpec& spec, int s, const BipModelFactory& factory, int threads) {
  spec.validate();
  if (s < 1) throw ConfigError("parameter dimension must be positive");
  std::mt19937_64 gen(spec.seed);
  const int B = spec.batches;
  const std::size_t L = spec.mesh_levels.size();
  std::vector<double> batch_z(B, 0.0), batch_zp(B, 0.0);
  double z = 0.0, zp = 0.0;
  ReferenceResult res;

  std::unique_ptr<BipModel> prev;
  for (std::size_t l = 0; l < L; ++l) {
    auto model = factory(spec.mesh_levels[l]);
    const std::size_t n = spec.samples[l];
    // Draw all points up front so the stream does not depend on scheduling.
    const auto pts = uniform_cube_points(gen, n, s);
    const LevelSums sums = run_level(*model, l > 0 ? prev.get() : nullptr, pts, s, B, threads);
    const double per = static_cast<double>(n / static_cast<std::size_t>(B));
    double lz = 0.0, lzp = 0.0;
    for (int b = 0; b < B; ++b) {
      batch_z[b] += sums.z[b] / per;
      batch_zp[b] += sums.zp[b] / per;
      lz += sums.z[b];
      lzp += sums.zp[b];
    }
    z += lz / static_cast<double>(n);
    zp += lzp / static_cast<double>(n);
    res.total_samples += n;
    res.finest_mesh_level = spec.mesh_levels[l];
    res.finest_dofs = model->space().num_dofs();
    prev = std::move(model);
  }
  if (!(z > 0.0)) throw std::domain_error("reference normalization constant is not positive");
  res.z = z;
  res.zp = zp;
  res.ratio = zp / z;
  // Batch b combines the b-th batch of every level into one ratio estimate.
  double mean = 0.0;
  std::vector<double> r(B);
  for (int b = 0; b < B; ++b) {
    r[b] = batch_zp[b] / batch_z[b];
    mean += r[b];
  }
  mean /= B;
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  var /= (B - 1);
  res.std_error = std::sqrt(var / B);
  return res;
}

std::vector<std::size_t> mlmc_allocation(std::span<const double> variances, std::span<const double> costs,
                                         double target_variance, int batches) {
  if (variances.size() != costs.size() || variances.empty()) throw std::invalid_argument("mlmc_allocation: size mismatch");
  if (!(target_variance > 0.0) || batches < 1) throw std::invalid_argument("mlmc_allocation: bad target");
  double sum = 0.0;
  for (std::size_t l = 0; l < costs.size(); ++l) {
    if (!(costs[l] > 0.0) || variances[l] < 0.0) throw std::invalid_argument("mlmc_allocation: bad level data");
    sum += std::sqrt(variances[l] * costs[l]);
  }
  std::vector<std::size_t> n(costs.size());
  for (std::size_t l = 0; l < costs.size(); ++l) {
    const double nl = std::sqrt(variances[l] / costs[l]) * sum / target_variance;
    const auto b = static_cast<std::size_t>(batches);
    const auto k = static_cast<std::size_t>(std::ceil(std::max(nl, 1.0) / static_cast<double>(b)));
    n[l] = std::max<std::size_t>(1, k) * b;
  }
  return n;
}

}  // namespace qmcfem
