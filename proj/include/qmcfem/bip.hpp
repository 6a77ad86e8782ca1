#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "qmcfem/fem.hpp"
#include "qmcfem/geometry.hpp"

namespace qmcfem {

/// v -> scale * int_region v dx.
struct RegionFunctional {
  Rect region;
  double scale = 1.0;
};

enum class EstimatorVariant { h1, l2 };

struct ObservationSetup {
  std::vector<RegionFunctional> observations;
  Eigen::MatrixXd gamma;  // K x K noise covariance
  Eigen::VectorXd delta;  // data, length K
  RegionFunctional goal;

  /// Throws ConfigError unless sizes agree, regions are nonempty and gamma is SPD.
  void validate() const;
};

/// Four 0.1 x 0.1 corner regions scaled by 100, goal 2 * int over
/// [0.25, 0.75]^2, the realized data vector and gamma = sigma^2 I.
ObservationSetup reference_observation_setup(double sigma);
/// The realized data vector of the reference experiment.
Eigen::VectorXd reference_data();
/// Default noise level: 10% of the mean of the reference data.
double reference_sigma();

/// Integration weights w with w.dot(u) = scale * int_{region} u_h, computed
/// by clipping each triangle against the rectangle.
Eigen::VectorXd region_weights(const TriangleMesh& mesh, const RegionFunctional& f);

/// Operator norm of Gamma^{-1/2} O from L2 to R^K, from the exact Gram
/// matrix of the representers scale_k * indicator(region_k).
double whitened_l2_norm(const std::vector<RegionFunctional>& obs, const Eigen::MatrixXd& gamma);

/// ||x||_Gamma = sqrt(x^T Gamma^{-1} x) by Cholesky.
double gamma_norm(const Eigen::VectorXd& x, const Eigen::MatrixXd& gamma);

struct ZetaResult {
  double chi = 0.0;
  double zeta = 0.0;
  EstimatorVariant variant = EstimatorVariant::l2;
};

/// chi = N [misfit + N c* eta / 2] c* eta, zeta = theta (e^chi - 1), with N
/// the whitened observation norm of the chosen variant.
ZetaResult zeta_sample(double theta, double misfit, double obs_norm, double eta, double c_star,
                       EstimatorVariant variant);

/// zeta' = ||G|| (c* eta theta e^chi + zeta ||u_h||). Throws if `z` was
/// computed for another variant.
double zeta_prime_sample(double theta, const ZetaResult& z, double goal_norm, double u_norm, double eta,
                         double c_star, EstimatorVariant variant);

/// Z' / Z; throws std::domain_error for Z <= 0.
double posterior_mean(double zp, double z);

struct LikelihoodSample {
  double theta = 0.0;
  double theta_prime = 0.0;
  double goal = 0.0;
  double misfit = 0.0;
  double eta = 0.0;
  double chi = 0.0;
  double zeta = 0.0;
  double zeta_prime = 0.0;
  double u_norm = 0.0;
};

/// Observation setup bound to one FE space: observation weights, norms and
/// the source term.
class BipModel {
 public:
  BipModel(ObservationSetup setup, const FemSpace& space, Source f, EstimatorVariant variant, double c_star);
  /// Same, keeping the space alive for the model's lifetime.
  BipModel(ObservationSetup setup, std::shared_ptr<const FemSpace> space, Source f, EstimatorVariant variant,
           double c_star);

  const FemSpace& space() const { return *space_; }
  const ObservationSetup& setup() const { return setup_; }
  EstimatorVariant variant() const { return variant_; }
  double c_star() const { return c_star_; }
  const Source& source() const { return f_; }
  /// ||Gamma^{-1/2} O|| in the variant's norm (X* bound via Friedrichs).
  double obs_norm() const { return obs_norm_; }
  double goal_norm() const { return goal_norm_; }

  Eigen::VectorXd observe(const Eigen::VectorXd& u) const { return obs_weights_ * u; }
  double goal(const Eigen::VectorXd& u) const { return goal_weights_.dot(u); }
  double misfit(const Eigen::VectorXd& u) const;
  /// exp(-misfit^2 / 2).
  double likelihood(const Eigen::VectorXd& u) const;

  /// Full per-y pipeline: solve, observe, likelihood, estimator, zeta, zeta'.
  LikelihoodSample sample(SolverWorkspace& ws, std::span<const double> y) const;
  /// Same without error estimation (zeta fields zero); for reference runs.
  LikelihoodSample sample_plain(SolverWorkspace& ws, std::span<const double> y) const;

 private:
  std::shared_ptr<const FemSpace> owned_space_;
  ObservationSetup setup_;
  const FemSpace* space_;
  Source f_;
  EstimatorVariant variant_;
  double c_star_;
  Eigen::MatrixXd obs_weights_;  // K x nv
  Eigen::VectorXd goal_weights_;
  Eigen::LLT<Eigen::MatrixXd> gamma_llt_;
  Eigen::VectorXd load_;
  double obs_norm_ = 0.0;
  double goal_norm_ = 0.0;
};

struct BipLevelResult {
  std::vector<LikelihoodSample> samples;
  double z = 0.0;
  double zp = 0.0;
  double zeta = 0.0;
  double zetap = 0.0;
};

/// Evaluates every point of a point set (row-major, s columns) and forms
/// the QMC means with deterministic reductions.
BipLevelResult evaluate_bip_level(const BipModel& model, std::span<const double> points, int threads);

struct SyntheticData {
  Eigen::VectorXd clean;
  Eigen::VectorXd delta;
  double sigma = 0.0;
  std::vector<double> y_truth;
};

/// Draws a truth y, solves on `space`, and adds N(0, sigma^2 I) noise with
/// sigma = 10% of the mean clean observation.
SyntheticData synthesize_data(const FemSpace& space, const std::vector<RegionFunctional>& obs, const Source& f,
                              std::uint64_t seed);

}  // namespace qmcfem
