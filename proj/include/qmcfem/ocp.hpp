#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qmcfem/fem.hpp"
#include "qmcfem/ratio.hpp"

namespace qmcfem {

/// Entropic-risk tracking problem. Controls are P1 nodal fields on the space
/// of the sampler that uses the problem.
struct ControlProblem {
  Source u_hat = Source::constant(0.0);
  double alpha1 = 1.0;
  double alpha2 = 0.1;
  double theta = 1.0;
  double f_lo = -10.0;
  double f_hi = 10.0;
  double c_star = 1.0;

  /// Throws ConfigError unless alpha1 >= 0, alpha2 > 0, theta > 0, f_lo <= f_hi, c_star > 0.
  void validate() const;
  /// Pointwise clamp of a nodal field to [f_lo, f_hi].
  Eigen::VectorXd project(const Eigen::VectorXd& f) const;
};

/// Test fixture: u_hat = 16 x1 x2 (1 - x1)(1 - x2), alpha1 = 1, alpha2 = 0.1,
/// theta = 1, box [-10, 10].
ControlProblem fixture_control_problem();

/// (1/theta) log(mean exp(theta phi)), with max subtraction.
double entropic_risk(std::span<const double> phi, double theta);

/// Sum of e^{log_w_i} v_i stored as e^{shift} * (weight, vec).
struct ScaledSum {
  double shift = -std::numeric_limits<double>::infinity();
  double weight = 0.0;
  Eigen::VectorXd vec;

  void add(double log_w, const Eigen::VectorXd& v);
  void merge(const ScaledSum& other);
  /// Rescales to a new shift (>= current shift for stability).
  void rescale(double new_shift);
};

struct ObjectiveValue {
  double J = 0.0;
  double risk = 0.0;
  std::vector<double> phi;       // Phi_h(y) per point
  Eigen::VectorXd q_average;     // sum e^{theta Phi} q / sum e^{theta Phi}
  Eigen::VectorXd gradient;      // q_average + alpha2 f (M-Riesz representative)
};

/// Per-point OCP integrand data at a fixed control, in log form.
struct OcpSample {
  double phi = 0.0;         // Phi_h(y)
  double log_theta = 0.0;   // theta Phi_h(y)
  double misfit_l2 = 0.0;   // ||u_h - u_hat||_{L2}
  double eta = 0.0;         // L2 state estimator
  double eta_dual = 0.0;    // L2 adjoint estimator
  double chi = 0.0;
  double q_norm = 0.0;      // ||q_h||_{L2}
  double u_norm = 0.0;
};

/// chi = theta c* (alpha1/2 eta^2 + alpha1 misfit eta).
double ocp_chi(double theta, double c_star, double alpha1, double misfit_l2, double eta);
/// zeta = Theta_h (e^chi - 1).
inline double ocp_zeta(double theta_h, double chi) { return theta_h * std::expm1(chi); }
/// zeta' = zeta ||q_h|| + d Theta_h e^chi eta_dual, d the dual reliability constant.
double ocp_zeta_prime(double zeta, double q_norm, double theta_h, double chi, double eta_dual, double c_star);

/// Per-level QMC sums for the OCP integrands at a fixed control, all stored
/// relative to a common exponent `shift` (Theta_h = e^{log_theta - shift}).
struct OcpLevelResult {
  std::vector<OcpSample> samples;
  std::size_t count = 0;
  double shift = 0.0;
  double z = 0.0;             // mean Theta_h
  Eigen::VectorXd zp;         // mean Theta_h q_h
  double zeta = 0.0;
  double zetap = 0.0;

  /// Moves all sums to another shift; ratios are unchanged.
  void rescale(double new_shift);
};

/// The QMC-discretized problem on one FE space and one point set.
/// Factorizations are cached across objective evaluations while their total
/// memory stays under `cache_budget_bytes`.
class OcpSampler {
 public:
  OcpSampler(ControlProblem problem, const FemSpace& space, std::vector<double> points, int threads,
             std::size_t cache_budget_bytes = std::size_t{1} << 30);
  ~OcpSampler();
  OcpSampler(const OcpSampler&) = delete;
  OcpSampler& operator=(const OcpSampler&) = delete;

  const ControlProblem& problem() const { return problem_; }
  const FemSpace& space() const { return *space_; }
  std::size_t size() const { return n_; }
  std::span<const double> point(std::size_t i) const;

  /// J_{m,h}(f) and, if requested, J'_{m,h}(f).
  ObjectiveValue objective(const Eigen::VectorXd& f, bool with_gradient);

  /// Integrands and estimators at a fixed control f, all points.
  OcpLevelResult integrands(const Eigen::VectorXd& f);

  /// State u_h(y) and adjoint q_h(y) at one point.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> state_and_adjoint(const Eigen::VectorXd& f, std::size_t i);

 private:
  struct Cache;
  ControlProblem problem_;
  const FemSpace* space_;
  std::vector<double> points_;
  std::size_t n_ = 0;
  int s_ = 0;
  int threads_ = 1;
  std::size_t budget_;
  Eigen::VectorXd b_hat_;       // load(u_hat)
  double u_hat_sq_ = 0.0;       // ||u_hat||^2
  std::unique_ptr<Cache> cache_;
};

struct ControlIteration {
  int iter = 0;
  double J = 0.0;
  double residual = 0.0;
  double step = 0.0;
};

struct ControlResult {
  Eigen::VectorXd f;
  double J = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<ControlIteration> history;
  ObjectiveValue last;
};

/// Projected gradient with Barzilai-Borwein steps and an Armijo fallback,
/// in the lumped-mass metric so that nodal clipping is the projection.
/// Stops when ||f - P(f - D^{-1} M J'(f)/alpha2)||_{L2} <= tol with D the
/// lumped mass. Without active bounds this is ||J'(f)|| = 0 up to D^{-1} M.
ControlResult solve_control(OcpSampler& sampler, double tol, int max_iter, const Eigen::VectorXd* f0 = nullptr);

/// EST / alpha2, invalid when the estimator is.
Guarded<double> control_error_bound(const EstimatorReport& est, double alpha2);

}  // namespace qmcfem
