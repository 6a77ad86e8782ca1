#include "qmcfem/bip.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "qmcfem/errors.hpp"
#include "qmcfem/parallel.hpp"
#include "qmcfem/qmc.hpp"
#include "qmcfem/random.hpp"

namespace qmcfem {

namespace {

using Polygon = std::vector<Vec2>;

// Clip against the half-plane where sign * (coord - bound) >= 0 on axis 0 (x) or 1 (y).
Polygon clip(const Polygon& in, int axis, double bound, double sign) {
  Polygon out;
  if (in.empty()) return out;
  auto coord = [axis](Vec2 p) { return axis == 0 ? p.x : p.y; };
  auto inside = [&](Vec2 p) { return sign * (coord(p) - bound) >= 0.0; };
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Vec2 a = in[i], b = in[(i + 1) % in.size()];
    const bool ia = inside(a), ib = inside(b);
    if (ia) out.push_back(a);
    if (ia != ib) {
      const double t = (bound - coord(a)) / (coord(b) - coord(a));
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

// Area and centroid of a simple polygon (shoelace).
std::pair<double, Vec2> area_centroid(const Polygon& p) {
  double a = 0.0;
  Vec2 c{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2 u = p[i], v = p[(i + 1) % p.size()];
    const double w = cross(u, v);
    a += w;
    c += w * (u + v);
  }
  a *= 0.5;
  if (a == 0.0) return {0.0, {}};
  return {a, (1.0 / (6.0 * a)) * c};
}

void check_region_inside(const Rect& r, const Rect& box) {
  if (!r.valid()) throw ConfigError("observation region is empty");
  const double tol = 1e-12;
  if (r.x0 < box.x0 - tol || r.y0 < box.y0 - tol || r.x1 > box.x1 + tol || r.y1 > box.y1 + tol)
    throw ConfigError("observation region extends outside the domain");
}

}  // namespace

void ObservationSetup::validate() const {
  const auto K = static_cast<Eigen::Index>(observations.size());
  if (K < 1) throw ConfigError("at least one observation functional is required");
  if (gamma.rows() != K || gamma.cols() != K) throw ConfigError("gamma must be K x K");
  if (delta.size() != K) throw ConfigError("data vector must have length K");
  for (const auto& o : observations)
    if (!o.region.valid()) throw ConfigError("observation region is empty");
  if (!goal.region.valid()) throw ConfigError("goal region is empty");
  if (!gamma.isApprox(gamma.transpose())) throw ConfigError("gamma is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(gamma);
  if (llt.info() != Eigen::Success) throw ConfigError("gamma is not positive definite");
}

Eigen::VectorXd reference_data() {
  Eigen::VectorXd d(4);
  d << 0.5205, 0.5037, 0.5443, 0.4609;
  return d;
}

double reference_sigma() { return 0.1 * reference_data().mean(); }

ObservationSetup reference_observation_setup(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  ObservationSetup s;
  s.observations = {{{0.1, 0.1, 0.2, 0.2}, 100.0},
                    {{0.1, 0.8, 0.2, 0.9}, 100.0},
                    {{0.8, 0.1, 0.9, 0.2}, 100.0},
                    {{0.8, 0.8, 0.9, 0.9}, 100.0}};
  s.gamma = sigma * sigma * Eigen::MatrixXd::Identity(4, 4);
  s.delta = reference_data();
  s.goal = {{0.25, 0.25, 0.75, 0.75}, 2.0};
  return s;
}

Eigen::VectorXd region_weights(const TriangleMesh& mesh, const RegionFunctional& f) {
  const Rect& r = f.region;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.num_vertices());
  const auto verts = mesh.vertices();
  for (const auto& tr : mesh.triangles()) {
    const Vec2 p0 = verts[tr[0]], p1 = verts[tr[1]], p2 = verts[tr[2]];
    const double tx0 = std::min({p0.x, p1.x, p2.x}), tx1 = std::max({p0.x, p1.x, p2.x});
    const double ty0 = std::min({p0.y, p1.y, p2.y}), ty1 = std::max({p0.y, p1.y, p2.y});
    if (tx1 <= r.x0 || tx0 >= r.x1 || ty1 <= r.y0 || ty0 >= r.y1) continue;
    Polygon poly{p0, p1, p2};
    poly = clip(poly, 0, r.x0, 1.0);
    poly = clip(poly, 0, r.x1, -1.0);
    poly = clip(poly, 1, r.y0, 1.0);
    poly = clip(poly, 1, r.y1, -1.0);
    if (poly.size() < 3) continue;
    const auto [area, c] = area_centroid(poly);
    if (area <= 0.0) continue;
    // int over the piece of a linear function = area * value at centroid
    const double tarea = 0.5 * cross(p1 - p0, p2 - p0);
    const double l1 = 0.5 * cross(c - p0, p2 - p0) / tarea;
    const double l2 = 0.5 * cross(p1 - p0, c - p0) / tarea;
    const double l0 = 1.0 - l1 - l2;
    w[tr[0]] += f.scale * area * l0;
    w[tr[1]] += f.scale * area * l1;
    w[tr[2]] += f.scale * area * l2;
  }
  return w;
}

double whitened_l2_norm(const std::vector<RegionFunctional>& obs, const Eigen::MatrixXd& gamma) {
  const auto K = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd gram(K, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = 0; l < K; ++l)
      gram(k, l) = obs[k].scale * obs[l].scale * overlap_area(obs[k].region, obs[l].region);
  Eigen::LLT<Eigen::MatrixXd> llt(gamma);
  if (llt.info() != Eigen::Success) throw ConfigError("gamma is not positive definite");
  // operator norm: largest eigenvalue of L^{-1} Gram L^{-T}
  const Eigen::MatrixXd Li = llt.matrixL().solve(Eigen::MatrixXd::Identity(K, K));
  const Eigen::MatrixXd A = Li * gram * Li.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
}

double gamma_norm(const Eigen::VectorXd& x, const Eigen::MatrixXd& gamma) {
  Eigen::LLT<Eigen::MatrixXd> llt(gamma);
  if (llt.info() != Eigen::Success) throw ConfigError("gamma is not positive definite");
  return std::sqrt(x.dot(llt.solve(x)));
}

ZetaResult zeta_sample(double theta, double misfit, double obs_norm, double eta, double c_star,
                       EstimatorVariant variant) {
  ZetaResult r;
  r.variant = variant;
  const double ce = c_star * eta;
  r.chi = obs_norm * (misfit + 0.5 * obs_norm * ce) * ce;
  r.zeta = theta * std::expm1(r.chi);
  return r;
}

double zeta_prime_sample(double theta, const ZetaResult& z, double goal_norm, double u_norm, double eta,
                         double c_star, EstimatorVariant variant) {
  if (z.variant != variant) throw std::invalid_argument("zeta and zeta' computed for different estimator variants");
  return goal_norm * (c_star * eta * theta * std::exp(z.chi) + z.zeta * u_norm);
}

double posterior_mean(double zp, double z) {
  if (!(z > 0.0)) throw std::domain_error("posterior_mean: normalization constant must be positive");
  return zp / z;
}

BipModel::BipModel(ObservationSetup setup, const FemSpace& space, Source f, EstimatorVariant variant,
                   double c_star)
    : setup_(std::move(setup)), space_(&space), f_(std::move(f)), variant_(variant), c_star_(c_star) {
  setup_.validate();
  if (!(c_star_ > 0.0)) throw ConfigError("c_star must be positive");
  if (variant_ == EstimatorVariant::l2 && !space.mesh().convex_domain())
    throw UnsupportedDomain("L2 estimator variant requires a convex domain");
  const Rect box = space.mesh().bounding_box();
  const auto K = static_cast<Eigen::Index>(setup_.observations.size());
  obs_weights_.resize(K, space.num_dofs());
  for (Eigen::Index k = 0; k < K; ++k) {
    check_region_inside(setup_.observations[k].region, box);
    obs_weights_.row(k) = region_weights(space.mesh(), setup_.observations[k]).transpose();
  }
  check_region_inside(setup_.goal.region, box);
  goal_weights_ = region_weights(space.mesh(), setup_.goal);
  gamma_llt_.compute(setup_.gamma);
  load_ = space.load(f_);

  obs_norm_ = whitened_l2_norm(setup_.observations, setup_.gamma);
  goal_norm_ = setup_.goal.scale * std::sqrt(setup_.goal.region.area());
  if (variant_ == EstimatorVariant::h1) {
    // ||l||_{X*} <= C_F ||l||_{L2} for L2 functionals on H^1_0.
    obs_norm_ *= space.friedrichs_constant();
    goal_norm_ *= space.friedrichs_constant();
  }
}

BipModel::BipModel(ObservationSetup setup, std::shared_ptr<const FemSpace> space, Source f, EstimatorVariant variant,
                   double c_star)
    : BipModel(std::move(setup), *space, std::move(f), variant, c_star) {
  owned_space_ = std::move(space);
}

double BipModel::misfit(const Eigen::VectorXd& u) const {
  const Eigen::VectorXd r = setup_.delta - observe(u);
  return std::sqrt(r.dot(gamma_llt_.solve(r)));
}

double BipModel::likelihood(const Eigen::VectorXd& u) const {
  const double m = misfit(u);
  return std::exp(-0.5 * m * m);
}

LikelihoodSample BipModel::sample_plain(SolverWorkspace& ws, std::span<const double> y) const {
  const auto K = ws.factorize(y);
  const Eigen::VectorXd u = K->solve(load_, ws);
  LikelihoodSample s;
  s.misfit = misfit(u);
  s.theta = std::exp(-0.5 * s.misfit * s.misfit);
  s.goal = goal(u);
  s.theta_prime = s.goal * s.theta;
  return s;
}

LikelihoodSample BipModel::sample(SolverWorkspace& ws, std::span<const double> y) const {
  const auto K = ws.factorize(y);
  const Eigen::VectorXd u = K->solve(load_, ws);
  LikelihoodSample s;
  s.misfit = misfit(u);
  s.theta = std::exp(-0.5 * s.misfit * s.misfit);
  s.goal = goal(u);
  s.theta_prime = s.goal * s.theta;
  if (variant_ == EstimatorVariant::l2) {
    s.eta = eta_l2(*space_, y, u, f_).total;
    s.u_norm = space_->l2_norm(u);
  } else {
    s.eta = eta_h1(*space_, y, u, f_).total;
    s.u_norm = space_->energy_seminorm(u);
  }
  const ZetaResult z = zeta_sample(s.theta, s.misfit, obs_norm_, s.eta, c_star_, variant_);
  s.chi = z.chi;
  s.zeta = z.zeta;
  s.zeta_prime = zeta_prime_sample(s.theta, z, goal_norm_, s.u_norm, s.eta, c_star_, variant_);
  return s;
}

BipLevelResult evaluate_bip_level(const BipModel& model, std::span<const double> points, int threads) {
  const int s = model.space().coefficient().dimension();
  if (s == 0 || points.size() % static_cast<std::size_t>(s) != 0)
    throw std::invalid_argument("point set does not match the parameter dimension");
  const int n = static_cast<int>(points.size() / s);
  BipLevelResult r;
  r.samples.resize(n);
  std::vector<std::unique_ptr<SolverWorkspace>> ws(worker_count(n, threads));
  for (auto& w : ws) w = std::make_unique<SolverWorkspace>(model.space());
  parallel_for(n, threads, [&](int i, int worker) {
    r.samples[i] = model.sample(*ws[worker], points.subspan(static_cast<std::size_t>(i) * s, s));
  });
  std::vector<double> th(n), thp(n), ze(n), zep(n);
  for (int i = 0; i < n; ++i) {
    th[i] = r.samples[i].theta;
    thp[i] = r.samples[i].theta_prime;
    ze[i] = r.samples[i].zeta;
    zep[i] = r.samples[i].zeta_prime;
  }
  const auto N = static_cast<std::size_t>(n);
  r.z = qmc_mean<double>(th, N);
  r.zp = qmc_mean<double>(thp, N);
  r.zeta = qmc_mean<double>(ze, N);
  r.zetap = qmc_mean<double>(zep, N);
  return r;
}

SyntheticData synthesize_data(const FemSpace& space, const std::vector<RegionFunctional>& obs, const Source& f,
                              std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  SyntheticData d;
  const int s = space.coefficient().dimension();
  d.y_truth = uniform_cube_points(gen, 1, s);
  const auto u = solve_state(space, d.y_truth, f);
  d.clean.resize(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t k = 0; k < obs.size(); ++k) d.clean[k] = region_weights(space.mesh(), obs[k]).dot(u.values);
  d.sigma = 0.1 * d.clean.mean();
  d.delta = d.clean;
  for (Eigen::Index k = 0; k < d.delta.size(); ++k) d.delta[k] += d.sigma * standard_normal(gen);
  return d;
}

}  // namespace qmcfem
