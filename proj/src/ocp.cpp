#include "qmcfem/ocp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qmcfem/errors.hpp"
#include "qmcfem/parallel.hpp"
#include "qmcfem/qmc.hpp"

namespace qmcfem {

namespace {

// Reductions run over fixed blocks of consecutive points so that the result
// does not depend on the thread count.
constexpr std::size_t kBlock = 16;

}  // namespace

void ControlProblem::validate() const {
  if (!(alpha1 >= 0.0)) throw ConfigError("alpha1 must be nonnegative");
  if (!(alpha2 > 0.0)) throw ConfigError("alpha2 must be positive");
  if (!(theta > 0.0)) throw ConfigError("theta must be positive");
  if (!(f_lo <= f_hi)) throw ConfigError("control bounds must satisfy f_lo <= f_hi");
  if (!(c_star > 0.0)) throw ConfigError("c_star must be positive");
}

Eigen::VectorXd ControlProblem::project(const Eigen::VectorXd& f) const {
  return f.cwiseMax(f_lo).cwiseMin(f_hi);
}

ControlProblem fixture_control_problem() {
  ControlProblem p;
  p.u_hat = Source::function([](Vec2 x) { return 16.0 * x.x * x.y * (1.0 - x.x) * (1.0 - x.y); });
  p.alpha1 = 1.0;
  p.alpha2 = 0.1;
  p.theta = 1.0;
  p.f_lo = -10.0;
  p.f_hi = 10.0;
  return p;
}

double entropic_risk(std::span<const double> phi, double theta) {
  if (phi.empty()) throw std::invalid_argument("entropic_risk: no samples");
  if (!(theta > 0.0)) throw std::invalid_argument("entropic_risk: theta must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (double p : phi) mx = std::max(mx, theta * p);
  std::vector<double> w(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) w[i] = std::exp(theta * phi[i] - mx);
  const double mean = qmc_mean<double>(w, w.size());
  return (mx + std::log(mean)) / theta;
}

void ScaledSum::add(double log_w, const Eigen::VectorXd& v) {
  if (vec.size() == 0) vec = Eigen::VectorXd::Zero(v.size());
  if (log_w > shift) rescale(log_w);
  const double w = std::exp(log_w - shift);
  weight += w;
  vec += w * v;
}

void ScaledSum::merge(const ScaledSum& other) {
  if (other.weight == 0.0 && other.vec.size() == 0) return;
  if (vec.size() == 0) vec = Eigen::VectorXd::Zero(other.vec.size());
  if (other.shift > shift) rescale(other.shift);
  const double w = std::exp(other.shift - shift);
  weight += w * other.weight;
  vec += w * other.vec;
}

void ScaledSum::rescale(double new_shift) {
  if (std::isinf(shift)) {
    shift = new_shift;
    return;
  }
  const double w = std::exp(shift - new_shift);
  weight *= w;
  vec *= w;
  shift = new_shift;
}

double ocp_chi(double theta, double c_star, double alpha1, double misfit_l2, double eta) {
  return theta * c_star * (0.5 * alpha1 * eta * eta + alpha1 * misfit_l2 * eta);
}

double ocp_zeta_prime(double zeta, double q_norm, double theta_h, double chi, double eta_dual, double c_star) {
  return zeta * q_norm + dual_reliability_constant(c_star) * theta_h * std::exp(chi) * eta_dual;
}

void OcpLevelResult::rescale(double new_shift) {
  const double w = std::exp(shift - new_shift);
  z *= w;
  zp *= w;
  zeta *= w;
  zetap *= w;
  shift = new_shift;
}

struct OcpSampler::Cache {
  std::vector<std::unique_ptr<SolverWorkspace>> ws;
  std::vector<std::unique_ptr<Factorization>> factors;
  std::atomic<std::size_t> bytes{0};
};

OcpSampler::OcpSampler(ControlProblem problem, const FemSpace& space, std::vector<double> points, int threads,
                       std::size_t cache_budget_bytes)
    : problem_(std::move(problem)),
      space_(&space),
      points_(std::move(points)),
      s_(space.coefficient().dimension()),
      threads_(threads),
      budget_(cache_budget_bytes),
      cache_(std::make_unique<Cache>()) {
  problem_.validate();
  if (!space.mesh().convex_domain()) throw UnsupportedDomain("OCP estimators require a convex domain");
  if (s_ == 0 || points_.empty() || points_.size() % static_cast<std::size_t>(s_) != 0)
    throw std::invalid_argument("point set does not match the parameter dimension");
  n_ = points_.size() / static_cast<std::size_t>(s_);
  b_hat_ = space.load(problem_.u_hat);
  const double d = space.l2_distance(Eigen::VectorXd::Zero(space.num_dofs()), problem_.u_hat);
  u_hat_sq_ = d * d;
  const int nblocks = static_cast<int>((n_ + kBlock - 1) / kBlock);
  cache_->ws.resize(worker_count(nblocks, threads_));
  for (auto& w : cache_->ws) w = std::make_unique<SolverWorkspace>(space);
  cache_->factors.resize(n_);
}

OcpSampler::~OcpSampler() = default;

std::span<const double> OcpSampler::point(std::size_t i) const {
  return std::span<const double>(points_).subspan(i * static_cast<std::size_t>(s_), static_cast<std::size_t>(s_));
}

namespace {

// Runs fn(i, ws, K) for every point, with cached or temporary factorizations,
// block by block; fn_block(b) is called after each block's points.
template <class PerPoint>
void for_each_block(std::size_t n, int threads, std::vector<std::unique_ptr<SolverWorkspace>>& ws, PerPoint&& fn) {
  const int nblocks = static_cast<int>((n + kBlock - 1) / kBlock);
  parallel_for(nblocks, threads, [&](int b, int worker) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = std::min(n, lo + kBlock);
    for (std::size_t i = lo; i < hi; ++i) fn(b, i, *ws[static_cast<std::size_t>(worker)]);
  });
}

}  // namespace

ObjectiveValue OcpSampler::objective(const Eigen::VectorXd& f, bool with_gradient) {
  const FemSpace& V = *space_;
  if (f.size() != V.num_dofs()) throw std::invalid_argument("control has wrong length");
  const Eigen::VectorXd Mf = V.mass() * f;
  const double a1 = problem_.alpha1, th = problem_.theta;
  const int nblocks = static_cast<int>((n_ + kBlock - 1) / kBlock);
  std::vector<ScaledSum> blocks(static_cast<std::size_t>(nblocks));
  ObjectiveValue out;
  out.phi.resize(n_);

  for_each_block(n_, threads_, cache_->ws, [&](int b, std::size_t i, SolverWorkspace& ws) {
    std::unique_ptr<Factorization> tmp;
    const Factorization* K = cache_->factors[i].get();
    if (!K) {
      tmp = ws.factorize(point(i));
      const std::size_t mem = tmp->memory_bytes();
      if (cache_->bytes.fetch_add(mem) + mem <= budget_) {
        cache_->factors[i] = std::move(tmp);
      } else {
        cache_->bytes.fetch_sub(mem);
      }
      K = cache_->factors[i] ? cache_->factors[i].get() : tmp.get();
    }
    const Eigen::VectorXd u = K->solve(Mf, ws);
    const Eigen::VectorXd Mu = V.mass() * u;
    const double sq = std::max(0.0, u.dot(Mu) - 2.0 * u.dot(b_hat_) + u_hat_sq_);
    out.phi[i] = 0.5 * a1 * sq;
    if (with_gradient) {
      Eigen::VectorXd q = Eigen::VectorXd::Zero(V.num_dofs());
      if (a1 != 0.0) q = K->solve(a1 * (Mu - b_hat_), ws);
      blocks[static_cast<std::size_t>(b)].add(th * out.phi[i], q);
    }
  });

  out.risk = entropic_risk(out.phi, th);
  out.J = out.risk + 0.5 * problem_.alpha2 * f.dot(Mf);
  if (with_gradient) {
    ScaledSum total;
    for (const auto& b : blocks) total.merge(b);
    out.q_average = total.vec / total.weight;
    out.gradient = out.q_average + problem_.alpha2 * f;
  }
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> OcpSampler::state_and_adjoint(const Eigen::VectorXd& f,
                                                                          std::size_t i) {
  if (i >= n_) throw std::out_of_range("point index out of range");
  const FemSpace& V = *space_;
  SolverWorkspace& ws = *cache_->ws[0];
  std::unique_ptr<Factorization> tmp;
  const Factorization* K = cache_->factors[i].get();
  if (!K) {
    tmp = ws.factorize(point(i));
    K = tmp.get();
  }
  Eigen::VectorXd u = K->solve(V.mass() * f, ws);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(V.num_dofs());
  if (problem_.alpha1 != 0.0) q = K->solve(problem_.alpha1 * (V.mass() * u - b_hat_), ws);
  return {std::move(u), std::move(q)};
}

OcpLevelResult OcpSampler::integrands(const Eigen::VectorXd& f) {
  const FemSpace& V = *space_;
  if (f.size() != V.num_dofs()) throw std::invalid_argument("control has wrong length");
  const Eigen::VectorXd Mf = V.mass() * f;
  const Source fsrc = Source::nodal(f);
  const ControlProblem& P = problem_;
  const int nblocks = static_cast<int>((n_ + kBlock - 1) / kBlock);
  std::vector<ScaledSum> blocks(static_cast<std::size_t>(nblocks));
  OcpLevelResult r;
  r.samples.resize(n_);
  r.count = n_;

  for_each_block(n_, threads_, cache_->ws, [&](int b, std::size_t i, SolverWorkspace& ws) {
    std::unique_ptr<Factorization> tmp;
    const Factorization* K = cache_->factors[i].get();
    if (!K) {
      tmp = ws.factorize(point(i));
      K = tmp.get();
    }
    const auto y = point(i);
    const Eigen::VectorXd u = K->solve(Mf, ws);
    const Eigen::VectorXd Mu = V.mass() * u;
    const double sq = std::max(0.0, u.dot(Mu) - 2.0 * u.dot(b_hat_) + u_hat_sq_);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(V.num_dofs());
    if (P.alpha1 != 0.0) q = K->solve(P.alpha1 * (Mu - b_hat_), ws);
    OcpSample& smp = r.samples[i];
    smp.phi = 0.5 * P.alpha1 * sq;
    smp.log_theta = P.theta * smp.phi;
    smp.misfit_l2 = std::sqrt(sq);
    smp.u_norm = std::sqrt(std::max(0.0, u.dot(Mu)));
    smp.q_norm = std::sqrt(std::max(0.0, q.dot(V.mass() * q)));
    smp.eta = eta_l2(V, y, u, fsrc).total;
    smp.eta_dual = eta_l2_dual(V, y, q, u, P.u_hat, P.alpha1, smp.eta).total;
    smp.chi = ocp_chi(P.theta, P.c_star, P.alpha1, smp.misfit_l2, smp.eta);
    blocks[static_cast<std::size_t>(b)].add(smp.log_theta, q);
  });

  double shift = -std::numeric_limits<double>::infinity();
  for (const auto& s : r.samples) shift = std::max(shift, s.log_theta);
  r.shift = shift;
  std::vector<double> th(n_), ze(n_), zep(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    const OcpSample& s = r.samples[i];
    th[i] = std::exp(s.log_theta - shift);
    ze[i] = ocp_zeta(th[i], s.chi);
    zep[i] = ocp_zeta_prime(ze[i], s.q_norm, th[i], s.chi, s.eta_dual, P.c_star);
  }
  r.z = qmc_mean<double>(th, n_);
  r.zeta = qmc_mean<double>(ze, n_);
  r.zetap = qmc_mean<double>(zep, n_);
  ScaledSum total;
  for (const auto& b : blocks) total.merge(b);
  total.rescale(shift);
  r.zp = total.vec / static_cast<double>(n_);
  return r;
}

ControlResult solve_control(OcpSampler& sampler, double tol, int max_iter, const Eigen::VectorXd* f0) {
  if (!(tol > 0.0)) throw std::invalid_argument("solve_control: tol must be positive");
  const ControlProblem& P = sampler.problem();
  const auto& M = sampler.space().mass();
  auto mdot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(M * b); };
  // Steps are taken in the lumped-mass metric D, where nodal clipping is the
  // exact projection. The fixed point of f = P(f - D^{-1} M J'/alpha2) is then
  // the discrete variational inequality (J'(f), g - f)_M >= 0 over the box.
  const Eigen::VectorXd lumped = M * Eigen::VectorXd::Ones(M.cols());
  auto direction = [&](const Eigen::VectorXd& g) -> Eigen::VectorXd {
    return (M * g).cwiseQuotient(lumped);
  };
  auto ddot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.cwiseProduct(lumped).dot(b); };
  auto residual_of = [&](const Eigen::VectorXd& f, const Eigen::VectorXd& d) {
    const Eigen::VectorXd r = f - P.project(f - d / P.alpha2);
    return std::sqrt(std::max(0.0, mdot(r, r)));
  };

  ControlResult res;
  Eigen::VectorXd f = f0 ? P.project(*f0) : P.project(Eigen::VectorXd::Zero(sampler.space().num_dofs()));
  ObjectiveValue ev = sampler.objective(f, true);
  Eigen::VectorXd d = direction(ev.gradient);
  double t = 1.0 / P.alpha2;
  Eigen::VectorXd f_prev, g_prev;  // g_prev holds the previous J'

  for (int k = 0;; ++k) {
    const double rnorm = residual_of(f, d);
    res.history.push_back({k, ev.J, rnorm, t});
    if (rnorm <= tol) {
      res.converged = true;
      break;
    }
    if (k >= max_iter) break;
    if (k > 0) {
      const Eigen::VectorXd s = f - f_prev, yv = ev.gradient - g_prev;
      const double sy = mdot(s, yv);
      t = sy > 0.0 ? ddot(s, s) / sy : 1.0 / P.alpha2;
      t = std::clamp(t, 1e-6 / P.alpha2, 1e3 / P.alpha2);
    }
    // Armijo backtracking along the projection arc.
    Eigen::VectorXd fn;
    ObjectiveValue evn;
    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      fn = P.project(f - t * d);
      evn = sampler.objective(fn, true);
      const double decrease = mdot(ev.gradient, fn - f);
      // near the optimum the predicted decrease falls below the resolution of J
      const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(ev.J);
      if (evn.J <= ev.J + 1e-4 * decrease + slack) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // no descent left at working precision
    f_prev = std::move(f);
    g_prev = ev.gradient;
    f = std::move(fn);
    ev = std::move(evn);
    d = direction(ev.gradient);
  }
  res.f = f;
  res.J = ev.J;
  res.residual = res.history.back().residual;
  res.iterations = static_cast<int>(res.history.size()) - 1;
  res.last = std::move(ev);
  return res;
}

Guarded<double> control_error_bound(const EstimatorReport& est, double alpha2) {
  if (!(alpha2 > 0.0)) throw std::invalid_argument("control_error_bound: alpha2 must be positive");
  Guarded<double> g;
  g.value = std::numeric_limits<double>::quiet_NaN();
  if (!est.valid() || !std::isfinite(est.est)) return g;
  g.value = est.est / alpha2;
  g.valid = true;
  return g;
}

}  // namespace qmcfem
