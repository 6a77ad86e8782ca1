#include "qmcfem/driver.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "qmcfem/errors.hpp"

namespace qmcfem {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void RunConfig::validate() const {
  if (!(tau_fem > 0.0) || !(tau_qmc > 0.0)) throw ConfigError("tolerances must be positive");
  if (m0 < 1) throw ConfigError("m0 must be at least 1");
  if (max_m < m0) throw ConfigError("max_m must be at least m0");
  if (max_m > kMaxLatticeDegree) throw ConfigError("max_m exceeds the modulus table");
  if (initial_divisions < 1) throw ConfigError("mesh divisions must be positive");
  if (max_dofs < 1) throw ConfigError("max_dofs must be positive");
  if (!coefficient && s < 1) throw ConfigError("coefficient dimension s must be positive");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  if (!(c_star > 0.0)) throw ConfigError("c_star must be positive");
  if (threads < 0) throw ConfigError("threads must be nonnegative");
  if (spod_alpha < 1 || !(spod_c > 0.0) || !(beta_scale > 0.0))
    throw ConfigError("SPOD parameters need alpha >= 1, c > 0, beta_scale > 0");
  if (!lattice_file.empty() && !std::filesystem::exists(lattice_file))
    throw ConfigError("lattice file does not exist: " + lattice_file.string());
  if (kind == ProblemKind::ocp) {
    control.validate();
    if (!(control_tol > 0.0) || control_max_iter < 1) throw ConfigError("optimizer needs tol > 0 and max_iter >= 1");
  } else {
    if (!std::isfinite(source)) throw ConfigError("source must be finite");
    const std::size_t K = regions.empty() ? 4 : regions.size();
    if (delta.size() != 0 && static_cast<std::size_t>(delta.size()) != K)
      throw ConfigError("delta length differs from the number of observation regions");
    if (delta.size() == 0 && !regions.empty() && !synthesize)
      throw ConfigError("custom observation regions need delta values or delta = synthesize");
    if (synthesize && delta.size() != 0) throw ConfigError("delta is both given and synthesized");
    if (gamma.size() != 0 && (static_cast<std::size_t>(gamma.rows()) != K || gamma.rows() != gamma.cols()))
      throw ConfigError("gamma must be K x K");
    if (sigma < 0.0) throw ConfigError("sigma must be nonnegative");
    if (synth_level < 0) throw ConfigError("synth_level must be nonnegative");
    for (const auto& r : regions)
      if (!r.region.valid()) throw ConfigError("observation region is empty");
    if (reference_enabled) reference.validate();
  }
}

const char* phase_name(Phase p) { return p == Phase::fem ? "fem" : "qmc"; }

const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::fem_cap: return "fem_cap";
    case RunStatus::qmc_cap: return "qmc_cap";
  }
  return "unknown";
}

int exit_code(RunStatus s) { return s == RunStatus::converged ? 0 : 2; }

RunContext::RunContext(const RunConfig& cfg)
    : cfg_(cfg),
      coeff_(cfg.coefficient ? cfg.coefficient : std::make_shared<const AffineCoefficient>(sine_modes(cfg.s, cfg.kappa))),
      rule_(coeff_->dimension(), [&] {
        SpodWeights w;
        w.alpha = cfg.spod_alpha;
        w.n = cfg.spod_n >= 0 ? cfg.spod_n : (cfg.kind == ProblemKind::bip ? 0 : 2);
        w.c = cfg.spod_c;
        for (double b : coeff_->b()) w.beta.push_back(cfg.beta_scale * b);
        return w;
      }()) {
  cfg_.validate();
  if (!cfg_.lattice_file.empty()) read_lattice_file(cfg_.lattice_file, rule_);
  meshes_.push_back(std::make_shared<const TriangleMesh>(cfg_.criss_cross ? criss_cross_square_mesh(cfg_.initial_divisions)
                                                                         : unit_square_mesh(cfg_.initial_divisions)));
}

MeshPtr RunContext::mesh(int level) {
  if (level < 0) throw std::invalid_argument("mesh level must be nonnegative");
  while (static_cast<int>(meshes_.size()) <= level)
    meshes_.push_back(std::make_shared<const TriangleMesh>(uniform_refine(*meshes_.back())));
  return meshes_[static_cast<std::size_t>(level)];
}

std::shared_ptr<const FemSpace> RunContext::space(int level) {
  if (static_cast<int>(spaces_.size()) <= level) spaces_.resize(static_cast<std::size_t>(level) + 1);
  auto& sp = spaces_[static_cast<std::size_t>(level)];
  if (!sp) sp = std::make_shared<const FemSpace>(mesh(level), coeff_);
  return sp;
}

void RunContext::release(int level) {
  if (level >= 0 && level < static_cast<int>(spaces_.size())) spaces_[static_cast<std::size_t>(level)].reset();
}

const ObservationSetup& RunContext::observation_setup() {
  if (setup_) return *setup_;
  const ObservationSetup ref = reference_observation_setup(reference_sigma());
  ObservationSetup s;
  s.observations = cfg_.regions.empty() ? ref.observations : cfg_.regions;
  s.goal = cfg_.goal ? *cfg_.goal : ref.goal;
  double synth_sigma = 0.0;
  if (cfg_.synthesize) {
    const SyntheticData d =
        synthesize_data(*space(cfg_.synth_level), s.observations, Source::constant(cfg_.source), cfg_.synth_seed);
    release(cfg_.synth_level);
    s.delta = d.delta;
    synth_sigma = d.sigma;
  } else {
    s.delta = cfg_.delta.size() != 0 ? cfg_.delta : ref.delta;
  }
  if (cfg_.gamma.size() != 0) {
    s.gamma = cfg_.gamma;
  } else {
    // default noise: 10% of the mean datum (of the clean data when synthesized)
    const double sigma = cfg_.sigma > 0.0 ? cfg_.sigma : (cfg_.synthesize ? synth_sigma : 0.1 * s.delta.mean());
    if (!(sigma > 0.0)) throw ConfigError("default sigma is not positive; set bip.sigma");
    const auto K = static_cast<Eigen::Index>(s.observations.size());
    s.gamma = sigma * sigma * Eigen::MatrixXd::Identity(K, K);
  }
  s.validate();
  setup_ = std::move(s);
  return *setup_;
}

std::unique_ptr<BipModel> RunContext::bip_model(int level) {
  return std::make_unique<BipModel>(observation_setup(), space(level), Source::constant(cfg_.source), cfg_.variant,
                                    cfg_.c_star);
}

namespace {

struct BipLevel {
  double z = 0.0, zp = 0.0, zeta = 0.0, zetap = 0.0;
  std::vector<LikelihoodSample> samples;
};

class BipLoop {
 public:
  BipLoop(RunContext& ctx, const ReferenceResult* ref) : ctx_(ctx), ref_(ref) {}

  IterationRow step(int level, int m) {
    const auto t0 = std::chrono::steady_clock::now();
    if (level != level_) {
      cache_.clear();
      model_.reset();
      ctx_.release(level_);
      model_ = ctx_.bip_model(level);
      level_ = level;
    }
    const BipLevel& a = eval(m);
    const BipLevel& b = eval(m - 1);
    IterationRow row;
    row.dofs = model_->space().num_dofs();
    row.h_max = model_->space().geometry().h_max;
    row.m = m;
    row.z = a.z;
    row.norm_zp = std::abs(a.zp);
    const Guarded<double> e = qmc_ratio_estimator(a.z, b.z, a.zp, b.zp, ctx_.lattice().base());
    row.report = combined_estimator({std::abs(e.value), e.valid}, fem_ratio_bound(a.z, std::abs(a.zp), a.zeta, a.zetap));
    row.report.z = a.z;
    row.report.zp_norm = std::abs(a.zp);
    row.report.zeta = a.zeta;
    row.report.zetap = a.zetap;
    row.ratio = a.z > 0.0 ? a.zp / a.z : kNaN;
    if (ref_) row.realized_err = std::abs(row.ratio - ref_->ratio);
    row.seconds = seconds_since(t0);
    last_samples_ = &a.samples;
    return row;
  }

  const std::vector<LikelihoodSample>& last_samples() const { return *last_samples_; }

 private:
  const BipLevel& eval(int m) {
    auto it = cache_.find(m);
    if (it != cache_.end()) return it->second;
    ctx_.lattice().ensure(m);
    const std::vector<double> pts = ctx_.lattice().points(m);
    BipLevelResult r = evaluate_bip_level(*model_, pts, ctx_.config().threads);
    BipLevel lv{r.z, r.zp, r.zeta, r.zetap, std::move(r.samples)};
    return cache_.emplace(m, std::move(lv)).first->second;
  }

  RunContext& ctx_;
  const ReferenceResult* ref_;
  int level_ = -1;
  std::unique_ptr<BipModel> model_;
  std::map<int, BipLevel> cache_;
  const std::vector<LikelihoodSample>* last_samples_ = nullptr;
};

class OcpLoop {
 public:
  explicit OcpLoop(RunContext& ctx) : ctx_(ctx) {}

  IterationRow step(int level, int m) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig& cfg = ctx_.config();
    if (level != level_) {
      ctx_.release(level_);
      const auto sp = ctx_.space(level);
      if (f_.size() != 0) {
        for (int l = level_ + 1; l <= level; ++l) f_ = prolongate(*ctx_.mesh(l), f_);
      }
      space_ = sp;
      level_ = level;
    }
    const FemSpace& V = *space_;
    ctx_.lattice().ensure(m);
    ctx_.lattice().ensure(m - 1);
    Eigen::VectorXd f0 = f_.size() != 0 ? f_ : Eigen::VectorXd(cfg.control.project(Eigen::VectorXd::Zero(V.num_dofs())));
    OcpLevelResult a, b;
    {
      OcpSampler sm(cfg.control, V, ctx_.lattice().points(m), cfg.threads);
      ControlResult res = solve_control(sm, cfg.control_tol, cfg.control_max_iter, &f0);
      f_ = res.f;
      history_ = res.history;
      J_ = res.J;
      residual_ = res.residual;
      converged_ = res.converged;
      a = sm.integrands(f_);
    }
    {
      OcpSampler sm1(cfg.control, V, ctx_.lattice().points(m - 1), cfg.threads);
      b = sm1.integrands(f_);
    }
    const double shift = std::max(a.shift, b.shift);
    a.rescale(shift);
    b.rescale(shift);

    IterationRow row;
    row.dofs = V.num_dofs();
    row.h_max = V.geometry().h_max;
    row.m = m;
    const double zp_norm = V.l2_norm(a.zp);
    // logged in absolute scale; the estimator terms are invariant under the shift
    row.z = a.z * std::exp(shift);
    row.norm_zp = zp_norm * std::exp(shift);
    const Guarded<Eigen::VectorXd> e = qmc_ratio_estimator(a.z, b.z, a.zp, b.zp, ctx_.lattice().base());
    row.report = combined_estimator({V.l2_norm(e.value), e.valid}, fem_ratio_bound(a.z, zp_norm, a.zeta, a.zetap));
    row.report.z = row.z;
    row.report.zp_norm = row.norm_zp;
    row.report.zeta = a.zeta * std::exp(shift);
    row.report.zetap = a.zetap * std::exp(shift);
    field_ = a.z > 0.0 ? Eigen::VectorXd(a.zp / a.z) : Eigen::VectorXd();
    row.ratio = a.z > 0.0 ? zp_norm / a.z : kNaN;
    row.seconds = seconds_since(t0);
    samples_ = std::move(a.samples);
    return row;
  }

  const Eigen::VectorXd& control() const { return f_; }
  const Eigen::VectorXd& field() const { return field_; }
  const std::vector<ControlIteration>& history() const { return history_; }
  std::vector<OcpSample>& samples() { return samples_; }
  double J() const { return J_; }
  double residual() const { return residual_; }
  bool converged() const { return converged_; }

 private:
  RunContext& ctx_;
  int level_ = -1;
  std::shared_ptr<const FemSpace> space_;
  Eigen::VectorXd f_;
  Eigen::VectorXd field_;
  std::vector<ControlIteration> history_;
  std::vector<OcpSample> samples_;
  double J_ = 0.0, residual_ = 0.0;
  bool converged_ = false;
};

/// Two-phase schedule shared by both problem kinds.
template <class Loop>
RunResult schedule(RunContext& ctx, Loop& loop) {
  const RunConfig& cfg = ctx.config();
  RunResult out;
  int iter = 0;
  auto push = [&](IterationRow row, Phase phase) {
    row.iter = iter++;
    row.phase = phase;
    out.rows.push_back(row);
    return out.rows.back();
  };

  int level = 0;
  const TriangleMesh& coarse = *ctx.mesh(0);
  if (coarse.num_vertices() > cfg.max_dofs) throw ConfigError("initial mesh exceeds max_dofs");
  for (;;) {
    const IterationRow& row = push(loop.step(level, cfg.m0), Phase::fem);
    if (row.report.fem_valid && row.report.fem_term <= cfg.tau_fem) break;
    if (refined_vertex_count(coarse, level + 1) > cfg.max_dofs) {
      out.status = RunStatus::fem_cap;
      break;
    }
    ++level;
  }

  int m = cfg.m0;
  for (;;) {
    const IterationRow& last = out.rows.back();
    if (last.report.qmc_valid && last.report.qmc_term <= cfg.tau_qmc) break;
    if (m + 1 > cfg.max_m) {
      if (out.status == RunStatus::converged) out.status = RunStatus::qmc_cap;
      break;
    }
    ++m;
    push(loop.step(level, m), Phase::qmc);
  }

  const IterationRow& last = out.rows.back();
  out.final_ratio = last.ratio;
  out.final_m = last.m;
  out.final_dofs = last.dofs;
  out.final_mesh_level = level;
  return out;
}

}  // namespace

struct Stepper::Impl {
  std::optional<BipLoop> bip;
  std::optional<OcpLoop> ocp;
  Eigen::VectorXd empty;
};

Stepper::Stepper(RunContext& ctx, const ReferenceResult* reference) : impl_(std::make_unique<Impl>()) {
  if (ctx.config().kind == ProblemKind::bip)
    impl_->bip.emplace(ctx, reference);
  else
    impl_->ocp.emplace(ctx);
}

Stepper::~Stepper() = default;

IterationRow Stepper::step(int level, int m) {
  if (m < 1) throw std::invalid_argument("Stepper::step: m must be at least 1");
  return impl_->bip ? impl_->bip->step(level, m) : impl_->ocp->step(level, m);
}

const Eigen::VectorXd& Stepper::control() const { return impl_->ocp ? impl_->ocp->control() : impl_->empty; }

RunResult adaptive_run(const RunConfig& cfg, const ReferenceResult* reference) {
  RunContext ctx(cfg);
  if (cfg.kind == ProblemKind::bip) {
    BipLoop loop(ctx, reference);
    RunResult r = schedule(ctx, loop);
    if (reference) r.reference = *reference;
    r.bip_samples = loop.last_samples();
    return r;
  }
  OcpLoop loop(ctx);
  RunResult r = schedule(ctx, loop);
  r.control = loop.control();
  r.final_field = loop.field();
  r.control_history = loop.history();
  r.ocp_samples = std::move(loop.samples());
  return r;
}

ReferenceResult reference_for(const RunConfig& cfg) {
  if (cfg.kind != ProblemKind::bip) throw ConfigError("the reference oracle is defined for the inverse problem");
  cfg.reference.validate();
  RunContext ctx(cfg);
  BipModelFactory factory = [&ctx](int level) {
    auto model = ctx.bip_model(level);
    ctx.release(level);  // the model keeps its space alive
    return model;
  };
  return reference_ratio(cfg.reference, ctx.coefficient()->dimension(), factory, cfg.threads);
}

CsvTable iterations_table(const RunResult& r, bool timings) {
  CsvTable t;
  t.header = {"iter", "phase", "dofs", "h_max", "m", "Z", "normZp", "qmc_term", "fem_term",
              "est", "realized_err", "valid", "seconds"};
  for (const auto& row : r.rows)
    t.rows.push_back({std::to_string(row.iter), phase_name(row.phase), std::to_string(row.dofs),
                      format_double(row.h_max), std::to_string(row.m), format_double(row.z),
                      format_double(row.norm_zp), format_double(row.report.qmc_term),
                      format_double(row.report.fem_term), format_double(row.report.est),
                      format_double(row.realized_err), row.report.valid() ? "1" : "0",
                      timings ? format_double(row.seconds) : std::string()});
  return t;
}

std::string summary_text(const RunConfig& cfg, const RunResult& r) {
  std::ostringstream os;
  const IterationRow& last = r.rows.back();
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("problem", cfg.kind == ProblemKind::bip ? "bip" : "ocp");
  kv("status", status_name(r.status));
  kv("exit_code", std::to_string(exit_code(r.status)));
  kv("iterations", std::to_string(r.rows.size()));
  kv("final_m", std::to_string(r.final_m));
  kv("final_points", std::to_string(std::size_t{1} << r.final_m));
  kv("final_dofs", std::to_string(r.final_dofs));
  kv("final_mesh_level", std::to_string(r.final_mesh_level));
  kv("final_h_max", format_double(last.h_max));
  kv(cfg.kind == ProblemKind::bip ? "ratio" : "ratio_l2_norm", format_double(r.final_ratio));
  kv("Z", format_double(last.z));
  kv("normZp", format_double(last.norm_zp));
  kv("qmc_term", format_double(last.report.qmc_term));
  kv("fem_term", format_double(last.report.fem_term));
  kv("est", format_double(last.report.est));
  kv("qmc_valid", last.report.qmc_valid ? "true" : "false");
  kv("fem_valid", last.report.fem_valid ? "true" : "false");
  kv("tau_fem", format_double(cfg.tau_fem));
  kv("tau_qmc", format_double(cfg.tau_qmc));
  kv("c_star", format_double(cfg.c_star));
  if (r.reference) {
    kv("reference_ratio", format_double(r.reference->ratio));
    kv("reference_std_error", format_double(r.reference->std_error));
    kv("reference_mesh_level", std::to_string(r.reference->finest_mesh_level));
    kv("reference_dofs", std::to_string(r.reference->finest_dofs));
    kv("reference_samples", std::to_string(r.reference->total_samples));
    kv("realized_err", format_double(last.realized_err));
  }
  if (cfg.kind == ProblemKind::ocp) {
    const Guarded<double> bound = control_error_bound(last.report, cfg.control.alpha2);
    kv("control_error_bound", format_double(bound.valid ? bound.value : kNaN));
    kv("objective", format_double(r.control_history.empty() ? kNaN : r.control_history.back().J));
    kv("optimizer_iterations", std::to_string(r.control_history.size()));
    kv("optimizer_residual", format_double(r.control_history.empty() ? kNaN : r.control_history.back().residual));
  }
  return os.str();
}

std::string plot_script() {
  // Estimated and realized error per iteration with the two phases as separate series.
  return R"(# gnuplot -persist plot.script
set datafile separator ','
set key autotitle columnhead
set logscale y
set xlabel 'iteration'
set ylabel 'error'
set grid
set key top right
valid(c) = (column('valid') == 1 ? column(c) : 1/0)
fem(c) = (strcol('phase') eq 'fem' ? valid(c) : 1/0)
qmc(c) = (strcol('phase') eq 'qmc' ? valid(c) : 1/0)
plot 'iterations.csv' using 'iter':(fem('est')) with linespoints pt 7 title 'EST (FEM phase)', \
     ''               using 'iter':(qmc('est')) with linespoints pt 5 title 'EST (QMC phase)', \
     ''               using 'iter':(fem('realized_err')) with linespoints pt 6 title 'realized error (FEM phase)', \
     ''               using 'iter':(qmc('realized_err')) with linespoints pt 4 title 'realized error (QMC phase)'
)";
}

CsvTable control_table(const RunResult& r) {
  CsvTable t;
  t.header = {"vertex", "value"};
  for (Eigen::Index i = 0; i < r.control.size(); ++i)
    t.rows.push_back({std::to_string(i), format_double(r.control[i])});
  return t;
}

CsvTable control_history_table(const RunResult& r) {
  CsvTable t;
  t.header = {"iter", "objective", "residual", "step"};
  for (const auto& h : r.control_history)
    t.rows.push_back({std::to_string(h.iter), format_double(h.J), format_double(h.residual), format_double(h.step)});
  return t;
}

CsvTable sample_table(const RunResult& r) {
  CsvTable t;
  if (!r.ocp_samples.empty()) {
    t.header = {"index", "phi", "log_theta", "misfit_l2", "eta", "eta_dual", "chi", "q_norm", "u_norm"};
    for (std::size_t i = 0; i < r.ocp_samples.size(); ++i) {
      const OcpSample& s = r.ocp_samples[i];
      t.rows.push_back({std::to_string(i), format_double(s.phi), format_double(s.log_theta),
                        format_double(s.misfit_l2), format_double(s.eta), format_double(s.eta_dual),
                        format_double(s.chi), format_double(s.q_norm), format_double(s.u_norm)});
    }
    return t;
  }
  t.header = {"index", "theta", "misfit", "eta", "zeta", "zeta_prime"};
  for (std::size_t i = 0; i < r.bip_samples.size(); ++i) {
    const LikelihoodSample& s = r.bip_samples[i];
    t.rows.push_back({std::to_string(i), format_double(s.theta), format_double(s.misfit), format_double(s.eta),
                      format_double(s.zeta), format_double(s.zeta_prime)});
  }
  return t;
}

void write_outputs(const RunConfig& cfg, const RunResult& r) {
  std::filesystem::create_directories(cfg.output_dir);
  write_csv(cfg.output_dir / "iterations.csv", iterations_table(r, cfg.timings));
  write_text(cfg.output_dir / "summary.txt", summary_text(cfg, r));
  write_text(cfg.output_dir / "plot.script", plot_script());
  if (cfg.kind == ProblemKind::ocp) {
    write_csv(cfg.output_dir / "control.csv", control_table(r));
    write_csv(cfg.output_dir / "control_history.csv", control_history_table(r));
  }
  if (cfg.sample_dump) write_csv(cfg.output_dir / "samples.csv", sample_table(r));
}

}  // namespace qmcfem
