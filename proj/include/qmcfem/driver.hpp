#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qmcfem/bip.hpp"
#include "qmcfem/csv.hpp"
#include "qmcfem/ocp.hpp"
#include "qmcfem/qmc.hpp"
#include "qmcfem/ratio.hpp"
#include "qmcfem/reference.hpp"

namespace qmcfem {

enum class ProblemKind { bip, ocp };

struct RunConfig {
  ProblemKind kind = ProblemKind::bip;

  // mesh ladder: criss-cross grid with `initial_divisions` cells per side, refined uniformly
  int initial_divisions = 4;
  bool criss_cross = true;  // false: one diagonal per cell
  int max_dofs = 1000000;

  // coefficient: sine family of dimension s unless `coefficient` is set
  int s = 16;
  double kappa = 0.25;
  std::shared_ptr<const AffineCoefficient> coefficient;

  // BIP; empty fields fall back to the reference experiment
  std::vector<RegionFunctional> regions;
  std::optional<RegionFunctional> goal;
  Eigen::MatrixXd gamma;         // empty: sigma^2 I
  Eigen::VectorXd delta;         // empty: reference data (or synthesized)
  double sigma = 0.0;            // <= 0: 10% of the mean datum
  bool synthesize = false;       // draw delta from a random truth
  std::uint64_t synth_seed = 7;
  int synth_level = 4;           // refinements of the initial mesh used for synthesis
  double source = 10.0;
  EstimatorVariant variant = EstimatorVariant::l2;

  // OCP
  ControlProblem control = fixture_control_problem();
  double control_tol = 1e-8;
  int control_max_iter = 200;

  // estimator and adaptivity
  double c_star = 1.0;
  double tau_fem = 1.0 / 64.0;
  double tau_qmc = 1.0 / 64.0;
  int m0 = 2;
  int max_m = 16;
  int threads = 0;

  // SPOD weights with beta_j = beta_scale * b_j of the coefficient. The sine
  // family has b_j ~ j^-2, summable for p > 1/2 only, so alpha = 1 + floor(1/p) = 2.
  int spod_alpha = 2;
  int spod_n = -1;  // < 0: 0 for BIP, 2 for OCP
  double spod_c = 1.0;
  double beta_scale = 1.0;
  std::filesystem::path lattice_file;  // optional import

  // reference oracle (BIP)
  bool reference_enabled = false;
  ReferenceSpec reference;

  std::filesystem::path output_dir = "out";
  bool timings = false;       // wall times in iterations.csv (breaks byte identity)
  bool sample_dump = false;   // per-sample CSV of the final level

  /// Throws ConfigError for out-of-range values or missing files.
  void validate() const;
};

enum class Phase { fem, qmc };
const char* phase_name(Phase p);

struct IterationRow {
  int iter = 0;
  Phase phase = Phase::fem;
  int dofs = 0;
  double h_max = 0.0;
  int m = 0;
  double z = 0.0;
  double norm_zp = 0.0;
  double ratio = 0.0;  // Z'/Z for BIP; ||Z'/Z||_{L2} for OCP
  EstimatorReport report;
  double realized_err = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

enum class RunStatus { converged, fem_cap, qmc_cap };
const char* status_name(RunStatus s);
/// 0 converged, 2 tolerance not reached under the caps.
int exit_code(RunStatus s);

struct RunResult {
  std::vector<IterationRow> rows;
  RunStatus status = RunStatus::converged;
  double final_ratio = 0.0;
  Eigen::VectorXd final_field;  // OCP: Z'/Z; control in `control`
  Eigen::VectorXd control;      // OCP: f*_{m,h}
  std::optional<ReferenceResult> reference;
  std::vector<ControlIteration> control_history;  // OCP: optimizer log of the final solve
  std::vector<LikelihoodSample> bip_samples;      // final level, BIP
  std::vector<OcpSample> ocp_samples;             // final level, OCP
  int final_m = 0;
  int final_dofs = 0;
  int final_mesh_level = 0;
};

/// Builds the coefficient, lattice rule and mesh ladder from a config.
class RunContext {
 public:
  explicit RunContext(const RunConfig& cfg);
  const RunConfig& config() const { return cfg_; }
  std::shared_ptr<const AffineCoefficient> coefficient() const { return coeff_; }
  LatticeRule& lattice() { return rule_; }
  /// Mesh after `level` uniform refinements of the initial mesh (cached).
  MeshPtr mesh(int level);
  /// FE space on mesh(level), cached until release(level).
  std::shared_ptr<const FemSpace> space(int level);
  void release(int level);
  /// Observation setup with defaults filled in; synthesizes data on first use if configured.
  const ObservationSetup& observation_setup();
  std::unique_ptr<BipModel> bip_model(int level);

 private:
  RunConfig cfg_;
  std::shared_ptr<const AffineCoefficient> coeff_;
  LatticeRule rule_;
  std::vector<MeshPtr> meshes_;
  std::vector<std::shared_ptr<const FemSpace>> spaces_;
  std::optional<ObservationSetup> setup_;
};

/// One (mesh level, m) evaluation exactly as the adaptive loop performs it:
/// point sets m and m-1 on the given mesh, the combined estimator and, for
/// OCP, the optimal control on P_m warm-started from the previous call.
/// Level results are cached between calls on the same mesh.
class Stepper {
 public:
  explicit Stepper(RunContext& ctx, const ReferenceResult* reference = nullptr);
  ~Stepper();
  Stepper(const Stepper&) = delete;
  Stepper& operator=(const Stepper&) = delete;

  IterationRow step(int level, int m);
  /// OCP: f*_{m,h} of the last step; empty for BIP.
  const Eigen::VectorXd& control() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Phase 1: refine the mesh at m = m0 until the FEM term meets tau_fem.
/// Phase 2: raise m until the QMC term meets tau_qmc. If a cap stops phase 1
/// the run is flagged and phase 2 still proceeds on the finest allowed mesh.
RunResult adaptive_run(const RunConfig& cfg, const ReferenceResult* reference = nullptr);

/// Reference ratio for a BIP config from its reference spec.
ReferenceResult reference_for(const RunConfig& cfg);

CsvTable iterations_table(const RunResult& r, bool timings);
std::string summary_text(const RunConfig& cfg, const RunResult& r);
std::string plot_script();
CsvTable control_table(const RunResult& r);
CsvTable control_history_table(const RunResult& r);
CsvTable sample_table(const RunResult& r);
/// Writes iterations.csv, summary.txt and plot.script into cfg.output_dir,
/// plus control.csv and control_history.csv for OCP and samples.csv on request.
void write_outputs(const RunConfig& cfg, const RunResult& r);

}  // namespace qmcfem
