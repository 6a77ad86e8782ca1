#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qmcfem/driver.hpp"
#include "qmcfem/errors.hpp"

using namespace qmcfem;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("huge tolerances stop after the first evaluation") {
  RunConfig c;
  c.kind = ProblemKind::ocp;
  c.tau_fem = c.tau_qmc = 1e6;
  const RunResult r = adaptive_run(c);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].dofs == 41);
  CHECK(r.rows[0].m == c.m0);
  CHECK(r.rows[0].report.valid());
  CHECK(r.status == RunStatus::converged);
  CHECK(exit_code(r.status) == 0);

  // BIP on the coarsest mesh is pre-asymptotic: the FEM term is flagged and the cap ends phase 1
  RunConfig b;
  b.tau_fem = b.tau_qmc = 1e6;
  b.max_dofs = 100;
  const RunResult rb = adaptive_run(b);
  REQUIRE(rb.rows.size() == 1);
  CHECK_FALSE(rb.rows[0].report.fem_valid);
  CHECK(rb.status == RunStatus::fem_cap);
  CHECK(exit_code(rb.status) == 2);
}

TEST_CASE("phase structure: dofs grow in phase 1, m grows in phase 2, one transition") {
  RunConfig c;
  c.max_dofs = 600;
  c.tau_qmc = 1e-3;
  c.max_m = 9;
  const RunResult r = adaptive_run(c);
  REQUIRE(r.rows.size() >= 2);
  int transitions = 0;
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    const auto& a = r.rows[i - 1];
    const auto& b = r.rows[i];
    CHECK(b.iter == a.iter + 1);
    if (a.phase != b.phase) {
      ++transitions;
      CHECK(a.phase == Phase::fem);
      CHECK(b.dofs == a.dofs);
    }
    if (b.phase == Phase::fem) {
      CHECK(b.dofs > a.dofs);
      CHECK(b.m == a.m);
    } else {
      CHECK(b.m == a.m + 1);
      CHECK(b.dofs == a.dofs);
    }
  }
  CHECK(transitions <= 1);
  CHECK(r.rows.front().phase == Phase::fem);
  CHECK(r.final_dofs == r.rows.back().dofs);
  CHECK(r.final_m == r.rows.back().m);
  // the cap stopped phase 1 and is reported even if phase 2 converged
  CHECK(r.status == RunStatus::fem_cap);
  const auto& last = r.rows.back();
  if (r.rows.size() > 1 && last.phase == Phase::qmc) CHECK(last.report.qmc_term <= c.tau_qmc);
}

TEST_CASE("QMC cap is reported") {
  RunConfig c;
  c.kind = ProblemKind::ocp;
  c.tau_qmc = 1e-14;
  c.max_m = 4;
  c.max_dofs = 200;
  const RunResult r = adaptive_run(c);
  CHECK(r.rows.back().m == 4);
  CHECK(r.status != RunStatus::converged);
}

TEST_CASE("outputs are byte-identical across thread counts and carry the documented schema") {
  const auto base = std::filesystem::temp_directory_path() / "qmcfem_driver_test";
  std::filesystem::remove_all(base);
  std::string csv[2], summary[2];
  for (int k = 0; k < 2; ++k) {
    RunConfig c;
    c.max_dofs = 600;
    c.tau_qmc = 2e-3;
    c.threads = k == 0 ? 1 : 4;
    c.output_dir = base / std::to_string(k);
    c.sample_dump = true;
    const RunResult r = adaptive_run(c);
    write_outputs(c, r);
    csv[k] = slurp(c.output_dir / "iterations.csv");
    summary[k] = slurp(c.output_dir / "summary.txt");
    const CsvTable t = read_csv(c.output_dir / "iterations.csv");
    CHECK(t.header == std::vector<std::string>{"iter", "phase", "dofs", "h_max", "m", "Z", "normZp", "qmc_term",
                                               "fem_term", "est", "realized_err", "valid", "seconds"});
    CHECK(t.rows.size() == r.rows.size());
    CHECK(read_csv(c.output_dir / "samples.csv").rows.size() == (std::size_t{1} << r.final_m));
    CHECK(std::filesystem::exists(c.output_dir / "plot.script"));
  }
  CHECK(csv[0] == csv[1]);
  CHECK(summary[0] == summary[1]);
  CHECK(summary[0].find("status = fem_cap") != std::string::npos);
  std::filesystem::remove_all(base);
}

TEST_CASE("OCP outputs include the control field") {
  const auto dir = std::filesystem::temp_directory_path() / "qmcfem_driver_ocp";
  RunConfig c;
  c.kind = ProblemKind::ocp;
  c.max_dofs = 200;
  c.output_dir = dir;
  const RunResult r = adaptive_run(c);
  write_outputs(c, r);
  const CsvTable f = read_csv(dir / "control.csv");
  CHECK(f.rows.size() == static_cast<std::size_t>(r.final_dofs));
  CHECK(read_csv(dir / "control_history.csv").rows.size() == r.control_history.size());
  CHECK(slurp(dir / "summary.txt").find("control_error_bound") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthesized data and custom observation setups") {
  RunConfig c;
  c.synthesize = true;
  c.synth_level = 1;
  c.synth_seed = 5;
  RunContext ctx(c);
  const ObservationSetup& s = ctx.observation_setup();
  CHECK(s.delta.size() == 4);
  CHECK(s.delta != reference_data());
  c.synthesize = false;
  c.regions = {{{0.1, 0.1, 0.3, 0.3}, 1.0}};
  c.delta = Eigen::VectorXd::Constant(1, 0.02);
  RunContext ctx2(c);
  const ObservationSetup& s2 = ctx2.observation_setup();
  CHECK(s2.gamma(0, 0) == doctest::Approx(0.002 * 0.002));
}

TEST_CASE("reference of a parameter-independent integrand is exact with zero variance") {
  // a single mode of negligible amplitude: Theta and G(u_h) do not vary with y
  auto coeff = std::make_shared<const AffineCoefficient>(0.5, std::vector<Mode>{}, std::vector<Mode>{SineMode{1, 1, 1e-14}},
                                                         0.25);
  auto mesh = std::make_shared<const TriangleMesh>(criss_cross_square_mesh(4));
  auto V = std::make_shared<const FemSpace>(mesh, coeff);
  const ObservationSetup setup = reference_observation_setup(reference_sigma());
  BipModelFactory factory = [&](int) {
    return std::make_unique<BipModel>(setup, V, Source::constant(10.0), EstimatorVariant::l2, 1.0);
  };
  ReferenceSpec spec;
  spec.mesh_levels = {0};
  spec.samples = {40};
  spec.batches = 4;
  const ReferenceResult r = reference_ratio(spec, 1, factory, 2);
  const BipModel m(setup, V, Source::constant(10.0), EstimatorVariant::l2, 1.0);
  const std::vector<double> y{0.0};
  const FieldSolution u = solve_state(*V, y, Source::constant(10.0));
  CHECK(r.ratio == doctest::Approx(m.goal(u.values)).epsilon(1e-10));
  CHECK(r.std_error <= 1e-10 * r.ratio);
  CHECK(r.total_samples == 40);
  CHECK(r.finest_dofs == 41);
}

TEST_CASE("reference runs are reproducible per seed, single- and multilevel") {
  RunConfig c;
  c.reference.mesh_levels = {0, 1};
  c.reference.samples = {40, 20};
  c.reference.batches = 4;
  c.threads = 3;
  const ReferenceResult a = reference_for(c);
  c.threads = 1;
  const ReferenceResult b = reference_for(c);
  CHECK(a.ratio == b.ratio);
  CHECK(a.std_error == b.std_error);
  CHECK(a.total_samples == 60);
  CHECK(a.finest_mesh_level == 1);
  CHECK(a.finest_dofs == 145);
  c.reference.seed += 1;
  CHECK(reference_for(c).ratio != a.ratio);
  c.reference.samples = {0, 20};
  CHECK_THROWS_AS(reference_for(c), ConfigError);
}

TEST_CASE("multilevel allocation") {
  const std::vector<double> v{1.0, 0.1, 0.01}, cost{1.0, 4.0, 16.0};
  const auto n = mlmc_allocation(v, cost, 1e-3, 10);
  double var = 0.0;
  for (std::size_t l = 0; l < n.size(); ++l) {
    CHECK(n[l] % 10 == 0);
    var += v[l] / static_cast<double>(n[l]);
  }
  CHECK(var <= 1e-3 * (1 + 1e-12));
  CHECK(n[0] > n[1]);
  CHECK(n[1] > n[2]);
  // N_l proportional to sqrt(V_l / C_l) before rounding
  CHECK(static_cast<double>(n[0]) / static_cast<double>(n[1]) == doctest::Approx(std::sqrt(10.0 * 4.0)).epsilon(0.02));
}

TEST_CASE("plot script references the iteration columns") {
  const std::string s = plot_script();
  CHECK(s.find("iterations.csv") != std::string::npos);
  CHECK(s.find("'est'") != std::string::npos);
  CHECK(s.find("'realized_err'") != std::string::npos);
}

TEST_CASE("SPOD factorial shift defaults to 0 for the inverse problem and 2 for control") {
  RunConfig c;
  CHECK(RunContext(c).lattice().weights().n == 0);
  CHECK(RunContext(c).lattice().weights().alpha == 2);
  c.kind = ProblemKind::ocp;
  CHECK(RunContext(c).lattice().weights().n == 2);
  c.spod_n = 1;
  CHECK(RunContext(c).lattice().weights().n == 1);
}
