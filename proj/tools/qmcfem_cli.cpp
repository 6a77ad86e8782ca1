// Command-line front end. Exit codes: 0 success, 1 runtime failure,
// 2 tolerance not reached under the caps, 3 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qmcfem/config.hpp"
#include "qmcfem/driver.hpp"
#include "qmcfem/errors.hpp"
#include "qmcfem/suites.hpp"

namespace fs = std::filesystem;
using namespace qmcfem;

namespace {

struct RunOptions {
  std::string config;
  std::string out;
  int threads = -1;
};

RunConfig load_with_overrides(const RunOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.threads >= 0) c.threads = o.threads;
  c.validate();
  return c;
}

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("config", o.config, "INI configuration file (defaults apply when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o.out, "output directory (overrides output.dir)");
  cmd->add_option("-t,--threads", o.threads, "worker threads, 0 = hardware concurrency");
}

int run_problem(const RunOptions& o, ProblemKind kind) {
  RunConfig c = load_with_overrides(o);
  if (!o.config.empty() && c.kind != kind)
    throw ConfigError(std::string("config declares problem.kind = ") + (c.kind == ProblemKind::bip ? "bip" : "ocp"));
  c.kind = kind;
  std::optional<ReferenceResult> ref;
  if (kind == ProblemKind::bip && c.reference_enabled) {
    ref = reference_for(c);
    std::printf("reference ratio %.10g +- %.3g (%zu samples, %d dofs)\n", ref->ratio, ref->std_error,
                ref->total_samples, ref->finest_dofs);
  }
  const RunResult r = adaptive_run(c, ref ? &*ref : nullptr);
  write_outputs(c, r);
  for (const auto& row : r.rows)
    std::printf("%3d %s dofs=%7d m=%2d qmc=%.4g fem=%.4g est=%.4g%s\n", row.iter, phase_name(row.phase), row.dofs,
                row.m, row.report.qmc_term, row.report.fem_term, row.report.est, row.report.valid() ? "" : " (invalid)");
  std::printf("status %s, ratio %.10g, outputs in %s\n", status_name(r.status), r.final_ratio,
              c.output_dir.string().c_str());
  return exit_code(r.status);
}

void write_table(const fs::path& dir, const std::string& name, const CsvTable& t) {
  fs::create_directories(dir);
  write_csv(dir / name, t);
  std::cout << to_csv_string(t);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive QMC-FEM ratio estimation for Bayesian inversion and risk-averse control"};
  app.require_subcommand(1);

  RunOptions bip_opts, ocp_opts, ref_opts;
  auto* bip = app.add_subcommand("bip", "Bayesian inverse problem");
  bip->require_subcommand(1);
  auto* bip_run = bip->add_subcommand("run", "adaptive run of the posterior-mean estimator");
  add_run_options(bip_run, bip_opts);

  auto* ocp = app.add_subcommand("ocp", "entropic-risk optimal control");
  ocp->require_subcommand(1);
  auto* ocp_run = ocp->add_subcommand("run", "adaptive run of the control problem");
  add_run_options(ocp_run, ocp_opts);

  auto* reference = app.add_subcommand("reference", "Monte Carlo reference ratio for a BIP config");
  add_run_options(reference, ref_opts);

  int fem_refinements = 4;
  std::string fem_out = ".";
  auto* fem = app.add_subcommand("fem-convergence", "manufactured-solution convergence table");
  fem->add_option("-r,--refinements", fem_refinements, "uniform refinements of the initial mesh")->check(CLI::Range(1, 7));
  fem->add_option("-o,--out", fem_out, "output directory");

  int qs = 8, qm_min = 6, qm_max = 14, qm_ref = 17;
  std::string qmc_out = ".";
  auto* qmc = app.add_subcommand("qmc-convergence", "smooth-integrand lattice convergence table");
  qmc->add_option("--s", qs, "dimension")->check(CLI::PositiveNumber);
  qmc->add_option("--m-min", qm_min, "smallest m");
  qmc->add_option("--m-max", qm_max, "largest m");
  qmc->add_option("--m-ref", qm_ref, "reference m");
  qmc->add_option("-o,--out", qmc_out, "output directory");

  auto* lattice = app.add_subcommand("lattice", "generating-vector files");
  lattice->require_subcommand(1);
  std::string ex_config, ex_file, im_config, im_file;
  int ex_m_max = 12;
  auto* lat_export = lattice->add_subcommand("export", "construct levels 0..m_max and write them");
  lat_export->add_option("file", ex_file, "output file")->required();
  lat_export->add_option("-c,--config", ex_config, "config supplying the coefficient and SPOD weights")
      ->check(CLI::ExistingFile);
  lat_export->add_option("-m,--m-max", ex_m_max, "largest level")->check(CLI::Range(0, kMaxLatticeDegree));
  auto* lat_import = lattice->add_subcommand("import", "validate a lattice file against a config");
  lat_import->add_option("file", im_file, "lattice file")->required()->check(CLI::ExistingFile);
  lat_import->add_option("-c,--config", im_config, "config supplying the dimension")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 3;
  }

  try {
    if (*bip_run) return run_problem(bip_opts, ProblemKind::bip);
    if (*ocp_run) return run_problem(ocp_opts, ProblemKind::ocp);
    if (*reference) {
      RunConfig c = load_with_overrides(ref_opts);
      const ReferenceResult r = reference_for(c);
      fs::create_directories(c.output_dir);
      std::ofstream out(c.output_dir / "reference.txt", std::ios::binary);
      std::ostringstream os;
      os << "ratio = " << format_double(r.ratio) << "\nstd_error = " << format_double(r.std_error)
         << "\nZ = " << format_double(r.z) << "\nZp = " << format_double(r.zp)
         << "\nmesh_level = " << r.finest_mesh_level << "\ndofs = " << r.finest_dofs
         << "\nsamples = " << r.total_samples << '\n';
      out << os.str();
      std::cout << os.str();
      return 0;
    }
    if (*fem) {
      const FemSuite s = fem_convergence_suite(fem_refinements);
      write_table(fem_out, "fem_convergence.csv", fem_suite_table(s));
      std::printf("fitted rates: L2 %.3f, H1 %.3f\n", s.rate_l2, s.rate_h1);
      return 0;
    }
    if (*qmc) {
      const QmcSuite s = qmc_convergence_suite(qs, qm_min, qm_max, qm_ref);
      write_table(qmc_out, "qmc_convergence.csv", qmc_suite_table(s));
      std::printf("fitted log2 rate %.3f, reference %.15g, exact %.15g\n", s.rate, s.reference, s.exact);
      return 0;
    }
    if (*lat_export) {
      RunContext ctx(ex_config.empty() ? RunConfig{} : load_config(ex_config));
      for (int m = 0; m <= ex_m_max; ++m) ctx.lattice().ensure(m);
      write_lattice_file(ex_file, ctx.lattice());
      std::printf("wrote levels 0..%d for s = %d to %s\n", ex_m_max, ctx.lattice().dimension(), ex_file.c_str());
      return 0;
    }
    if (*lat_import) {
      RunContext ctx(im_config.empty() ? RunConfig{} : load_config(im_config));
      read_lattice_file(im_file, ctx.lattice());
      for (const auto& [m, level] : ctx.lattice().levels())
        std::printf("m = %2d  criterion %.6e\n", m, cbc_criterion(level, ctx.lattice().weights()));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
