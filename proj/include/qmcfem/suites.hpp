#pragma once

#include <span>
#include <vector>

#include "qmcfem/csv.hpp"
#include "qmcfem/fem.hpp"

namespace qmcfem {

/// Least-squares slope of log2(y) against x.
double fitted_log2_rate(std::span<const double> x, std::span<const double> y);

/// Manufactured problem: u = sin(pi x1) sin(pi x2) with a four-mode affine
/// coefficient at a fixed y, f = -div(a grad u) in closed form.
struct ManufacturedProblem {
  std::shared_ptr<const AffineCoefficient> coefficient;
  std::vector<double> y;
  Source f = Source::constant(0.0);
  std::function<double(Vec2)> u;
  std::function<Vec2(Vec2)> grad_u;
};
ManufacturedProblem manufactured_problem();

struct FemSuiteRow {
  int level = 0;
  int dofs = 0;
  double h_max = 0.0;
  double err_l2 = 0.0;
  double err_h1 = 0.0;  // ||grad(u - u_h)||
  double eta = 0.0;     // H1 residual estimator
  double eta_l2 = 0.0;  // L2 residual estimator
  double eff_h1 = 0.0;  // eta / err_h1
  double eff_l2 = 0.0;  // eta_l2 / err_l2
};

struct FemSuite {
  std::vector<FemSuiteRow> rows;
  double rate_l2 = 0.0;  // fitted against the refinement level, in powers of two
  double rate_h1 = 0.0;
};

/// Solves the manufactured problem on the initial mesh and `refinements`
/// uniform refinements of it.
FemSuite fem_convergence_suite(int refinements = 4);
CsvTable fem_suite_table(const FemSuite& suite);

struct QmcSuiteRow {
  int m = 0;
  double value = 0.0;
  double err_ref = 0.0;    // |Z_ref - Z_m|
  double diff = 0.0;       // |Z_m - Z_{m-1}|
  double exactness = 0.0;  // (Z_ref - Z_m) / (Z_m - Z_{m-1})
};

struct QmcSuite {
  std::vector<QmcSuiteRow> rows;
  int m_ref = 0;
  double reference = 0.0;
  double exact = 0.0;
  double rate = 0.0;  // fitted log2 slope of err_ref per m
};

/// exp(sum_j y_j / j^2) on [-1/2, 1/2)^s; the exact integral is known.
double smooth_product_integrand(std::span<const double> y);
double smooth_product_exact(int s);

QmcSuite qmc_convergence_suite(int s = 8, int m_min = 6, int m_max = 14, int m_ref = 17);
CsvTable qmc_suite_table(const QmcSuite& suite);

}  // namespace qmcfem
