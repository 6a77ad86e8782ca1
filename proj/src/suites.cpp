#include "qmcfem/suites.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "qmcfem/qmc.hpp"

namespace qmcfem {

double fitted_log2_rate(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fitted_log2_rate: need two points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0)) throw std::invalid_argument("fitted_log2_rate: values must be positive");
    const double ly = std::log2(y[i]);
    sx += x[i];
    sy += ly;
    sxx += x[i] * x[i];
    sxy += x[i] * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ManufacturedProblem manufactured_problem() {
  ManufacturedProblem p;
  p.coefficient = std::make_shared<const AffineCoefficient>(sine_modes(4));
  p.y = {0.4, -0.3, 0.2, -0.45};
  constexpr double pi = std::numbers::pi;
  p.u = [](Vec2 x) { return std::sin(pi * x.x) * std::sin(pi * x.y); };
  p.grad_u = [](Vec2 x) {
    return Vec2{pi * std::cos(pi * x.x) * std::sin(pi * x.y), pi * std::sin(pi * x.x) * std::cos(pi * x.y)};
  };
  auto coeff = p.coefficient;
  auto y = p.y;
  auto grad_u = p.grad_u;
  // -div(a grad u) = -a lap u - grad a . grad u, lap u = -2 pi^2 u
  p.f = Source::function([coeff, y, grad_u](Vec2 x) {
    const CoefficientSample a = coeff->evaluate(x, y);
    const double u = std::sin(pi * x.x) * std::sin(pi * x.y);
    return a.value * 2.0 * pi * pi * u - dot(a.grad, grad_u(x));
  });
  return p;
}

FemSuite fem_convergence_suite(int refinements) {
  if (refinements < 1) throw std::invalid_argument("fem_convergence_suite: need at least one refinement");
  const ManufacturedProblem p = manufactured_problem();
  FemSuite suite;
  auto mesh = std::make_shared<const TriangleMesh>(criss_cross_square_mesh(4));
  std::vector<double> lv, el2, eh1;
  for (int l = 0; l <= refinements; ++l) {
    if (l > 0) mesh = std::make_shared<const TriangleMesh>(uniform_refine(*mesh));
    FemSpace space(mesh, p.coefficient);
    const FieldSolution u = solve_state(space, p.y, p.f);
    const ExactErrors e = exact_errors(space, u.values, p.u, p.grad_u);
    FemSuiteRow r;
    r.level = l;
    r.dofs = space.num_dofs();
    r.h_max = space.geometry().h_max;
    r.err_l2 = e.l2;
    r.err_h1 = e.h1;
    r.eta = eta_h1(space, p.y, u.values, p.f).total;
    r.eta_l2 = eta_l2(space, p.y, u.values, p.f).total;
    r.eff_h1 = r.eta / r.err_h1;
    r.eff_l2 = r.eta_l2 / r.err_l2;
    suite.rows.push_back(r);
    lv.push_back(l);
    el2.push_back(e.l2);
    eh1.push_back(e.h1);
  }
  // errors are fitted against the level; h halves per level
  suite.rate_l2 = -fitted_log2_rate(lv, el2);
  suite.rate_h1 = -fitted_log2_rate(lv, eh1);
  return suite;
}

CsvTable fem_suite_table(const FemSuite& suite) {
  CsvTable t;
  t.header = {"level", "dofs", "h_max", "err_l2", "err_h1", "eta", "eta_l2", "eff_h1", "eff_l2"};
  for (const auto& r : suite.rows)
    t.rows.push_back({std::to_string(r.level), std::to_string(r.dofs), format_double(r.h_max), format_double(r.err_l2),
                      format_double(r.err_h1), format_double(r.eta), format_double(r.eta_l2), format_double(r.eff_h1),
                      format_double(r.eff_l2)});
  return t;
}

double smooth_product_integrand(std::span<const double> y) {
  double a = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) a += y[j] / static_cast<double>((j + 1) * (j + 1));
  return std::exp(a);
}

double smooth_product_exact(int s) {
  double v = 1.0;
  for (int j = 1; j <= s; ++j) {
    const double c = 1.0 / (j * j);
    v *= std::sinh(c / 2.0) / (c / 2.0);
  }
  return v;
}

QmcSuite qmc_convergence_suite(int s, int m_min, int m_max, int m_ref) {
  if (!(1 <= m_min && m_min < m_max && m_max < m_ref)) throw std::invalid_argument("qmc_convergence_suite: bad m range");
  SpodWeights w;
  w.alpha = 2;
  w.n = 0;
  for (int j = 1; j <= s; ++j) w.beta.push_back(1.0 / (j * j));
  LatticeRule rule(s, w);
  auto value_at = [&](int m) {
    rule.ensure(m);
    const auto pts = rule.points(m);
    const std::size_t n = std::size_t{1} << m;
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i)
      f[i] = smooth_product_integrand(std::span<const double>(pts).subspan(i * s, static_cast<std::size_t>(s)));
    return qmc_mean<double>(f, n);
  };
  QmcSuite suite;
  suite.m_ref = m_ref;
  suite.reference = value_at(m_ref);
  suite.exact = smooth_product_exact(s);
  double prev = value_at(m_min - 1);
  std::vector<double> ms, errs;
  for (int m = m_min; m <= m_max; ++m) {
    const double z = value_at(m);
    QmcSuiteRow r;
    r.m = m;
    r.value = z;
    r.err_ref = std::abs(suite.reference - z);
    r.diff = std::abs(z - prev);
    r.exactness = (suite.reference - z) / (z - prev);
    suite.rows.push_back(r);
    ms.push_back(m);
    errs.push_back(r.err_ref);
    prev = z;
  }
  suite.rate = fitted_log2_rate(ms, errs);
  return suite;
}

CsvTable qmc_suite_table(const QmcSuite& suite) {
  CsvTable t;
  t.header = {"m", "value", "err_ref", "diff", "exactness"};
  for (const auto& r : suite.rows)
    t.rows.push_back({std::to_string(r.m), format_double(r.value), format_double(r.err_ref), format_double(r.diff),
                      format_double(r.exactness)});
  return t;
}

}  // namespace qmcfem
