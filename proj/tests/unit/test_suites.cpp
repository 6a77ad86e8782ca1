#include <doctest.h>

#include <cmath>

#include "qmcfem/suites.hpp"

using namespace qmcfem;

TEST_CASE("fitted rate recovers an exact power law") {
  const std::vector<double> x{0, 1, 2, 3};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(2.0, -1.5 * v));
  CHECK(fitted_log2_rate(x, y) == doctest::Approx(-1.5));
  const std::vector<double> one{1.0};
  CHECK_THROWS(fitted_log2_rate(one, one));
  const std::vector<double> neg{1.0, -1.0};
  const std::vector<double> x2{0, 1};
  CHECK_THROWS(fitted_log2_rate(x2, neg));
}

TEST_CASE("manufactured source is consistent with the exact solution") {
  const ManufacturedProblem p = manufactured_problem();
  // -div(a grad u) at the centre, by central differences of a grad u
  const Vec2 x{0.37, 0.61};
  const double h = 1e-4;
  auto flux = [&](Vec2 z) {
    const double a = p.coefficient->evaluate(z, p.y).value;
    return a * p.grad_u(z);
  };
  const double div = (flux({x.x + h, x.y}).x - flux({x.x - h, x.y}).x + flux({x.x, x.y + h}).y - flux({x.x, x.y - h}).y) / (2 * h);
  const Triangle tri{0, 1, 2};
  CHECK(p.f.at(x, tri, {1.0, 0.0, 0.0}) == doctest::Approx(-div).epsilon(1e-6));
}

TEST_CASE("suite tables carry the documented headers") {
  const FemSuite f = fem_convergence_suite(1);
  const CsvTable tf = fem_suite_table(f);
  CHECK(tf.header.front() == "level");
  CHECK(tf.rows.size() == 2);
  const QmcSuite q = qmc_convergence_suite(4, 2, 5, 8);
  const CsvTable tq = qmc_suite_table(q);
  CHECK(tq.header == std::vector<std::string>{"m", "value", "err_ref", "diff", "exactness"});
  CHECK(tq.rows.size() == 4);
  CHECK_THROWS(qmc_convergence_suite(4, 5, 5, 8));
}
