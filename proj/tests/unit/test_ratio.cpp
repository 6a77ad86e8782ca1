#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Core>

#include "qmcfem/ratio.hpp"

using namespace qmcfem;

TEST_CASE("ratio estimator on hand-computed values") {
  // (Z_{m-1} Z'_m - Z_m Z'_{m-1}) / ((2 Z_m - Z_{m-1}) Z_m)
  const auto e = qmc_ratio_estimator(0.5, 0.4, 0.3, 0.2);
  REQUIRE(e.valid);
  CHECK(e.value == doctest::Approx((0.4 * 0.3 - 0.5 * 0.2) / ((1.0 - 0.4) * 0.5)));
  // identical levels give no correction
  CHECK(qmc_ratio_estimator(0.7, 0.7, 0.2, 0.2).value == 0.0);
}

TEST_CASE("ratio estimator equals the extrapolated ratio difference") {
  // With Z = 2 Z_m - Z_{m-1} and Z' likewise, Z'/Z - Z'_m/Z_m equals E.
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int k = 0; k < 100; ++k) {
    const double z = u(gen), z1 = u(gen) * z, zp = u(gen), zp1 = u(gen);
    const auto e = qmc_ratio_estimator(z, z1, zp, zp1);
    REQUIRE(e.valid);
    const double extrap = (2 * zp - zp1) / (2 * z - z1) - zp / z;
    CHECK(e.value == doctest::Approx(extrap).epsilon(1e-10));
  }
}

TEST_CASE("ratio estimator is invariant under a common rescaling of Z and Z'") {
  Eigen::VectorXd zp(3), zp1(3);
  zp << 0.1, -0.2, 0.3;
  zp1 << 0.15, -0.1, 0.25;
  const auto a = qmc_ratio_estimator<Eigen::VectorXd>(0.8, 0.6, zp, zp1);
  const double c = std::exp(-40.0);
  const auto b = qmc_ratio_estimator<Eigen::VectorXd>(0.8 * c, 0.6 * c, Eigen::VectorXd(zp * c), Eigen::VectorXd(zp1 * c));
  REQUIRE(a.valid);
  REQUIRE(b.valid);
  CHECK((a.value - b.value).norm() <= 1e-12 * a.value.norm());
}

TEST_CASE("ratio estimator guards") {
  CHECK_FALSE(qmc_ratio_estimator(0.0, 0.1, 0.1, 0.1).valid);
  CHECK_FALSE(qmc_ratio_estimator(-1.0, -3.0, 0.1, 0.1).valid);
  // b Z_m - Z_{m-1} <= 0
  CHECK_FALSE(qmc_ratio_estimator(0.5, 1.0, 0.1, 0.1).valid);
  CHECK(qmc_ratio_estimator(0.5, 0.99, 0.1, 0.1).valid);
}

TEST_CASE("FEM ratio bound formula and validity") {
  const auto r = fem_ratio_bound(0.5, 0.3, 0.01, 0.02, 1.0);
  REQUIRE(r.valid);
  CHECK(r.value == doctest::Approx((0.5 * 0.02 + 0.3 * 0.01) / (0.25 - 0.01 * 0.5)));
  CHECK_FALSE(fem_ratio_bound(0.5, 0.3, 0.5, 0.02).valid);
  CHECK_FALSE(fem_ratio_bound(0.5, 0.3, 0.6, 0.02).valid);
  CHECK(std::isnan(fem_ratio_bound(0.5, 0.3, 0.6, 0.02).value));
  CHECK_THROWS(fem_ratio_bound(0.5, 0.3, -0.1, 0.02));
  // exact estimates give a zero bound
  CHECK(fem_ratio_bound(0.5, 0.3, 0.0, 0.0).value == 0.0);
}

TEST_CASE("FEM ratio bound dominates the worst-case perturbed ratio") {
  // |Z'_h/Z_h - Z'/Z| over all |Z - Z_h| <= zeta, |Z' - Z'_h| <= zeta'.
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const double z = 0.2 + u(gen), zp = u(gen) - 0.5, zeta = 0.1 * u(gen) * z, zetap = 0.1 * u(gen);
    const auto b = fem_ratio_bound(z, std::abs(zp), zeta, zetap);
    REQUIRE(b.valid);
    for (int sz : {-1, 1})
      for (int sp : {-1, 1}) {
        const double diff = std::abs((zp + sp * zetap) / (z + sz * zeta) - zp / z);
        CHECK(diff <= b.value * (1 + 1e-12));
      }
  }
}

TEST_CASE("combined estimator propagates validity") {
  const auto ok = combined_estimator({0.1, true}, {0.2, true});
  CHECK(ok.valid());
  CHECK(ok.est == doctest::Approx(0.3));
  const auto bad = combined_estimator({0.1, true}, {0.2, false});
  CHECK_FALSE(bad.valid());
  CHECK(std::isnan(bad.est));
  CHECK(std::isnan(bad.fem_term));
  CHECK(bad.qmc_term == 0.1);
}

TEST_CASE("zeta aggregation rejects negative contributions") {
  const std::vector<double> v{0.1, 0.3};
  CHECK(aggregate_zeta(v, 2) == doctest::Approx(0.2));
  const std::vector<double> neg{0.1, -0.3};
  CHECK_THROWS(aggregate_zeta(neg, 2));
}
