#include <doctest.h>

#include <cmath>
#include <numeric>

#include "qmcfem/coefficient.hpp"
#include "qmcfem/errors.hpp"

using namespace qmcfem;

TEST_CASE("frequency pairs are ordered by k1^2 + k2^2 with lexicographic ties") {
  const auto p = ordered_frequency_pairs(8);
  const std::vector<std::pair<int, int>> expected{{1, 1}, {1, 2}, {2, 1}, {2, 2}, {1, 3}, {3, 1}, {2, 3}, {3, 2}};
  CHECK(p == expected);
  const auto q = ordered_frequency_pairs(40);
  for (std::size_t i = 1; i < q.size(); ++i) {
    const int a = q[i - 1].first * q[i - 1].first + q[i - 1].second * q[i - 1].second;
    const int b = q[i].first * q[i].first + q[i].second * q[i].second;
    CHECK((a < b || (a == b && q[i - 1] < q[i])));
  }
}

TEST_CASE("sine family b_j equals amplitude over kappa and sums below 2") {
  const AffineCoefficient a = sine_modes_16();
  CHECK(a.dimension() == 16);
  CHECK(a.kappa() == 0.25);
  const auto pairs = ordered_frequency_pairs(16);
  double sum = 0.0;
  for (int j = 0; j < 16; ++j) {
    const double k2 = pairs[j].first * pairs[j].first + pairs[j].second * pairs[j].second;
    CHECK(a.b()[j] == doctest::Approx(1.0 / (k2 * k2) / 0.25));
    CHECK(a.b_prime()[j] >= a.b()[j] * 0.25);
    sum += a.b()[j];
  }
  CHECK(sum < 2.0);
  CHECK(a.psi0_essinf() == doctest::Approx(0.5));
}

TEST_CASE("evaluate matches the affine combination and a finite-difference gradient") {
  const AffineCoefficient a = sine_modes(6);
  const std::vector<double> y{0.3, -0.2, 0.5, -0.5, 0.1, 0.0};
  const Vec2 x{0.31, 0.77};
  std::vector<CoefficientSample> modes(7);
  a.evaluate_modes(x, modes);
  const CoefficientSample c = combine_modes(modes, y);
  const CoefficientSample e = a.evaluate(x, y);
  CHECK(e.value == doctest::Approx(c.value));
  const double h = 1e-6;
  const double gx = (a.evaluate({x.x + h, x.y}, y).value - a.evaluate({x.x - h, x.y}, y).value) / (2 * h);
  const double gy = (a.evaluate({x.x, x.y + h}, y).value - a.evaluate({x.x, x.y - h}, y).value) / (2 * h);
  CHECK(e.grad.x == doctest::Approx(gx).epsilon(1e-7));
  CHECK(e.grad.y == doctest::Approx(gy).epsilon(1e-7));
  CHECK(e.value >= a.kappa());
}

TEST_CASE("parameters outside the cube are rejected") {
  const AffineCoefficient a = sine_modes(2);
  const std::vector<double> ok{0.5, -0.5};
  const std::vector<double> bad{0.5, -0.51};
  CHECK_NOTHROW(a.check_parameter(ok));
  CHECK_THROWS(a.check_parameter(bad));
  const std::vector<double> wrong_size{0.1};
  CHECK_THROWS(a.check_parameter(wrong_size));
}

TEST_CASE("uniform ellipticity holds over random parameters") {
  const AffineCoefficient a = sine_modes_16();
  std::uint64_t state = 12345;
  auto next = [&] {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  };
  for (int k = 0; k < 200; ++k) {
    std::vector<double> y(16);
    for (double& v : y) v = next();
    const Vec2 x{next() + 0.5, next() + 0.5};
    CHECK(a.evaluate(x, y).value > 0.5 - 0.5 * std::accumulate(a.b().begin(), a.b().end(), 0.0) * a.kappa() - 1e-12);
  }
}

TEST_CASE("box modes and invalid coefficients") {
  AffineCoefficient a(1.0, {}, {BoxMode{{0.25, 0.25, 0.75, 0.75}, 0.5}}, 0.5);
  const std::vector<double> y{0.5};
  CHECK(a.evaluate({0.5, 0.5}, y).value == doctest::Approx(1.25));
  CHECK(a.evaluate({0.1, 0.5}, y).value == doctest::Approx(1.0));
  CHECK(a.b()[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(AffineCoefficient(0.5, {}, {SineMode{1, 1, 0.1}}, 0.0), ConfigError);
  // sum b_j = 2.4 violates the summability bound
  CHECK_THROWS_AS(AffineCoefficient(1.0, {}, {SineMode{1, 1, 0.6}, SineMode{1, 2, 0.6}}, 0.5), ConfigError);
}
