#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "qmcfem/errors.hpp"
#include "qmcfem/qmc.hpp"
#include "qmcfem/suites.hpp"

using namespace qmcfem;

namespace {

// Carry-less product, independent of the library's modular arithmetic.
std::uint64_t clmul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  for (int i = 0; i < 32; ++i)
    if ((b >> i) & 1u) r ^= a << i;
  return r;
}

SpodWeights weights(int s, int alpha, int n, double c = 1.0) {
  SpodWeights w;
  w.alpha = alpha;
  w.n = n;
  w.c = c;
  for (int j = 1; j <= s; ++j) w.beta.push_back(0.9 / (j * j));
  return w;
}

}  // namespace

TEST_CASE("GF(2) polynomial arithmetic") {
  using namespace gf2;
  CHECK(degree(0) == -1);
  CHECK(degree(1) == 0);
  CHECK(degree(0b1011) == 3);
  std::mt19937_64 gen(3);
  const Poly m = 0b1000011;  // x^6 + x + 1
  for (int k = 0; k < 200; ++k) {
    const Poly a = gen() & 0xffff, b = (gen() & 0xff) | 1;
    CHECK((clmul(div(a, b), b) ^ mod(a, b)) == a);
    CHECK(degree(mod(a, b)) < degree(b));
    const Poly x = gen() & 0x3f, y = gen() & 0x3f;
    CHECK(mul_mod(x, y, m) == mod(clmul(x, y), m));
    CHECK(mul_mod(x, y, m) == mul_mod(y, x, m));
  }
  CHECK(gcd(clmul(0b111, 0b1011), clmul(0b111, 0b1101)) == 0b111);
  CHECK(is_irreducible(0b111));
  CHECK_FALSE(is_irreducible(0b101));  // (x + 1)^2
  CHECK(is_irreducible(0b11111));      // x^4 + x^3 + x^2 + x + 1
  CHECK_FALSE(is_primitive(0b11111));  // its roots have order 5
  CHECK(is_primitive(0b10011));        // x^4 + x + 1
}

TEST_CASE("modulus table holds primitive polynomials of every degree") {
  for (int m = 1; m <= kMaxLatticeDegree; ++m) {
    const gf2::Poly p = lattice_modulus(m);
    CHECK(gf2::degree(p) == m);
    CHECK(gf2::is_primitive(p));
  }
  CHECK_THROWS_AS(lattice_modulus(kMaxLatticeDegree + 1), std::out_of_range);
}

TEST_CASE("SPOD weights match closed forms on small sets") {
  SpodWeights w = weights(3, 2, 0, 0.7);
  const double b0 = w.beta[0], b1 = w.beta[1];
  const std::vector<int> u0{0};
  // nu = 1: 1! c b; nu = 2: 2! c b^2
  CHECK(spod_gamma(w, u0) == doctest::Approx(0.7 * b0 + 2.0 * 0.7 * b0 * b0));
  w.alpha = 1;
  const std::vector<int> u01{0, 1};
  CHECK(spod_gamma(w, u01) == doctest::Approx(2.0 * 0.49 * b0 * b1));
  w.n = 2;
  CHECK(spod_gamma(w, u0) == doctest::Approx(6.0 * 0.7 * b0));
  const std::vector<int> empty;
  CHECK(spod_gamma(w, empty) == doctest::Approx(2.0));  // (0 + n)! with n = 2
}

TEST_CASE("fast CBC agrees with the direct construction") {
  for (int n : {0, 2}) {
    const SpodWeights w = weights(5, 2, n);
    for (int m = 1; m <= 7; ++m) {
      const LatticeLevel fast = cbc_construct(5, m, w);
      const LatticeLevel direct = cbc_construct_direct(5, m, w);
      CHECK(fast.modulus == direct.modulus);
      CHECK(fast.q == direct.q);
      CHECK(cbc_criterion(fast, w) == doctest::Approx(cbc_criterion(direct, w)).epsilon(1e-10));
    }
  }
}

TEST_CASE("CBC generators beat random admissible generators") {
  const SpodWeights w = weights(6, 2, 2);
  const int m = 8;
  const LatticeLevel best = cbc_construct(6, m, w);
  const double e = cbc_criterion(best, w);
  std::mt19937_64 gen(11);
  for (int k = 0; k < 20; ++k) {
    LatticeLevel r = best;
    for (auto& q : r.q) q = (gen() % ((1u << m) - 1)) + 1;
    CHECK(e <= cbc_criterion(r, w) * (1.0 + 1e-12));
  }
}

TEST_CASE("Walsh kernel quadrature error is 4^-m / 6") {
  for (int m = 1; m <= 12; ++m) {
    double sum = 0.0;
    for (std::uint64_t k = 0; k < (std::uint64_t{1} << m); ++k) sum += walsh_kernel(k, m);
    CHECK(sum / std::ldexp(1.0, m) == doctest::Approx(1.0 / (6.0 * std::pow(4.0, m))).epsilon(1e-12));
  }
}

TEST_CASE("each coordinate of a level is a permutation of the dyadic grid") {
  LatticeRule rule(4, weights(4, 2, 2));
  for (int m : {0, 1, 5, 9}) {
    const LatticeLevel& lv = rule.ensure(m);
    const std::size_t N = lv.size();
    std::vector<std::set<std::uint64_t>> seen(4);
    for (std::uint64_t n = 0; n < N; ++n) {
      const auto d = lattice_point_digits(lv, n);
      for (int j = 0; j < 4; ++j) seen[j].insert(d[j]);
    }
    for (const auto& s : seen) {
      CHECK(s.size() == N);
      CHECK(*s.rbegin() == N - 1);
    }
    const std::vector<double> p = rule.points(m);
    CHECK(p.size() == N * 4);
    for (double v : p) {
      CHECK(v >= -0.5);
      CHECK(v < 0.5);
    }
  }
}

TEST_CASE("rules integrate one-dimensional dyadic step functions exactly") {
  LatticeRule rule(3, weights(3, 2, 2));
  const int m = 6;
  rule.ensure(m);
  const auto p = rule.points(m);
  const std::size_t N = std::size_t{1} << m;
  std::vector<double> f(N);
  for (int j = 0; j < 3; ++j) {
    double exact = 0.0;
    for (std::size_t k = 0; k < N; ++k) exact += std::sin(static_cast<double>(k * k));
    exact /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
      const auto cell = static_cast<std::size_t>(std::floor((p[i * 3 + j] + 0.5) * static_cast<double>(N)));
      f[i] = std::sin(static_cast<double>(cell * cell));
    }
    CHECK(qmc_mean<double>(f, N) == doctest::Approx(exact).epsilon(1e-13));
  }
}

TEST_CASE("qmc_mean checks the point count and is order-deterministic") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(qmc_mean<double>(v, 4) == 2.5);
  CHECK_THROWS_AS(qmc_mean<double>(v, 8), std::invalid_argument);
  const std::vector<double> empty;
  CHECK_THROWS(qmc_mean<double>(empty, 0));
  std::vector<double> big(1000);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = 1.0 / (1.0 + static_cast<double>(i));
  const double a = qmc_mean<double>(big, big.size());
  const double b = qmc_mean<double>(big, big.size());
  CHECK(a == b);
  CHECK(successive_difference(3.0, 1.0) == 2.0);
}

TEST_CASE("lattice files round-trip and malformed files are rejected") {
  const auto dir = std::filesystem::temp_directory_path();
  LatticeRule rule(5, weights(5, 2, 2));
  for (int m = 0; m <= 8; ++m) rule.ensure(m);
  write_lattice_file(dir / "qmcfem_lattice.txt", rule);
  LatticeRule back(5, weights(5, 2, 2));
  read_lattice_file(dir / "qmcfem_lattice.txt", back);
  CHECK(back.m_max() == 8);
  for (int m = 0; m <= 8; ++m) {
    CHECK(back.level(m).q == rule.level(m).q);
    CHECK(back.level(m).modulus == rule.level(m).modulus);
  }
  LatticeRule wrong_dim(4, weights(4, 2, 2));
  CHECK_THROWS_AS(read_lattice_file(dir / "qmcfem_lattice.txt", wrong_dim), ConfigError);
  {
    std::ofstream out(dir / "qmcfem_lattice_bad.txt");
    out << "3 0x1 zz 0x3 0x5 0x7\n";
  }
  CHECK_THROWS_AS(read_lattice_file(dir / "qmcfem_lattice_bad.txt", back), ConfigError);
  {
    // q = modulus has gcd != 1
    std::ofstream out(dir / "qmcfem_lattice_bad.txt");
    out << "3 0x0 0x1 0x3 0x5 0x7\n";
  }
  CHECK_THROWS_AS(read_lattice_file(dir / "qmcfem_lattice_bad.txt", back), ConfigError);
  std::filesystem::remove(dir / "qmcfem_lattice.txt");
  std::filesystem::remove(dir / "qmcfem_lattice_bad.txt");
}

TEST_CASE("smooth product integrand: first-order decay and successive-difference exactness") {
  const QmcSuite s = qmc_convergence_suite(8, 6, 12, 15);
  CHECK(s.rate <= -0.8);
  CHECK(s.reference == doctest::Approx(s.exact).epsilon(1e-4));
  for (std::size_t i = s.rows.size() - 2; i < s.rows.size(); ++i) {
    CHECK(s.rows[i].exactness >= 0.5);
    CHECK(s.rows[i].exactness <= 2.0);
  }
  CHECK(smooth_product_exact(1) == doctest::Approx(2.0 * std::sinh(0.5)));
}
