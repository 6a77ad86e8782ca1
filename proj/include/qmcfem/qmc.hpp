#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace qmcfem {

/// Polynomials over GF(2) stored as bit masks (bit i is the coefficient of x^i).
namespace gf2 {

using Poly = std::uint64_t;

/// Degree, -1 for the zero polynomial.
int degree(Poly p);
Poly mod(Poly a, Poly m);
/// Quotient of a by m (m nonzero).
Poly div(Poly a, Poly m);
/// a * b mod m; requires deg a, deg b < deg m <= 31.
Poly mul_mod(Poly a, Poly b, Poly m);
Poly gcd(Poly a, Poly b);
bool is_irreducible(Poly p);
/// Irreducible and x generates the multiplicative group of GF(2)[x]/p.
bool is_primitive(Poly p);

}  // namespace gf2

inline constexpr int kMaxLatticeDegree = 30;

/// Primitive modulus of degree m, 1 <= m <= kMaxLatticeDegree. Throws
/// std::out_of_range beyond the table.
gf2::Poly lattice_modulus(int m);

/// gamma_u = sum over nu in {1..alpha}^|u| of (|nu| + n)! prod_{j in u} c beta_j^{nu_j}.
struct SpodWeights {
  int alpha = 3;
  int n = 0;
  double c = 1.0;
  std::vector<double> beta;

  void validate() const;
};

/// log gamma_u for a set of 0-based coordinate indices.
double log_spod_gamma(const SpodWeights& w, std::span<const int> u);
/// gamma_u; +inf if it overflows a double.
double spod_gamma(const SpodWeights& w, std::span<const int> u);

/// Generating data of one level: modulus of degree m and one generator per
/// coordinate with deg q_j < m and gcd(q_j, modulus) = 1. m = 0 is the
/// one-point rule.
struct LatticeLevel {
  int m = 0;
  gf2::Poly modulus = 1;
  std::vector<gf2::Poly> q;

  std::size_t size() const { return std::size_t{1} << m; }
};

/// Component-by-component construction minimizing the first-order Walsh
/// worst-case error with SPOD weights (beta must hold at least s entries).
/// Uses the cyclic structure of the primitive modulus and an FFT for each
/// coordinate scan.
LatticeLevel cbc_construct(int s, int m, const SpodWeights& weights);

/// Same criterion evaluated candidate by candidate in O(b^{2m}) per
/// coordinate. Used to cross-check cbc_construct.
LatticeLevel cbc_construct_direct(int s, int m, const SpodWeights& weights);

/// Worst-case error criterion of a given level (sum over nonempty u of
/// gamma_u times the mean of prod_{j in u} omega(x_j)).
double cbc_criterion(const LatticeLevel& level, const SpodWeights& weights);

/// Walsh kernel of the criterion at x = k / 2^m.
double walsh_kernel(std::uint64_t k, int m);

/// Integer digit readout of the point for index n: 2^m times the
/// coordinate in [0, 1) before shifting, one entry per coordinate.
std::vector<std::uint64_t> lattice_point_digits(const LatticeLevel& level, std::uint64_t n);

/// All 2^m points in [-1/2, 1/2)^s, row-major (point k occupies
/// [k*s, (k+1)*s)), ordered by index k.
std::vector<double> lattice_points(const LatticeLevel& level);

/// Family of levels for one dimension and weight set; levels are
/// constructed on demand and independently of each other.
class LatticeRule {
 public:
  LatticeRule(int s, SpodWeights weights);

  int dimension() const { return s_; }
  int base() const { return 2; }
  const SpodWeights& weights() const { return weights_; }
  /// Constructs level m if missing. Not safe to call concurrently.
  const LatticeLevel& ensure(int m);
  bool has_level(int m) const { return levels_.count(m) != 0; }
  const LatticeLevel& level(int m) const;
  /// Largest constructed m, -1 if none.
  int m_max() const { return levels_.empty() ? -1 : levels_.rbegin()->first; }
  std::vector<double> points(int m) const { return lattice_points(level(m)); }
  /// Adds externally supplied generating data after validating it.
  void insert(LatticeLevel level);
  const std::map<int, LatticeLevel>& levels() const { return levels_; }

 private:
  int s_;
  SpodWeights weights_;
  std::map<int, LatticeLevel> levels_;
};

/// Text format: '#' comment header listing the modulus table, then one line
/// per level "m q_1 ... q_s" with hex bit masks.
void write_lattice_file(const std::filesystem::path& path, const LatticeRule& rule);
/// Reads levels into a rule of matching dimension. Throws ConfigError on
/// malformed input.
void read_lattice_file(const std::filesystem::path& path, LatticeRule& rule);

namespace detail {

template <class T>
T pairwise_sum(std::span<const T> v) {
  if (v.size() <= 8) {
    T acc = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) acc = acc + v[i];
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace detail

/// Mean over a full point set with deterministic pairwise summation.
template <class T>
T qmc_mean(std::span<const T> values, std::size_t expected_count) {
  if (values.size() != expected_count || values.empty())
    throw std::invalid_argument("qmc_mean: got " + std::to_string(values.size()) + " values, expected " +
                                std::to_string(expected_count));
  if constexpr (std::is_arithmetic_v<T>) {
    return detail::pairwise_sum(values) / static_cast<double>(values.size());
  } else {
    T s = detail::pairwise_sum(values);
    return T(s / static_cast<double>(values.size()));
  }
}

template <class T>
T successive_difference(const T& z_m, const T& z_m1) {
  return T(z_m - z_m1);
}

}  // namespace qmcfem
