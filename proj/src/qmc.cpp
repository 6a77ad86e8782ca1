#include "qmcfem/qmc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "qmcfem/errors.hpp"

namespace qmcfem {

// ---------------------------------------------------------------- GF(2)

namespace gf2 {

int degree(Poly p) { return p == 0 ? -1 : 63 - std::countl_zero(p); }

Poly mod(Poly a, Poly m) {
  const int dm = degree(m);
  if (dm < 0) throw std::domain_error("gf2::mod by zero");
  for (int da = degree(a); da >= dm; da = degree(a)) a ^= m << (da - dm);
  return a;
}

Poly div(Poly a, Poly m) {
  const int dm = degree(m);
  if (dm < 0) throw std::domain_error("gf2::div by zero");
  Poly q = 0;
  for (int da = degree(a); da >= dm; da = degree(a)) {
    q |= Poly{1} << (da - dm);
    a ^= m << (da - dm);
  }
  return q;
}

Poly mul_mod(Poly a, Poly b, Poly m) {
  Poly r = 0;
  while (b) {
    if (b & 1) r ^= a;
    b >>= 1;
    a <<= 1;
  }
  return mod(r, m);
}

Poly gcd(Poly a, Poly b) {
  while (b) {
    const Poly r = mod(a, b);
    a = b;
    b = r;
  }
  return a;
}

namespace {

Poly pow_mod(Poly a, std::uint64_t e, Poly m) {
  Poly r = mod(1, m);
  a = mod(a, m);
  while (e) {
    if (e & 1) r = mul_mod(r, a, m);
    a = mul_mod(a, a, m);
    e >>= 1;
  }
  return r;
}

// x^(2^k) mod m by repeated squaring.
Poly x_pow2k(int k, Poly m) {
  Poly r = mod(2, m);
  for (int i = 0; i < k; ++i) r = mul_mod(r, r, m);
  return r;
}

std::vector<std::uint64_t> prime_factors(std::uint64_t n) {
  std::vector<std::uint64_t> f;
  for (std::uint64_t p = 2; p * p <= n; ++p)
    if (n % p == 0) {
      f.push_back(p);
      while (n % p == 0) n /= p;
    }
  if (n > 1) f.push_back(n);
  return f;
}

}  // namespace

bool is_irreducible(Poly p) {
  const int d = degree(p);
  if (d < 1 || d > 31) return false;
  if (d == 1) return true;
  // Rabin: x^(2^d) = x mod p and gcd(x^(2^(d/r)) - x, p) = 1 for primes r | d.
  if (x_pow2k(d, p) != mod(2, p)) return false;
  for (auto r : prime_factors(static_cast<std::uint64_t>(d)))
    if (gcd(p, x_pow2k(d / static_cast<int>(r), p) ^ mod(2, p)) != 1) return false;
  return true;
}

bool is_primitive(Poly p) {
  if (!is_irreducible(p)) return false;
  const int d = degree(p);
  const std::uint64_t order = (std::uint64_t{1} << d) - 1;
  if (pow_mod(2, order, p) != 1) return false;
  for (auto r : prime_factors(order))
    if (r != order && pow_mod(2, order / r, p) == 1) return false;
  return true;
}

}  // namespace gf2

namespace {

constexpr std::array<gf2::Poly, kMaxLatticeDegree> kModuli{
    0x3,       0x7,       0xb,       0x13,       0x25,       0x43,       0x83,       0x11d,
    0x211,     0x409,     0x805,     0x1053,     0x201b,     0x402b,     0x8003,     0x1002d,
    0x20009,   0x40027,   0x80027,   0x100009,   0x200005,   0x400003,   0x800021,   0x100001b,
    0x2000009, 0x4000047, 0x8000027, 0x10000009, 0x20000005, 0x40000053};

}  // namespace

gf2::Poly lattice_modulus(int m) {
  if (m < 1 || m > kMaxLatticeDegree)
    throw std::out_of_range("no lattice modulus of degree " + std::to_string(m));
  return kModuli[m - 1];
}

// ---------------------------------------------------------------- SPOD

void SpodWeights::validate() const {
  if (alpha < 1) throw ConfigError("SPOD alpha must be >= 1");
  if (n < 0) throw ConfigError("SPOD factorial shift must be >= 0");
  if (!(c > 0.0)) throw ConfigError("SPOD scale c must be positive");
  for (double b : beta)
    if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("SPOD beta must be positive");
}

namespace {

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

}  // namespace

double log_spod_gamma(const SpodWeights& w, std::span<const int> u) {
  w.validate();
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  // logP[l] = log sum over nu with |nu| = l of prod c beta_j^{nu_j}
  std::vector<double> logP{0.0};
  for (int j : u) {
    if (j < 0 || j >= static_cast<int>(w.beta.size())) throw std::out_of_range("SPOD coordinate out of range");
    const double lb = std::log(w.beta[j]), lc = std::log(w.c);
    std::vector<double> next(logP.size() + w.alpha, ninf);
    for (std::size_t l = 0; l < logP.size(); ++l) {
      if (logP[l] == ninf) continue;
      for (int k = 1; k <= w.alpha; ++k) next[l + k] = log_add(next[l + k], logP[l] + lc + k * lb);
    }
    logP = std::move(next);
  }
  double r = ninf;
  for (std::size_t l = 0; l < logP.size(); ++l)
    if (logP[l] != ninf) r = log_add(r, logP[l] + std::lgamma(static_cast<double>(l + w.n) + 1.0));
  return r;
}

double spod_gamma(const SpodWeights& w, std::span<const int> u) { return std::exp(log_spod_gamma(w, u)); }

// ---------------------------------------------------------------- points

double walsh_kernel(std::uint64_t k, int m) {
  if (k == 0) return 1.0 / 6.0;
  return 1.0 / 6.0 - std::ldexp(1.0, static_cast<int>(std::bit_width(k)) - 2 - m);
}

namespace {

// 2^m times the coordinate of the residue r / p in [0, 1).
std::uint64_t readout(gf2::Poly r, gf2::Poly p, int m) { return gf2::div(r << m, p); }

// Columns of the generating matrix: digits of x^i q / p for i < m.
std::vector<std::uint64_t> generator_columns(gf2::Poly q, gf2::Poly p, int m) {
  std::vector<std::uint64_t> col(m);
  gf2::Poly r = gf2::mod(q, p);
  for (int i = 0; i < m; ++i) {
    col[i] = readout(r, p, m);
    r = gf2::mul_mod(r, 2, p);
  }
  return col;
}

// Digits of all N points in one coordinate, index order.
void coordinate_digits(gf2::Poly q, gf2::Poly p, int m, std::vector<std::uint64_t>& out) {
  const std::size_t N = std::size_t{1} << m;
  out.resize(N);
  out[0] = 0;
  if (m == 0) return;
  const auto col = generator_columns(q, p, m);
  for (std::size_t n = 1; n < N; ++n) out[n] = out[n & (n - 1)] ^ col[std::countr_zero(n)];
}

std::vector<double> falling_factorial_table(int max_a, int alpha) {
  // ff[a * (alpha+1) + k] = a! / (a-k)!
  std::vector<double> ff(static_cast<std::size_t>(max_a + 1) * (alpha + 1), 0.0);
  for (int a = 0; a <= max_a; ++a) {
    double v = 1.0;
    ff[a * (alpha + 1)] = 1.0;
    for (int k = 1; k <= alpha && k <= a; ++k) {
      v *= a - k + 1;
      ff[a * (alpha + 1) + k] = v;
    }
  }
  return ff;
}

// Per-point SPOD state R[n][l] = (l + shift)! U(l) where U(l) collects the
// weighted kernel products of all nu with |nu| = l over the coordinates so far.
struct SpodState {
  const SpodWeights& w;
  int s;
  std::size_t N;
  int width;  // alpha * s + 1
  std::vector<double> R;
  std::vector<double> ff;

  SpodState(const SpodWeights& weights, int dim, std::size_t points)
      : w(weights), s(dim), N(points), width(weights.alpha * dim + 1) {
    R.assign(N * width, 0.0);
    const double shift_fact = std::tgamma(w.n + 1.0);
    for (std::size_t n = 0; n < N; ++n) R[n * width] = shift_fact;
    ff = falling_factorial_table(width + w.alpha + w.n, w.alpha);
  }

  double falling(int a, int k) const { return ff[static_cast<std::size_t>(a) * (w.alpha + 1) + k]; }

  std::vector<double> powers(int d) const {
    std::vector<double> cb(w.alpha + 1, 0.0);
    for (int k = 1; k <= w.alpha; ++k) cb[k] = w.c * std::pow(w.beta[d], k);
    return cb;
  }

  // Score weight of each point for coordinate d (d coordinates already set).
  std::vector<double> score_weights(int d) const {
    const auto cb = powers(d);
    const int lmax = w.alpha * d;
    std::vector<double> V(N);
    for (std::size_t n = 0; n < N; ++n) {
      const double* r = &R[n * width];
      double v = 0.0;
      for (int k = 1; k <= w.alpha; ++k) {
        double inner = 0.0;
        for (int l = 0; l <= lmax; ++l) inner += falling(l + k + w.n, k) * r[l];
        v += cb[k] * inner;
      }
      V[n] = v;
    }
    return V;
  }

  void update(int d, const std::vector<std::uint64_t>& digits, int m) {
    const auto cb = powers(d);
    const int lmax = w.alpha * (d + 1);
    for (std::size_t n = 0; n < N; ++n) {
      const double om = walsh_kernel(digits[n], m);
      double* r = &R[n * width];
      for (int l = lmax; l >= 1; --l) {
        double acc = 0.0;
        for (int k = 1; k <= std::min(w.alpha, l); ++k) acc += cb[k] * falling(l + w.n, k) * r[l - k];
        r[l] += om * acc;
      }
    }
  }

  double criterion() const {
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (int l = 0; l < width; ++l) total += R[n * width + l];
    return total / static_cast<double>(N) - std::tgamma(w.n + 1.0);
  }
};

void check_cbc_args(int s, int m, const SpodWeights& w) {
  if (s < 1) throw std::invalid_argument("lattice dimension must be >= 1");
  if (m < 0) throw std::invalid_argument("lattice level must be >= 0");
  if (m > kMaxLatticeDegree) throw std::out_of_range("lattice level beyond the modulus table");
  if (static_cast<int>(w.beta.size()) < s) throw std::invalid_argument("SPOD beta shorter than dimension");
  w.validate();
}

// Smallest polynomial among candidates whose score is within a relative
// 1e-12 of the minimum.
gf2::Poly pick_candidate(const std::vector<double>& score, const std::vector<gf2::Poly>& cand) {
  double best = std::numeric_limits<double>::infinity(), scale = 0.0;
  for (double v : score) {
    best = std::min(best, v);
    scale = std::max(scale, std::abs(v));
  }
  const double tol = 1e-12 * scale;
  gf2::Poly chosen = 0;
  for (std::size_t i = 0; i < score.size(); ++i)
    if (score[i] <= best + tol && (chosen == 0 || cand[i] < chosen)) chosen = cand[i];
  return chosen;
}

std::mutex g_fftw_mutex;

// corr[b] = sum_a v[a] w[(a + b) mod L]
std::vector<double> cyclic_correlation(const std::vector<double>& v, const std::vector<double>& w) {
  const int L = static_cast<int>(v.size());
  const int H = L / 2 + 1;
  double* buf = fftw_alloc_real(L);
  fftw_complex* fv = fftw_alloc_complex(H);
  fftw_complex* fw = fftw_alloc_complex(H);
  fftw_plan pv, pw, pb;
  {
    std::lock_guard lock(g_fftw_mutex);
    pv = fftw_plan_dft_r2c_1d(L, buf, fv, FFTW_ESTIMATE);
    pw = fftw_plan_dft_r2c_1d(L, buf, fw, FFTW_ESTIMATE);
    pb = fftw_plan_dft_c2r_1d(L, fv, buf, FFTW_ESTIMATE);
  }
  std::copy(v.begin(), v.end(), buf);
  fftw_execute(pv);
  std::copy(w.begin(), w.end(), buf);
  fftw_execute(pw);
  for (int k = 0; k < H; ++k) {
    // conj(V) * W
    const double re = fv[k][0] * fw[k][0] + fv[k][1] * fw[k][1];
    const double im = fv[k][0] * fw[k][1] - fv[k][1] * fw[k][0];
    fv[k][0] = re;
    fv[k][1] = im;
  }
  fftw_execute(pb);
  std::vector<double> out(buf, buf + L);
  for (double& x : out) x /= L;
  {
    std::lock_guard lock(g_fftw_mutex);
    fftw_destroy_plan(pv);
    fftw_destroy_plan(pw);
    fftw_destroy_plan(pb);
  }
  fftw_free(buf);
  fftw_free(fv);
  fftw_free(fw);
  return out;
}

}  // namespace

LatticeLevel cbc_construct(int s, int m, const SpodWeights& weights) {
  check_cbc_args(s, m, weights);
  LatticeLevel level;
  level.m = m;
  if (m == 0) {
    level.q.assign(s, 0);
    return level;
  }
  const gf2::Poly p = lattice_modulus(m);
  level.modulus = p;
  const std::size_t N = std::size_t{1} << m;
  const std::size_t L = N - 1;

  // perm[a] = x^a mod p enumerates all nonzero residues since p is primitive.
  std::vector<gf2::Poly> perm(L);
  std::vector<double> wk(L);
  gf2::Poly r = 1;
  for (std::size_t a = 0; a < L; ++a) {
    perm[a] = r;
    wk[a] = walsh_kernel(readout(r, p, m), m);
    r = gf2::mul_mod(r, 2, p);
  }

  SpodState state(weights, s, N);
  std::vector<std::uint64_t> digits;
  std::vector<double> v(L);
  for (int d = 0; d < s; ++d) {
    const auto V = state.score_weights(d);
    std::vector<double> score;
    if (L == 1) {
      score = {V[1] * wk[0]};
    } else {
      for (std::size_t a = 0; a < L; ++a) v[a] = V[perm[a]];
      score = cyclic_correlation(v, wk);
    }
    // candidate q = x^b = perm[b]
    const gf2::Poly q = pick_candidate(score, perm);
    level.q.push_back(q);
    coordinate_digits(q, p, m, digits);
    state.update(d, digits, m);
  }
  return level;
}

LatticeLevel cbc_construct_direct(int s, int m, const SpodWeights& weights) {
  check_cbc_args(s, m, weights);
  LatticeLevel level;
  level.m = m;
  if (m == 0) {
    level.q.assign(s, 0);
    return level;
  }
  const gf2::Poly p = lattice_modulus(m);
  level.modulus = p;
  const std::size_t N = std::size_t{1} << m;
  std::vector<gf2::Poly> cand;
  for (gf2::Poly q = 1; q < N; ++q) cand.push_back(q);

  SpodState state(weights, s, N);
  std::vector<std::uint64_t> digits;
  for (int d = 0; d < s; ++d) {
    const auto V = state.score_weights(d);
    std::vector<double> score(cand.size());
    for (std::size_t i = 0; i < cand.size(); ++i) {
      double acc = 0.0;
      for (std::size_t n = 1; n < N; ++n) acc += walsh_kernel(readout(gf2::mul_mod(n, cand[i], p), p, m), m) * V[n];
      score[i] = acc;
    }
    const gf2::Poly q = pick_candidate(score, cand);
    level.q.push_back(q);
    coordinate_digits(q, p, m, digits);
    state.update(d, digits, m);
  }
  return level;
}

double cbc_criterion(const LatticeLevel& level, const SpodWeights& weights) {
  const int s = static_cast<int>(level.q.size());
  check_cbc_args(s, level.m, weights);
  SpodState state(weights, s, level.size());
  std::vector<std::uint64_t> digits;
  for (int d = 0; d < s; ++d) {
    coordinate_digits(level.q[d], level.modulus, level.m, digits);
    state.update(d, digits, level.m);
  }
  return state.criterion();
}

std::vector<std::uint64_t> lattice_point_digits(const LatticeLevel& level, std::uint64_t n) {
  if (n >= level.size()) throw std::out_of_range("lattice point index out of range");
  std::vector<std::uint64_t> out(level.q.size(), 0);
  if (level.m == 0) return out;
  for (std::size_t j = 0; j < level.q.size(); ++j)
    out[j] = readout(gf2::mul_mod(n, level.q[j], level.modulus), level.modulus, level.m);
  return out;
}

std::vector<double> lattice_points(const LatticeLevel& level) {
  const std::size_t N = level.size(), s = level.q.size();
  std::vector<double> pts(N * s);
  std::vector<std::uint64_t> digits;
  for (std::size_t j = 0; j < s; ++j) {
    coordinate_digits(level.q[j], level.modulus, level.m, digits);
    for (std::size_t n = 0; n < N; ++n) pts[n * s + j] = std::ldexp(static_cast<double>(digits[n]), -level.m) - 0.5;
  }
  return pts;
}

// ---------------------------------------------------------------- LatticeRule

LatticeRule::LatticeRule(int s, SpodWeights weights) : s_(s), weights_(std::move(weights)) {
  if (s < 1) throw std::invalid_argument("lattice dimension must be >= 1");
  if (static_cast<int>(weights_.beta.size()) < s) throw std::invalid_argument("SPOD beta shorter than dimension");
  weights_.validate();
}

const LatticeLevel& LatticeRule::ensure(int m) {
  auto it = levels_.find(m);
  if (it == levels_.end()) it = levels_.emplace(m, cbc_construct(s_, m, weights_)).first;
  return it->second;
}

const LatticeLevel& LatticeRule::level(int m) const {
  auto it = levels_.find(m);
  if (it == levels_.end()) throw std::out_of_range("lattice level " + std::to_string(m) + " not constructed");
  return it->second;
}

void LatticeRule::insert(LatticeLevel lv) {
  if (lv.m < 0 || lv.m > kMaxLatticeDegree) throw ConfigError("lattice level out of range");
  if (static_cast<int>(lv.q.size()) != s_) throw ConfigError("generating vector has wrong dimension");
  if (lv.m == 0) {
    lv.modulus = 1;
    for (auto q : lv.q)
      if (q != 0) throw ConfigError("level 0 generators must be zero");
  } else {
    lv.modulus = lattice_modulus(lv.m);
    for (auto q : lv.q)
      if (q == 0 || gf2::degree(q) >= lv.m || gf2::gcd(q, lv.modulus) != 1)
        throw ConfigError("generator is not a unit modulo the level's modulus");
  }
  levels_[lv.m] = std::move(lv);
}

void write_lattice_file(const std::filesystem::path& path, const LatticeRule& rule) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const auto& w = rule.weights();
  out << "# base-2 polynomial lattice rules\n";
  out << "# dimension " << rule.dimension() << "\n";
  out << "# spod alpha=" << w.alpha << " n=" << w.n << " c=" << w.c << "\n";
  out << "# line format: m q_1 ... q_s, hex bit masks with bit i the coefficient of x^i\n";
  out << "# modulus table (primitive polynomials):\n";
  for (const auto& [m, lv] : rule.levels())
    if (m > 0) out << "#   m=" << m << " 0x" << std::hex << lv.modulus << std::dec << "\n";
  for (const auto& [m, lv] : rule.levels()) {
    out << m;
    for (auto q : lv.q) out << " 0x" << std::hex << q << std::dec;
    out << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void read_lattice_file(const std::filesystem::path& path, LatticeRule& rule) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lattice file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    LatticeLevel lv;
    std::string tok;
    try {
      ls >> tok;
      std::size_t pos = 0;
      lv.m = std::stoi(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      while (ls >> tok) {
        lv.q.push_back(std::stoull(tok, &pos, 16));
        if (pos != tok.size()) throw std::invalid_argument(tok);
      }
    } catch (const std::logic_error&) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed lattice line");
    }
    rule.insert(std::move(lv));
  }
}

}  // namespace qmcfem
