#include "qmcfem/coefficient.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "qmcfem/errors.hpp"

namespace qmcfem {

namespace {

// sin(k t), cos(k t) for k = 0..K by the angle-addition recurrence.
void harmonics(double t, int K, std::vector<double>& s, std::vector<double>& c) {
  s.resize(K + 1);
  c.resize(K + 1);
  s[0] = 0.0;
  c[0] = 1.0;
  if (K == 0) return;
  const double s1 = std::sin(t), c1 = std::cos(t);
  s[1] = s1;
  c[1] = c1;
  for (int k = 1; k < K; ++k) {
    s[k + 1] = s[k] * c1 + c[k] * s1;
    c[k + 1] = c[k] * c1 - s[k] * s1;
  }
}

struct Harmonics {
  std::vector<double> s1, c1, s2, c2;
};

CoefficientSample eval_mode(const Mode& mode, Vec2 x, const Harmonics& h) {
  if (const auto* m = std::get_if<SineMode>(&mode)) {
    const double A = m->amplitude;
    return {A * h.s1[m->k1] * h.s2[m->k2],
            {A * m->k1 * h.c1[m->k1] * h.s2[m->k2], A * m->k2 * h.s1[m->k1] * h.c2[m->k2]}};
  }
  const auto& b = std::get<BoxMode>(mode);
  return {b.box.contains(x) ? b.value : 0.0, {}};
}

double sup_norm(const Mode& mode) {
  if (const auto* m = std::get_if<SineMode>(&mode)) return std::abs(m->amplitude);
  return std::abs(std::get<BoxMode>(mode).value);
}

// ||psi||_inf and ||grad psi||_inf bound; |grad| <= A max(k1, k2) for sine modes.
double w1inf_norm(const Mode& mode) {
  if (const auto* m = std::get_if<SineMode>(&mode))
    return std::abs(m->amplitude) * std::max({1, m->k1, m->k2});
  return std::abs(std::get<BoxMode>(mode).value);
}

void check_mode(const Mode& mode) {
  if (const auto* m = std::get_if<SineMode>(&mode)) {
    if (m->k1 < 1 || m->k2 < 1) throw ConfigError("sine mode frequencies must be >= 1");
    if (!std::isfinite(m->amplitude)) throw ConfigError("sine mode amplitude is not finite");
  } else {
    const auto& b = std::get<BoxMode>(mode);
    if (!b.box.valid()) throw ConfigError("box mode rectangle is empty");
    if (!std::isfinite(b.value)) throw ConfigError("box mode value is not finite");
  }
}

thread_local Harmonics tl_harmonics;

}  // namespace

AffineCoefficient::AffineCoefficient(double psi0_constant, std::vector<Mode> psi0_terms,
                                     std::vector<Mode> modes, double kappa, Rect domain)
    : psi0_constant_(psi0_constant),
      psi0_terms_(std::move(psi0_terms)),
      modes_(std::move(modes)),
      kappa_(kappa) {
  if (!(kappa_ > 0.0) || !std::isfinite(kappa_)) throw ConfigError("kappa must be positive");
  if (!domain.valid()) throw ConfigError("coefficient domain is empty");
  auto track = [this](const Mode& m) {
    check_mode(m);
    if (const auto* s = std::get_if<SineMode>(&m)) {
      max_k1_ = std::max(max_k1_, s->k1);
      max_k2_ = std::max(max_k2_, s->k2);
    }
  };
  for (const auto& m : psi0_terms_) track(m);
  double bsum = 0.0;
  for (const auto& m : modes_) {
    track(m);
    b_.push_back(sup_norm(m) / kappa_);
    b_prime_.push_back(w1inf_norm(m));
    bsum += b_.back();
  }
  if (!(bsum < 2.0))
    throw ConfigError("sum of b_j = " + std::to_string(bsum) + " violates sum b_j < 2");

  // Grid sample of psi_0 (nodes plus cell centres of a 256 x 256 grid).
  constexpr int grid = 256;
  std::vector<CoefficientSample> buf(modes_.size() + 1);
  psi0_essinf_ = std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < 2; ++pass) {
    const double off = pass == 0 ? 0.0 : 0.5;
    const int n = pass == 0 ? grid + 1 : grid;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Vec2 x{domain.x0 + (i + off) * (domain.x1 - domain.x0) / grid,
                     domain.y0 + (j + off) * (domain.y1 - domain.y0) / grid};
        evaluate_modes(x, buf);
        psi0_essinf_ = std::min(psi0_essinf_, buf[0].value);
      }
  }
  if (!(psi0_essinf_ > kappa_))
    throw ConfigError("essinf psi_0 = " + std::to_string(psi0_essinf_) + " must exceed kappa");
}

void AffineCoefficient::evaluate_modes(Vec2 x, std::span<CoefficientSample> out) const {
  if (out.size() < modes_.size() + 1) throw std::invalid_argument("evaluate_modes: output too small");
  Harmonics& h = tl_harmonics;
  harmonics(x.x, max_k1_, h.s1, h.c1);
  harmonics(x.y, max_k2_, h.s2, h.c2);
  CoefficientSample p0{psi0_constant_, {}};
  for (const auto& m : psi0_terms_) {
    const auto v = eval_mode(m, x, h);
    p0.value += v.value;
    p0.grad += v.grad;
  }
  out[0] = p0;
  for (std::size_t j = 0; j < modes_.size(); ++j) out[j + 1] = eval_mode(modes_[j], x, h);
}

void AffineCoefficient::check_parameter(std::span<const double> y) const {
  if (y.size() != modes_.size())
    throw std::invalid_argument("parameter has dimension " + std::to_string(y.size()) + ", expected " +
                                std::to_string(modes_.size()));
  for (double v : y)
    if (!(v >= -0.5 && v <= 0.5)) throw std::out_of_range("parameter outside [-1/2, 1/2]^s");
}

CoefficientSample AffineCoefficient::evaluate(Vec2 x, std::span<const double> y) const {
  check_parameter(y);
  thread_local std::vector<CoefficientSample> buf;
  buf.resize(modes_.size() + 1);
  evaluate_modes(x, buf);
  return combine_modes(buf, y);
}

CoefficientSample combine_modes(std::span<const CoefficientSample> modes, std::span<const double> y) {
  CoefficientSample r = modes[0];
  for (std::size_t j = 0; j < y.size(); ++j) {
    r.value += y[j] * modes[j + 1].value;
    r.grad += y[j] * modes[j + 1].grad;
  }
  return r;
}

std::vector<std::pair<int, int>> ordered_frequency_pairs(int s) {
  if (s < 0) throw std::invalid_argument("ordered_frequency_pairs: s must be >= 0");
  // All pairs with k1^2 + k2^2 <= R^2 contain the first s pairs once the
  // disk holds at least s lattice points of the quadrant.
  int R = 1;
  while (true) {
    std::vector<std::pair<int, int>> pairs;
    for (int a = 1; a <= R; ++a)
      for (int b = 1; b <= R; ++b)
        if (a * a + b * b <= R * R) pairs.emplace_back(a, b);
    if (static_cast<int>(pairs.size()) >= s) {
      std::sort(pairs.begin(), pairs.end(), [](auto l, auto r) {
        const int kl = l.first * l.first + l.second * l.second;
        const int kr = r.first * r.first + r.second * r.second;
        return kl != kr ? kl < kr : l < r;
      });
      pairs.resize(s);
      return pairs;
    }
    ++R;
  }
}

AffineCoefficient sine_modes(int s, double kappa) {
  std::vector<Mode> modes;
  for (auto [k1, k2] : ordered_frequency_pairs(s)) {
    const double key = k1 * k1 + k2 * k2;
    modes.emplace_back(SineMode{k1, k2, 1.0 / (key * key)});
  }
  return AffineCoefficient(0.5, {}, std::move(modes), kappa);
}

AffineCoefficient constant_coefficient(double value) {
  if (!(value > 0.0)) throw ConfigError("constant coefficient must be positive");
  return AffineCoefficient(value, {}, {}, 0.5 * value);
}

}  // namespace qmcfem
