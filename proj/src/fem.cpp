#include "qmcfem/fem.hpp"

#include <dlfcn.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <cholmod.h>

#include "qmcfem/errors.hpp"
#include "qmcfem/quadrature.hpp"

namespace qmcfem {

namespace {

using quadrature::gauss3;
using quadrature::triangle_degree4;
constexpr int kVolNodes = static_cast<int>(triangle_degree4.size());
constexpr int kEdgeNodes = static_cast<int>(gauss3.size());

// Supernodal CHOLMOD calls BLAS; a threaded BLAS underneath per-sample worker
// threads would oversubscribe and make results depend on its thread count.
void pin_blas_threads() {
  static std::once_flag once;
  std::call_once(once, [] {
    using SetThreads = void (*)(int);
    if (auto fn = reinterpret_cast<SetThreads>(dlsym(RTLD_DEFAULT, "openblas_set_num_threads"))) fn(1);
    if (auto fn = reinterpret_cast<SetThreads>(dlsym(RTLD_DEFAULT, "goto_set_num_threads"))) fn(1);
  });
}

cholmod_common* start_common() {
  pin_blas_threads();
  auto* c = new cholmod_common;
  cholmod_start(c);
  c->supernodal = CHOLMOD_SUPERNODAL;
  c->print = 0;
  return c;
}

void finish_common(cholmod_common* c) {
  cholmod_finish(c);
  delete c;
}

// Shared common for releasing factors whose owning workspace may be gone.
std::mutex g_free_mutex;
cholmod_common* free_common() {
  static cholmod_common* c = start_common();
  return c;
}

Vec2 interpolate_point(const TriangleMesh& mesh, int t, const std::array<double, 3>& bary) {
  const auto& tr = mesh.triangles()[t];
  const auto v = mesh.vertices();
  return bary[0] * v[tr[0]] + bary[1] * v[tr[1]] + bary[2] * v[tr[2]];
}

Vec2 element_gradient(const FemSpace& space, int t, const Eigen::VectorXd& u) {
  const auto& tr = space.mesh().triangles()[t];
  const auto& g = space.geometry().hat_gradients[t];
  return u[tr[0]] * g[0] + u[tr[1]] * g[1] + u[tr[2]] * g[2];
}

double interpolate_value(const Triangle& tr, const std::array<double, 3>& bary, const Eigen::VectorXd& u) {
  return bary[0] * u[tr[0]] + bary[1] * u[tr[1]] + bary[2] * u[tr[2]];
}

}  // namespace

// ---------------------------------------------------------------- Source

Source Source::constant(double c) { return Source(c); }
Source Source::function(std::function<double(Vec2)> f) {
  if (!f) throw std::invalid_argument("Source::function: empty function");
  return Source(std::move(f));
}
Source Source::nodal(Eigen::VectorXd values) { return Source(std::move(values)); }

double Source::at(Vec2 x, const Triangle& tri, const std::array<double, 3>& bary) const {
  switch (data_.index()) {
    case 0:
      return std::get<0>(data_);
    case 1:
      return std::get<1>(data_)(x);
    default:
      return interpolate_value(tri, bary, std::get<2>(data_));
  }
}

// ---------------------------------------------------------------- FemSpace

struct FemSpace::Impl {
  // Lower triangle of the free-dof stiffness matrix in CSC form.
  std::vector<int> col_ptr;
  std::vector<int> row_idx;
  std::vector<int> slots;  // nt x 9, -1 where the local entry is not stored
  cholmod_common* common = nullptr;
  cholmod_factor* symbolic = nullptr;

  cholmod_sparse view(const double* values, int n) const {
    cholmod_sparse A{};
    A.nrow = A.ncol = static_cast<std::size_t>(n);
    A.nzmax = row_idx.size();
    A.p = const_cast<int*>(col_ptr.data());
    A.i = const_cast<int*>(row_idx.data());
    A.x = const_cast<double*>(values);
    A.stype = -1;
    A.itype = CHOLMOD_INT;
    A.xtype = CHOLMOD_REAL;
    A.dtype = CHOLMOD_DOUBLE;
    A.sorted = 1;
    A.packed = 1;
    return A;
  }

  ~Impl() {
    if (symbolic) cholmod_free_factor(&symbolic, common);
    if (common) finish_common(common);
  }
};

FemSpace::FemSpace(MeshPtr mesh, std::shared_ptr<const AffineCoefficient> coeff, FemOptions options)
    : mesh_(std::move(mesh)), coeff_(std::move(coeff)), impl_(std::make_unique<Impl>()) {
  if (!mesh_ || !coeff_) throw std::invalid_argument("FemSpace: null mesh or coefficient");
  geom_ = compute_geometry(*mesh_);
  const int nv = mesh_->num_vertices();
  const int nt = mesh_->num_triangles();
  const int ne = mesh_->num_edges();
  const auto tris = mesh_->triangles();

  free_index_.assign(nv, -1);
  const auto& bd = mesh_->boundary_flags();
  for (int v = 0; v < nv; ++v)
    if (!bd[v]) {
      free_index_[v] = static_cast<int>(free_vertices_.size());
      free_vertices_.push_back(v);
    }

  // Mass matrix.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(tris[t][i], tris[t][j], geom_.area[t] / (i == j ? 6.0 : 12.0));
  mass_.resize(nv, nv);
  mass_.setFromTriplets(trip.begin(), trip.end());

  // Mode data.
  nmodes_ = coeff_->dimension() + 1;
  for (const auto& m : coeff_->modes())
    if (std::holds_alternative<BoxMode>(m)) discontinuous_ = true;
  const int sides = discontinuous_ ? 2 : 1;
  const std::size_t vol_doubles = static_cast<std::size_t>(nt) * kVolNodes * nmodes_ * 3;
  const std::size_t edge_doubles = static_cast<std::size_t>(ne) * kEdgeNodes * sides * nmodes_;
  cached_ = (vol_doubles + edge_doubles) * sizeof(double) <= options.cache_budget_bytes;

  std::vector<CoefficientSample> buf(nmodes_);
  element_modes_.assign(static_cast<std::size_t>(nt) * nmodes_, 0.0);
  if (cached_) volume_cache_.resize(vol_doubles);
  for (int t = 0; t < nt; ++t) {
    for (int q = 0; q < kVolNodes; ++q) {
      coeff_->evaluate_modes(volume_point(t, q), buf);
      for (int j = 0; j < nmodes_; ++j) {
        element_modes_[static_cast<std::size_t>(t) * nmodes_ + j] +=
            triangle_degree4[q].weight * geom_.area[t] * buf[j].value;
        if (cached_) {
          double* c = &volume_cache_[((static_cast<std::size_t>(t) * kVolNodes + q) * nmodes_ + j) * 3];
          c[0] = buf[j].value;
          c[1] = buf[j].grad.x;
          c[2] = buf[j].grad.y;
        }
      }
    }
  }
  if (cached_) {
    edge_cache_.resize(edge_doubles);
    const auto edges = mesh_->edges();
    for (int e = 0; e < ne; ++e)
      for (int q = 0; q < kEdgeNodes; ++q)
        for (int side = 0; side < sides; ++side) {
          const int tri = edges[e].triangles[side];
          Vec2 x = edge_point(e, q);
          if (discontinuous_ && tri >= 0) {
            const auto& tr = tris[tri];
            const Vec2 c = (1.0 / 3.0) * (mesh_->vertices()[tr[0]] + mesh_->vertices()[tr[1]] +
                                          mesh_->vertices()[tr[2]]);
            x = x + 1e-9 * (c - x);
          }
          coeff_->evaluate_modes(x, buf);
          for (int j = 0; j < nmodes_; ++j)
            edge_cache_[((static_cast<std::size_t>(e) * kEdgeNodes + q) * sides + side) * nmodes_ + j] =
                buf[j].value;
        }
  }

  // Stiffness pattern on free dofs, lower triangle.
  const int nf = num_free();
  std::vector<std::vector<int>> cols(nf);
  for (int t = 0; t < nt; ++t)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int r = free_index_[tris[t][i]], c = free_index_[tris[t][j]];
        if (r >= 0 && c >= 0 && r >= c) cols[c].push_back(r);
      }
  auto& im = *impl_;
  im.col_ptr.assign(nf + 1, 0);
  for (int c = 0; c < nf; ++c) {
    auto& col = cols[c];
    std::sort(col.begin(), col.end());
    col.erase(std::unique(col.begin(), col.end()), col.end());
    im.col_ptr[c + 1] = im.col_ptr[c] + static_cast<int>(col.size());
  }
  im.row_idx.reserve(im.col_ptr[nf]);
  for (int c = 0; c < nf; ++c) im.row_idx.insert(im.row_idx.end(), cols[c].begin(), cols[c].end());
  cols.clear();
  im.slots.assign(static_cast<std::size_t>(nt) * 9, -1);
  for (int t = 0; t < nt; ++t)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int r = free_index_[tris[t][i]], c = free_index_[tris[t][j]];
        if (r < 0 || c < 0 || r < c) continue;
        const auto first = im.row_idx.begin() + im.col_ptr[c];
        const auto last = im.row_idx.begin() + im.col_ptr[c + 1];
        im.slots[static_cast<std::size_t>(t) * 9 + i * 3 + j] =
            static_cast<int>(std::lower_bound(first, last, r) - im.row_idx.begin());
      }

  if (nf > 0) {
    im.common = start_common();
    // Nested dissection needs about half the flops of AMD on these meshes.
    im.common->nmethods = 1;
    im.common->method[0].ordering = CHOLMOD_NESDIS;
    std::vector<double> dummy(im.row_idx.size(), 0.0);
    cholmod_sparse A = im.view(dummy.data(), nf);
    im.symbolic = cholmod_analyze(&A, im.common);
    if (!im.symbolic) throw SolverError("symbolic factorization failed");
  }
}

FemSpace::~FemSpace() = default;

Vec2 FemSpace::volume_point(int t, int q) const {
  return interpolate_point(*mesh_, t, triangle_degree4[q].bary);
}

Vec2 FemSpace::edge_point(int e, int q) const {
  const auto& ed = mesh_->edges()[e];
  const Vec2 a = mesh_->vertices()[ed.vertices[0]], b = mesh_->vertices()[ed.vertices[1]];
  return a + gauss3[q].t * (b - a);
}

CoefficientSample FemSpace::volume_coefficient(int t, int q, std::span<const double> y) const {
  if (cached_) {
    const double* c = &volume_cache_[(static_cast<std::size_t>(t) * kVolNodes + q) * nmodes_ * 3];
    CoefficientSample r{c[0], {c[1], c[2]}};
    for (int j = 1; j < nmodes_; ++j) {
      const double yj = y[j - 1];
      r.value += yj * c[3 * j];
      r.grad.x += yj * c[3 * j + 1];
      r.grad.y += yj * c[3 * j + 2];
    }
    return r;
  }
  thread_local std::vector<CoefficientSample> buf;
  buf.resize(nmodes_);
  coeff_->evaluate_modes(volume_point(t, q), buf);
  return combine_modes(buf, y);
}

double FemSpace::edge_coefficient(int e, int q, int side, std::span<const double> y) const {
  if (!discontinuous_) side = 0;
  const int tri = mesh_->edges()[e].triangles[side];
  if (tri < 0) side = 0;
  if (cached_) {
    const int sides = discontinuous_ ? 2 : 1;
    const double* c = &edge_cache_[((static_cast<std::size_t>(e) * kEdgeNodes + q) * sides + side) * nmodes_];
    double r = c[0];
    for (int j = 1; j < nmodes_; ++j) r += y[j - 1] * c[j];
    return r;
  }
  Vec2 x = edge_point(e, q);
  if (discontinuous_) {
    const auto& tr = mesh_->triangles()[mesh_->edges()[e].triangles[side]];
    const auto v = mesh_->vertices();
    const Vec2 c = (1.0 / 3.0) * (v[tr[0]] + v[tr[1]] + v[tr[2]]);
    x = x + 1e-9 * (c - x);
  }
  thread_local std::vector<CoefficientSample> buf;
  buf.resize(nmodes_);
  coeff_->evaluate_modes(x, buf);
  return combine_modes(buf, y).value;
}

void FemSpace::element_integrals(std::span<const double> y, std::vector<double>& out) const {
  coeff_->check_parameter(y);
  const int nt = mesh_->num_triangles();
  out.resize(nt);
  for (int t = 0; t < nt; ++t) {
    const double* m = &element_modes_[static_cast<std::size_t>(t) * nmodes_];
    double a = m[0];
    for (int j = 1; j < nmodes_; ++j) a += y[j - 1] * m[j];
    out[t] = a;
  }
}

Eigen::VectorXd FemSpace::load(const Source& f) const {
  const int nt = mesh_->num_triangles();
  const auto tris = mesh_->triangles();
  if (f.is_nodal()) {
    if (f.nodal_values().size() != num_dofs()) throw std::invalid_argument("nodal source has wrong length");
    return mass_ * f.nodal_values();
  }
  Eigen::VectorXd b = Eigen::VectorXd::Zero(num_dofs());
  for (int t = 0; t < nt; ++t) {
    if (f.is_constant()) {
      const double c = f.constant_value() * geom_.area[t] / 3.0;
      for (int k = 0; k < 3; ++k) b[tris[t][k]] += c;
      continue;
    }
    for (int q = 0; q < kVolNodes; ++q) {
      const auto& node = triangle_degree4[q];
      const double w = node.weight * geom_.area[t] * f.at(volume_point(t, q), tris[t], node.bary);
      for (int k = 0; k < 3; ++k) b[tris[t][k]] += w * node.bary[k];
    }
  }
  return b;
}

double FemSpace::l2_inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const { return u.dot(mass_ * v); }

double FemSpace::l2_norm(const Eigen::VectorXd& u) const { return std::sqrt(std::max(0.0, l2_inner(u, u))); }

double FemSpace::energy_seminorm(const Eigen::VectorXd& u) const {
  double s = 0.0;
  for (int t = 0; t < mesh_->num_triangles(); ++t) {
    const Vec2 g = element_gradient(*this, t, u);
    s += geom_.area[t] * dot(g, g);
  }
  return std::sqrt(s);
}

double FemSpace::l2_distance(const Eigen::VectorXd& u, const Source& g) const {
  const auto tris = mesh_->triangles();
  double s = 0.0;
  for (int t = 0; t < mesh_->num_triangles(); ++t) {
    double acc = 0.0;
    for (int q = 0; q < kVolNodes; ++q) {
      const auto& node = triangle_degree4[q];
      const double d = interpolate_value(tris[t], node.bary, u) - g.at(volume_point(t, q), tris[t], node.bary);
      acc += node.weight * d * d;
    }
    s += geom_.area[t] * acc;
  }
  return std::sqrt(s);
}

double FemSpace::friedrichs_constant() const {
  const Rect b = mesh_->bounding_box();
  const double w = b.x1 - b.x0, h = b.y1 - b.y0;
  return 1.0 / (std::numbers::pi * std::sqrt(1.0 / (w * w) + 1.0 / (h * h)));
}

// ---------------------------------------------------------------- solver

namespace {

void assemble_lower(const FemSpace& space, const std::vector<double>& aint, std::vector<double>& values) {
  const auto& im = space.impl();
  values.assign(im.row_idx.size(), 0.0);
  const auto& grads = space.geometry().hat_gradients;
  for (int t = 0; t < space.mesh().num_triangles(); ++t) {
    if (!(aint[t] > 0.0))
      throw SolverError("diffusion coefficient is not positive on element " + std::to_string(t));
    const int* s = &im.slots[static_cast<std::size_t>(t) * 9];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (s[i * 3 + j] >= 0) values[s[i * 3 + j]] += aint[t] * dot(grads[t][i], grads[t][j]);
  }
}

// y = K x for the symmetric matrix stored as its lower triangle.
void sym_lower_apply(const FemSpace::Impl& im, const std::vector<double>& vals, const double* x, double* y, int n) {
  std::fill(y, y + n, 0.0);
  for (int c = 0; c < n; ++c)
    for (int k = im.col_ptr[c]; k < im.col_ptr[c + 1]; ++k) {
      const int r = im.row_idx[k];
      y[r] += vals[k] * x[c];
      if (r != c) y[c] += vals[k] * x[r];
    }
}

}  // namespace

SolverWorkspace::SolverWorkspace(const FemSpace& space) : space_(&space), common_(start_common()) {}

SolverWorkspace::~SolverWorkspace() { finish_common(static_cast<cholmod_common*>(common_)); }

std::unique_ptr<Factorization> SolverWorkspace::factorize(std::span<const double> y) {
  std::unique_ptr<Factorization> f(new Factorization);
  f->space_ = space_;
  f->y_.assign(y.begin(), y.end());
  space_->element_integrals(y, element_integrals_);
  assemble_lower(*space_, element_integrals_, f->values_);
  const int nf = space_->num_free();
  if (nf == 0) return f;
  auto* c = static_cast<cholmod_common*>(common_);
  const auto& im = space_->impl();
  cholmod_factor* L = cholmod_copy_factor(im.symbolic, c);
  if (!L) throw SolverError("out of memory copying symbolic factor");
  cholmod_sparse A = im.view(f->values_.data(), nf);
  cholmod_factorize(&A, L, c);
  if (c->status == CHOLMOD_NOT_POSDEF || L->minor < L->n) {
    cholmod_free_factor(&L, c);
    throw SolverError("stiffness matrix is not positive definite");
  }
  if (c->status < CHOLMOD_OK) {
    cholmod_free_factor(&L, c);
    throw SolverError("numeric factorization failed");
  }
  f->factor_ = L;
  return f;
}

Factorization::~Factorization() {
  if (factor_) {
    auto* L = static_cast<cholmod_factor*>(factor_);
    std::lock_guard lock(g_free_mutex);
    cholmod_free_factor(&L, free_common());
  }
}

std::size_t Factorization::memory_bytes() const {
  std::size_t bytes = values_.size() * sizeof(double);
  if (factor_) {
    const auto* L = static_cast<const cholmod_factor*>(factor_);
    bytes += L->xsize * sizeof(double) + L->ssize * sizeof(int) + L->n * 4 * sizeof(int);
  }
  return bytes;
}

Eigen::VectorXd Factorization::apply(const Eigen::VectorXd& u) const {
  const int nf = space_->num_free();
  const auto fv = space_->free_vertices();
  std::vector<double> x(nf), r(nf);
  for (int i = 0; i < nf; ++i) x[i] = u[fv[i]];
  sym_lower_apply(space_->impl(), values_, x.data(), r.data(), nf);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(space_->num_dofs());
  for (int i = 0; i < nf; ++i) out[fv[i]] = r[i];
  return out;
}

Eigen::VectorXd Factorization::solve(const Eigen::VectorXd& full_load, SolverWorkspace& ws) const {
  const int nf = space_->num_free();
  if (full_load.size() != space_->num_dofs()) throw std::invalid_argument("load vector has wrong length");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(space_->num_dofs());
  if (nf == 0) return out;
  const auto fv = space_->free_vertices();
  auto* c = static_cast<cholmod_common*>(ws.common());
  auto* L = static_cast<cholmod_factor*>(factor_);

  std::vector<double> b(nf), x(nf, 0.0), r(nf);
  for (int i = 0; i < nf; ++i) b[i] = full_load[fv[i]];
  double bnorm = 0.0;
  for (double v : b) bnorm += v * v;
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) return out;

  auto solve_into = [&](const std::vector<double>& rhs, std::vector<double>& dst) {
    cholmod_dense B{};
    B.nrow = static_cast<std::size_t>(nf);
    B.ncol = 1;
    B.nzmax = static_cast<std::size_t>(nf);
    B.d = static_cast<std::size_t>(nf);
    B.x = const_cast<double*>(rhs.data());
    B.xtype = CHOLMOD_REAL;
    B.dtype = CHOLMOD_DOUBLE;
    cholmod_dense* X = cholmod_solve(CHOLMOD_A, L, &B, c);
    if (!X) throw SolverError("triangular solve failed");
    const double* xv = static_cast<const double*>(X->x);
    std::copy(xv, xv + nf, dst.begin());
    cholmod_free_dense(&X, c);
  };

  solve_into(b, x);
  std::vector<double> dx(nf);
  double rel = 0.0;
  for (int iter = 0; iter < 3; ++iter) {
    sym_lower_apply(space_->impl(), values_, x.data(), r.data(), nf);
    double rn = 0.0;
    for (int i = 0; i < nf; ++i) {
      r[i] = b[i] - r[i];
      rn += r[i] * r[i];
    }
    rel = std::sqrt(rn) / bnorm;
    if (rel <= 1e-12) break;
    solve_into(r, dx);
    for (int i = 0; i < nf; ++i) x[i] += dx[i];
  }
  if (!(rel <= 1e-10)) throw SolverError("linear solve residual " + std::to_string(rel) + " exceeds 1e-10");
  for (int i = 0; i < nf; ++i) out[fv[i]] = x[i];
  return out;
}

Eigen::SparseMatrix<double> assemble_stiffness(const FemSpace& space, std::span<const double> y) {
  std::vector<double> aint, values;
  space.element_integrals(y, aint);
  assemble_lower(space, aint, values);
  const auto& im = space.impl();
  const int nf = space.num_free();
  std::vector<Eigen::Triplet<double>> trip;
  for (int c = 0; c < nf; ++c)
    for (int k = im.col_ptr[c]; k < im.col_ptr[c + 1]; ++k) {
      trip.emplace_back(im.row_idx[k], c, values[k]);
      if (im.row_idx[k] != c) trip.emplace_back(c, im.row_idx[k], values[k]);
    }
  Eigen::SparseMatrix<double> K(nf, nf);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

// ---------------------------------------------------------------- solves

FieldSolution solve_state(SolverWorkspace& ws, const Factorization& K, const Source& f) {
  const auto& space = ws.space();
  return {space.mesh_ptr(), K.solve(space.load(f), ws), std::vector<double>(K.y().begin(), K.y().end()),
          FieldRole::state};
}

FieldSolution solve_state(const FemSpace& space, std::span<const double> y, const Source& f) {
  SolverWorkspace ws(space);
  const auto K = ws.factorize(y);
  return solve_state(ws, *K, f);
}

FieldSolution solve_adjoint(SolverWorkspace& ws, const Factorization& K, const FieldSolution& u_h,
                            const Source& u_hat, double alpha1) {
  const auto& space = ws.space();
  if (u_h.mesh.get() != &space.mesh()) throw std::invalid_argument("solve_adjoint: state lives on another mesh");
  const Eigen::VectorXd rhs = alpha1 * (space.mass() * u_h.values - space.load(u_hat));
  return {space.mesh_ptr(), K.solve(rhs, ws), std::vector<double>(K.y().begin(), K.y().end()), FieldRole::adjoint};
}

FieldSolution solve_adjoint(const FemSpace& space, std::span<const double> y, const FieldSolution& u_h,
                            const Source& u_hat, double alpha1) {
  SolverWorkspace ws(space);
  const auto K = ws.factorize(y);
  return solve_adjoint(ws, *K, u_h, u_hat, alpha1);
}

// ---------------------------------------------------------------- estimators

namespace {

// Generic residual estimator for -div(a grad w) = rhs with w in P1:
// volume h_T^{2p} ||rhs + grad a . grad w||_T^2, jump h_e^{q} ||[a grad w . n]||_e^2.
template <class Rhs>
ResidualBreakdown residual_estimate(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& w,
                                    Rhs&& rhs, int p, int qexp) {
  const auto& mesh = space.mesh();
  const auto& geom = space.geometry();
  if (w.size() != space.num_dofs()) throw std::invalid_argument("estimator: field has wrong length");
  space.coefficient().check_parameter(y);
  const int nt = mesh.num_triangles();
  const int ne = mesh.num_edges();
  std::vector<Vec2> grad(nt);
  for (int t = 0; t < nt; ++t) grad[t] = element_gradient(space, t, w);

  ResidualBreakdown r;
  r.volume.resize(nt);
  double sum = 0.0;
  for (int t = 0; t < nt; ++t) {
    double acc = 0.0;
    for (int q = 0; q < kVolNodes; ++q) {
      const CoefficientSample a = space.volume_coefficient(t, q, y);
      const double res = rhs(t, q) + dot(a.grad, grad[t]);
      acc += triangle_degree4[q].weight * res * res;
    }
    // h_T^{2p} = |T|^p
    r.volume[t] = std::pow(geom.area[t], p) * geom.area[t] * acc;
    sum += r.volume[t];
  }
  r.jump.assign(ne, 0.0);
  const auto edges = mesh.edges();
  for (int e = 0; e < ne; ++e) {
    if (edges[e].is_boundary()) continue;
    const Vec2 n = geom.edge_normals[e];
    const double g0 = dot(grad[edges[e].triangles[0]], n);
    const double g1 = dot(grad[edges[e].triangles[1]], n);
    double acc = 0.0;
    for (int q = 0; q < kEdgeNodes; ++q) {
      const double a0 = space.edge_coefficient(e, q, 0, y);
      const double a1 = space.edge_coefficient(e, q, 1, y);
      const double jmp = a0 * g0 - a1 * g1;
      acc += gauss3[q].weight * jmp * jmp;
    }
    const double he = geom.h_e[e];
    r.jump[e] = std::pow(he, qexp) * he * acc;
    sum += r.jump[e];
  }
  r.total = std::sqrt(sum);
  return r;
}

auto source_rhs(const FemSpace& space, const Source& f) {
  if (f.is_nodal() && f.nodal_values().size() != space.num_dofs())
    throw std::invalid_argument("nodal source has wrong length");
  return [&space, &f](int t, int q) {
    const auto& tr = space.mesh().triangles()[t];
    return f.at(space.volume_point(t, q), tr, triangle_degree4[q].bary);
  };
}

}  // namespace

ResidualBreakdown eta_h1(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& u_h,
                         const Source& f) {
  return residual_estimate(space, y, u_h, source_rhs(space, f), 1, 1);
}

ResidualBreakdown eta_l2(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& u_h,
                         const Source& f) {
  if (!space.mesh().convex_domain())
    throw UnsupportedDomain("L2 residual estimator requires a convex polygon");
  return residual_estimate(space, y, u_h, source_rhs(space, f), 2, 3);
}

ResidualBreakdown eta_l2_dual(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& q_h,
                              const Eigen::VectorXd& u_h, const Source& u_hat, double alpha1,
                              double eta_l2_state) {
  if (!space.mesh().convex_domain())
    throw UnsupportedDomain("L2 residual estimator requires a convex polygon");
  if (q_h.size() != u_h.size() || u_h.size() != space.num_dofs())
    throw std::invalid_argument("eta_l2_dual: adjoint and state live on different meshes");
  auto rhs = [&](int t, int q) {
    const auto& tr = space.mesh().triangles()[t];
    const auto& bary = triangle_degree4[q].bary;
    return alpha1 * (interpolate_value(tr, bary, u_h) - u_hat.at(space.volume_point(t, q), tr, bary));
  };
  ResidualBreakdown r = residual_estimate(space, y, q_h, rhs, 2, 3);
  double hmax4 = 0.0;
  for (double a : space.geometry().area) hmax4 = std::max(hmax4, a * a);
  r.coupling = hmax4 * eta_l2_state * eta_l2_state;
  r.total = std::sqrt(r.total * r.total + r.coupling);
  return r;
}

ExactErrors exact_errors(const FemSpace& space, const Eigen::VectorXd& u_h, const std::function<double(Vec2)>& u,
                         const std::function<Vec2(Vec2)>& grad_u) {
  const auto tris = space.mesh().triangles();
  double l2 = 0.0, h1 = 0.0;
  for (int t = 0; t < space.mesh().num_triangles(); ++t) {
    const Vec2 g = element_gradient(space, t, u_h);
    double al = 0.0, ah = 0.0;
    for (int q = 0; q < kVolNodes; ++q) {
      const auto& node = triangle_degree4[q];
      const Vec2 x = space.volume_point(t, q);
      const double d = u(x) - interpolate_value(tris[t], node.bary, u_h);
      const Vec2 dg = grad_u(x) - g;
      al += node.weight * d * d;
      ah += node.weight * dot(dg, dg);
    }
    l2 += space.geometry().area[t] * al;
    h1 += space.geometry().area[t] * ah;
  }
  return {std::sqrt(l2), std::sqrt(h1)};
}

}  // namespace qmcfem
