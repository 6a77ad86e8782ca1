#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "qmcfem/coefficient.hpp"
#include "qmcfem/mesh.hpp"

namespace qmcfem {

/// Right-hand side or target field: a constant, an analytic function or a
/// P1 nodal field on the space's mesh.
class Source {
 public:
  static Source constant(double c);
  static Source function(std::function<double(Vec2)> f);
  static Source nodal(Eigen::VectorXd values);

  bool is_constant() const { return std::holds_alternative<double>(data_); }
  bool is_nodal() const { return std::holds_alternative<Eigen::VectorXd>(data_); }
  double constant_value() const { return std::get<double>(data_); }
  const Eigen::VectorXd& nodal_values() const { return std::get<Eigen::VectorXd>(data_); }

  /// Value at x inside triangle `tri` with barycentric coordinates `bary`.
  double at(Vec2 x, const Triangle& tri, const std::array<double, 3>& bary) const;

 private:
  explicit Source(std::variant<double, std::function<double(Vec2)>, Eigen::VectorXd> d) : data_(std::move(d)) {}
  std::variant<double, std::function<double(Vec2)>, Eigen::VectorXd> data_;
};

struct FemOptions {
  /// Mode values at quadrature nodes are cached when they fit this budget;
  /// otherwise they are recomputed per evaluation.
  std::size_t cache_budget_bytes = std::size_t{384} << 20;
};

/// P1 space on a mesh together with everything about the affine coefficient
/// that does not depend on y: per-element mode integrals, quadrature-node mode
/// values, the free-dof stiffness pattern and its symbolic factorization.
/// Immutable after construction and safe for concurrent use.
class FemSpace {
 public:
  FemSpace(MeshPtr mesh, std::shared_ptr<const AffineCoefficient> coeff, FemOptions options = {});
  ~FemSpace();
  FemSpace(const FemSpace&) = delete;
  FemSpace& operator=(const FemSpace&) = delete;

  const TriangleMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  const AffineCoefficient& coefficient() const { return *coeff_; }
  const std::shared_ptr<const AffineCoefficient>& coefficient_ptr() const { return coeff_; }
  const MeshGeometry& geometry() const { return geom_; }

  int num_dofs() const { return mesh_->num_vertices(); }
  int num_free() const { return static_cast<int>(free_vertices_.size()); }
  /// vertex -> free index, -1 on the Dirichlet boundary.
  std::span<const int> free_index() const { return free_index_; }
  std::span<const int> free_vertices() const { return free_vertices_; }
  bool caches_modes() const { return cached_; }

  /// Consistent P1 mass matrix over all vertices.
  const Eigen::SparseMatrix<double>& mass() const { return mass_; }
  /// Vector of integrals of f times each hat function (all vertices).
  Eigen::VectorXd load(const Source& f) const;

  double l2_inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const;
  double l2_norm(const Eigen::VectorXd& u) const;
  /// ||grad u||_{L2}, the norm of H^1_0.
  double energy_seminorm(const Eigen::VectorXd& u) const;
  /// ||u_h - g||_{L2} by element quadrature.
  double l2_distance(const Eigen::VectorXd& u, const Source& g) const;
  /// Friedrichs constant of the bounding box; bounds ||v||_{L2} <= C ||grad v||.
  double friedrichs_constant() const;

  /// Element integrals of a(., y): out[t] = int_T a(x, y) dx.
  void element_integrals(std::span<const double> y, std::vector<double>& out) const;

  /// Global coordinates of volume node q of element t.
  Vec2 volume_point(int t, int q) const;
  /// Global coordinates of Gauss node q on edge e.
  Vec2 edge_point(int e, int q) const;
  /// a(., y) and its gradient at volume node q of element t.
  CoefficientSample volume_coefficient(int t, int q, std::span<const double> y) const;
  /// a(., y) at Gauss node q of edge e, as the limit from adjacent triangle
  /// `side` (0 or 1). Differs between sides only for discontinuous modes.
  double edge_coefficient(int e, int q, int side, std::span<const double> y) const;

  // Internal data for the solver.
  struct Impl;
  const Impl& impl() const { return *impl_; }

 private:
  MeshPtr mesh_;
  std::shared_ptr<const AffineCoefficient> coeff_;
  MeshGeometry geom_;
  std::vector<int> free_index_;
  std::vector<int> free_vertices_;
  Eigen::SparseMatrix<double> mass_;
  int nmodes_ = 1;  // s + 1
  bool discontinuous_ = false;
  bool cached_ = false;
  std::vector<double> element_modes_;  // nt x (s+1): int_T psi_j
  std::vector<double> volume_cache_;   // (nt*6) x (s+1) x {value, gx, gy}
  std::vector<double> edge_cache_;     // (ne*3*sides) x (s+1)
  std::unique_ptr<Impl> impl_;
};

class SolverWorkspace;

/// Numeric Cholesky factorization of the free-dof stiffness matrix K(y).
class Factorization {
 public:
  ~Factorization();
  Factorization(const Factorization&) = delete;
  Factorization& operator=(const Factorization&) = delete;

  std::span<const double> y() const { return y_; }
  std::size_t memory_bytes() const;
  /// Solves K(y) u = load on the free dofs; returns a full vertex vector
  /// with zero Dirichlet values. Relative residual is at most 1e-10.
  Eigen::VectorXd solve(const Eigen::VectorXd& full_load, SolverWorkspace& ws) const;
  /// K(y) applied to a full vertex vector, restricted to free dofs and
  /// scattered back (zero on the boundary).
  Eigen::VectorXd apply(const Eigen::VectorXd& u) const;

 private:
  friend class SolverWorkspace;
  Factorization() = default;
  const FemSpace* space_ = nullptr;
  std::vector<double> y_;
  std::vector<double> values_;  // lower-triangular free-dof K(y) values
  void* factor_ = nullptr;      // cholmod_factor*
};

/// Per-thread solver state. Not shareable between threads.
class SolverWorkspace {
 public:
  explicit SolverWorkspace(const FemSpace& space);
  ~SolverWorkspace();
  SolverWorkspace(const SolverWorkspace&) = delete;
  SolverWorkspace& operator=(const SolverWorkspace&) = delete;

  const FemSpace& space() const { return *space_; }
  /// Assembles and factorizes K(y). Throws SolverError if K(y) is not SPD.
  std::unique_ptr<Factorization> factorize(std::span<const double> y);

  void* common() { return common_; }

 private:
  const FemSpace* space_;
  void* common_;  // cholmod_common*
  std::vector<double> element_integrals_;
};

enum class FieldRole { state, adjoint };

/// P1 coefficient vector for u_h(y) or q_h(y).
struct FieldSolution {
  MeshPtr mesh;
  Eigen::VectorXd values;
  std::vector<double> y;
  FieldRole role = FieldRole::state;
};

FieldSolution solve_state(SolverWorkspace& ws, const Factorization& K, const Source& f);
FieldSolution solve_state(const FemSpace& space, std::span<const double> y, const Source& f);

/// Solves the adjoint problem with right-hand side alpha1 (u_h - u_hat).
FieldSolution solve_adjoint(SolverWorkspace& ws, const Factorization& K, const FieldSolution& u_h,
                            const Source& u_hat, double alpha1);
FieldSolution solve_adjoint(const FemSpace& space, std::span<const double> y, const FieldSolution& u_h,
                            const Source& u_hat, double alpha1);

/// Estimator contributions: volume[t] per element, jump[e] per interior edge
/// (both halves already summed), and a coupling term. total^2 is their sum.
struct ResidualBreakdown {
  std::vector<double> volume;
  std::vector<double> jump;
  double coupling = 0.0;
  double total = 0.0;
};

/// H^1 residual estimator: h_T^2 ||f + div(a grad u_h)||_T^2 and
/// h_e ||[a grad u_h]||_e^2.
ResidualBreakdown eta_h1(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& u_h,
                         const Source& f);

/// L^2 residual estimator with weights h_T^4 and h_e^3. Requires a convex
/// domain; throws UnsupportedDomain otherwise.
ResidualBreakdown eta_l2(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& u_h,
                         const Source& f);

/// L^2 estimator for the adjoint state q_h with right-hand side
/// alpha1 (u_h - u_hat): volume h_T^4 ||alpha1 (u_h - u_hat) + div(a grad q_h)||^2,
/// jumps h_e^3 ||[a grad q_h]||^2, coupling (max h_T^4) eta_l2_state^2.
ResidualBreakdown eta_l2_dual(const FemSpace& space, std::span<const double> y, const Eigen::VectorXd& q_h,
                              const Eigen::VectorXd& u_h, const Source& u_hat, double alpha1,
                              double eta_l2_state);

/// Reliability constant of the dual L^2 estimator, 2 max(c*, 1) c*.
inline double dual_reliability_constant(double c_star) { return 2.0 * std::max(c_star, 1.0) * c_star; }

struct ExactErrors {
  double l2 = 0.0;
  double h1 = 0.0;  // ||grad(u - u_h)||_{L2}
};

/// Errors of u_h against an analytic solution, by element quadrature.
ExactErrors exact_errors(const FemSpace& space, const Eigen::VectorXd& u_h, const std::function<double(Vec2)>& u,
                         const std::function<Vec2(Vec2)>& grad_u);

/// Free-dof stiffness matrix K(y) as a full symmetric sparse matrix (for
/// tests and small problems).
Eigen::SparseMatrix<double> assemble_stiffness(const FemSpace& space, std::span<const double> y);

}  // namespace qmcfem
