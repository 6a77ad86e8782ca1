#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qmcfem/geometry.hpp"

namespace qmcfem {

using Triangle = std::array<int, 3>;

/// Edge with its two endpoints (sorted ascending) and adjacent triangles.
/// `triangles[1] == -1` marks a boundary edge.
struct MeshEdge {
  std::array<int, 2> vertices;
  std::array<int, 2> triangles;

  bool is_boundary() const { return triangles[1] < 0; }
};

/// Conforming triangulation of a polygon. Immutable after construction.
///
/// Triangles are stored counterclockwise; clockwise input is reoriented and
/// degenerate input is rejected. Edges are enumerated in lexicographic
/// (min vertex, max vertex) order.
class TriangleMesh {
 public:
  TriangleMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles, int level = 0);

  std::span<const Vec2> vertices() const { return vertices_; }
  std::span<const Triangle> triangles() const { return triangles_; }
  std::span<const MeshEdge> edges() const { return edges_; }
  /// Three edge indices per triangle, edge k opposite local vertex k.
  std::span<const std::array<int, 3>> triangle_edges() const { return triangle_edges_; }
  const std::vector<bool>& boundary_flags() const { return boundary_; }

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  int num_interior_vertices() const { return num_interior_; }
  int level() const { return level_; }

  /// max over T of (longest edge)^2 / area.
  double shape_constant() const { return shape_constant_; }
  /// Smallest interior angle in the mesh (radians).
  double min_angle() const { return min_angle_; }
  bool convex_domain() const { return convex_; }
  Rect bounding_box() const { return bbox_; }
  double area() const;

  /// For each vertex the coarse-mesh endpoints it was created from; inherited
  /// vertices map to {v, v}. Empty for meshes not produced by refinement.
  std::span<const std::array<int, 2>> vertex_parents() const { return parents_; }
  int parent_vertex_count() const { return parent_vertex_count_; }

  double triangle_area(int t) const;

 private:
  friend TriangleMesh uniform_refine(const TriangleMesh&);
  TriangleMesh() = default;
  void build_topology();
  void compute_quality();

  std::vector<Vec2> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<MeshEdge> edges_;
  std::vector<std::array<int, 3>> triangle_edges_;
  std::vector<bool> boundary_;
  std::vector<std::array<int, 2>> parents_;
  int parent_vertex_count_ = 0;
  int num_interior_ = 0;
  int level_ = 0;
  double shape_constant_ = 0.0;
  double min_angle_ = 0.0;
  bool convex_ = false;
  Rect bbox_{};
};

using MeshPtr = std::shared_ptr<const TriangleMesh>;

/// n x n squares on (0,1)^2, each split along its (0,0)-(1,1) diagonal.
TriangleMesh unit_square_mesh(int n);

/// n x n squares on (0,1)^2, each split by both diagonals into four triangles
/// around a centre vertex. n = 4 gives 41 vertices.
TriangleMesh criss_cross_square_mesh(int n);

/// Red refinement: every triangle is split into four congruent children.
TriangleMesh uniform_refine(const TriangleMesh& mesh);

/// Vertex count after `levels` red refinements, computed from counts only.
std::int64_t refined_vertex_count(const TriangleMesh& mesh, int levels);

/// Interpolates a P1 field from the parent mesh onto a mesh produced by
/// uniform_refine of it.
Eigen::VectorXd prolongate(const TriangleMesh& fine, const Eigen::VectorXd& coarse);

/// Per-mesh geometry: h_T = |T|^{1/2}, edge lengths, unit normals and the
/// constant gradients of the three hat functions on each element.
struct MeshGeometry {
  std::vector<double> area;
  std::vector<double> h_T;
  std::vector<std::array<Vec2, 3>> hat_gradients;
  std::vector<double> h_e;
  /// Unit normal of each edge pointing from triangles[0] into triangles[1]
  /// (outward for boundary edges).
  std::vector<Vec2> edge_normals;
  double h_max = 0.0;
};

MeshGeometry compute_geometry(const TriangleMesh& mesh);

/// Writes vertices.csv (x,y,boundary) and triangles.csv (v0,v1,v2).
void write_mesh_csv(const TriangleMesh& mesh, const std::filesystem::path& directory);

}  // namespace qmcfem
