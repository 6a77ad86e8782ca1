#include "qmcfem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

namespace qmcfem {

namespace {

double signed_area(Vec2 a, Vec2 b, Vec2 c) { return 0.5 * cross(b - a, c - a); }

double corner_angle(Vec2 at, Vec2 p, Vec2 q) {
  const Vec2 u = p - at;
  const Vec2 v = q - at;
  return std::atan2(std::abs(cross(u, v)), dot(u, v));
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles, int level)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)), level_(level) {
  if (triangles_.empty()) throw std::invalid_argument("mesh has no triangles");
  const int nv = num_vertices();
  for (auto& t : triangles_) {
    for (int v : t)
      if (v < 0 || v >= nv) throw std::invalid_argument("triangle references unknown vertex");
    const double a = signed_area(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
    if (a == 0.0 || !std::isfinite(a)) throw std::invalid_argument("degenerate triangle");
    if (a < 0.0) std::swap(t[1], t[2]);
  }
  build_topology();
  compute_quality();

  // Convexity of the boundary polygon: every boundary vertex lies left of
  // (or on) every boundary edge oriented with the domain on its left.
  convex_ = true;
  std::vector<int> bverts;
  for (int v = 0; v < nv; ++v)
    if (boundary_[v]) bverts.push_back(v);
  const double tol = 1e-12 * (bbox_.x1 - bbox_.x0 + bbox_.y1 - bbox_.y0);
  for (const auto& e : edges_) {
    if (!e.is_boundary()) continue;
    const auto& t = triangles_[e.triangles[0]];
    // orient the edge so that the triangle's third vertex is on the left
    Vec2 a = vertices_[e.vertices[0]];
    Vec2 b = vertices_[e.vertices[1]];
    int third = t[0] + t[1] + t[2] - e.vertices[0] - e.vertices[1];
    if (cross(b - a, vertices_[third] - a) < 0.0) std::swap(a, b);
    const Vec2 d = b - a;
    const double len = norm(d);
    for (int v : bverts) {
      if (cross(d, vertices_[v] - a) / len < -tol) {
        convex_ = false;
        break;
      }
    }
    if (!convex_) break;
  }
}

void TriangleMesh::build_topology() {
  const int nv = num_vertices();
  const int nt = num_triangles();
  struct HalfEdge {
    int a, b, tri, local;
  };
  std::vector<HalfEdge> half;
  half.reserve(3 * static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    const auto& tr = triangles_[t];
    for (int k = 0; k < 3; ++k) {
      int a = tr[(k + 1) % 3];
      int b = tr[(k + 2) % 3];
      if (a > b) std::swap(a, b);
      half.push_back({a, b, t, k});
    }
  }
  std::sort(half.begin(), half.end(), [](const HalfEdge& l, const HalfEdge& r) {
    return std::tie(l.a, l.b, l.tri) < std::tie(r.a, r.b, r.tri);
  });

  edges_.clear();
  triangle_edges_.assign(nt, {-1, -1, -1});
  for (std::size_t i = 0; i < half.size();) {
    std::size_t j = i + 1;
    while (j < half.size() && half[j].a == half[i].a && half[j].b == half[i].b) ++j;
    if (j - i > 2) throw std::invalid_argument("non-manifold edge shared by more than two triangles");
    MeshEdge e{{half[i].a, half[i].b}, {half[i].tri, j - i == 2 ? half[i + 1].tri : -1}};
    const int id = static_cast<int>(edges_.size());
    for (std::size_t k = i; k < j; ++k) triangle_edges_[half[k].tri][half[k].local] = id;
    edges_.push_back(e);
    i = j;
  }

  boundary_.assign(nv, false);
  for (const auto& e : edges_)
    if (e.is_boundary()) boundary_[e.vertices[0]] = boundary_[e.vertices[1]] = true;
  num_interior_ = static_cast<int>(std::count(boundary_.begin(), boundary_.end(), false));

  // Conformity: a hanging vertex would sit in the interior of some boundary
  // edge of the edge graph. In a conforming mesh of a disk V - E + T = 1.
  std::vector<bool> used(nv, false);
  for (const auto& t : triangles_)
    for (int v : t) used[v] = true;
  if (std::find(used.begin(), used.end(), false) != used.end())
    throw std::invalid_argument("mesh has unreferenced vertices");
  if (nv - num_edges() + nt != 1)
    throw std::invalid_argument("mesh is not a conforming triangulation of a simply connected polygon");

  bbox_ = {vertices_[0].x, vertices_[0].y, vertices_[0].x, vertices_[0].y};
  for (const auto& p : vertices_) {
    bbox_.x0 = std::min(bbox_.x0, p.x);
    bbox_.y0 = std::min(bbox_.y0, p.y);
    bbox_.x1 = std::max(bbox_.x1, p.x);
    bbox_.y1 = std::max(bbox_.y1, p.y);
  }
}

void TriangleMesh::compute_quality() {
  shape_constant_ = 0.0;
  min_angle_ = std::numbers::pi;
  for (const auto& t : triangles_) {
    const Vec2 a = vertices_[t[0]], b = vertices_[t[1]], c = vertices_[t[2]];
    const double longest = std::max({norm(b - a), norm(c - b), norm(a - c)});
    shape_constant_ = std::max(shape_constant_, longest * longest / signed_area(a, b, c));
    min_angle_ = std::min({min_angle_, corner_angle(a, b, c), corner_angle(b, c, a), corner_angle(c, a, b)});
  }
}

double TriangleMesh::triangle_area(int t) const {
  const auto& tr = triangles_[t];
  return signed_area(vertices_[tr[0]], vertices_[tr[1]], vertices_[tr[2]]);
}

double TriangleMesh::area() const {
  double s = 0.0;
  for (int t = 0; t < num_triangles(); ++t) s += triangle_area(t);
  return s;
}

TriangleMesh unit_square_mesh(int n) {
  if (n < 1) throw std::invalid_argument("unit_square_mesh: n must be >= 1");
  std::vector<Vec2> v;
  v.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) v.push_back({double(i) / n, double(j) / n});
  std::vector<Triangle> t;
  t.reserve(2 * static_cast<std::size_t>(n) * n);
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      t.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      t.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return TriangleMesh(std::move(v), std::move(t));
}

TriangleMesh criss_cross_square_mesh(int n) {
  if (n < 1) throw std::invalid_argument("criss_cross_square_mesh: n must be >= 1");
  std::vector<Vec2> v;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) v.push_back({double(i) / n, double(j) / n});
  const int corners = static_cast<int>(v.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) v.push_back({(i + 0.5) / n, (j + 0.5) / n});
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  std::vector<Triangle> t;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int c = corners + j * n + i;
      const int a = id(i, j), b = id(i + 1, j), d = id(i + 1, j + 1), e = id(i, j + 1);
      t.push_back({a, b, c});
      t.push_back({b, d, c});
      t.push_back({d, e, c});
      t.push_back({e, a, c});
    }
  return TriangleMesh(std::move(v), std::move(t));
}

TriangleMesh uniform_refine(const TriangleMesh& mesh) {
  TriangleMesh fine;
  const int nv = mesh.num_vertices();
  fine.vertices_.assign(mesh.vertices_.begin(), mesh.vertices_.end());
  fine.vertices_.reserve(nv + mesh.num_edges());
  fine.parents_.resize(nv + mesh.num_edges());
  for (int v = 0; v < nv; ++v) fine.parents_[v] = {v, v};
  for (int e = 0; e < mesh.num_edges(); ++e) {
    const auto [a, b] = mesh.edges_[e].vertices;
    fine.vertices_.push_back(0.5 * (mesh.vertices_[a] + mesh.vertices_[b]));
    fine.parents_[nv + e] = {a, b};
  }
  fine.triangles_.reserve(4 * static_cast<std::size_t>(mesh.num_triangles()));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tr = mesh.triangles_[t];
    const auto& te = mesh.triangle_edges_[t];
    // te[k] is opposite tr[k]
    const int m01 = nv + te[2], m12 = nv + te[0], m20 = nv + te[1];
    fine.triangles_.push_back({tr[0], m01, m20});
    fine.triangles_.push_back({m01, tr[1], m12});
    fine.triangles_.push_back({m20, m12, tr[2]});
    fine.triangles_.push_back({m01, m12, m20});
  }
  fine.parent_vertex_count_ = nv;
  fine.level_ = mesh.level_ + 1;
  fine.build_topology();
  fine.compute_quality();
  fine.convex_ = mesh.convex_;
  return fine;
}

std::int64_t refined_vertex_count(const TriangleMesh& mesh, int levels) {
  std::int64_t v = mesh.num_vertices(), e = mesh.num_edges(), t = mesh.num_triangles();
  for (int l = 0; l < levels; ++l) {
    const std::int64_t v2 = v + e, e2 = 2 * e + 3 * t, t2 = 4 * t;
    v = v2;
    e = e2;
    t = t2;
  }
  return v;
}

Eigen::VectorXd prolongate(const TriangleMesh& fine, const Eigen::VectorXd& coarse) {
  const auto parents = fine.vertex_parents();
  if (parents.empty() || coarse.size() != fine.parent_vertex_count())
    throw std::invalid_argument("prolongate: field does not live on the parent mesh");
  Eigen::VectorXd out(fine.num_vertices());
  for (int v = 0; v < fine.num_vertices(); ++v)
    out[v] = 0.5 * (coarse[parents[v][0]] + coarse[parents[v][1]]);
  return out;
}

MeshGeometry compute_geometry(const TriangleMesh& mesh) {
  MeshGeometry g;
  const auto verts = mesh.vertices();
  const auto tris = mesh.triangles();
  const int nt = mesh.num_triangles();
  g.area.resize(nt);
  g.h_T.resize(nt);
  g.hat_gradients.resize(nt);
  for (int t = 0; t < nt; ++t) {
    const Vec2 p0 = verts[tris[t][0]], p1 = verts[tris[t][1]], p2 = verts[tris[t][2]];
    const double a = signed_area(p0, p1, p2);
    if (!(a > 0.0)) throw std::invalid_argument("degenerate triangle in geometry");
    g.area[t] = a;
    g.h_T[t] = std::sqrt(a);
    g.h_max = std::max(g.h_max, g.h_T[t]);
    // grad phi_k = perp(edge opposite k) / (2|T|), rotated inward
    const std::array<Vec2, 3> p{p0, p1, p2};
    for (int k = 0; k < 3; ++k) {
      const Vec2 e = p[(k + 2) % 3] - p[(k + 1) % 3];
      g.hat_gradients[t][k] = Vec2{-e.y, e.x} * (1.0 / (2.0 * a));
    }
  }
  const auto edges = mesh.edges();
  g.h_e.resize(edges.size());
  g.edge_normals.resize(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Vec2 a = verts[edges[e].vertices[0]], b = verts[edges[e].vertices[1]];
    const Vec2 d = b - a;
    const double len = norm(d);
    g.h_e[e] = len;
    Vec2 n{d.y / len, -d.x / len};
    // orient away from triangles[0]: compare with the centroid of that triangle
    const auto& t0 = tris[edges[e].triangles[0]];
    const Vec2 c = (1.0 / 3.0) * (verts[t0[0]] + verts[t0[1]] + verts[t0[2]]);
    if (dot(n, a - c) < 0.0) n = -1.0 * n;
    g.edge_normals[e] = n;
  }
  return g;
}

void write_mesh_csv(const TriangleMesh& mesh, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  std::ofstream vf(directory / "vertices.csv");
  vf << "x,y,boundary\n";
  vf.precision(17);
  const auto& bd = mesh.boundary_flags();
  for (int v = 0; v < mesh.num_vertices(); ++v)
    vf << mesh.vertices()[v].x << ',' << mesh.vertices()[v].y << ',' << (bd[v] ? 1 : 0) << '\n';
  std::ofstream tf(directory / "triangles.csv");
  tf << "v0,v1,v2\n";
  for (const auto& t : mesh.triangles()) tf << t[0] << ',' << t[1] << ',' << t[2] << '\n';
  if (!vf || !tf) throw std::runtime_error("failed to write mesh csv to " + directory.string());
}

}  // namespace qmcfem
