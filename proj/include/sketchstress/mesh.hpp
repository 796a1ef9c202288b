#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <utility>
#include <vector>

#include "sketchstress/error.hpp"

namespace sketchstress {

using Vec3 = Eigen::Vector3d;
using Triangle = std::array<int, 3>;

struct BoundingBox {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
};

/// Closed triangle surface. Vertex normals are area-weighted face normal
/// averages and are recomputed by `update_normals()`.
struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::vector<Vec3> normals;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }

  Vec3 face_cross(std::size_t t) const {
    const auto& tri = triangles[t];
    return (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]);
  }
  double face_area(std::size_t t) const { return 0.5 * face_cross(t).norm(); }
  Vec3 face_normal(std::size_t t) const { return face_cross(t).normalized(); }

  BoundingBox bounds() const {
    BoundingBox box;
    for (const auto& v : vertices) box.expand(v);
    return box;
  }

  void update_normals() {
    normals.assign(vertices.size(), Vec3::Zero());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      const Vec3 n = face_cross(t);
      for (int k : triangles[t]) normals[k] += n;
    }
    for (auto& n : normals) {
      const double len = n.norm();
      n = len > 0.0 ? Vec3(n / len) : Vec3(0.0, 1.0, 0.0);
    }
  }

  /// Signed enclosed volume; positive for outward-oriented closed surfaces.
  double signed_volume() const {
    double vol = 0.0;
    for (const auto& tri : triangles) {
      vol += vertices[tri[0]].dot(vertices[tri[1]].cross(vertices[tri[2]])) / 6.0;
    }
    return vol;
  }

  void append(const SurfaceMesh& other) {
    const int offset = static_cast<int>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (auto tri : other.triangles) {
      for (int& i : tri) i += offset;
      triangles.push_back(tri);
    }
    update_normals();
  }
};

struct WatertightReport {
  bool watertight = true;
  bool consistently_oriented = true;
  std::vector<std::pair<int, int>> open_edges;      // used by exactly one triangle
  std::vector<std::pair<int, int>> nonmanifold_edges;  // used by more than two
  std::vector<int> degenerate_triangles;

  bool ok() const {
    return watertight && consistently_oriented && degenerate_triangles.empty();
  }

  std::string describe() const {
    std::ostringstream os;
    if (!open_edges.empty()) {
      os << open_edges.size() << " open boundary edge(s):";
      const std::size_t shown = std::min<std::size_t>(open_edges.size(), 16);
      for (std::size_t i = 0; i < shown; ++i) {
        os << " (" << open_edges[i].first << "," << open_edges[i].second << ")";
      }
      if (shown < open_edges.size()) os << " ...";
      os << "; ";
    }
    if (!nonmanifold_edges.empty()) os << nonmanifold_edges.size() << " non-manifold edge(s); ";
    if (!consistently_oriented) os << "inconsistent triangle orientation; ";
    if (!degenerate_triangles.empty()) os << degenerate_triangles.size() << " degenerate triangle(s); ";
    return os.str();
  }
};

inline WatertightReport check_watertight(const SurfaceMesh& mesh, double min_area = 1e-14) {
  WatertightReport report;
  std::map<std::pair<int, int>, std::pair<int, int>> edges;  // undirected -> (uses, directed balance)
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] || mesh.face_area(t) <= min_area) {
      report.degenerate_triangles.push_back(static_cast<int>(t));
    }
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k];
      const int b = tri[(k + 1) % 3];
      auto& entry = edges[{std::min(a, b), std::max(a, b)}];
      entry.first += 1;
      entry.second += a < b ? 1 : -1;
    }
  }
  for (const auto& [edge, use] : edges) {
    if (use.first == 1) {
      report.open_edges.push_back(edge);
    } else if (use.first > 2) {
      report.nonmanifold_edges.push_back(edge);
    } else if (use.second != 0) {
      report.consistently_oriented = false;
    }
  }
  report.watertight = report.open_edges.empty() && report.nonmanifold_edges.empty();
  return report;
}

inline void require_watertight(const SurfaceMesh& mesh) {
  const auto report = check_watertight(mesh);
  if (!report.ok()) {
    throw Error(ErrorCode::kNotWatertight, "mesh is not watertight: " + report.describe());
  }
}

}  // namespace sketchstress
