#pragma once

#include <cmath>
#include <map>
#include <numbers>

#include "sketchstress/mesh.hpp"

// Procedural watertight fixtures: subdivided boxes, UV spheres, and simple
// furniture assembled from overlapping boxes.
namespace sketchstress::primitives {

/// Axis-aligned box with each face tessellated into a regular grid so that
/// vertex spacing is at most `spacing`.
inline SurfaceMesh box(const Vec3& lo, const Vec3& hi, double spacing) {
  std::array<int, 3> segs{};
  for (int a = 0; a < 3; ++a) {
    segs[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / spacing - 1e-9)));
  }
  SurfaceMesh mesh;
  std::map<std::array<int, 3>, int> ids;
  auto vertex = [&](std::array<int, 3> ijk) {
    auto it = ids.find(ijk);
    if (it != ids.end()) return it->second;
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = ijk[a] == segs[a] ? hi[a] : lo[a] + (hi[a] - lo[a]) * ijk[a] / segs[a];
    }
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    ids.emplace(ijk, id);
    return id;
  };
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      Vec3 outward = Vec3::Zero();
      outward[axis] = side == 0 ? -1.0 : 1.0;
      for (int i = 0; i < segs[u]; ++i) {
        for (int j = 0; j < segs[v]; ++j) {
          std::array<int, 3> c[4];
          const int du[4] = {0, 1, 1, 0};
          const int dv[4] = {0, 0, 1, 1};
          for (int k = 0; k < 4; ++k) {
            c[k][axis] = side == 0 ? 0 : segs[axis];
            c[k][u] = i + du[k];
            c[k][v] = j + dv[k];
          }
          int q[4];
          for (int k = 0; k < 4; ++k) q[k] = vertex(c[k]);
          // e_u x e_v = +axis, so the (0,1,2,3) winding faces +axis.
          if (side == 1) {
            mesh.triangles.push_back({q[0], q[1], q[2]});
            mesh.triangles.push_back({q[0], q[2], q[3]});
          } else {
            mesh.triangles.push_back({q[0], q[2], q[1]});
            mesh.triangles.push_back({q[0], q[3], q[2]});
          }
        }
      }
    }
  }
  mesh.update_normals();
  return mesh;
}

inline SurfaceMesh uv_sphere(const Vec3& center, double radius, int slices, int stacks) {
  SurfaceMesh mesh;
  mesh.vertices.push_back(center + Vec3(0, radius, 0));
  for (int i = 1; i < stacks; ++i) {
    const double phi = std::numbers::pi * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double theta = 2.0 * std::numbers::pi * j / slices;
      mesh.vertices.push_back(center + radius * Vec3(std::sin(phi) * std::cos(theta), std::cos(phi),
                                                     std::sin(phi) * std::sin(theta)));
    }
  }
  mesh.vertices.push_back(center + Vec3(0, -radius, 0));
  const int south = static_cast<int>(mesh.vertices.size()) - 1;
  auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
  auto add = [&](int a, int b, int c) {
    const Vec3 n = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
    const Vec3 mid = (mesh.vertices[a] + mesh.vertices[b] + mesh.vertices[c]) / 3.0 - center;
    if (n.dot(mid) >= 0) {
      mesh.triangles.push_back({a, b, c});
    } else {
      mesh.triangles.push_back({a, c, b});
    }
  };
  for (int j = 0; j < slices; ++j) {
    add(0, ring(1, j), ring(1, j + 1));
    add(south, ring(stacks - 1, j), ring(stacks - 1, j + 1));
  }
  for (int i = 1; i + 1 < stacks; ++i) {
    for (int j = 0; j < slices; ++j) {
      add(ring(i, j), ring(i + 1, j), ring(i + 1, j + 1));
      add(ring(i, j), ring(i + 1, j + 1), ring(i, j + 1));
    }
  }
  mesh.update_normals();
  return mesh;
}

inline SurfaceMesh union_of(const std::vector<SurfaceMesh>& parts) {
  SurfaceMesh out;
  for (const auto& p : parts) out.append(p);
  return out;
}

/// Four-legged chair with a back rest; parts overlap so the union is solid.
inline SurfaceMesh chair(double spacing = 0.015) {
  const double leg = 0.05;
  std::vector<SurfaceMesh> parts;
  parts.push_back(box({-0.25, 0.44, -0.25}, {0.25, 0.50, 0.25}, spacing));
  for (double sx : {-1.0, 1.0}) {
    for (double sz : {-1.0, 1.0}) {
      const double x0 = sx < 0 ? -0.25 : 0.25 - leg;
      const double z0 = sz < 0 ? -0.25 : 0.25 - leg;
      parts.push_back(box({x0, 0.0, z0}, {x0 + leg, 0.46, z0 + leg}, spacing));
    }
  }
  parts.push_back(box({-0.25, 0.48, 0.19}, {0.25, 1.0, 0.25}, spacing));
  return union_of(parts);
}

inline SurfaceMesh table(double spacing = 0.015) {
  const double leg = 0.06;
  std::vector<SurfaceMesh> parts;
  parts.push_back(box({-0.4, 0.68, -0.3}, {0.4, 0.74, 0.3}, spacing));
  for (double sx : {-1.0, 1.0}) {
    for (double sz : {-1.0, 1.0}) {
      const double x0 = sx < 0 ? -0.36 : 0.36 - leg;
      const double z0 = sz < 0 ? -0.26 : 0.26 - leg;
      parts.push_back(box({x0, 0.0, z0}, {x0 + leg, 0.70, z0 + leg}, spacing));
    }
  }
  return union_of(parts);
}

}  // namespace sketchstress::primitives
