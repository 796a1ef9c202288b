#pragma once

#include <optional>

#include "sketchstress/mesh.hpp"

namespace sketchstress {

struct RayHit {
  double t = 0.0;
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();
};

/// Moller-Trumbore intersection; returns (t, u, v) with barycentric
/// (1-u-v, u, v) when the ray hits the triangle (either side).
inline std::optional<Vec3> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                              const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-18) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tvec = origin - a;
  const double u = tvec.dot(pvec) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  return Vec3(e2.dot(qvec) * inv, u, v);
}

/// Nearest hit with t > t_min, skipping `skip_triangle`.
inline std::optional<RayHit> first_hit(const SurfaceMesh& mesh, const Vec3& origin, const Vec3& dir,
                                       double t_min = 1e-9, int skip_triangle = -1) {
  std::optional<RayHit> best;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (static_cast<int>(t) == skip_triangle) continue;
    const auto& tri = mesh.triangles[t];
    const auto hit = intersect_triangle(origin, dir, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                        mesh.vertices[tri[2]]);
    if (!hit || (*hit)[0] <= t_min) continue;
    if (!best || (*hit)[0] < best->t) {
      best = RayHit{(*hit)[0], static_cast<int>(t), Vec3(1.0 - (*hit)[1] - (*hit)[2], (*hit)[1], (*hit)[2])};
    }
  }
  return best;
}

/// Closest point on triangle (a, b, c) to p, as barycentric coordinates.
inline Vec3 closest_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {1 - v - w, v, w};
}

struct SurfacePoint {
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();
  Vec3 position = Vec3::Zero();
  double distance = 0.0;
};

/// Brute-force closest surface point.
inline SurfacePoint closest_surface_point(const SurfaceMesh& mesh, const Vec3& p) {
  SurfacePoint best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    const Vec3 bary = closest_barycentric(p, a, b, c);
    const Vec3 q = bary[0] * a + bary[1] * b + bary[2] * c;
    const double d = (q - p).norm();
    if (d < best.distance) best = {static_cast<int>(t), bary, q, d};
  }
  return best;
}

}  // namespace sketchstress
