#pragma once

#include "sketchstress/camera.hpp"
#include "sketchstress/image.hpp"
#include "sketchstress/mesh.hpp"

namespace sketchstress {

/// Per-pixel visible surface: triangle id (-1 for background) and the
/// barycentric coordinates of the pixel center on it.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<int> triangle;
  std::vector<Vec3> barycentric;
  std::vector<double> depth;

  bool covered(int col, int row) const {
    return col >= 0 && row >= 0 && col < width && row < height &&
           triangle[static_cast<std::size_t>(row) * width + col] >= 0;
  }

  ImageF mask() const {
    ImageF m(width, height, 1, 0.0f);
    for (std::size_t i = 0; i < triangle.size(); ++i) m.data[i] = triangle[i] >= 0 ? 1.0f : 0.0f;
    return m;
  }
};

/// Orthographic z-buffer rasterization of front-facing triangles, sampled at
/// pixel centers. Ties keep the lower triangle index.
inline Raster rasterize(const SurfaceMesh& mesh, const Camera& camera) {
  Raster r;
  r.width = camera.width;
  r.height = camera.height;
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  r.triangle.assign(n, -1);
  r.barycentric.assign(n, Vec3::Zero());
  r.depth.assign(n, -std::numeric_limits<double>::infinity());
  const Vec3 view = camera.view();

  std::vector<Vec3> projected(mesh.num_vertices());
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) projected[v] = camera.project(mesh.vertices[v]);

  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    if (mesh.face_cross(t).dot(view) <= 0.0) continue;
    const auto& tri = mesh.triangles[t];
    const Vec3& a = projected[tri[0]];
    const Vec3& b = projected[tri[1]];
    const Vec3& c = projected[tri[2]];
    // Image rows grow downward, so front faces wind clockwise on screen.
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (area == 0.0) continue;
    const int c0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int c1 = std::min(r.width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int r1 = std::min(r.height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));
    for (int row = r0; row <= r1; ++row) {
      const double py = row + 0.5;
      for (int col = c0; col <= c1; ++col) {
        const double px = col + 0.5;
        const double w0 = ((b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px)) / area;
        const double w1 = ((c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12) continue;
        const double z = w0 * a.z() + w1 * b.z() + w2 * c.z();
        const std::size_t i = static_cast<std::size_t>(row) * r.width + col;
        if (z > r.depth[i]) {
          r.depth[i] = z;
          r.triangle[i] = static_cast<int>(t);
          r.barycentric[i] = Vec3(w0, w1, w2);
        }
      }
    }
  }
  return r;
}

}  // namespace sketchstress
