#pragma once

#include <cmath>
#include <numbers>

#include "sketchstress/mesh.hpp"

namespace sketchstress {

using Vec2 = Eigen::Vector2d;

/// Orthographic camera orbiting the +Y axis. Image coordinates are (column,
/// row) with the origin at the top-left corner; pixel (c, r) covers
/// [c, c+1) x [r, r+1).
struct Camera {
  double azimuth_deg = 0.0;
  double elevation_deg = 10.0;
  int width = 256;
  int height = 256;
  Vec3 target = Vec3::Zero();
  double half_extent = 1.05;

  /// Frames a normalized mesh: looks at its bounding-box center.
  static Camera framing(const SurfaceMesh& mesh, double azimuth, double elevation, int size = 256) {
    Camera cam;
    cam.azimuth_deg = azimuth;
    cam.elevation_deg = elevation;
    cam.width = size;
    cam.height = size;
    cam.target = mesh.bounds().center();
    return cam;
  }

  /// Unit vector from the target towards the eye.
  Vec3 view() const {
    const double a = azimuth_deg * std::numbers::pi / 180.0;
    const double e = elevation_deg * std::numbers::pi / 180.0;
    return {std::sin(a) * std::cos(e), std::sin(e), std::cos(a) * std::cos(e)};
  }
  Vec3 right() const { return Vec3(0, 1, 0).cross(view()).normalized(); }
  Vec3 up() const { return view().cross(right()); }

  Vec3 to_camera(const Vec3& direction) const {
    return {direction.dot(right()), direction.dot(up()), direction.dot(view())};
  }

  /// Continuous image position of a world point; z is depth towards the eye.
  Vec3 project(const Vec3& p) const {
    const Vec3 c = to_camera(p - target);
    const double px = (c.x() / half_extent + 1.0) * 0.5 * width;
    const double py = (1.0 - c.y() / half_extent) * 0.5 * height;
    return {px, py, c.z()};
  }

  /// World-space point on the image plane through which the ray for image
  /// position (px, py) passes, `distance` units in front of the target.
  Vec3 unproject(double px, double py, double distance = 10.0) const {
    const double cx = (px / (0.5 * width) - 1.0) * half_extent;
    const double cy = (1.0 - py / (0.5 * height)) * half_extent;
    return target + cx * right() + cy * up() + distance * view();
  }

  bool inside_image(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width && px.y() < height;
  }
};

}  // namespace sketchstress
