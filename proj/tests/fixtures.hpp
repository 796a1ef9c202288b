#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sketchstress/primitives.hpp"
#include "sketchstress/shape_prep.hpp"

namespace sketchstress::testing {

inline SurfaceMesh cantilever(double spacing = 0.01) {
  return primitives::box({0, 0, 0}, {1.0, 0.1, 0.1}, spacing);
}

/// Clamp the x = 0 end face.
inline RegionLabels cantilever_labels(const SurfaceMesh& bar) {
  std::vector<std::uint8_t> mask(bar.num_vertices());
  for (std::size_t v = 0; v < mask.size(); ++v) mask[v] = bar.vertices[v].x() <= 1e-12 ? 1 : 0;
  return RegionLabels::from_mask(std::move(mask));
}

/// Tip load of `magnitude` N pushing down on the top face, 5 mm from the free end.
inline ForceSample cantilever_tip_load(const SurfaceMesh& bar, double magnitude = 100.0) {
  return force_at(bar, {0.995, 0.1, 0.05}, magnitude);
}

/// Euler-Bernoulli root stress 6FL/(bh^2) for the tip-loaded bar.
inline double cantilever_root_stress(double force = 100.0, double arm = 0.995) {
  return 6.0 * force * arm / (0.1 * 0.1 * 0.1);
}

/// Peak von Mises over the root region (x < 0.2) where the bending moment peaks.
inline double root_region_max(const SurfaceMesh& bar, const std::vector<double>& values) {
  double peak = 0.0;
  for (std::size_t v = 0; v < values.size(); ++v) {
    if (bar.vertices[v].x() < 0.2) peak = std::max(peak, values[v]);
  }
  return peak;
}

inline SurfaceMesh normalized_chair() { return normalize_shape(primitives::chair()); }
inline SurfaceMesh normalized_table() { return normalize_shape(primitives::table()); }

inline SurfaceMesh normalized_cube(double spacing = 0.05) {
  return normalize_shape(primitives::box({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}, spacing));
}

inline SurfaceMesh normalized_sphere(int slices = 48, int stacks = 24) {
  return normalize_shape(primitives::uv_sphere({0, 0, 0}, 1.0, slices, stacks));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "tmp") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sketchstress_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace sketchstress::testing
