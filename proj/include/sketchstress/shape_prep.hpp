#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <vector>

#include "sketchstress/camera.hpp"
#include "sketchstress/mesh.hpp"
#include "sketchstress/random.hpp"
#include "sketchstress/raster.hpp"
#include "sketchstress/raycast.hpp"

namespace sketchstress {

/// Partition of surface vertices into the clamped (Dirichlet) set near the
/// ground and the force-admissible contact set.
struct RegionLabels {
  std::vector<int> fixed;
  std::vector<int> contact;
  std::vector<std::uint8_t> is_fixed;  // indexed by vertex

  bool fixed_vertex(int v) const { return is_fixed[static_cast<std::size_t>(v)] != 0; }

  bool contact_triangle(const SurfaceMesh& mesh, int t) const {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    return !fixed_vertex(tri[0]) && !fixed_vertex(tri[1]) && !fixed_vertex(tri[2]);
  }

  static RegionLabels from_mask(std::vector<std::uint8_t> mask) {
    RegionLabels labels;
    for (std::size_t v = 0; v < mask.size(); ++v) {
      (mask[v] ? labels.fixed : labels.contact).push_back(static_cast<int>(v));
    }
    labels.is_fixed = std::move(mask);
    return labels;
  }
};

struct ForceSample {
  Vec3 location = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();  // outward
  Vec3 direction = -Vec3::UnitY();  // applied along -normal
  double magnitude = 100.0;  // newtons
  int view_id = 0;
  Vec2 pixel = Vec2::Zero();  // continuous image position under the view camera
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();

  /// Integer pixel (column, row) containing the force location.
  std::array<int, 2> pixel_index() const {
    return {static_cast<int>(std::floor(pixel.x())), static_cast<int>(std::floor(pixel.y()))};
  }
};

/// Uniform scale to a unit bounding sphere (about the bounding-box center),
/// then translate to rest on y = 0 with the box centered in X and Z.
inline SurfaceMesh normalize_shape(const SurfaceMesh& mesh) {
  require_watertight(mesh);
  const Vec3 center = mesh.bounds().center();
  double radius = 0.0;
  for (const auto& v : mesh.vertices) radius = std::max(radius, (v - center).norm());
  require(radius > 0.0, ErrorCode::kInvalidArgument, "mesh has zero extent");

  SurfaceMesh out = mesh;
  for (auto& v : out.vertices) v = (v - center) / radius;
  const BoundingBox box = out.bounds();
  const Vec3 shift(-box.center().x(), -box.lo.y(), -box.center().z());
  for (auto& v : out.vertices) v += shift;
  out.update_normals();
  return out;
}

/// Vertices at height y <= ratio * max_y are clamped; the rest may receive
/// forces. Expects a normalized mesh resting on y = 0.
inline RegionLabels assign_regions(const SurfaceMesh& mesh, double ratio) {
  require(ratio > 0.0 && ratio < 1.0, ErrorCode::kInvalidArgument, "region ratio must lie in (0, 1)");
  const double threshold = ratio * mesh.bounds().hi.y();
  std::vector<std::uint8_t> mask(mesh.num_vertices(), 0);
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) mask[v] = mesh.vertices[v].y() <= threshold ? 1 : 0;
  RegionLabels labels = RegionLabels::from_mask(std::move(mask));
  require(!labels.fixed.empty(), ErrorCode::kNoGroundContact,
          "no ground contact: no vertex lies below the fixed-region threshold");
  return labels;
}

/// True when the ray from `point` towards the eye leaves the mesh without
/// hitting any other triangle.
inline bool visible_from(const SurfaceMesh& mesh, const Camera& camera, const Vec3& point, int triangle) {
  const Vec3 dir = camera.view();
  return !first_hit(mesh, point, dir, 1e-7, triangle).has_value();
}

/// Area-uniform samples over the front-facing, unoccluded contact surface.
/// Triangles are drawn by area, positions by uniform barycentric jitter, and
/// hidden candidates are rejected. Deterministic for a given seed.
inline std::vector<ForceSample> sample_forces(const SurfaceMesh& mesh, const RegionLabels& labels,
                                              const Camera& camera, int count, std::uint64_t seed,
                                              int view_id = 0, double magnitude = 100.0) {
  require(count >= 1, ErrorCode::kInvalidArgument, "force count must be >= 1");
  require(!labels.contact.empty(), ErrorCode::kEmptyRegion, "contact region is empty");
  require(labels.is_fixed.size() == mesh.num_vertices(), ErrorCode::kInvalidArgument,
          "region labels do not match mesh");

  const Vec3 view = camera.view();
  std::vector<int> candidates;
  std::vector<double> cdf;
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    if (!labels.contact_triangle(mesh, static_cast<int>(t))) continue;
    // Edge-on faces (cos below 1e-6) would yield grazing, unreproducible hits.
    if (mesh.face_normal(t).dot(view) <= 1e-6) continue;
    total += mesh.face_area(t);
    candidates.push_back(static_cast<int>(t));
    cdf.push_back(total);
  }
  require(total > 0.0, ErrorCode::kEmptyRegion, "no visible contact area under this camera");

  // Candidates must also land on a pixel the rasterized silhouette covers,
  // so every sample's pixel lies inside the rendered shape mask.
  const Raster coverage = rasterize(mesh, camera);
  Rng rng(seed);
  std::vector<ForceSample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  const long max_attempts = 1000L + 200L * count;
  long attempts = 0;
  while (static_cast<int>(samples.size()) < count) {
    require(++attempts <= max_attempts, ErrorCode::kEmptyRegion,
            "visible contact area is empty (all candidates occluded)");
    const double pick = uniform01(rng) * total;
    const auto slot = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin());
    const int t = candidates[std::min(slot, candidates.size() - 1)];
    const double r1 = std::sqrt(uniform01(rng));
    const double r2 = uniform01(rng);
    const Vec3 bary(1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const Vec3 p = bary[0] * mesh.vertices[tri[0]] + bary[1] * mesh.vertices[tri[1]] + bary[2] * mesh.vertices[tri[2]];
    const Vec3 projected = camera.project(p);
    const Vec2 px(projected.x(), projected.y());
    if (!camera.inside_image(px)) continue;
    if (!coverage.covered(static_cast<int>(std::floor(px.x())), static_cast<int>(std::floor(px.y())))) continue;
    if (!visible_from(mesh, camera, p, t)) continue;

    ForceSample s;
    s.location = p;
    s.normal = mesh.face_normal(static_cast<std::size_t>(t));
    s.direction = -s.normal;
    s.magnitude = magnitude;
    s.view_id = view_id;
    s.pixel = px;
    s.triangle = t;
    s.barycentric = bary;
    samples.push_back(s);
  }
  return samples;
}

/// Force on a given surface point (closest triangle), used for hand-placed loads.
inline ForceSample force_at(const SurfaceMesh& mesh, const Vec3& point, double magnitude = 100.0) {
  const SurfacePoint sp = closest_surface_point(mesh, point);
  ForceSample s;
  s.location = sp.position;
  s.triangle = sp.triangle;
  s.barycentric = sp.barycentric;
  s.normal = mesh.face_normal(static_cast<std::size_t>(sp.triangle));
  s.direction = -s.normal;
  s.magnitude = magnitude;
  return s;
}

// --- JSON sidecar -----------------------------------------------------------

inline nlohmann::json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

inline nlohmann::json force_to_json(const ForceSample& f) {
  return {{"location", vec_json(f.location)},   {"normal", vec_json(f.normal)},
          {"direction", vec_json(f.direction)}, {"magnitude", f.magnitude},
          {"view_id", f.view_id},               {"pixel", vec_json(f.pixel)},
          {"triangle", f.triangle},             {"barycentric", vec_json(f.barycentric)}};
}

inline ForceSample force_from_json(const nlohmann::json& j) {
  ForceSample f;
  for (int k = 0; k < 3; ++k) {
    f.location[k] = j.at("location").at(k).get<double>();
    f.normal[k] = j.at("normal").at(k).get<double>();
    f.direction[k] = j.at("direction").at(k).get<double>();
    f.barycentric[k] = j.at("barycentric").at(k).get<double>();
  }
  f.pixel = Vec2(j.at("pixel").at(0).get<double>(), j.at("pixel").at(1).get<double>());
  f.magnitude = j.at("magnitude").get<double>();
  f.view_id = j.at("view_id").get<int>();
  f.triangle = j.at("triangle").get<int>();
  return f;
}

inline nlohmann::json regions_sidecar(const std::string& shape_id, double ratio, const RegionLabels& labels,
                                      const std::vector<ForceSample>& forces, std::uint64_t seed) {
  nlohmann::json j;
  j["shape_id"] = shape_id;
  j["ratio"] = ratio;
  j["fixed"] = labels.fixed;
  j["contact"] = labels.contact;
  j["seed"] = seed;
  j["forces"] = nlohmann::json::array();
  for (const auto& f : forces) j["forces"].push_back(force_to_json(f));
  return j;
}

}  // namespace sketchstress
