#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <thread>

#include "sketchstress/stressnet.hpp"

namespace sketchstress {

struct RegionSpec {
  std::array<int, 2> center{0, 0};  // (column, row)
  double radius = 8.0;              // pixels
  double angle_tolerance = 10.0;    // degrees
  int max_points = 8;

  void validate() const {
    require(radius >= 1.0, ErrorCode::kInvalidArgument, "region radius must be >= 1 pixel");
    require(angle_tolerance >= 0.0 && angle_tolerance <= 90.0, ErrorCode::kInvalidArgument,
            "angle tolerance must lie in [0, 90] degrees");
    require(max_points >= 1, ErrorCode::kInvalidArgument, "max_points must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"center", center}, {"radius", radius}, {"angle_tolerance", angle_tolerance}, {"max_points", max_points}};
  }
};

struct AlignedPoint {
  std::array<int, 2> pixel{0, 0};
  double deviation_deg = 0.0;
  double distance = 0.0;
};

/// Angle in degrees between two decoded normals. Identical encodings give exactly 0.
inline double normal_deviation_deg(const ImageF& normals, int c0, int r0, int c1, int r1) {
  bool same = true;
  for (int k = 0; k < 3; ++k) same = same && normals.at(c0, r0, k) == normals.at(c1, r1, k);
  if (same) return 0.0;
  const Vec3 a = decode_normal(normals, c0, r0), b = decode_normal(normals, c1, r1);
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 180.0;
  return std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0)) * 180.0 / M_PI;
}

/// Mask pixels within `radius` of the centre whose normal deviates by at most
/// the tolerance, best first: deviation, then distance, then row-major order.
/// The centre itself always leads the list.
inline std::vector<AlignedPoint> select_aligned_points(const ImageF& normals, const ImageF& mask,
                                                       const RegionSpec& region) {
  region.validate();
  require(normals.channels == 3 && mask.channels == 1 && normals.width == mask.width && normals.height == mask.height,
          ErrorCode::kInvalidArgument, "normal map and mask must be aligned");
  const auto [cc, cr] = region.center;
  require(mask.contains(cc, cr), ErrorCode::kOutOfBounds, "region centre outside the image");
  require(mask.at(cc, cr) >= 0.5f, ErrorCode::kInvalidArgument, "region centre lies outside the shape mask");

  std::vector<AlignedPoint> found;
  const int reach = static_cast<int>(std::ceil(region.radius));
  for (int r = std::max(0, cr - reach); r <= std::min(mask.height - 1, cr + reach); ++r) {
    for (int c = std::max(0, cc - reach); c <= std::min(mask.width - 1, cc + reach); ++c) {
      if (mask.at(c, r) < 0.5f) continue;
      const double dist = std::hypot(c - cc, r - cr);
      if (dist > region.radius) continue;
      const double dev = normal_deviation_deg(normals, cc, cr, c, r);
      if (dev > region.angle_tolerance) continue;
      found.push_back({{c, r}, dev, dist});
    }
  }
  std::sort(found.begin(), found.end(), [](const AlignedPoint& a, const AlignedPoint& b) {
    if (a.deviation_deg != b.deviation_deg) return a.deviation_deg < b.deviation_deg;
    if (a.distance != b.distance) return a.distance < b.distance;
    return std::tie(a.pixel[1], a.pixel[0]) < std::tie(b.pixel[1], b.pixel[0]);
  });
  if (found.size() > static_cast<std::size_t>(region.max_points)) found.resize(static_cast<std::size_t>(region.max_points));
  return found;
}

enum class AggregateMode { kMean, kSum };

inline AggregateMode aggregate_mode_from_string(const std::string& s) {
  if (s == "mean") return AggregateMode::kMean;
  if (s == "sum") return AggregateMode::kSum;
  throw Error(ErrorCode::kInvalidArgument, "aggregate mode must be 'mean' or 'sum', got '" + s + "'");
}

/// Pixelwise mean (or sum) of aligned stress maps. A single map is returned unchanged.
inline ImageF aggregate_stress(const std::vector<ImageF>& maps, AggregateMode mode = AggregateMode::kMean) {
  require(!maps.empty(), ErrorCode::kInvalidArgument, "nothing to aggregate");
  for (const auto& m : maps) require(m.same_shape(maps.front()), ErrorCode::kInvalidArgument, "stress maps differ in shape");
  if (maps.size() == 1) return maps.front();
  ImageF out(maps.front().width, maps.front().height, maps.front().channels);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double s = 0.0;
    for (const auto& m : maps) s += m.data[i];
    out.data[i] = static_cast<float>(mode == AggregateMode::kMean ? s / static_cast<double>(maps.size()) : s);
  }
  return out;
}

struct MultiForceResult {
  ImageF aggregated;
  ImageF normal;  // from the centre query
  ImageF mask;
  std::vector<AlignedPoint> points;  // in sketch pixel coordinates
  std::vector<ImageF> per_force;
  RegionSpec region;
  AggregateMode mode = AggregateMode::kMean;
  double latency_ms = 0.0;
};

using Predictor = std::function<InferenceResult(const ImageF& sketch, int col, int row)>;

/// Infers normals and mask once at the region centre, picks aligned force
/// points on the model grid, queries each, and aggregates. `region` is in
/// sketch pixels; with a sketch `factor` times the model resolution the
/// radius shrinks by the same factor and each chosen model pixel maps back to
/// the sketch pixel with the centre's sub-cell offset.
inline MultiForceResult multi_force_query(const Predictor& predict, const ImageF& sketch, const RegionSpec& region,
                                          AggregateMode mode = AggregateMode::kMean, int workers = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  region.validate();
  require(sketch.contains(region.center[0], region.center[1]), ErrorCode::kOutOfBounds, "region centre outside the sketch");
  MultiForceResult out;
  out.region = region;
  out.mode = mode;
  const InferenceResult centre = predict(sketch, region.center[0], region.center[1]);
  out.normal = centre.normal;
  out.mask = centre.mask;
  const int factor = sketch.width / centre.mask.width;
  require(factor >= 1 && factor * centre.mask.width == sketch.width, ErrorCode::kInvalidArgument,
          "model output does not divide the sketch size");

  RegionSpec grid = region;
  grid.center = {region.center[0] / factor, region.center[1] / factor};
  grid.radius = std::max(1.0, region.radius / factor);
  const int off_c = region.center[0] % factor, off_r = region.center[1] % factor;
  out.points = select_aligned_points(centre.normal, centre.mask, grid);
  for (auto& p : out.points) {
    p.pixel = {p.pixel[0] * factor + off_c, p.pixel[1] * factor + off_r};
    p.distance *= factor;
  }

  out.per_force.resize(out.points.size());
  out.per_force[0] = centre.stress;  // the centre always leads
  const std::size_t n = out.points.size();
  auto run = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step)
      out.per_force[i] = predict(sketch, out.points[i].pixel[0], out.points[i].pixel[1]).stress;
  };
  const std::size_t pool_size = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n - 1);
  if (pool_size <= 1) {
    run(1, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < pool_size; ++w) pool.emplace_back(run, 1 + w, pool_size);
    for (auto& t : pool) t.join();
  }
  out.aggregated = aggregate_stress(out.per_force, mode);
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline MultiForceResult multi_force_query(const InferenceModel& model, const ImageF& sketch, const RegionSpec& region,
                                          AggregateMode mode = AggregateMode::kMean, int workers = 1) {
  return multi_force_query([&](const ImageF& s, int c, int r) { return model.infer(s, c, r); }, sketch, region, mode,
                           workers);
}

}  // namespace sketchstress
