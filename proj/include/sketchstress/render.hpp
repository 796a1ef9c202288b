#pragma once

#include <nlohmann/json.hpp>

#include <deque>
#include <numeric>
#include <optional>
#include <span>

#include "sketchstress/camera.hpp"
#include "sketchstress/fem.hpp"
#include "sketchstress/image.hpp"
#include "sketchstress/raster.hpp"
#include "sketchstress/shape_prep.hpp"

namespace sketchstress {

struct RenderConfig {
  int image_size = 256;
  double crease_angle_deg = 20.0;
  int point_radius = 3;  // at 256 px; scaled proportionally
  double canny_low = 0.1;
  double canny_high = 0.2;
};

// --- normal map encoding ---------------------------------------------------

inline constexpr float kNormalBackground = 0.5f;

inline Vec3 decode_normal(float r, float g, float b) {
  const Vec3 v(2.0 * r - 1.0, 2.0 * g - 1.0, 2.0 * b - 1.0);
  const double len = v.norm();
  return len > 0 ? Vec3(v / len) : Vec3::Zero();
}

inline Vec3 decode_normal(const ImageF& normal_map, int col, int row) {
  return decode_normal(normal_map.at(col, row, 0), normal_map.at(col, row, 1), normal_map.at(col, row, 2));
}

inline void encode_normal(ImageF& normal_map, int col, int row, const Vec3& n) {
  for (int k = 0; k < 3; ++k) normal_map.at(col, row, k) = static_cast<float>(0.5 * (n[k] + 1.0));
}

/// Foreground = any channel away from the mid-gray background. Unit normals
/// always have a component of magnitude >= 1/sqrt(3), so quantized
/// foreground never reaches the background.
inline ImageF mask_from_normal_map(const ImageF& normal_map) {
  ImageF mask(normal_map.width, normal_map.height, 1, 0.0f);
  for (int r = 0; r < normal_map.height; ++r) {
    for (int c = 0; c < normal_map.width; ++c) {
      float dev = 0.0f;
      for (int k = 0; k < 3; ++k) dev = std::max(dev, std::abs(normal_map.at(c, r, k) - kNormalBackground));
      mask.at(c, r) = dev > 0.05f ? 1.0f : 0.0f;
    }
  }
  return mask;
}

// --- view rendering -----------------------------------------------------------

struct RenderedView {
  ImageF normal;      // 3ch camera-space normals in [0,1]
  ImageF mask;        // 1ch binary silhouette
  ImageF stress_raw;  // 1ch interpolated per-vertex values, 0 outside
  Raster raster;
};

/// Rasterizes front faces; per-pixel normals interpolate vertex normals
/// except at corners sharper than the crease angle, where the face normal
/// is used. Stress is interpolated barycentrically from `stress`, which may
/// be empty.
inline RenderedView render_view(const SurfaceMesh& mesh, std::span<const double> stress, const Camera& camera,
                                const RenderConfig& config = {}) {
  require(stress.empty() || stress.size() == mesh.num_vertices(), ErrorCode::kInvalidArgument,
          "stress field does not match mesh vertices");
  RenderedView out;
  out.raster = rasterize(mesh, camera);
  const Raster& r = out.raster;
  out.normal = ImageF(r.width, r.height, 3, kNormalBackground);
  out.mask = r.mask();
  out.stress_raw = ImageF(r.width, r.height, 1, 0.0f);
  require(image_sum(out.mask) > 0.0, ErrorCode::kEmptyRegion, "empty silhouette: the camera misses the shape");

  const double crease_cos = std::cos(config.crease_angle_deg * std::numbers::pi / 180.0);
  for (int row = 0; row < r.height; ++row) {
    for (int col = 0; col < r.width; ++col) {
      const std::size_t i = static_cast<std::size_t>(row) * r.width + col;
      const int t = r.triangle[i];
      if (t < 0) continue;
      const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
      const Vec3 face = mesh.face_normal(static_cast<std::size_t>(t));
      Vec3 n = Vec3::Zero();
      double s = 0.0;
      for (int k = 0; k < 3; ++k) {
        const Vec3& vn = mesh.normals[static_cast<std::size_t>(tri[k])];
        n += r.barycentric[i][k] * (vn.dot(face) >= crease_cos ? vn : face);
        if (!stress.empty()) s += r.barycentric[i][k] * stress[static_cast<std::size_t>(tri[k])];
      }
      encode_normal(out.normal, col, row, camera.to_camera(n.normalized()));
      out.stress_raw.at(col, row) = static_cast<float>(s);
    }
  }
  return out;
}

// --- sketch extraction ---------------------------------------------------------

/// Canny edge detector on a multi-channel image in [0,1]: binomial
/// smoothing, per-channel Sobel (normalized so a unit step responds with
/// 1), strongest channel per pixel, non-maximum suppression, and 8-connected
/// hysteresis between `low` and `high`.
inline ImageF canny(const ImageF& img, double low, double high) {
  const int w = img.width, h = img.height;
  auto clampc = [&](int c) { return std::clamp(c, 0, w - 1); };
  auto clampr = [&](int r) { return std::clamp(r, 0, h - 1); };
  ImageF tmp(w, h, img.channels), smooth(w, h, img.channels);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < img.channels; ++k) {
        tmp.at(c, r, k) = 0.25f * img.at(clampc(c - 1), r, k) + 0.5f * img.at(c, r, k) + 0.25f * img.at(clampc(c + 1), r, k);
      }
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < img.channels; ++k) {
        smooth.at(c, r, k) = 0.25f * tmp.at(c, clampr(r - 1), k) + 0.5f * tmp.at(c, r, k) + 0.25f * tmp.at(c, clampr(r + 1), k);
      }
    }
  }

  std::vector<double> mag(static_cast<std::size_t>(w) * h, 0.0), gx(mag.size(), 0.0), gy(mag.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      for (int k = 0; k < img.channels; ++k) {
        auto px = [&](int dc, int dr) { return static_cast<double>(smooth.at(clampc(c + dc), clampr(r + dr), k)); };
        const double dx = ((px(1, -1) + 2 * px(1, 0) + px(1, 1)) - (px(-1, -1) + 2 * px(-1, 0) + px(-1, 1))) / 4.0;
        const double dy = ((px(-1, 1) + 2 * px(0, 1) + px(1, 1)) - (px(-1, -1) + 2 * px(0, -1) + px(1, -1))) / 4.0;
        const double m = std::hypot(dx, dy);
        if (m > mag[i]) {
          mag[i] = m;
          gx[i] = dx;
          gy[i] = dy;
        }
      }
    }
  }
  std::vector<std::uint8_t> state(mag.size(), 0);  // 0 none, 1 weak, 2 strong
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (mag[i] < low) continue;
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int dc = 1, dr = 0;
      if (angle >= 22.5 && angle < 67.5) {
        dc = 1;
        dr = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        dc = 0;
        dr = 1;
      } else if (angle >= 112.5 && angle < 157.5) {
        dc = -1;
        dr = 1;
      }
      auto at = [&](int cc, int rr) {
        if (cc < 0 || rr < 0 || cc >= w || rr >= h) return 0.0;
        return mag[static_cast<std::size_t>(rr) * w + cc];
      };
      if (mag[i] > at(c + dc, r + dr) && mag[i] >= at(c - dc, r - dr)) state[i] = mag[i] >= high ? 2 : 1;
    }
  }
  ImageF edges(w, h, 1, 0.0f);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i] == 2) {
      edges.data[i] = 1.0f;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int r = static_cast<int>(i / static_cast<std::size_t>(w));
    const int c = static_cast<int>(i % static_cast<std::size_t>(w));
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
        const std::size_t j = static_cast<std::size_t>(rr) * w + cc;
        if (state[j] == 1 && edges.data[j] == 0.0f) {
          edges.data[j] = 1.0f;
          queue.push_back(j);
        }
      }
    }
  }
  return edges;
}

/// Inner boundary of a binary mask (4-neighborhood; image border counts as outside).
inline ImageF mask_boundary(const ImageF& mask) {
  ImageF out(mask.width, mask.height, 1, 0.0f);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (mask.at(c, r) < 0.5f) continue;
      const int nb[4][2] = {{c - 1, r}, {c + 1, r}, {c, r - 1}, {c, r + 1}};
      for (const auto& q : nb) {
        if (!mask.contains(q[0], q[1]) || mask.at(q[0], q[1]) < 0.5f) {
          out.at(c, r) = 1.0f;
          break;
        }
      }
    }
  }
  return out;
}

/// Binary sketch: Canny edges of the normal map united with the silhouette.
inline ImageF extract_sketch(const ImageF& normal_map, const RenderConfig& config = {}) {
  require(normal_map.channels == 3, ErrorCode::kInvalidArgument, "sketch extraction expects a 3-channel normal map");
  ImageF sketch = canny(normal_map, config.canny_low, config.canny_high);
  const ImageF boundary = mask_boundary(mask_from_normal_map(normal_map));
  for (std::size_t i = 0; i < sketch.data.size(); ++i) sketch.data[i] = std::max(sketch.data[i], boundary.data[i]);
  return sketch;
}

// --- force encodings -----------------------------------------------------------

inline int point_radius_for(int image_size, const RenderConfig& config = {}) {
  return std::max(1, static_cast<int>(std::lround(config.point_radius * image_size / 256.0)));
}

/// Filled disc (dx^2 + dy^2 <= radius^2) centered on a pixel.
inline ImageF point_map(int width, int height, int col, int row, int radius) {
  require(col >= 0 && row >= 0 && col < width && row < height, ErrorCode::kOutOfBounds, "force pixel outside the image");
  ImageF p(width, height, 1, 0.0f);
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      if (dc * dc + dr * dr > radius * radius || !p.contains(col + dc, row + dr)) continue;
      p.at(col + dc, row + dr) = 1.0f;
    }
  }
  return p;
}

/// Intensity-weighted centroid (column, row) of a 1-channel image.
inline Vec2 centroid(const ImageF& img) {
  double sum = 0.0, sc = 0.0, sr = 0.0;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = img.at(c, r);
      sum += v;
      sc += v * c;
      sr += v * r;
    }
  }
  require(sum > 0.0, ErrorCode::kInvalidArgument, "centroid of an empty image");
  return {sc / sum, sr / sum};
}

/// Force-centered attention: with d_i the distance from pixel i to the force
/// pixel and d_mean its mean over mask pixels, M_p(i) = max(0, 1 - d_i/d_mean)
/// inside the mask and 0 outside.
inline ImageF attention_map(const ImageF& point, const ImageF& mask) {
  require_same_shape(point, mask, "attention_map");
  const Vec2 c = centroid(point);
  const int fc = static_cast<int>(std::lround(c.x()));
  const int fr = static_cast<int>(std::lround(c.y()));
  require(mask.contains(fc, fr) && mask.at(fc, fr) >= 0.5f, ErrorCode::kOutOfBounds, "force point lies outside the shape mask");
  double total = 0.0;
  std::size_t count = 0;
  for (int r = 0; r < mask.height; ++r) {
    for (int col = 0; col < mask.width; ++col) {
      if (mask.at(col, r) < 0.5f) continue;
      total += std::hypot(col - fc, r - fr);
      ++count;
    }
  }
  const double mean = total / static_cast<double>(count);
  ImageF out(mask.width, mask.height, 1, 0.0f);
  for (int r = 0; r < mask.height; ++r) {
    for (int col = 0; col < mask.width; ++col) {
      if (mask.at(col, r) < 0.5f) continue;
      const double d = std::hypot(col - fc, r - fr);
      out.at(col, r) = mean > 0.0 ? static_cast<float>(std::max(0.0, 1.0 - d / mean)) : 1.0f;
    }
  }
  return out;
}

// --- stress normalization --------------------------------------------------

/// Per-shape scaling by the maximum: S_i / max(S).
inline std::vector<double> normalize_shape_grained(std::span<const double> values) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "empty stress field");
  const double mx = *std::max_element(values.begin(), values.end());
  require(mx > 0.0, ErrorCode::kNumerical, "shape-grained normalization undefined: stress field has no positive value");
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / mx;
  return out;
}

/// Category statistics: population mean/std over the concatenated stress of
/// a category and the divisor tau applied after standardization.
struct CategoryStats {
  double mean = 0.0;
  double stddev = 1.0;
  double tau = 100.0;

  nlohmann::json to_json() const { return {{"mean", mean}, {"std", stddev}, {"tau", tau}}; }
  static CategoryStats from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("tau").get<double>()};
  }
};

inline CategoryStats category_stats(std::span<const double> all_values, double tau = 100.0) {
  require(all_values.size() >= 2, ErrorCode::kInvalidArgument, "category statistics need at least two values");
  require(tau > 0.0, ErrorCode::kInvalidArgument, "tau must be positive");
  long double sum = 0.0L;
  for (double v : all_values) sum += v;
  const double mean = static_cast<double>(sum / all_values.size());
  long double sq = 0.0L;
  for (double v : all_values) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(static_cast<double>(sq / all_values.size()));
  require(stddev > 0.0, ErrorCode::kNumerical, "category-grained normalization undefined: zero standard deviation");
  return {mean, stddev, tau};
}

inline std::vector<double> standardize(std::span<const double> values, const CategoryStats& stats) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - stats.mean) / stats.stddev;
  return out;
}

/// (S - mean) / std / tau with statistics computed once per category.
inline std::vector<double> normalize_category_grained(std::span<const double> values, const CategoryStats& stats) {
  auto out = standardize(values, stats);
  for (double& v : out) v /= stats.tau;
  return out;
}

inline std::vector<double> normalize_category_grained(std::span<const double> all_values, double tau = 100.0) {
  return normalize_category_grained(all_values, category_stats(all_values, tau));
}

enum class NormMode { kShape, kCategory };

inline std::string to_string(NormMode m) { return m == NormMode::kShape ? "shape" : "category"; }
inline NormMode norm_mode_from_string(const std::string& s) {
  if (s == "shape") return NormMode::kShape;
  if (s == "category") return NormMode::kCategory;
  throw Error(ErrorCode::kInvalidArgument, "unknown normalization mode: " + s);
}

// --- quadruple assembly ----------------------------------------------------

/// One training record: sketch x, point map p, normal map n, stress map y,
/// plus the shape mask and the force attention map.
struct Quadruple {
  ImageF sketch;
  ImageF point;
  ImageF normal;
  ImageF stress;
  ImageF mask;
  ImageF attention;
  std::array<int, 2> force_pixel{0, 0};
};

inline Quadruple build_quadruple(const SurfaceMesh& mesh, const RegionLabels& labels, const ForceSample& force,
                                 const StressField& stress, const Camera& camera, NormMode mode,
                                 const std::optional<CategoryStats>& stats = std::nullopt,
                                 const RenderConfig& config = {}) {
  require(force.triangle >= 0 && labels.contact_triangle(mesh, force.triangle), ErrorCode::kInvalidArgument,
          "force does not lie on a contact triangle");
  std::vector<double> normalized;
  if (mode == NormMode::kShape) {
    normalized = normalize_shape_grained(stress.values);
  } else {
    require(stats.has_value(), ErrorCode::kInvalidArgument, "category-grained mode needs category statistics");
    normalized = normalize_category_grained(stress.values, *stats);
  }
  const RenderedView view = render_view(mesh, normalized, camera, config);

  Quadruple q;
  q.normal = view.normal;
  q.mask = view.mask;
  q.stress = view.stress_raw;
  for (std::size_t i = 0; i < q.stress.data.size(); ++i) {
    q.stress.data[i] = q.mask.data[i] > 0.5f ? std::clamp(q.stress.data[i], 0.0f, 1.0f) : 0.0f;
  }
  q.sketch = extract_sketch(q.normal, config);
  q.force_pixel = force.pixel_index();
  q.point = point_map(camera.width, camera.height, q.force_pixel[0], q.force_pixel[1],
                      point_radius_for(camera.width, config));
  q.attention = attention_map(q.point, q.mask);
  return q;
}

/// Display-only jet transfer function (blue = low, red = high).
inline ImageF jet_colormap(const ImageF& scalar, const ImageF* mask = nullptr) {
  ImageF out(scalar.width, scalar.height, 3, 1.0f);
  for (int r = 0; r < scalar.height; ++r) {
    for (int c = 0; c < scalar.width; ++c) {
      if (mask && mask->at(c, r) < 0.5f) continue;
      const float v = std::clamp(scalar.at(c, r), 0.0f, 1.0f);
      out.at(c, r, 0) = std::clamp(1.5f - std::abs(4.0f * v - 3.0f), 0.0f, 1.0f);
      out.at(c, r, 1) = std::clamp(1.5f - std::abs(4.0f * v - 2.0f), 0.0f, 1.0f);
      out.at(c, r, 2) = std::clamp(1.5f - std::abs(4.0f * v - 1.0f), 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace sketchstress
