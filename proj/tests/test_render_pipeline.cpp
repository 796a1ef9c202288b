#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "sketchstress/png_io.hpp"
#include "sketchstress/render.hpp"

using namespace sketchstress;
using namespace sketchstress::testing;

namespace {

int count_on(const ImageF& img) {
  return static_cast<int>(std::count_if(img.data.begin(), img.data.end(), [](float v) { return v > 0.5f; }));
}

ImageF dilate(const ImageF& mask, int radius) {
  ImageF out(mask.width, mask.height, 1, 0.0f);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (mask.at(c, r) < 0.5f) continue;
      for (int dr = -radius; dr <= radius; ++dr) {
        for (int dc = -radius; dc <= radius; ++dc) {
          if (out.contains(c + dc, r + dr)) out.at(c + dc, r + dr) = 1.0f;
        }
      }
    }
  }
  return out;
}

int components(const ImageF& img) {
  std::vector<int> label(img.pixels(), 0);
  int n = 0;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const auto i = static_cast<std::size_t>(r) * img.width + c;
      if (img.at(c, r) < 0.5f || label[i]) continue;
      ++n;
      std::vector<std::array<int, 2>> stack{{c, r}};
      label[i] = n;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (!img.contains(nx, ny) || img.at(nx, ny) < 0.5f) continue;
            auto& l = label[static_cast<std::size_t>(ny) * img.width + nx];
            if (!l) {
              l = n;
              stack.push_back({nx, ny});
            }
          }
        }
      }
    }
  }
  return n;
}

double pixels_per_unit(const Camera& cam) { return cam.width / (2.0 * cam.half_extent); }

}  // namespace

TEST(RenderView, SphereIsFilledDiscFacingCamera) {
  const auto sphere = normalized_sphere(96, 48);
  for (double az : {0.0, 45.0, 90.0}) {
    const auto cam = Camera::framing(sphere, az, 10);
    const auto view = render_view(sphere, {}, cam);
    const double radius = pixels_per_unit(cam);
    for (int r = 0; r < cam.height; ++r) {
      for (int c = 0; c < cam.width; ++c) {
        const double d = std::hypot(c + 0.5 - cam.width / 2.0, r + 0.5 - cam.height / 2.0);
        if (d < radius - 1.5) EXPECT_EQ(view.mask.at(c, r), 1.0f);
        if (d > radius + 0.5) EXPECT_EQ(view.mask.at(c, r), 0.0f);
      }
    }
    const Vec3 center = decode_normal(view.normal, cam.width / 2, cam.height / 2);
    EXPECT_LT((center - Vec3(0, 0, 1)).norm(), 0.02);
  }
}

TEST(RenderView, UniformStressInterpolatesToConstant) {
  const auto chair = normalized_chair();
  const std::vector<double> stress(chair.num_vertices(), 4.25e5);
  const auto view = render_view(chair, stress, Camera::framing(chair, 45, 10));
  for (std::size_t i = 0; i < view.mask.data.size(); ++i) {
    if (view.mask.data[i] > 0.5f) {
      EXPECT_NEAR(view.stress_raw.data[i], 4.25e5, 1e-6 * 4.25e5);
    } else {
      EXPECT_EQ(view.stress_raw.data[i], 0.0f);
    }
  }
}

TEST(RenderView, CubeMaskAreaMatchesOrthographicProjection) {
  const auto cube = normalized_cube();
  const auto cam = Camera::framing(cube, 45, 10);
  const auto view = render_view(cube, {}, cam);
  const double side = cube.bounds().extent().x();
  const Vec3 v = cam.view();
  const double area = side * side * (std::abs(v.x()) + std::abs(v.y()) + std::abs(v.z()));
  const double expected = area * std::pow(pixels_per_unit(cam), 2);
  EXPECT_NEAR(count_on(view.mask), expected, 0.02 * expected);
}

TEST(RenderView, ForegroundNormalsAreUnitAfterQuantization) {
  const auto chair = normalized_chair();
  const auto cam = Camera::framing(chair, 0, 10);
  const auto view = render_view(chair, {}, cam);
  const auto png = encode_png(view.normal, PngDepth::k8);
  const auto back = decode_png(png.data(), png.size()).image;
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      if (view.mask.at(c, r) < 0.5f) continue;
      const Vec3 raw(2.0 * back.at(c, r, 0) - 1.0, 2.0 * back.at(c, r, 1) - 1.0, 2.0 * back.at(c, r, 2) - 1.0);
      EXPECT_NEAR(raw.norm(), 1.0, 0.02);
      for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(back.at(c, r, k) - view.normal.at(c, r, k)), 1.0 / 255);
    }
  }
  EXPECT_EQ(mask_from_normal_map(back), view.mask);
}

TEST(RenderView, EmptySilhouetteIsAnError) {
  auto cube = normalized_cube();
  auto cam = Camera::framing(cube, 0, 10);
  cam.target += Vec3(50, 0, 0);
  EXPECT_THROW(render_view(cube, {}, cam), Error);
}

TEST(Sketch, BackgroundOnlyMapIsEmpty) {
  const ImageF flat(64, 64, 3, kNormalBackground);
  EXPECT_EQ(count_on(extract_sketch(flat)), 0);
}

TEST(Sketch, SphereSketchContainsSilhouette) {
  const auto sphere = normalized_sphere();
  const auto view = render_view(sphere, {}, Camera::framing(sphere, 0, 10));
  const auto sketch = extract_sketch(view.normal);
  const auto boundary = mask_boundary(view.mask);
  for (std::size_t i = 0; i < sketch.data.size(); ++i) {
    EXPECT_TRUE(sketch.data[i] == 0.0f || sketch.data[i] == 1.0f);
    if (boundary.data[i] > 0.5f) EXPECT_EQ(sketch.data[i], 1.0f);
  }
}

TEST(Sketch, CubeSketchHasInteriorEdges) {
  const auto cube = normalized_cube();
  const auto view = render_view(cube, {}, Camera::framing(cube, 45, 10));
  const auto sketch = extract_sketch(view.normal);
  const auto near_boundary = dilate(mask_boundary(view.mask), 2);
  const auto near_shape = dilate(view.mask, 2);
  ImageF interior(sketch.width, sketch.height, 1, 0.0f);
  for (std::size_t i = 0; i < sketch.data.size(); ++i) {
    if (sketch.data[i] > 0.5f) EXPECT_EQ(near_shape.data[i], 1.0f);
    if (sketch.data[i] > 0.5f && near_boundary.data[i] < 0.5f) interior.data[i] = 1.0f;
  }
  EXPECT_GE(components(interior), 1);
  // The three visible faces meet along three edges; the vertical one alone spans ~80 px.
  EXPECT_GT(count_on(interior), 100);
}

TEST(Sketch, ReproducibleBitExactly) {
  const auto chair = normalized_chair();
  const auto view = render_view(chair, {}, Camera::framing(chair, 90, 10));
  EXPECT_EQ(extract_sketch(view.normal), extract_sketch(view.normal));
}

TEST(AttentionMap, MatchesDirectEnumerationOnFourByFour) {
  const ImageF mask(4, 4, 1, 1.0f);
  const ImageF point = point_map(4, 4, 0, 0, 0);
  const auto att = attention_map(point, mask);
  double sum = 0;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) sum += std::sqrt(double(c * c + r * r));
  }
  const double mean = sum / 16;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const double expected = std::max(0.0, 1.0 - std::sqrt(double(c * c + r * r)) / mean);
      EXPECT_NEAR(att.at(c, r), expected, 1e-7);
    }
  }
  EXPECT_EQ(att.at(0, 0), 1.0f);
  EXPECT_EQ(att.at(3, 3), 0.0f);
}

TEST(AttentionMap, MonotoneInDistanceAndZeroOutsideMask) {
  const auto sphere = normalized_sphere();
  const auto cam = Camera::framing(sphere, 0, 10);
  const auto view = render_view(sphere, {}, cam);
  const auto point = point_map(cam.width, cam.height, 110, 140, 3);
  const auto att = attention_map(point, view.mask);
  EXPECT_EQ(att.at(110, 140), 1.0f);
  std::vector<std::pair<double, float>> by_distance;
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      if (view.mask.at(c, r) < 0.5f) {
        EXPECT_EQ(att.at(c, r), 0.0f);
      } else {
        by_distance.emplace_back(std::hypot(c - 110, r - 140), att.at(c, r));
      }
    }
  }
  std::sort(by_distance.begin(), by_distance.end());
  for (std::size_t i = 1; i < by_distance.size(); ++i) EXPECT_LE(by_distance[i].second, by_distance[i - 1].second);
}

TEST(AttentionMap, PointOutsideMaskIsAnError) {
  ImageF mask(8, 8, 1, 0.0f);
  mask.at(1, 1) = 1.0f;
  EXPECT_THROW(attention_map(point_map(8, 8, 6, 6, 0), mask), Error);
  EXPECT_THROW(point_map(8, 8, 8, 0, 1), Error);
}

TEST(PointMap, SingleDiscCenteredOnPixel) {
  const auto p = point_map(256, 256, 40, 77, point_radius_for(256));
  EXPECT_EQ(components(p), 1);
  EXPECT_EQ(count_on(p), 29);  // lattice points with x^2 + y^2 <= 9
  const Vec2 c = centroid(p);
  EXPECT_DOUBLE_EQ(c.x(), 40.0);
  EXPECT_DOUBLE_EQ(c.y(), 77.0);
  EXPECT_EQ(point_radius_for(64), 1);
  EXPECT_EQ(point_radius_for(512), 6);
}

TEST(Normalize, ShapeGrained) {
  const std::vector<double> v{10, 5, 0};
  EXPECT_EQ(normalize_shape_grained(v), (std::vector<double>{1.0, 0.5, 0.0}));
  const std::vector<double> flat(5, 3.5);
  for (double x : normalize_shape_grained(flat)) EXPECT_EQ(x, 1.0);
  std::mt19937_64 rng(3);
  std::vector<double> field(1000);
  for (auto& x : field) x = std::uniform_real_distribution<double>(0, 1e6)(rng);
  const auto n = normalize_shape_grained(field);
  EXPECT_EQ(*std::max_element(n.begin(), n.end()), 1.0);
  EXPECT_GE(*std::min_element(n.begin(), n.end()), 0.0);
  const std::vector<double> zeros(4, 0.0);
  EXPECT_THROW(normalize_shape_grained(zeros), Error);
}

TEST(Normalize, CategoryGrained) {
  const std::vector<double> v{0, 2};
  const auto stats = category_stats(v);
  EXPECT_EQ(stats.mean, 1.0);
  EXPECT_EQ(stats.stddev, 1.0);
  EXPECT_EQ(stats.tau, 100.0);
  EXPECT_EQ(standardize(v, stats), (std::vector<double>{-1.0, 1.0}));
  EXPECT_EQ(normalize_category_grained(v), (std::vector<double>{-0.01, 0.01}));

  std::mt19937_64 rng(9);
  std::vector<double> field(5000);
  for (auto& x : field) x = std::gamma_distribution<double>(2.0, 3e5)(rng);
  const auto z = standardize(field, category_stats(field));
  const double mean = std::accumulate(z.begin(), z.end(), 0.0) / z.size();
  double var = 0;
  for (double x : z) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(var / z.size()), 1.0, 1e-9);

  const std::vector<double> constant(3, 2.0);
  EXPECT_THROW(category_stats(constant), Error);
  const auto round = CategoryStats::from_json(stats.to_json());
  EXPECT_EQ(round.mean, stats.mean);
  EXPECT_EQ(round.tau, stats.tau);
}

class QuadrupleTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    chair_ = new SurfaceMesh(normalized_chair());
    labels_ = new RegionLabels(assign_regions(*chair_, 0.03));
    cam_ = new Camera(Camera::framing(*chair_, 0, 10));
    forces_ = new std::vector<ForceSample>(sample_forces(*chair_, *labels_, *cam_, 4, 5));
    const auto vol = discretize(*chair_, 16);
    fields_ = new std::vector<StressField>(batch_solve(*chair_, vol, Material{}, *labels_, *forces_));
  }
  static void TearDownTestSuite() {
    delete chair_;
    delete labels_;
    delete cam_;
    delete forces_;
    delete fields_;
  }
  static inline SurfaceMesh* chair_ = nullptr;
  static inline RegionLabels* labels_ = nullptr;
  static inline Camera* cam_ = nullptr;
  static inline std::vector<ForceSample>* forces_ = nullptr;
  static inline std::vector<StressField>* fields_ = nullptr;
};

TEST_F(QuadrupleTest, StressMaskedAndPointCentered) {
  for (std::size_t i = 0; i < forces_->size(); ++i) {
    const auto& f = (*forces_)[i];
    const auto q = build_quadruple(*chair_, *labels_, f, (*fields_)[i], *cam_, NormMode::kShape);
    for (std::size_t p = 0; p < q.stress.data.size(); ++p) {
      EXPECT_GE(q.stress.data[p], 0.0f);
      EXPECT_LE(q.stress.data[p], 1.0f);
      if (q.mask.data[p] < 0.5f) {
        EXPECT_EQ(q.stress.data[p], 0.0f);
        EXPECT_EQ(q.attention.data[p], 0.0f);
      }
    }
    const Vec2 c = centroid(q.point);
    EXPECT_LE(std::abs(c.x() + 0.5 - f.pixel.x()), 0.5);
    EXPECT_LE(std::abs(c.y() + 0.5 - f.pixel.y()), 0.5);
    EXPECT_EQ(q.attention.at(q.force_pixel[0], q.force_pixel[1]), 1.0f);
    EXPECT_EQ(components(q.point), 1);
  }
}

TEST_F(QuadrupleTest, CategoryModeUsesSharedStatistics) {
  std::vector<double> all;
  for (const auto& f : *fields_) all.insert(all.end(), f.values.begin(), f.values.end());
  const auto stats = category_stats(all);
  const auto q = build_quadruple(*chair_, *labels_, forces_->front(), fields_->front(), *cam_, NormMode::kCategory, stats);
  for (float v : q.stress.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(build_quadruple(*chair_, *labels_, forces_->front(), fields_->front(), *cam_, NormMode::kCategory),
               Error);
}

TEST_F(QuadrupleTest, ByteIdenticalAcrossRuns) {
  const auto a = build_quadruple(*chair_, *labels_, forces_->front(), fields_->front(), *cam_, NormMode::kShape);
  const auto b = build_quadruple(*chair_, *labels_, forces_->front(), fields_->front(), *cam_, NormMode::kShape);
  EXPECT_EQ(encode_png(a.sketch, PngDepth::k8), encode_png(b.sketch, PngDepth::k8));
  EXPECT_EQ(encode_png(a.normal, PngDepth::k8), encode_png(b.normal, PngDepth::k8));
  EXPECT_EQ(encode_png(a.stress, PngDepth::k16), encode_png(b.stress, PngDepth::k16));
  EXPECT_EQ(encode_png(a.attention, PngDepth::k16), encode_png(b.attention, PngDepth::k16));
  EXPECT_EQ(a.point, b.point);
  EXPECT_EQ(a.mask, b.mask);
}

TEST(Png, SixteenBitRoundTripIsExactOnLevels) {
  ImageF img(5, 3, 1, 0.0f);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) / 14.0f;
  const auto bytes = encode_png(img, PngDepth::k16);
  const auto back = decode_png(bytes.data(), bytes.size());
  EXPECT_EQ(back.bit_depth, 16);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    EXPECT_EQ(std::lround(back.image.data[i] * 65535.0), std::lround(img.data[i] * 65535.0));
  }
  const unsigned char junk[] = {1, 2, 3, 4};
  EXPECT_THROW(decode_png(junk, sizeof junk), Error);
}
