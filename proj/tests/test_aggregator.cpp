#include <gtest/gtest.h>

#include <atomic>

#include "oracles.hpp"
#include "sketchstress/aggregator.hpp"

using namespace sketchstress;

namespace {

using oracle::Hemisphere;

std::vector<std::array<int, 2>> pixels(const std::vector<AlignedPoint>& pts) {
  std::vector<std::array<int, 2>> out;
  for (const auto& p : pts) out.push_back(p.pixel);
  return out;
}

ImageF constant(int res, float v) { return ImageF(res, res, 1, v); }

// Deterministic stand-in for a trained model: hemisphere normals and a
// stress bump centred on the force pixel (model grid).
struct FakeModel {
  int res = 32;
  Hemisphere shape{32};
  mutable std::atomic<int> calls{0};

  InferenceResult operator()(const ImageF& sketch, int col, int row) const {
    ++calls;
    const int factor = sketch.width / res;
    const int c = col / factor, r = row / factor;
    InferenceResult out;
    out.normal = shape.normal;
    out.mask = shape.mask;
    out.stress = ImageF(res, res, 1);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        out.stress.at(x, y) = shape.mask.at(x, y) * static_cast<float>(std::exp(-((x - c) * (x - c) + (y - r) * (y - r)) / 18.0));
    out.force_outside_mask = shape.mask.at(c, r) < 0.5f;
    return out;
  }
};

}  // namespace

TEST(SelectAlignedPoints, UniformNormalsTakeNearest) {
  const int res = 32;
  ImageF normal(res, res, 3), mask = constant(res, 1.0f);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) encode_normal(normal, x, y, Vec3(0, 0, 1));
  RegionSpec region;
  region.center = {16, 16};
  region.radius = 5;
  const auto pts = select_aligned_points(normal, mask, region);
  ASSERT_EQ(pts.size(), 8u);
  EXPECT_EQ(pts[0].pixel, (std::array<int, 2>{16, 16}));
  // Then the 4-neighbours (distance 1, row-major), then three diagonals.
  const std::vector<std::array<int, 2>> expect{{16, 16}, {16, 15}, {15, 16}, {17, 16}, {16, 17},
                                               {15, 15}, {17, 15}, {15, 17}};
  EXPECT_EQ(pixels(pts), expect);
  for (const auto& p : pts) EXPECT_EQ(p.deviation_deg, 0.0);
}

TEST(SelectAlignedPoints, ZeroToleranceKeepsExactMatches) {
  const Hemisphere h(48);
  RegionSpec region;
  region.center = {30, 20};
  region.radius = 10;
  region.angle_tolerance = 0.0;
  region.max_points = 100;
  const auto pts = select_aligned_points(h.normal, h.mask, region);
  ASSERT_GE(pts.size(), 1u);
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(h.normal.at(p.pixel[0], p.pixel[1], k), h.normal.at(30, 20, k));
}

TEST(SelectAlignedPoints, MatchesExhaustiveOracle) {
  for (int res : {32, 64}) {
    const Hemisphere h(res);
    for (const auto& center : std::vector<std::array<int, 2>>{{res / 2, res / 2}, {res / 3, res / 2}, {res / 2 + 5, res / 4 + 2}}) {
      for (double tol : {2.0, 10.0, 25.0}) {
        for (int max_points : {1, 8, 1000}) {
          RegionSpec region;
          region.center = center;
          region.radius = res / 6.0;
          region.angle_tolerance = tol;
          region.max_points = max_points;
          const auto got = pixels(select_aligned_points(h.normal, h.mask, region));
          EXPECT_EQ(got, oracle::aligned_points(h.normal, h.mask, region)) << "res " << res << " tol " << tol << " max " << max_points;
          EXPECT_EQ(got.front(), center);
        }
      }
    }
  }
}

TEST(SelectAlignedPoints, Errors) {
  const Hemisphere h(32);
  RegionSpec region;
  region.center = {0, 0};
  EXPECT_THROW(select_aligned_points(h.normal, h.mask, region), Error);  // outside the mask
  region.center = {16, 16};
  region.radius = 0.5;
  EXPECT_THROW(select_aligned_points(h.normal, h.mask, region), Error);
  region.radius = 3;
  region.angle_tolerance = 91;
  EXPECT_THROW(select_aligned_points(h.normal, h.mask, region), Error);
  region.angle_tolerance = 10;
  region.center = {40, 3};
  EXPECT_THROW(select_aligned_points(h.normal, h.mask, region), Error);
}

TEST(AggregateStress, Cases) {
  const ImageF a = constant(8, 0.2f), b = constant(8, 0.4f), c = constant(8, 0.6f);
  EXPECT_EQ(aggregate_stress({b}), b);
  EXPECT_EQ(aggregate_stress({b, b}), b);
  const ImageF m = aggregate_stress({a, b, c});
  for (float v : m.data) EXPECT_NEAR(v, 0.4f, 1e-7);
  const ImageF s = aggregate_stress({a, b, c}, AggregateMode::kSum);
  for (float v : s.data) EXPECT_NEAR(v, 1.2f, 1e-6);
  EXPECT_THROW(aggregate_stress({}), Error);
  EXPECT_THROW(aggregate_stress({a, constant(4, 0.1f)}), Error);
  EXPECT_THROW(aggregate_mode_from_string("median"), Error);
}

TEST(AggregateStress, PermutationInvariantAndBounded) {
  Rng rng(3);
  std::vector<ImageF> maps;
  for (int k = 0; k < 5; ++k) {
    ImageF m(16, 16, 1);
    for (auto& v : m.data) v = static_cast<float>(uniform01(rng));
    maps.push_back(m);
  }
  const ImageF agg = aggregate_stress(maps);
  std::vector<ImageF> reversed(maps.rbegin(), maps.rend());
  EXPECT_EQ(aggregate_stress(reversed), agg);
  for (std::size_t i = 0; i < agg.data.size(); ++i) {
    float lo = 1, hi = 0;
    for (const auto& m : maps) {
      lo = std::min(lo, m.data[i]);
      hi = std::max(hi, m.data[i]);
    }
    EXPECT_GE(agg.data[i], lo);
    EXPECT_LE(agg.data[i], hi);
  }
}

TEST(MultiForceQuery, SinglePointEqualsSingleInference) {
  const FakeModel model;
  const Predictor predict = [&](const ImageF& s, int c, int r) { return model(s, c, r); };
  const ImageF sketch(32, 32, 1);
  RegionSpec region;
  region.center = {14, 17};
  region.radius = 1;
  region.max_points = 1;
  const auto res = multi_force_query(predict, sketch, region);
  ASSERT_EQ(res.points.size(), 1u);
  EXPECT_EQ(res.aggregated, model(sketch, 14, 17).stress);
}

TEST(MultiForceQuery, MeanOfPerForceMaps) {
  const FakeModel model;
  const Predictor predict = [&](const ImageF& s, int c, int r) { return model(s, c, r); };
  const ImageF sketch(32, 32, 1);
  RegionSpec region;
  region.center = {12, 15};
  region.radius = 4;
  region.angle_tolerance = 15;
  region.max_points = 6;
  for (int workers : {1, 3}) {
    model.calls = 0;
    const auto res = multi_force_query(predict, sketch, region, AggregateMode::kMean, workers);
    ASSERT_GE(res.points.size(), 2u);
    ASSERT_LE(res.points.size(), 6u);
    EXPECT_EQ(model.calls.load(), static_cast<int>(res.points.size()));  // the centre query is reused
    EXPECT_EQ(res.per_force.size(), res.points.size());
    for (std::size_t k = 0; k < res.points.size(); ++k)
      EXPECT_EQ(res.per_force[k], model(sketch, res.points[k].pixel[0], res.points[k].pixel[1]).stress);
    for (std::size_t i = 0; i < res.aggregated.data.size(); ++i) {
      double s = 0, lo = 1, hi = 0;
      for (const auto& m : res.per_force) {
        s += m.data[i];
        lo = std::min<double>(lo, m.data[i]);
        hi = std::max<double>(hi, m.data[i]);
      }
      EXPECT_NEAR(res.aggregated.data[i], s / res.per_force.size(), 1e-6);
      EXPECT_GE(res.aggregated.data[i], lo - 1e-7);
      EXPECT_LE(res.aggregated.data[i], hi + 1e-7);
    }
  }
}

TEST(MultiForceQuery, LargerSketchMapsToModelGrid) {
  const FakeModel model;
  const Predictor predict = [&](const ImageF& s, int c, int r) { return model(s, c, r); };
  const ImageF sketch(128, 128, 1);  // 4x the model grid
  RegionSpec region;
  region.center = {61, 66};
  region.radius = 12;
  region.angle_tolerance = 30;
  const auto res = multi_force_query(predict, sketch, region);
  EXPECT_EQ(res.points.front().pixel, region.center);
  for (const auto& p : res.points) {
    // Same offset within the 4x4 cell as the centre.
    EXPECT_EQ(p.pixel[0] % 4, 61 % 4);
    EXPECT_EQ(p.pixel[1] % 4, 66 % 4);
    EXPECT_LE(std::hypot(p.pixel[0] - 61, p.pixel[1] - 66), 12.0 + 1e-9);
  }
  // Selection agrees with the oracle on the model grid.
  RegionSpec grid = region;
  grid.center = {15, 16};
  grid.radius = 3;
  EXPECT_EQ(res.points.size(), oracle::aligned_points(model.shape.normal, model.shape.mask, grid).size());
}

TEST(MultiForceQuery, CentreOutsideMaskRaises) {
  const FakeModel model;
  const Predictor predict = [&](const ImageF& s, int c, int r) { return model(s, c, r); };
  RegionSpec region;
  region.center = {0, 0};
  EXPECT_THROW(multi_force_query(predict, ImageF(32, 32, 1), region), Error);
  region.center = {40, 0};
  EXPECT_THROW(multi_force_query(predict, ImageF(32, 32, 1), region), Error);
}
