#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "sketchstress/stressnet.hpp"

using namespace sketchstress;
using sketchstress::testing::TempDir;
using nn::Tensor;
using nn::Var;

namespace {

Var<double> filled(std::array<int, 4> shape, std::vector<double> values) {
  Tensor<double> t(shape);
  t.data = std::move(values);
  return Var<double>(std::move(t));
}

Var<double> constant(std::array<int, 4> shape, double v) { return Var<double>(Tensor<double>(shape, v)); }

Tensor<double> random_tensor(std::array<int, 4> shape, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor<double> t(shape);
  for (auto& v : t.data) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// A disc-shaped toy sample: binary outline sketch, point map, normals, stress.
Quadruple synthetic_quadruple(int res, int seed) {
  Rng rng(static_cast<std::uint64_t>(seed));
  Quadruple q;
  q.sketch = ImageF(res, res, 1);
  q.mask = ImageF(res, res, 1);
  q.normal = ImageF(res, res, 3, 0.5f);
  q.stress = ImageF(res, res, 1);
  const double c = res / 2.0 - 0.5, r = res * (0.25 + 0.15 * uniform01(rng));
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double d = std::hypot(x - c, y - c);
      if (d <= r) {
        q.mask.at(x, y) = 1.0f;
        q.stress.at(x, y) = static_cast<float>(uniform01(rng));
        q.normal.at(x, y, 0) = static_cast<float>(0.5 + 0.5 * (x - c) / r);
        q.normal.at(x, y, 2) = 1.0f;
      }
      if (std::abs(d - r) < 0.7) q.sketch.at(x, y) = 1.0f;
    }
  q.force_pixel = {res / 2, res / 2};
  q.point = point_map(res, res, res / 2, res / 2, 1);
  q.attention = attention_map(q.point, q.mask);
  return q;
}

Batch synthetic_batch(int res, int n, int seed) {
  Batch b;
  for (int i = 0; i < n; ++i) {
    b.samples.push_back(synthetic_quadruple(res, seed + i));
    b.sample_ids.push_back("s" + std::to_string(i));
  }
  return b;
}

GeneratorConfig small_generator(int res = 16) {
  GeneratorConfig g;
  g.resolution = res;
  g.base_channels = 4;
  return g;
}

TrainConfig small_train() {
  TrainConfig t;
  t.batch_size = 2;
  t.disc_channels = 4;
  return t;
}

}  // namespace

// --- losses ---

TEST(Losses, DiscriminatorHandCase) {
  // 2x2 single scale, D(real) = 0.3 and D(fake) = 0.7 everywhere:
  // 0.5 * [(0.3 - 1)^2 + 0.7^2] = 0.5 * (0.49 + 0.49) = 0.49.
  const auto real = constant({1, 1, 2, 2}, 0.3), fake = constant({1, 1, 2, 2}, 0.7);
  EXPECT_NEAR(lsgan_discriminator_loss<double>({real}, {fake}).item(), 0.49, 1e-15);
  // Generator: 0.5 * (0.7 - 1)^2 = 0.045.
  EXPECT_NEAR(lsgan_generator_loss<double>({fake}).item(), 0.045, 1e-15);
}

TEST(Losses, PerfectCriticAndEquilibrium) {
  const auto ones = constant({1, 1, 2, 2}, 1.0), zeros = constant({1, 1, 2, 2}, 0.0);
  EXPECT_EQ(lsgan_discriminator_loss<double>({ones, ones, ones}, {zeros, zeros, zeros}).item(), 0.0);
  // Indistinguishable inputs: the least-squares optimum outputs 0.5,
  // giving 0.5 * (0.25 + 0.25) = 0.25 for D and 0.5 * 0.25 = 0.125 for G.
  const auto half = constant({1, 1, 2, 2}, 0.5);
  EXPECT_DOUBLE_EQ(lsgan_discriminator_loss<double>({half, half, half}, {half, half, half}).item(), 0.25);
  EXPECT_DOUBLE_EQ(lsgan_generator_loss<double>({half, half, half}).item(), 0.125);
}

TEST(Losses, ScalesAreAveraged) {
  const auto a = constant({1, 1, 4, 4}, 0.0), b = constant({1, 1, 2, 2}, 1.0);
  // Per-scale generator terms 0.5 and 0; mean 0.25.
  EXPECT_DOUBLE_EQ(lsgan_generator_loss<double>({a, b}).item(), 0.25);
  EXPECT_THROW(lsgan_discriminator_loss<double>({a}, {a, b}), Error);
}

TEST(Losses, ShapeLossCases) {
  const auto m = filled({1, 1, 2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(shape_loss(m, m).item(), 0.0);
  EXPECT_DOUBLE_EQ(shape_loss(m, filled({1, 1, 2, 2}, {1, 1, 0, 1})).item(), 0.25);
  EXPECT_DOUBLE_EQ(shape_loss(constant({1, 1, 2, 2}, 1.0), constant({1, 1, 2, 2}, 0.0)).item(), 1.0);
}

TEST(Losses, PointLossCases) {
  const auto y = filled({1, 1, 2, 2}, {0.2, 0.4, 0.6, 0.8});
  const auto n = filled({1, 3, 2, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.3, 0.3, 0.3, 0.3});
  const auto y_hat = nn::add_scalar(y, 0.1);
  const auto n_hat = nn::add_scalar(n, 0.2);
  EXPECT_NEAR(point_loss(y_hat, y, n_hat, n, constant({1, 1, 2, 2}, 1.0)).item(), 0.3, 1e-12);
  EXPECT_EQ(point_loss(y_hat, y, n_hat, n, constant({1, 1, 2, 2}, 0.0)).item(), 0.0);
  EXPECT_EQ(point_loss(y, y, n, n, constant({1, 1, 2, 2}, 0.7)).item(), 0.0);
  EXPECT_NEAR(point_loss(y_hat, y, Var<double>(), n, constant({1, 1, 2, 2}, 1.0)).item(), 0.1, 1e-12);
}

TEST(Losses, TotalLoss) {
  EXPECT_DOUBLE_EQ(total_loss(1.0, 0.01, 0.02), 8.0);
  EXPECT_DOUBLE_EQ(total_loss(1.7, 0.0, 0.0), 1.7);
  const TrainConfig defaults;
  EXPECT_EQ(defaults.lambda_shape, 500.0);
  EXPECT_EQ(defaults.lambda_point, 100.0);
  EXPECT_EQ(total_loss(constant({1, 1, 1, 1}, 1.0), constant({1, 1, 1, 1}, 0.01), constant({1, 1, 1, 1}, 0.02), 500,
                       100)
                .item(),
            total_loss(1.0, 0.01, 0.02));
}

TEST(Losses, TotalLossLinearInWeights) {
  const double gan = 0.731, shape = 0.0123, point = 0.0457;
  // Three settings per weight: equal spacing gives equal increments.
  for (double l2 : {0.0, 50.0, 100.0}) {
    const double a = total_loss(gan, shape, point, 0.0, l2), b = total_loss(gan, shape, point, 250.0, l2),
                 c = total_loss(gan, shape, point, 500.0, l2);
    EXPECT_NEAR(b - a, c - b, 1e-12);
    EXPECT_NEAR(b - a, 250.0 * shape, 1e-12);
  }
  for (double l1 : {0.0, 250.0, 500.0}) {
    const double a = total_loss(gan, shape, point, l1, 0.0), b = total_loss(gan, shape, point, l1, 50.0),
                 c = total_loss(gan, shape, point, l1, 100.0);
    EXPECT_NEAR(b - a, c - b, 1e-12);
    EXPECT_NEAR(b - a, 50.0 * point, 1e-12);
  }
}

TEST(Losses, NonNegativeOnRandomInputs) {
  for (int seed = 0; seed < 20; ++seed) {
    const Var<double> a(random_tensor({2, 1, 4, 4}, seed, 0, 1)), b(random_tensor({2, 1, 4, 4}, seed + 100, 0, 1));
    const Var<double> n1(random_tensor({2, 3, 4, 4}, seed + 200, 0, 1)), n2(random_tensor({2, 3, 4, 4}, seed + 300, 0, 1));
    EXPECT_GE(shape_loss(a, b).item(), 0.0);
    EXPECT_GE(point_loss(a, b, n1, n2, b).item(), 0.0);
    EXPECT_TRUE(std::isfinite(lsgan_generator_loss<double>({a}).item()));
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  // d/dinputs of the shape and point losses on 4x4 tensors.
  const auto y_hat = random_tensor({1, 1, 4, 4}, 1, 0, 1), y = random_tensor({1, 1, 4, 4}, 2, 0, 1);
  const auto n_hat = random_tensor({1, 3, 4, 4}, 3, 0, 1), n = random_tensor({1, 3, 4, 4}, 4, 0, 1);
  const auto mp = random_tensor({1, 1, 4, 4}, 5, 0.1, 1);
  const auto d = random_tensor({1, 1, 4, 4}, 6, -1, 2);

  auto loss = [&](const Tensor<double>& yh, const Tensor<double>& nh, const Tensor<double>& dv, bool grad) {
    Var<double> a(yh, grad), b(nh, grad), c(dv, grad);
    const Var<double> l = nn::axpy(nn::axpy(shape_loss(a, Var<double>(y)),
                                            point_loss(a, Var<double>(y), b, Var<double>(n), Var<double>(mp)), 1.0),
                                   lsgan_generator_loss<double>({c}) + lsgan_discriminator_loss<double>({c}, {c}), 1.0);
    return std::tuple{l, a, b, c};
  };
  auto [l, a, b, c] = loss(y_hat, n_hat, d, true);
  nn::backward(l);
  const double h = 1e-7;
  auto check = [&](const Tensor<double>& base, const Tensor<double>& grad, int which) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      Tensor<double> plus = base, minus = base;
      plus.data[i] += h;
      minus.data[i] -= h;
      auto pick = [&](const Tensor<double>& t) {
        return which == 0 ? std::get<0>(loss(t, n_hat, d, false)).item()
               : which == 1 ? std::get<0>(loss(y_hat, t, d, false)).item()
                            : std::get<0>(loss(y_hat, n_hat, t, false)).item();
      };
      const double numeric = (pick(plus) - pick(minus)) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(grad.data[i]), 1e-3});
      EXPECT_LE(std::abs(numeric - grad.data[i]) / scale, 1e-4) << "input " << which << " element " << i;
    }
  };
  check(y_hat, a.grad(), 0);
  check(n_hat, b.grad(), 1);
  check(d, c.grad(), 2);
}

// --- generator ---

TEST(GeneratorConfig, DepthAndWidths) {
  GeneratorConfig g;
  g.resolution = 256;
  EXPECT_EQ(g.depth(), 7);
  g.resolution = 64;
  EXPECT_EQ(g.depth(), 5);
  EXPECT_EQ(64 >> g.depth(), 2);
  g.resolution = 48;
  EXPECT_THROW(g.validate(), Error);
}

TEST(Generator, ShapeAndRangeContract) {
  Generator<float> g(small_generator(64));
  const Var<float> x(nn::Tensor<float>(4, 1, 64, 64, 0.0f)), p(nn::Tensor<float>(4, 1, 64, 64, 0.0f));
  const auto out = g.forward(x, p);
  EXPECT_EQ(out.normal.shape(), (std::array<int, 4>{4, 3, 64, 64}));
  EXPECT_EQ(out.stress.shape(), (std::array<int, 4>{4, 1, 64, 64}));
  EXPECT_EQ(out.mask.shape(), (std::array<int, 4>{4, 1, 64, 64}));
  for (const auto* t : {&out.normal.value(), &out.stress.value(), &out.mask.value()})
    for (float v : t->data) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
}

TEST(Generator, DeterministicAndFinite) {
  Generator<float> g(small_generator(32), 5);
  const auto b = synthetic_batch(32, 2, 1);
  const BatchTensors<float> t(b);
  nn::NoGradGuard guard;
  const auto a = g.forward(t.sketch, t.point), c = g.forward(t.sketch, t.point);
  EXPECT_EQ(a.stress.value(), c.stress.value());
  EXPECT_EQ(a.normal.value(), c.normal.value());
  EXPECT_EQ(a.mask.value(), c.mask.value());
  // Same seed, same weights.
  Generator<float> g2(small_generator(32), 5);
  EXPECT_EQ(g2.forward(t.sketch, t.point).stress.value(), a.stress.value());
}

TEST(Generator, NormalFeaturesReachStressDecoder) {
  Generator<float> g(small_generator(32), 3);
  const BatchTensors<float> t(synthetic_batch(32, 1, 2));
  nn::NoGradGuard guard;
  const auto live = g.forward(t.sketch, t.point);
  const auto cut = g.forward(t.sketch, t.point, {.zero_normal_features = true});
  EXPECT_NE(live.stress.value(), cut.stress.value());
  EXPECT_EQ(live.normal.value(), cut.normal.value());
  EXPECT_EQ(live.mask.value(), cut.mask.value());
}

TEST(Generator, WithoutNormalBranch) {
  auto cfg = small_generator(32);
  cfg.normal_branch = false;
  Generator<float> g(cfg);
  Generator<float> full(small_generator(32));
  EXPECT_LT(g.params().count(), full.params().count());
  const BatchTensors<float> t(synthetic_batch(32, 1, 2));
  const auto out = g.forward(t.sketch, t.point);
  for (float v : out.normal.value().data) EXPECT_EQ(v, 0.5f);
}

TEST(Generator, RejectsMismatchedInputs) {
  Generator<float> g(small_generator(32));
  EXPECT_THROW(g.forward(Var<float>(nn::Tensor<float>(1, 1, 32, 32)), Var<float>(nn::Tensor<float>(1, 1, 16, 16))),
               Error);
  EXPECT_THROW(g.forward(Var<float>(nn::Tensor<float>(1, 1, 16, 16)), Var<float>(nn::Tensor<float>(1, 1, 16, 16))),
               Error);
}

TEST(Discriminator, ThreeScalesPerInput) {
  MultiScaleDiscriminator<float> d("d", 1, 4, 0);
  const auto outs = d.forward(Var<float>(nn::Tensor<float>(2, 1, 64, 64, 0.3f)));
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0].shape(), (std::array<int, 4>{2, 1, 16, 16}));
  EXPECT_EQ(outs[1].shape(), (std::array<int, 4>{2, 1, 8, 8}));
  EXPECT_EQ(outs[2].shape(), (std::array<int, 4>{2, 1, 4, 4}));
}

// --- training and checkpoints ---

TEST(Trainer, FixedSeedReproducesFirstTenSteps) {
  const Batch batch = synthetic_batch(16, 2, 7);
  auto run = [&] {
    Trainer tr(small_generator(), small_train());
    std::vector<StepLosses> out;
    for (int i = 0; i < 10; ++i) out.push_back(tr.step(batch));
    return out;
  };
  const auto a = run(), b = run();
  for (int i = 0; i < 10; ++i) {
    EXPECT_TRUE(a[i].finite());
    EXPECT_EQ(a[i].total, b[i].total) << "step " << i;
    EXPECT_EQ(a[i].gan_d, b[i].gan_d) << "step " << i;
    EXPECT_EQ(a[i].step, i + 1);
  }
}

TEST(Trainer, LossesDecreaseOnOneBatch) {
  const Batch batch = synthetic_batch(16, 2, 11);
  Trainer tr(small_generator(), small_train());
  const StepLosses first = tr.step(batch);
  StepLosses last;
  for (int i = 0; i < 40; ++i) last = tr.step(batch);
  EXPECT_LT(last.shape, first.shape);
  EXPECT_LT(last.total, first.total);
}

TEST(Trainer, ConditionalCriticsTrain) {
  auto t = small_train();
  t.conditional_discriminator = true;
  Trainer tr(small_generator(), t);
  EXPECT_TRUE(tr.step(synthetic_batch(16, 2, 3)).finite());
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  TempDir dir;
  const Batch batch = synthetic_batch(16, 2, 9);
  Trainer tr(small_generator(), small_train());
  for (int i = 0; i < 3; ++i) tr.step(batch);
  tr.save(dir.path() / "ck.bin", nullptr, 1);

  InferenceModel model(dir.path() / "ck.bin");
  EXPECT_EQ(model.info().step, 3);
  EXPECT_EQ(model.info().epoch, 1);
  EXPECT_EQ(model.info().generator.base_channels, 4);
  EXPECT_EQ(model.info().train.disc_channels, 4);

  const Quadruple& q = batch.samples[0];
  const auto loaded = model.infer(q.sketch, q.force_pixel[0], q.force_pixel[1]);
  const InferenceModel live(tr.generator().config(), tr.generator());
  const auto direct = live.infer(q.sketch, q.force_pixel[0], q.force_pixel[1]);
  EXPECT_EQ(loaded.stress, direct.stress);
  EXPECT_EQ(loaded.normal, direct.normal);
  EXPECT_EQ(loaded.mask, direct.mask);
}

TEST(Checkpoint, HeaderCarriesConfigAndStats) {
  TempDir dir;
  Generator<float> g(small_generator());
  CheckpointInfo info;
  info.generator = small_generator();
  info.train = small_train();
  info.norm_mode = NormMode::kCategory;
  info.category_stats["chair"] = CategoryStats{1.5, 0.25, 100.0};
  save_checkpoint(dir.path() / "a.bin", info, g);
  const auto data = read_checkpoint(dir.path() / "a.bin");
  EXPECT_EQ(data.header.at("format"), "sketchstress-checkpoint");
  EXPECT_EQ(data.payload.size(), g.params().count());
  const auto back = checkpoint_info(data.header);
  EXPECT_EQ(back.norm_mode, NormMode::kCategory);
  EXPECT_DOUBLE_EQ(back.category_stats.at("chair").mean, 1.5);
  EXPECT_DOUBLE_EQ(back.category_stats.at("chair").stddev, 0.25);
}

TEST(Checkpoint, CorruptFilesRaise) {
  TempDir dir;
  {
    std::ofstream(dir.path() / "junk.bin") << "not a checkpoint at all";
  }
  EXPECT_THROW(read_checkpoint(dir.path() / "junk.bin"), Error);
  Generator<float> g(small_generator());
  CheckpointInfo info;
  info.generator = small_generator();
  save_checkpoint(dir.path() / "ok.bin", info, g);
  fs::resize_file(dir.path() / "ok.bin", fs::file_size(dir.path() / "ok.bin") - 8);
  EXPECT_THROW(InferenceModel{dir.path() / "ok.bin"}, Error);
}

TEST(Inference, DownsamplesLargerSketchesAndFlagsOutsideClicks) {
  Generator<float> g(small_generator());
  const InferenceModel model(small_generator(), g);
  const Quadruple q = synthetic_quadruple(64, 4);  // 4x the model resolution
  const auto r = model.infer(q.sketch, 32, 32);
  EXPECT_EQ(r.stress.width, 16);
  EXPECT_GE(r.latency_ms, 0.0);
  EXPECT_EQ(r.force_outside_mask, r.mask.at(8, 8) < 0.5f);
  const auto again = model.infer(q.sketch, 32, 32);
  EXPECT_EQ(r.stress, again.stress);
  EXPECT_THROW(model.infer(q.sketch, 64, 0), Error);
  EXPECT_THROW(model.infer(ImageF(24, 24, 1), 1, 1), Error);
}

TEST(Metrics, MaskedL1AndIoU) {
  nn::Tensor<float> a(1, 1, 2, 2), b(1, 1, 2, 2), m(1, 1, 2, 2);
  a.data = {0.5f, 0.2f, 0.9f, 0.0f};
  b.data = {0.1f, 0.2f, 0.0f, 1.0f};
  m.data = {1, 1, 0, 0};
  EXPECT_NEAR(masked_l1(a, b, m), 0.2, 1e-7);
  nn::Tensor<float> p(1, 1, 2, 2), t(1, 1, 2, 2);
  p.data = {0.9f, 0.6f, 0.1f, 0.0f};
  t.data = {1, 0, 1, 0};
  EXPECT_NEAR(mask_iou(p, t), 1.0 / 3.0, 1e-12);
}
