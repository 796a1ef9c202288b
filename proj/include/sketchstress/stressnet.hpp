#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>

#include "sketchstress/dataset.hpp"
#include "sketchstress/nn/layers.hpp"

namespace sketchstress {

using nn::Tensor;
using nn::Var;

struct GeneratorConfig {
  int resolution = 64;
  int base_channels = 16;
  int input_channels = 2;       // sketch + point map
  bool normal_branch = true;    // false: stress-only ablation
  bool normal_to_stress = true;  // layer-wise normal-decoder features into the stress decoder

  /// Down/up-sampling stages: the bottleneck is always 2x2.
  int depth() const { return std::countr_zero(static_cast<unsigned>(resolution)) - 1; }

  int width(int level) const {
    if (level == 0) return std::max(base_channels / 2, 4);
    return std::min(base_channels << (level - 1), 8 * base_channels);
  }

  void validate() const {
    require(resolution >= 8 && std::has_single_bit(static_cast<unsigned>(resolution)), ErrorCode::kInvalidArgument,
            "generator resolution must be a power of two >= 8");
    require(base_channels >= 2, ErrorCode::kInvalidArgument, "base channel width must be >= 2");
  }

  nlohmann::json to_json() const {
    return {{"resolution", resolution},       {"base_channels", base_channels},
            {"input_channels", input_channels}, {"normal_branch", normal_branch},
            {"normal_to_stress", normal_to_stress}};
  }
  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.normal_branch = j.at("normal_branch").get<bool>();
    c.normal_to_stress = j.at("normal_to_stress").get<bool>();
    return c;
  }
};

struct TrainConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 16;
  double lambda_shape = 500.0;
  double lambda_point = 100.0;
  int epochs = 10;
  std::uint64_t seed = 0;
  int disc_channels = 16;
  bool conditional_discriminator = false;  // feed (x, p) alongside the judged map
  bool augment = true;

  void validate() const {
    require(lambda_shape >= 0.0 && lambda_point >= 0.0, ErrorCode::kInvalidArgument, "loss weights must be >= 0");
    require(learning_rate > 0.0 && batch_size >= 1 && epochs >= 0, ErrorCode::kInvalidArgument,
            "invalid training schedule");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"batch_size", batch_size},
            {"lambda_shape", lambda_shape},
            {"lambda_point", lambda_point},
            {"epochs", epochs},
            {"seed", seed},
            {"disc_channels", disc_channels},
            {"conditional_discriminator", conditional_discriminator},
            {"augment", augment}};
  }
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lambda_shape = j.at("lambda_shape").get<double>();
    c.lambda_point = j.at("lambda_point").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.disc_channels = j.at("disc_channels").get<int>();
    c.conditional_discriminator = j.at("conditional_discriminator").get<bool>();
    c.augment = j.value("augment", true);
    return c;
  }
};

// --- generator -------------------------------------------------------------------

template <class T>
struct GeneratorOutput {
  Var<T> normal;  // (N,3,H,W) in [0,1]
  Var<T> stress;  // (N,1,H,W) in [0,1]
  Var<T> mask;    // (N,1,H,W) in [0,1]
};

struct ForwardOptions {
  bool zero_normal_features = false;  // probe: feed zeros where normal features enter the stress decoder
};

/// One encoder, two U-Net decoders (normal, stress) and a mask head decoded
/// from the bottleneck alone.
template <class T>
class Generator {
 public:
  explicit Generator(GeneratorConfig config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int d = config_.depth();
    for (int k = 1; k <= d; ++k) {
      const int cin = k == 1 ? config_.input_channels : config_.width(k - 1);
      encoder_.push_back(nn::make_conv(params_, "enc" + std::to_string(k), cin, config_.width(k), 4, 2, 1, rng));
    }
    const bool feed_normal = config_.normal_branch && config_.normal_to_stress;
    for (int level = d - 1; level >= 0; --level) {
      const int up = config_.width(level + 1);
      const int skip = level == 0 ? config_.input_channels : config_.width(level);
      const int out = config_.width(level);
      const std::string tag = std::to_string(level);
      if (config_.normal_branch) {
        normal_dec_.push_back(nn::make_conv(params_, "normal_dec" + tag, up + skip, out, 3, 1, 1, rng));
      }
      stress_dec_.push_back(
          nn::make_conv(params_, "stress_dec" + tag, up + skip + (feed_normal ? out : 0), out, 3, 1, 1, rng));
      mask_dec_.push_back(nn::make_conv(params_, "mask_dec" + tag, up, out, 3, 1, 1, rng));
    }
    if (config_.normal_branch) normal_head_ = nn::make_conv(params_, "normal_head", config_.width(0), 3, 3, 1, 1, rng);
    stress_head_ = nn::make_conv(params_, "stress_head", config_.width(0), 1, 3, 1, 1, rng);
    mask_head_ = nn::make_conv(params_, "mask_head", config_.width(0), 1, 3, 1, 1, rng);
  }

  GeneratorOutput<T> forward(const Var<T>& sketch, const Var<T>& point, ForwardOptions opts = {}) const {
    require(sketch.shape() == point.shape(), ErrorCode::kInvalidArgument,
            "sketch " + sketch.value().shape_string() + " and point map " + point.value().shape_string() +
                " differ in shape");
    require(sketch.value().c() == 1 && sketch.value().h() == config_.resolution &&
                sketch.value().w() == config_.resolution,
            ErrorCode::kInvalidArgument,
            "generator expects (N,1," + std::to_string(config_.resolution) + "," + std::to_string(config_.resolution) +
                ") inputs, got " + sketch.value().shape_string());
    const T slope = T(0.2);
    const int d = config_.depth();
    const Var<T> input = nn::concat<T>({sketch, point});

    std::vector<Var<T>> skips{input};  // skips[level] at resolution / 2^level
    Var<T> h = input;
    for (int k = 1; k <= d; ++k) {
      h = encoder_[static_cast<std::size_t>(k - 1)](h);
      if (k == d) {
        h = nn::relu(h);
      } else {
        h = nn::leaky_relu(k == 1 ? h : nn::instance_norm(h), slope);
      }
      skips.push_back(h);
    }
    const Var<T> bottleneck = h;

    auto stage = [](const nn::Conv2d<T>& conv, const Var<T>& x) { return nn::relu(nn::instance_norm(conv(x))); };

    GeneratorOutput<T> out;
    std::vector<Var<T>> normal_features;
    if (config_.normal_branch) {
      Var<T> a = bottleneck;
      for (int i = 0; i < d; ++i) {
        const int level = d - 1 - i;
        a = stage(normal_dec_[static_cast<std::size_t>(i)], nn::concat<T>({nn::upsample2(a), skips[level]}));
        normal_features.push_back(a);
      }
      out.normal = nn::sigmoid(normal_head_(a));
    } else {
      Tensor<T> gray(sketch.value().n(), 3, config_.resolution, config_.resolution, T(0.5));
      out.normal = Var<T>(std::move(gray));
    }

    Var<T> s = bottleneck;
    for (int i = 0; i < d; ++i) {
      const int level = d - 1 - i;
      std::vector<Var<T>> parts{nn::upsample2(s), skips[level]};
      if (config_.normal_branch && config_.normal_to_stress) {
        const auto& f = normal_features[static_cast<std::size_t>(i)];
        parts.push_back(opts.zero_normal_features ? Var<T>(Tensor<T>(f.shape())) : f);
      }
      s = stage(stress_dec_[static_cast<std::size_t>(i)], nn::concat<T>(parts));
    }
    out.stress = nn::sigmoid(stress_head_(s));

    Var<T> m = bottleneck;
    for (int i = 0; i < d; ++i) m = stage(mask_dec_[static_cast<std::size_t>(i)], nn::upsample2(m));
    out.mask = nn::sigmoid(mask_head_(m));
    return out;
  }

  const GeneratorConfig& config() const { return config_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

 private:
  GeneratorConfig config_;
  nn::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> encoder_, normal_dec_, stress_dec_, mask_dec_;
  nn::Conv2d<T> normal_head_, stress_head_, mask_head_;
};

// --- discriminators ------------------------------------------------------------------

/// PatchGAN critics applied at full, half and quarter resolution.
template <class T>
class MultiScaleDiscriminator {
 public:
  static constexpr int kScales = 3;

  MultiScaleDiscriminator(const std::string& name, int in_channels, int width, std::uint64_t seed) {
    Rng rng(seed);
    for (int s = 0; s < kScales; ++s) {
      const std::string tag = name + ".s" + std::to_string(s);
      Patch p;
      p.c1 = nn::make_conv(params_, tag + ".c1", in_channels, width, 4, 2, 1, rng);
      p.c2 = nn::make_conv(params_, tag + ".c2", width, 2 * width, 4, 2, 1, rng);
      p.c3 = nn::make_conv(params_, tag + ".c3", 2 * width, 4 * width, 3, 1, 1, rng);
      p.c4 = nn::make_conv(params_, tag + ".c4", 4 * width, 1, 3, 1, 1, rng);
      patches_.push_back(p);
    }
  }

  /// One patch-score map per scale.
  std::vector<Var<T>> forward(const Var<T>& input) const {
    const T slope = T(0.2);
    std::vector<Var<T>> outs;
    Var<T> x = input;
    for (int s = 0; s < kScales; ++s) {
      if (s > 0) x = nn::avgpool2(x);
      const auto& p = patches_[static_cast<std::size_t>(s)];
      Var<T> h = nn::leaky_relu(p.c1(x), slope);
      h = nn::leaky_relu(nn::instance_norm(p.c2(h)), slope);
      h = nn::leaky_relu(nn::instance_norm(p.c3(h)), slope);
      outs.push_back(p.c4(h));
    }
    return outs;
  }

  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

 private:
  struct Patch {
    nn::Conv2d<T> c1, c2, c3, c4;
  };
  nn::ParameterSet<T> params_;
  std::vector<Patch> patches_;
};

// --- losses ----------------------------------------------------------------------------

/// Least-squares critic objective: 0.5 [(D(real) - 1)^2 + D(fake)^2], averaged over scales.
template <class T>
Var<T> lsgan_discriminator_loss(const std::vector<Var<T>>& real, const std::vector<Var<T>>& fake) {
  require(real.size() == fake.size() && !real.empty(), ErrorCode::kInvalidArgument, "scale count mismatch");
  Var<T> total;
  for (std::size_t s = 0; s < real.size(); ++s) {
    const Var<T> term = nn::scale(nn::mean(nn::square(nn::add_scalar(real[s], T(-1)))) + nn::mean(nn::square(fake[s])),
                                  T(0.5));
    total = total.defined() ? total + term : term;
  }
  return nn::scale(total, T(1) / static_cast<T>(real.size()));
}

/// Generator side: 0.5 (D(fake) - 1)^2, averaged over scales.
template <class T>
Var<T> lsgan_generator_loss(const std::vector<Var<T>>& fake) {
  require(!fake.empty(), ErrorCode::kInvalidArgument, "no discriminator outputs");
  Var<T> total;
  for (const auto& f : fake) {
    const Var<T> term = nn::scale(nn::mean(nn::square(nn::add_scalar(f, T(-1)))), T(0.5));
    total = total.defined() ? total + term : term;
  }
  return nn::scale(total, T(1) / static_cast<T>(fake.size()));
}

/// Mean absolute difference between predicted and true silhouettes.
template <class T>
Var<T> shape_loss(const Var<T>& predicted_mask, const Var<T>& mask) {
  return nn::mean(nn::abs(predicted_mask - mask));
}

/// Attention-weighted L1 on stress and normals, each a mean over all elements.
/// Pass an undefined `predicted_normal` to drop the normal term.
template <class T>
Var<T> point_loss(const Var<T>& predicted_stress, const Var<T>& stress, const Var<T>& predicted_normal,
                  const Var<T>& normal, const Var<T>& attention) {
  Var<T> loss = nn::mean(nn::abs(attention * predicted_stress - attention * stress));
  if (predicted_normal.defined()) loss = loss + nn::mean(nn::abs(predicted_normal * attention - normal * attention));
  return loss;
}

template <class T>
Var<T> total_loss(const Var<T>& gan, const Var<T>& shape, const Var<T>& point, double lambda_shape,
                  double lambda_point) {
  return nn::axpy(nn::axpy(gan, shape, static_cast<T>(lambda_shape)), point, static_cast<T>(lambda_point));
}

inline double total_loss(double gan, double shape, double point, double lambda_shape = 500.0,
                         double lambda_point = 100.0) {
  return gan + lambda_shape * shape + lambda_point * point;
}

// --- batches as tensors ------------------------------------------------------------------

template <class T>
Tensor<T> stack_images(const std::vector<Quadruple>& samples, const std::string& key) {
  const ImageF& first = image_for(samples.front(), key);
  Tensor<T> t(static_cast<int>(samples.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageF& img = image_for(samples[i], key);
    require(img.same_shape(first), ErrorCode::kInvalidArgument, "batch images differ in shape");
    for (int c = 0; c < img.channels; ++c)
      for (int r = 0; r < img.height; ++r)
        for (int col = 0; col < img.width; ++col) t.at(static_cast<int>(i), c, r, col) = static_cast<T>(img.at(col, r, c));
  }
  return t;
}

template <class T>
ImageF tensor_image(const Tensor<T>& t, int sample) {
  ImageF img(t.w(), t.h(), t.c());
  for (int c = 0; c < t.c(); ++c)
    for (int r = 0; r < t.h(); ++r)
      for (int col = 0; col < t.w(); ++col) img.at(col, r, c) = static_cast<float>(t.at(sample, c, r, col));
  return img;
}

template <class T>
struct BatchTensors {
  Var<T> sketch, point, normal, stress, mask, attention;

  explicit BatchTensors(const Batch& b)
      : sketch(stack_images<T>(b.samples, "x")),
        point(stack_images<T>(b.samples, "p")),
        normal(stack_images<T>(b.samples, "n")),
        stress(stack_images<T>(b.samples, "y")),
        mask(stack_images<T>(b.samples, "ms")),
        attention(stack_images<T>(b.samples, "mp")) {}
};

// --- evaluation helpers ------------------------------------------------------------------

/// Mean |y_hat - y| over ground-truth mask pixels.
template <class T>
double masked_l1(const Tensor<T>& predicted, const Tensor<T>& truth, const Tensor<T>& mask) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += mask.data[i] * std::abs(static_cast<double>(predicted.data[i]) - truth.data[i]);
    den += mask.data[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Intersection over union of the thresholded prediction (>= 0.5) and the true mask.
template <class T>
double mask_iou(const Tensor<T>& predicted, const Tensor<T>& truth) {
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool a = predicted.data[i] >= T(0.5);
    const bool b = truth.data[i] >= T(0.5);
    inter += (a && b) ? 1.0 : 0.0;
    uni += (a || b) ? 1.0 : 0.0;
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

// --- checkpoints ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'K', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  GeneratorConfig generator;
  TrainConfig train;
  std::map<std::string, CategoryStats> category_stats;
  NormMode norm_mode = NormMode::kShape;
  long step = 0;
  int epoch = 0;
};

namespace detail {

template <class T>
void append_params(const nn::ParameterSet<T>& set, const std::string& group, nlohmann::json& index,
                   std::vector<float>& payload) {
  for (const auto& p : set.items()) {
    const auto& v = p.var.value();
    index.push_back({{"group", group}, {"name", p.name}, {"shape", v.shape}, {"offset", payload.size()}});
    for (T x : v.data) payload.push_back(static_cast<float>(x));
  }
}

template <class T>
void restore_params(nn::ParameterSet<T>& set, const std::string& group, const nlohmann::json& index,
                    const std::vector<float>& payload) {
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : index) {
    if (e.at("group") == group) by_name[e.at("name").get<std::string>()] = &e;
  }
  for (auto& p : set.items()) {
    const auto it = by_name.find(p.name);
    require(it != by_name.end(), ErrorCode::kIo, "checkpoint lacks tensor " + group + "/" + p.name);
    const auto shape = it->second->at("shape").template get<std::array<int, 4>>();
    require(shape == p.var.value().shape, ErrorCode::kIo, "checkpoint tensor " + p.name + " has the wrong shape");
    const auto offset = it->second->at("offset").template get<std::size_t>();
    auto& data = p.var.value().data;
    require(offset + data.size() <= payload.size(), ErrorCode::kIo, "checkpoint payload truncated");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(payload[offset + i]);
  }
}

}  // namespace detail

/// Layout: magic, u64 header length, JSON header, float32 little-endian payload.
template <class T>
void save_checkpoint(const fs::path& path, const CheckpointInfo& info, const Generator<T>& g,
                     const std::vector<std::pair<std::string, const nn::ParameterSet<T>*>>& extra = {}) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::json header;
  header["format"] = "sketchstress-checkpoint";
  header["version"] = kCheckpointVersion;
  header["generator"] = info.generator.to_json();
  header["train"] = info.train.to_json();
  header["norm_mode"] = to_string(info.norm_mode);
  header["step"] = info.step;
  header["epoch"] = info.epoch;
  header["category_stats"] = nlohmann::json::object();
  for (const auto& [cat, st] : info.category_stats) header["category_stats"][cat] = st.to_json();
  header["tensors"] = nlohmann::json::array();
  std::vector<float> payload;
  detail::append_params(g.params(), "generator", header["tensors"], payload);
  for (const auto& [group, set] : extra) detail::append_params(*set, group, header["tensors"], payload);

  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  std::string bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes += text;
  bytes.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(float));
  write_file_atomic(path, bytes.data(), bytes.size());
}

struct CheckpointData {
  nlohmann::json header;
  std::vector<float> payload;
};

inline CheckpointData read_checkpoint(const fs::path& path) {
  const auto bytes = read_file(path);
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorCode::kIo,
          path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  require(16 + len <= bytes.size(), ErrorCode::kIo, "checkpoint header truncated");
  CheckpointData out;
  out.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  require(out.header.at("version").get<int>() == kCheckpointVersion, ErrorCode::kIo, "unsupported checkpoint version");
  const std::size_t rest = bytes.size() - 16 - len;
  require(rest % sizeof(float) == 0, ErrorCode::kIo, "checkpoint payload misaligned");
  out.payload.resize(rest / sizeof(float));
  std::memcpy(out.payload.data(), bytes.data() + 16 + len, rest);
  return out;
}

inline CheckpointInfo checkpoint_info(const nlohmann::json& header) {
  CheckpointInfo info;
  info.generator = GeneratorConfig::from_json(header.at("generator"));
  info.train = TrainConfig::from_json(header.at("train"));
  info.norm_mode = norm_mode_from_string(header.at("norm_mode").get<std::string>());
  info.step = header.at("step").get<long>();
  info.epoch = header.at("epoch").get<int>();
  for (const auto& [cat, st] : header.at("category_stats").items()) info.category_stats[cat] = CategoryStats::from_json(st);
  return info;
}

// --- training ------------------------------------------------------------------------------

struct StepLosses {
  long step = 0;
  double gan_g = 0.0;
  double gan_d = 0.0;
  double shape = 0.0;
  double point = 0.0;
  double total = 0.0;

  bool finite() const {
    return std::isfinite(gan_g) && std::isfinite(gan_d) && std::isfinite(shape) && std::isfinite(point) &&
           std::isfinite(total);
  }
};

/// Generator, both critics and their optimizers; one `step` is a critic
/// update followed by a generator update on the same batch.
class Trainer {
 public:
  Trainer(GeneratorConfig gen, TrainConfig train)
      : gen_config_(gen),
        train_config_(train),
        generator_(gen, train.seed),
        d_stress_("d_stress", 1 + cond_channels(gen, train), train.disc_channels, train.seed + 1),
        d_normal_("d_normal", 3 + cond_channels(gen, train), train.disc_channels, train.seed + 2),
        opt_g_(generator_.params(), adam(train)),
        opt_ds_(d_stress_.params(), adam(train)),
        opt_dn_(d_normal_.params(), adam(train)) {
    train_config_.validate();
  }

  /// Returns the losses; weights are left untouched if any loss is not finite.
  StepLosses step(const Batch& batch) {
    const BatchTensors<float> b(batch);
    StepLosses out;
    out.step = step_ + 1;
    const bool normals = gen_config_.normal_branch;

    // Critic update on detached generator outputs.
    const auto fake = generator_.forward(b.sketch, b.point);
    const Var<float> fake_stress = nn::detach(fake.stress);
    const Var<float> fake_normal = nn::detach(fake.normal);
    Var<float> d_loss = lsgan_discriminator_loss(d_stress_.forward(judge(b, b.stress)),
                                                 d_stress_.forward(judge(b, fake_stress)));
    if (normals) {
      d_loss = d_loss + lsgan_discriminator_loss(d_normal_.forward(judge(b, b.normal)),
                                                 d_normal_.forward(judge(b, fake_normal)));
    }
    out.gan_d = d_loss.item();

    // Generator objective through the pre-update critics.
    Var<float> g_gan = lsgan_generator_loss(d_stress_.forward(judge(b, fake.stress)));
    if (normals) g_gan = g_gan + lsgan_generator_loss(d_normal_.forward(judge(b, fake.normal)));
    const Var<float> l_shape = shape_loss(fake.mask, b.mask);
    const Var<float> l_point =
        point_loss(fake.stress, b.stress, normals ? fake.normal : Var<float>(), b.normal, b.attention);
    const Var<float> total = total_loss(g_gan, l_shape, l_point, train_config_.lambda_shape, train_config_.lambda_point);
    out.gan_g = g_gan.item();
    out.shape = l_shape.item();
    out.point = l_point.item();
    out.total = total.item();
    if (!out.finite()) return out;

    // Both backward passes run before any weight moves; the generator pass
    // also reaches the critics, so their gradients are reset in between.
    generator_.params().zero_grad();
    nn::backward(total);
    d_stress_.params().zero_grad();
    d_normal_.params().zero_grad();
    nn::backward(d_loss);
    opt_ds_.step();
    if (normals) opt_dn_.step();
    opt_g_.step();
    ++step_;
    return out;
  }

  /// Masked stress L1 and mask IoU of the current generator on a batch.
  std::pair<double, double> evaluate(const Batch& batch) const {
    const BatchTensors<float> b(batch);
    nn::NoGradGuard guard;
    const auto out = generator_.forward(b.sketch, b.point);
    return {masked_l1(out.stress.value(), b.stress.value(), b.mask.value()),
            mask_iou(out.mask.value(), b.mask.value())};
  }

  void save(const fs::path& path, const Manifest* manifest, int epoch) const {
    CheckpointInfo info;
    info.generator = gen_config_;
    info.train = train_config_;
    info.step = step_;
    info.epoch = epoch;
    if (manifest) {
      info.category_stats = manifest->category_stats;
      if (!manifest->samples.empty()) info.norm_mode = manifest->samples.front().norm_mode;
    }
    save_checkpoint<float>(path, info, generator_, {{"d_stress", &d_stress_.params()}, {"d_normal", &d_normal_.params()}});
  }

  const Generator<float>& generator() const { return generator_; }
  long steps() const { return step_; }

 private:
  static int cond_channels(const GeneratorConfig& g, const TrainConfig& t) {
    return t.conditional_discriminator ? g.input_channels : 0;
  }
  static nn::AdamConfig adam(const TrainConfig& t) { return {t.learning_rate, t.beta1, t.beta2, 1e-8}; }

  Var<float> judge(const BatchTensors<float>& b, const Var<float>& image) const {
    if (!train_config_.conditional_discriminator) return image;
    return nn::concat<float>({image, b.sketch, b.point});
  }

  GeneratorConfig gen_config_;
  TrainConfig train_config_;
  Generator<float> generator_;
  MultiScaleDiscriminator<float> d_stress_, d_normal_;
  nn::Adam<float> opt_g_, opt_ds_, opt_dn_;
  long step_ = 0;
};

struct TrainOptions {
  fs::path dataset;
  fs::path output;
  GeneratorConfig generator;
  TrainConfig train;
  std::string split = "train";
  std::function<void(const StepLosses&)> on_step;
  std::function<void(int epoch, const Trainer&)> on_epoch;
};

struct TrainResult {
  fs::path checkpoint;
  long steps = 0;
  int epochs = 0;
  bool stopped_on_nan = false;
  std::vector<StepLosses> history;
};

inline constexpr const char* kTrainLogHeader = "step,L_GAN_G,L_GAN_D,L_shape,L_point,L_total";

/// Alternating critic/generator updates over the split; a checkpoint per
/// epoch and a CSV log of every step. Stops at the first non-finite loss,
/// leaving the last good checkpoint in place.
inline TrainResult train(const TrainOptions& opts) {
  const Manifest manifest = Manifest::load(opts.dataset);
  fs::create_directories(opts.output);
  BatchOptions bo;
  bo.split = opts.split;
  bo.batch_size = opts.train.batch_size;
  bo.resolution = opts.generator.resolution;
  bo.augment = opts.train.augment;
  bo.seed = opts.train.seed;
  BatchIterator batches(opts.dataset, manifest, bo);

  Trainer trainer(opts.generator, opts.train);
  TrainResult result;
  result.checkpoint = opts.output / "checkpoint.bin";
  std::ofstream log(opts.output / "train_log.csv", std::ios::trunc);
  require(static_cast<bool>(log), ErrorCode::kIo, "cannot write training log");
  log << kTrainLogHeader << '\n';
  log.precision(9);

  trainer.save(result.checkpoint, &manifest, 0);
  for (int epoch = 1; epoch <= opts.train.epochs; ++epoch) {
    if (epoch > 1) batches.start_epoch();
    while (auto batch = batches.next()) {
      const StepLosses l = trainer.step(*batch);
      log << l.step << ',' << l.gan_g << ',' << l.gan_d << ',' << l.shape << ',' << l.point << ',' << l.total << '\n';
      result.history.push_back(l);
      if (opts.on_step) opts.on_step(l);
      if (!l.finite()) {
        result.stopped_on_nan = true;
        result.steps = trainer.steps();
        return result;
      }
    }
    log.flush();
    trainer.save(result.checkpoint, &manifest, epoch);
    result.epochs = epoch;
    if (opts.on_epoch) opts.on_epoch(epoch, trainer);
  }
  result.steps = trainer.steps();
  return result;
}

// --- inference -------------------------------------------------------------------------------

struct InferenceResult {
  ImageF normal;
  ImageF stress;
  ImageF mask;
  double latency_ms = 0.0;
  bool force_outside_mask = false;
};

/// Read-only generator loaded from a checkpoint; `infer` is safe to call concurrently.
class InferenceModel {
 public:
  explicit InferenceModel(const fs::path& checkpoint) {
    const auto data = read_checkpoint(checkpoint);
    info_ = checkpoint_info(data.header);
    generator_ = std::make_unique<Generator<float>>(info_.generator);
    detail::restore_params(generator_->params(), "generator", data.header.at("tensors"), data.payload);
  }

  InferenceModel(const GeneratorConfig& config, const Generator<float>& weights) : generator_() {
    info_.generator = config;
    generator_ = std::make_unique<Generator<float>>(config);
    auto& dst = generator_->params().items();
    const auto& src = weights.params().items();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].var.value() = src[i].var.value();
  }

  int resolution() const { return info_.generator.resolution; }
  const CheckpointInfo& info() const { return info_; }

  /// `sketch` at the model resolution or an integer multiple of it; the
  /// force pixel is given in the sketch's own coordinates.
  InferenceResult infer(const ImageF& sketch, int col, int row) const {
    const auto t0 = std::chrono::steady_clock::now();
    require(sketch.channels == 1 && sketch.width == sketch.height, ErrorCode::kInvalidArgument,
            "sketch must be a square single-channel image");
    require(sketch.contains(col, row), ErrorCode::kOutOfBounds, "force pixel outside the image");
    const int res = resolution();
    require(sketch.width % res == 0, ErrorCode::kInvalidArgument,
            "sketch size " + std::to_string(sketch.width) + " is not a multiple of the model resolution " +
                std::to_string(res));
    const int factor = sketch.width / res;
    const ImageF x = factor == 1 ? binarize(sketch, 0.5f) : binarize(area_downsample(sketch, factor), 0.0f, true);
    const int c = col / factor, r = row / factor;
    const ImageF p = point_map(res, res, c, r, point_radius_for(res));

    Tensor<float> xt(1, 1, res, res), pt(1, 1, res, res);
    for (int i = 0; i < res * res; ++i) {
      xt.data[static_cast<std::size_t>(i)] = x.data[static_cast<std::size_t>(i)];
      pt.data[static_cast<std::size_t>(i)] = p.data[static_cast<std::size_t>(i)];
    }
    nn::NoGradGuard guard;
    const auto out = generator_->forward(Var<float>(std::move(xt)), Var<float>(std::move(pt)));
    InferenceResult result;
    result.normal = tensor_image(out.normal.value(), 0);
    result.stress = tensor_image(out.stress.value(), 0);
    result.mask = tensor_image(out.mask.value(), 0);
    result.force_outside_mask = result.mask.at(c, r) < 0.5f;
    result.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }

 private:
  CheckpointInfo info_;
  std::unique_ptr<Generator<float>> generator_;
};

struct FitReport {
  double masked_l1 = 0.0;  // mean over samples of the masked stress L1
  double mask_iou = 0.0;   // mean over samples
  std::size_t samples = 0;
};

/// Runs the model on every sample the iterator yields, through the same
/// entry point the service uses, and scores it against the stored maps.
inline FitReport evaluate_fit(const InferenceModel& model, BatchIterator& batches) {
  FitReport fit;
  batches.start_epoch();
  while (auto batch = batches.next()) {
    for (const auto& q : batch->samples) {
      const auto r = model.infer(q.sketch, q.force_pixel[0], q.force_pixel[1]);
      Tensor<float> pred(1, 1, r.stress.height, r.stress.width), truth = pred, mask = pred, pmask = pred;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        pred.data[i] = r.stress.data[i];
        truth.data[i] = q.stress.data[i];
        mask.data[i] = q.mask.data[i];
        pmask.data[i] = r.mask.data[i];
      }
      fit.masked_l1 += masked_l1(pred, truth, mask);
      fit.mask_iou += mask_iou(pmask, mask);
      ++fit.samples;
    }
  }
  if (fit.samples) {
    fit.masked_l1 /= static_cast<double>(fit.samples);
    fit.mask_iou /= static_cast<double>(fit.samples);
  }
  return fit;
}

/// Writes predicted and ground-truth stress PNGs of a split as
/// `<out>/{pred,gt}/<category>/<sample_id>.png`; returns the two directories.
inline std::pair<fs::path, fs::path> predict_split(const InferenceModel& model, const fs::path& dataset,
                                                   const std::string& split, const fs::path& out) {
  const Manifest manifest = Manifest::load(dataset);
  const fs::path pred = out / "pred", gt = out / "gt";
  const auto indices = manifest.indices(split);
  require(!indices.empty(), ErrorCode::kEmptyRegion, "split '" + split + "' has no samples");
  for (std::size_t i : indices) {
    const auto& rec = manifest.samples[i];
    const Quadruple q = resample_quadruple(read_sample(dataset, rec), model.resolution());
    const auto r = model.infer(q.sketch, q.force_pixel[0], q.force_pixel[1]);
    const fs::path name = fs::path(rec.category) / (rec.sample_id + ".png");
    write_png(pred / name, r.stress, PngDepth::k16);
    write_png(gt / name, q.stress, PngDepth::k16);
  }
  return {pred, gt};
}

}  // namespace sketchstress
