#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>

#include "sketchstress/png_io.hpp"
#include "sketchstress/random.hpp"
#include "sketchstress/render.hpp"

namespace sketchstress {

namespace fs = std::filesystem;

inline constexpr int kDatasetVersion = 1;

/// The six images of one training sample, keyed as on disk.
inline constexpr std::array<const char*, 6> kImageKeys{"x", "p", "n", "y", "ms", "mp"};

struct SampleRecord {
  std::string sample_id;
  std::string shape_id;
  std::string category;
  double azimuth = 0.0;
  double elevation = 10.0;
  int view_id = 0;
  std::array<int, 2> force_pixel{0, 0};  // (column, row) at `resolution`
  Vec3 force_location = Vec3::Zero();
  Vec3 force_normal = Vec3::Zero();
  double magnitude = 100.0;
  NormMode norm_mode = NormMode::kShape;
  int resolution = 256;
  std::map<std::string, std::string> files;  // key -> path relative to the dataset root

  nlohmann::json to_json() const {
    return {{"sample_id", sample_id},
            {"shape_id", shape_id},
            {"category", category},
            {"azimuth", azimuth},
            {"elevation", elevation},
            {"view_id", view_id},
            {"force_pixel", force_pixel},
            {"force_location", vec_json(force_location)},
            {"force_normal", vec_json(force_normal)},
            {"magnitude", magnitude},
            {"norm_mode", to_string(norm_mode)},
            {"resolution", resolution},
            {"files", files}};
  }

  static SampleRecord from_json(const nlohmann::json& j) {
    SampleRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.shape_id = j.at("shape_id").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.azimuth = j.at("azimuth").get<double>();
    r.elevation = j.at("elevation").get<double>();
    r.view_id = j.at("view_id").get<int>();
    r.force_pixel = j.at("force_pixel").get<std::array<int, 2>>();
    const auto& l = j.at("force_location");
    r.force_location = Vec3(l.at(0).get<double>(), l.at(1).get<double>(), l.at(2).get<double>());
    const auto& n = j.at("force_normal");
    r.force_normal = Vec3(n.at(0).get<double>(), n.at(1).get<double>(), n.at(2).get<double>());
    r.magnitude = j.at("magnitude").get<double>();
    r.norm_mode = norm_mode_from_string(j.at("norm_mode").get<std::string>());
    r.resolution = j.at("resolution").get<int>();
    r.files = j.at("files").get<std::map<std::string, std::string>>();
    return r;
  }
};

struct Manifest {
  int version = kDatasetVersion;
  std::map<std::string, CategoryStats> category_stats;
  std::vector<SampleRecord> samples;
  std::map<std::string, std::string> split;  // shape_id -> "train" | "test"

  std::set<std::string> shape_ids() const {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.shape_id);
    return ids;
  }

  /// Samples of a split ("train", "test", or "all"). Shapes without an
  /// assignment count as training data.
  std::vector<std::size_t> indices(const std::string& which) const {
    require(which == "train" || which == "test" || which == "all", ErrorCode::kInvalidArgument,
            "unknown split '" + which + "'");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (which == "all") {
        out.push_back(i);
        continue;
      }
      const auto it = split.find(samples[i].shape_id);
      const std::string assigned = it == split.end() ? "train" : it->second;
      if (assigned == which) out.push_back(i);
    }
    return out;
  }

  /// Serialized with samples ordered by id so concurrent writers produce identical files.
  nlohmann::json to_json() const {
    std::vector<const SampleRecord*> ordered;
    for (const auto& s : samples) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->sample_id < b->sample_id; });
    nlohmann::json j;
    j["version"] = version;
    j["category_stats"] = nlohmann::json::object();
    for (const auto& [cat, st] : category_stats) j["category_stats"][cat] = st.to_json();
    j["split"] = split;
    j["samples"] = nlohmann::json::array();
    for (const auto* s : ordered) j["samples"].push_back(s->to_json());
    return j;
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    m.version = j.at("version").get<int>();
    require(m.version == kDatasetVersion, ErrorCode::kIo, "unsupported dataset version " + std::to_string(m.version));
    for (const auto& [cat, st] : j.at("category_stats").items()) m.category_stats[cat] = CategoryStats::from_json(st);
    m.split = j.at("split").get<std::map<std::string, std::string>>();
    for (const auto& s : j.at("samples")) m.samples.push_back(SampleRecord::from_json(s));
    return m;
  }

  void save(const fs::path& root) const {
    const std::string text = to_json().dump(2) + "\n";
    write_file_atomic(root / "manifest.json", text.data(), text.size());
  }

  static Manifest load(const fs::path& root) {
    std::ifstream in(root / "manifest.json");
    require(static_cast<bool>(in), ErrorCode::kNotFound, "no manifest.json under " + root.string());
    return from_json(nlohmann::json::parse(in));
  }
};

inline std::string view_dir_name(double azimuth, double elevation) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "a%03d_e%02d", static_cast<int>(std::lround(azimuth)),
                static_cast<int>(std::lround(elevation)));
  return buf;
}

inline const ImageF& image_for(const Quadruple& q, const std::string& key) {
  if (key == "x") return q.sketch;
  if (key == "p") return q.point;
  if (key == "n") return q.normal;
  if (key == "y") return q.stress;
  if (key == "ms") return q.mask;
  if (key == "mp") return q.attention;
  throw Error(ErrorCode::kInvalidArgument, "unknown image key '" + key + "'");
}

inline ImageF& image_for(Quadruple& q, const std::string& key) {
  return const_cast<ImageF&>(image_for(static_cast<const Quadruple&>(q), key));
}

inline PngDepth depth_for(const std::string& key) { return key == "y" || key == "mp" ? PngDepth::k16 : PngDepth::k8; }
inline int channels_for(const std::string& key) { return key == "n" ? 3 : 1; }

/// Appends samples under a dataset root; safe for concurrent callers.
class DatasetWriter {
 public:
  explicit DatasetWriter(fs::path root, bool flush_each_write = true)
      : root_(std::move(root)), flush_each_write_(flush_each_write) {
    fs::create_directories(root_);
    if (fs::exists(root_ / "manifest.json")) manifest_ = Manifest::load(root_);
    for (const auto& s : manifest_.samples) ids_.insert(s.sample_id);
  }

  /// Writes the six PNGs (temp file + rename each), then records the sample.
  std::string write_sample(SampleRecord record, const Quadruple& images) {
    const int res = images.mask.width;
    for (const char* key : kImageKeys) {
      const ImageF& img = image_for(images, key);
      require(img.width == res && img.height == res && img.channels == channels_for(key), ErrorCode::kInvalidArgument,
              std::string("image '") + key + "' does not match the sample resolution");
    }
    record.resolution = res;
    {
      std::lock_guard lock(mutex_);
      require(!record.sample_id.empty(), ErrorCode::kInvalidArgument, "sample id is empty");
      require(ids_.insert(record.sample_id).second, ErrorCode::kInvalidArgument,
              "duplicate sample id '" + record.sample_id + "'");
      require(!resolution_ || *resolution_ == res, ErrorCode::kInvalidArgument,
              "resolution " + std::to_string(res) + " differs from the dataset's " + std::to_string(resolution_.value_or(0)));
      resolution_ = res;
    }
    const fs::path dir = fs::path(record.category) / record.shape_id / view_dir_name(record.azimuth, record.elevation);
    for (const char* key : kImageKeys) {
      const fs::path rel = dir / (record.sample_id + "_" + key + ".png");
      write_png(root_ / rel, image_for(images, key), depth_for(key));
      record.files[key] = rel.generic_string();
    }
    std::lock_guard lock(mutex_);
    manifest_.samples.push_back(std::move(record));
    if (flush_each_write_) manifest_.save(root_);
    return manifest_.samples.back().sample_id;
  }

  void set_category_stats(const std::string& category, const CategoryStats& stats) {
    std::lock_guard lock(mutex_);
    manifest_.category_stats[category] = stats;
  }

  void set_split(std::map<std::string, std::string> split) {
    std::lock_guard lock(mutex_);
    manifest_.split = std::move(split);
  }

  void flush() {
    std::lock_guard lock(mutex_);
    manifest_.save(root_);
  }

  Manifest manifest() const {
    std::lock_guard lock(mutex_);
    return manifest_;
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  bool flush_each_write_;
  mutable std::mutex mutex_;
  Manifest manifest_;
  std::set<std::string> ids_;
  std::optional<int> resolution_;
};

/// Reads a sample's six images, checking channel counts and resolution.
inline Quadruple read_sample(const fs::path& root, const SampleRecord& record) {
  Quadruple q;
  for (const char* key : kImageKeys) {
    const auto it = record.files.find(key);
    require(it != record.files.end(), ErrorCode::kIo, record.sample_id + ": missing file reference '" + key + "'");
    ImageF img = read_png(root / it->second).image;
    require(img.channels == channels_for(key) && img.width == record.resolution && img.height == record.resolution,
            ErrorCode::kIo, record.sample_id + ": image '" + key + "' has unexpected shape");
    image_for(q, key) = std::move(img);
  }
  q.force_pixel = record.force_pixel;
  return q;
}

/// Assigns whole shapes to train/test; deterministic for a seed.
inline Manifest split_by_shape(Manifest manifest, double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorCode::kInvalidArgument, "test fraction must lie in (0, 1)");
  const auto ids = manifest.shape_ids();
  require(ids.size() >= 2, ErrorCode::kInvalidArgument, "a split needs at least two shapes");
  std::vector<std::string> shapes(ids.begin(), ids.end());
  Rng rng(seed);
  deterministic_shuffle(shapes.begin(), shapes.end(), rng);
  const auto n = static_cast<long>(shapes.size());
  const long n_test = std::clamp(std::lround(test_fraction * static_cast<double>(n)), 1L, n - 1);
  manifest.split.clear();
  for (long i = 0; i < n; ++i) manifest.split[shapes[static_cast<std::size_t>(i)]] = i < n_test ? "test" : "train";
  return manifest;
}

// --- training-resolution views of stored samples -----------------------------

/// Brings a stored quadruple to `resolution`: area averaging, re-binarized
/// masks, a point map redrawn at the scaled force pixel, renormalized
/// normals, and an attention map recomputed on the new mask.
inline Quadruple resample_quadruple(const Quadruple& q, int resolution) {
  const int stored = q.mask.width;
  require(resolution > 0 && stored % resolution == 0, ErrorCode::kInvalidArgument,
          "training resolution must divide the stored resolution " + std::to_string(stored));
  const int factor = stored / resolution;
  if (factor == 1) return q;
  Quadruple out;
  out.mask = binarize(area_downsample(q.mask, factor), 0.5f);
  out.sketch = binarize(area_downsample(q.sketch, factor), 0.0f, true);
  out.force_pixel = {q.force_pixel[0] / factor, q.force_pixel[1] / factor};
  out.point = point_map(resolution, resolution, out.force_pixel[0], out.force_pixel[1], point_radius_for(resolution));

  out.normal = area_downsample(q.normal, factor);
  out.stress = area_downsample(q.stress, factor);
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      if (out.mask.at(c, r) < 0.5f) {
        for (int k = 0; k < 3; ++k) out.normal.at(c, r, k) = kNormalBackground;
        out.stress.at(c, r) = 0.0f;
        continue;
      }
      Vec3 v(2.0 * out.normal.at(c, r, 0) - 1.0, 2.0 * out.normal.at(c, r, 1) - 1.0, 2.0 * out.normal.at(c, r, 2) - 1.0);
      if (v.norm() < 1e-6) v = Vec3(0, 0, 1);
      encode_normal(out.normal, c, r, v.normalized());
    }
  }
  if (out.mask.at(out.force_pixel[0], out.force_pixel[1]) >= 0.5f) {
    out.attention = attention_map(out.point, out.mask);
  } else {
    // The force pixel fell off the coarser silhouette: keep the averaged map.
    out.attention = area_downsample(q.attention, factor);
    for (std::size_t i = 0; i < out.attention.data.size(); ++i) out.attention.data[i] *= out.mask.data[i];
  }
  return out;
}

/// Horizontal mirror of every image; the normal map's X component changes sign.
inline Quadruple flip_quadruple(const Quadruple& q) {
  Quadruple out;
  out.sketch = flip_horizontal(q.sketch);
  out.point = flip_horizontal(q.point);
  out.normal = flip_horizontal(q.normal);
  for (int r = 0; r < out.normal.height; ++r) {
    for (int c = 0; c < out.normal.width; ++c) out.normal.at(c, r, 0) = 1.0f - out.normal.at(c, r, 0);
  }
  out.stress = flip_horizontal(q.stress);
  out.mask = flip_horizontal(q.mask);
  out.attention = flip_horizontal(q.attention);
  out.force_pixel = {q.mask.width - 1 - q.force_pixel[0], q.force_pixel[1]};
  return out;
}

struct Batch {
  std::vector<Quadruple> samples;
  std::vector<std::string> sample_ids;
  std::size_t size() const { return samples.size(); }
};

struct BatchOptions {
  std::string split = "train";
  int batch_size = 16;
  int resolution = 64;
  bool augment = false;
  bool shuffle = true;
  bool drop_last = false;
  std::uint64_t seed = 0;
};

/// Epoch-wise iteration over a split. Unreadable samples are skipped with a
/// warning and the batch is filled from the following samples.
class BatchIterator {
 public:
  using WarningSink = std::function<void(const std::string&)>;

  BatchIterator(fs::path root, Manifest manifest, BatchOptions options, WarningSink warn = {})
      : root_(std::move(root)), manifest_(std::move(manifest)), options_(std::move(options)),
        warn_(warn ? std::move(warn) : [](const std::string& m) { std::cerr << "warning: " << m << '\n'; }) {
    require(options_.batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
    indices_ = manifest_.indices(options_.split);
    require(!indices_.empty(), ErrorCode::kEmptyRegion, "split '" + options_.split + "' has no samples");
    cache_.resize(manifest_.samples.size());
    start_epoch();
  }

  /// Next batch of the current epoch, or nullopt once it is exhausted.
  std::optional<Batch> next() {
    Batch batch;
    while (static_cast<int>(batch.size()) < options_.batch_size && cursor_ < order_.size()) {
      const std::size_t idx = order_[cursor_++];
      const bool flip = options_.augment && uniform01(rng_) < 0.5;
      const Quadruple* q = load(idx);
      if (!q) continue;
      batch.samples.push_back(flip ? flip_quadruple(*q) : *q);
      batch.sample_ids.push_back(manifest_.samples[idx].sample_id);
    }
    if (batch.size() == 0) return std::nullopt;
    if (options_.drop_last && static_cast<int>(batch.size()) < options_.batch_size) return std::nullopt;
    return batch;
  }

  void start_epoch() {
    order_ = indices_;
    rng_.seed(options_.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch_));
    if (options_.shuffle) deterministic_shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    ++epoch_;
  }

  std::size_t split_size() const { return indices_.size(); }
  std::size_t skipped() const { return skipped_.size(); }
  const Manifest& manifest() const { return manifest_; }

 private:
  const Quadruple* load(std::size_t idx) {
    if (cache_[idx]) return &*cache_[idx];
    if (skipped_.count(idx)) return nullptr;
    const auto& rec = manifest_.samples[idx];
    try {
      cache_[idx] = resample_quadruple(read_sample(root_, rec), options_.resolution);
      return &*cache_[idx];
    } catch (const std::exception& e) {
      skipped_.insert(idx);
      warn_("skipping sample " + rec.sample_id + ": " + e.what());
      return nullptr;
    }
  }

  fs::path root_;
  Manifest manifest_;
  BatchOptions options_;
  WarningSink warn_;
  std::vector<std::size_t> indices_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int epoch_ = 0;
  Rng rng_;
  std::vector<std::optional<Quadruple>> cache_;
  std::set<std::size_t> skipped_;
};

}  // namespace sketchstress
