#pragma once

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "sketchstress/png_io.hpp"

namespace sketchstress::metrics {

namespace fs = std::filesystem;

// Images hold intensities in [0, 1]; reported values use the 8-bit scale.
inline constexpr double kFullScale = 255.0;

inline void require_aligned(const ImageF& a, const ImageF& b) {
  require(a.same_shape(b), ErrorCode::kInvalidArgument,
          "image shapes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
              std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
              std::to_string(b.channels));
}

inline double mae(const ImageF& a, const ImageF& b) {
  require_aligned(a, b);
  if (a.data.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
  return kFullScale * s / static_cast<double>(a.data.size());
}

/// Harmonic mean of precision and recall of `predicted` against `truth`,
/// both binarized at `threshold` (fraction of full scale, inclusive).
inline double f_measure(const ImageF& predicted, const ImageF& truth, double threshold = 0.1) {
  require_aligned(predicted, truth);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const bool p = predicted.data[i] >= threshold, t = truth.data[i] >= threshold;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return 1.0;  // both empty
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

/// Unit-mass intensity histogram; bin k covers [k/bins, (k+1)/bins).
inline std::vector<double> histogram(const ImageF& img, int bins) {
  require(bins >= 1, ErrorCode::kInvalidArgument, "bin count must be >= 1");
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  if (img.data.empty()) return h;
  for (float v : img.data) {
    const int k = std::clamp(static_cast<int>(std::floor(static_cast<double>(v) * bins)), 0, bins - 1);
    h[static_cast<std::size_t>(k)] += 1.0;
  }
  for (auto& x : h) x /= static_cast<double>(img.data.size());
  return h;
}

/// 1-D transport cost between histograms of equal mass, in bin steps.
inline double emd_histograms(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::kInvalidArgument, "histograms differ in length");
  double ca = 0.0, cb = 0.0, cost = 0.0;
  for (std::size_t k = 0; k + 1 < a.size(); ++k) {
    ca += a[k];
    cb += b[k];
    cost += std::abs(ca - cb);
  }
  return cost;
}

/// Earth mover's distance between intensity histograms; one bin step costs
/// 256 / bins intensity levels, so with 256 bins a shift of c levels costs c.
inline double emd(const ImageF& a, const ImageF& b, int bins = 256) {
  require_aligned(a, b);
  return emd_histograms(histogram(a, bins), histogram(b, bins)) * 256.0 / bins;
}

// --- Frechet distance -------------------------------------------------------------

using Embedding = Eigen::VectorXd;
using Embedder = std::function<Embedding(const ImageF&)>;

/// Offline stand-in for a pretrained feature extractor: the image box-filtered
/// to 16x16 (channels averaged) and flattened.
inline Embedding fallback_embedding(const ImageF& img) {
  constexpr int kSide = 16;
  require(img.width > 0 && img.height > 0, ErrorCode::kInvalidArgument, "empty image");
  Embedding e = Embedding::Zero(kSide * kSide);
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(kSide * kSide);
  for (int r = 0; r < img.height; ++r) {
    const int gr = r * kSide / img.height;
    for (int c = 0; c < img.width; ++c) {
      const int gc = c * kSide / img.width;
      double v = 0.0;
      for (int k = 0; k < img.channels; ++k) v += img.at(c, r, k);
      e[gr * kSide + gc] += v / img.channels;
      weight[gr * kSide + gc] += 1.0;
    }
  }
  for (int i = 0; i < kSide * kSide; ++i)
    if (weight[i] > 0) e[i] /= weight[i];
  return e;
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n - 1)
};

inline Gaussian fit_gaussian(const std::vector<Embedding>& xs) {
  require(xs.size() >= 2, ErrorCode::kInvalidArgument, "a Gaussian fit needs at least two samples");
  const auto d = xs.front().size();
  Gaussian g{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  for (const auto& x : xs) {
    require(x.size() == d, ErrorCode::kInvalidArgument, "embeddings differ in length");
    g.mean += x;
  }
  g.mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) {
    const Eigen::VectorXd c = x - g.mean;
    g.cov.noalias() += c * c.transpose();
  }
  g.cov /= static_cast<double>(xs.size() - 1);
  return g;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the cross term
/// evaluated as Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)).
inline double frechet_distance(const Gaussian& a, const Gaussian& b) {
  require(a.mean.size() == b.mean.size(), ErrorCode::kInvalidArgument, "Gaussians differ in dimension");
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd cross = psd_sqrt(ra * b.cov * ra);
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

inline double fid(const std::vector<ImageF>& set_a, const std::vector<ImageF>& set_b,
                  const Embedder& embed = fallback_embedding) {
  require(set_a.size() >= 2 && set_b.size() >= 2, ErrorCode::kInvalidArgument, "FID needs at least two images per set");
  std::vector<Embedding> ea, eb;
  for (const auto& img : set_a) ea.push_back(embed(img));
  for (const auto& img : set_b) eb.push_back(embed(img));
  return frechet_distance(fit_gaussian(ea), fit_gaussian(eb));
}

// --- directory evaluation ---------------------------------------------------------------

struct MetricConfig {
  double fm_threshold = 0.1;
  int emd_bins = 256;
  bool compute_fid = true;
  std::string method = "ours";
  int workers = 1;

  nlohmann::json to_json() const {
    return {{"fm_threshold", fm_threshold},
            {"emd_bins", emd_bins},
            {"fid_embedder", compute_fid ? "fallback-16x16" : "none"},
            {"method", method}};
  }
};

struct MetricRow {
  std::size_t count = 0;
  double mae = 0.0;
  double emd = 0.0;
  double fm = 0.0;
  std::optional<double> fid;

  nlohmann::json to_json() const {
    nlohmann::json j{{"count", count}, {"mae", mae}, {"emd", emd}, {"fm", fm}};
    j["fid"] = fid ? nlohmann::json(*fid) : nlohmann::json(nullptr);
    return j;
  }
};

struct MetricReport {
  std::map<std::string, MetricRow> categories;
  MetricRow overall;
  MetricConfig config;

  nlohmann::json to_json() const {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, row] : categories) cats[name] = row.to_json();
    return {{"categories", cats}, {"overall", overall.to_json()}, {"config", config.to_json()},
            {"samples", overall.count}};
  }

  /// Category / Method / MAE / EMD / FID / FM rows.
  std::string table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %-10s %10s %10s %10s %8s\n", "Category", "Method", "MAE", "EMD", "FID", "FM");
    out << line;
    auto row = [&](const std::string& name, const MetricRow& r) {
      const std::string f = r.fid ? [&] {
        char b[32];
        std::snprintf(b, sizeof b, "%.3f", *r.fid);
        return std::string(b);
      }()
                                  : std::string("-");
      std::snprintf(line, sizeof line, "%-14s %-10s %10.3f %10.3f %10s %8.3f\n", name.c_str(), config.method.c_str(),
                    r.mae, r.emd, f.c_str(), r.fm);
      out << line;
    };
    for (const auto& [name, r] : categories) row(name, r);
    row("overall", overall);
    return out.str();
  }
};

/// PNG files under `dir`, keyed by path relative to it.
inline std::map<std::string, fs::path> png_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::kNotFound, "directory " + dir.string() + " does not exist");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png")
      out[fs::relative(e.path(), dir).generic_string()] = e.path();
  }
  return out;
}

/// Pairs `pred/<rel>` with `gt/<rel>`. A nested file's first directory names
/// its category; flat files fall under "all".
inline MetricReport evaluate_directories(const fs::path& predicted, const fs::path& truth, const MetricConfig& config = {}) {
  const auto pred_files = png_files(predicted), gt_files = png_files(truth);
  std::vector<std::string> missing;
  for (const auto& [rel, _] : gt_files)
    if (!pred_files.count(rel)) missing.push_back(rel);
  for (const auto& [rel, _] : pred_files)
    if (!gt_files.count(rel)) missing.push_back(rel);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) list += (i ? ", " : "") + missing[i];
    throw Error(ErrorCode::kInvalidArgument, std::to_string(missing.size()) + " file(s) lack a counterpart: " + list);
  }
  require(!gt_files.empty(), ErrorCode::kInvalidArgument, "no PNG files to compare");

  struct Pair {
    std::string category;
    ImageF pred, gt;
    double mae = 0, emd = 0, fm = 0;
  };
  std::vector<Pair> pairs;
  for (const auto& [rel, path] : gt_files) {
    const fs::path r(rel);
    Pair p;
    p.category = std::distance(r.begin(), r.end()) > 1 ? r.begin()->string() : "all";
    pairs.push_back(std::move(p));
  }
  std::vector<std::string> rels;
  for (const auto& [rel, _] : gt_files) rels.push_back(rel);

  std::mutex error_mutex;
  std::optional<std::string> failure;
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < pairs.size(); i += step) {
      try {
        auto& p = pairs[i];
        p.pred = read_png(pred_files.at(rels[i])).image;
        p.gt = read_png(gt_files.at(rels[i])).image;
        p.mae = mae(p.pred, p.gt);
        p.emd = emd(p.pred, p.gt, config.emd_bins);
        p.fm = f_measure(p.pred, p.gt, config.fm_threshold);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure = rels[i] + ": " + e.what();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, config.workers)), 1, pairs.size());
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  if (failure) throw Error(ErrorCode::kIo, *failure);

  MetricReport report;
  report.config = config;
  auto summarize = [&](const std::function<bool(const Pair&)>& keep) {
    MetricRow row;
    std::vector<ImageF> a, b;
    for (const auto& p : pairs) {
      if (!keep(p)) continue;
      ++row.count;
      row.mae += p.mae;
      row.emd += p.emd;
      row.fm += p.fm;
      if (config.compute_fid) {
        a.push_back(p.pred);
        b.push_back(p.gt);
      }
    }
    if (row.count) {
      row.mae /= static_cast<double>(row.count);
      row.emd /= static_cast<double>(row.count);
      row.fm /= static_cast<double>(row.count);
    }
    if (config.compute_fid && a.size() >= 2) row.fid = fid(a, b);
    return row;
  };
  std::set<std::string> cats;
  for (const auto& p : pairs) cats.insert(p.category);
  for (const auto& c : cats) report.categories[c] = summarize([&](const Pair& p) { return p.category == c; });
  report.overall = summarize([](const Pair&) { return true; });
  return report;
}

}  // namespace sketchstress::metrics
