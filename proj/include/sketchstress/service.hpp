#pragma once

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <atomic>
#include <memory>

#include "sketchstress/aggregator.hpp"
#include "sketchstress/png_io.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen parameter names.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128  // the default of 5 drops bursts of clients
#endif
#include <httplib.h>

namespace sketchstress {

// --- base64 -------------------------------------------------------------------------

inline std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

/// Standard alphabet; whitespace and an optional "data:...;base64," prefix are ignored.
inline std::vector<unsigned char> base64_decode(std::string_view text) {
  if (text.rfind("data:", 0) == 0) {
    const auto comma = text.find(',');
    require(comma != std::string_view::npos, ErrorCode::kInvalidArgument, "malformed data URL");
    text.remove_prefix(comma + 1);
  }
  std::string clean;
  clean.reserve(text.size());
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.empty()) return {};
  require(clean.size() % 4 == 0, ErrorCode::kInvalidArgument, "base64 length is not a multiple of 4");
  std::vector<unsigned char> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  require(n >= 0, ErrorCode::kInvalidArgument, "invalid base64 data");
  std::size_t size = static_cast<std::size_t>(n);
  if (clean.back() == '=') --size;  // EVP_DecodeBlock counts padding as zero bytes
  if (clean[clean.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

inline std::string png_base64(const ImageF& img, PngDepth depth) { return base64_encode(encode_png(img, depth)); }

// --- service -------------------------------------------------------------------------

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8787;
  std::map<std::string, fs::path> checkpoints;  // category -> checkpoint file
  std::string default_category;                 // empty: the first category
  std::size_t max_payload_bytes = 1 << 20;
  std::string cors_origin = "*";
  int threads = 8;
  int aggregate_workers = 1;
};

struct LoadedCheckpoint {
  std::string category;
  fs::path path;
  std::shared_ptr<const InferenceModel> model;
};

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Stateless JSON API over read-only models: POST /api/v1/infer,
/// POST /api/v1/aggregate, GET /health.
class Service {
 public:
  explicit Service(ServiceConfig config) : config_(std::move(config)) {
    for (const auto& [category, path] : config_.checkpoints) {
      models_[category] = {category, path, std::make_shared<const InferenceModel>(path)};
    }
    if (config_.default_category.empty() && !models_.empty()) config_.default_category = models_.begin()->first;
    setup();
  }

  /// For tests and embedding: serve models that are already loaded.
  Service(ServiceConfig config, std::map<std::string, LoadedCheckpoint> models)
      : config_(std::move(config)), models_(std::move(models)) {
    if (config_.default_category.empty() && !models_.empty()) config_.default_category = models_.begin()->first;
    setup();
  }

  ~Service() { stop(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds (port 0 picks a free one) and serves on a background thread.
  int start() {
    int port = config_.port;
    if (port == 0) {
      port = server_.bind_to_any_port(config_.host);
    } else {
      require(server_.bind_to_port(config_.host, port), ErrorCode::kIo,
              "cannot bind " + config_.host + ":" + std::to_string(port));
    }
    require(port > 0, ErrorCode::kIo, "cannot bind " + config_.host);
    port_ = port;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  /// Serves on the calling thread until stop().
  void run() {
    require(server_.listen(config_.host, config_.port), ErrorCode::kIo,
            "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

  nlohmann::json health() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [category, m] : models_) {
      const auto& info = m.model->info();
      list.push_back({{"id", category},
                      {"category", category},
                      {"path", m.path.generic_string()},
                      {"format_version", kCheckpointVersion},
                      {"step", info.step},
                      {"epoch", info.epoch},
                      {"resolution", info.generator.resolution}});
    }
    return {{"status", models_.empty() ? "degraded" : "ok"},
            {"degraded", models_.empty()},
            {"default_category", config_.default_category},
            {"checkpoints", list}};
  }

  nlohmann::json infer(const nlohmann::json& request) const {
    const auto& m = model_for(request);
    const ImageF sketch = sketch_from(request);
    const auto xy = request_pixel(request, "force_xy");
    check_bounds(sketch, xy[0], xy[1], "force_xy");
    const InferenceResult r = run_model([&] { return m.model->infer(sketch, xy[0], xy[1]); });
    nlohmann::json warnings = nlohmann::json::array();
    if (r.force_outside_mask) warnings.push_back("force pixel lies outside the predicted shape mask");
    return {{"category", m.category},
            {"resolution", r.stress.width},
            {"force_xy", xy},
            {"normal", png_base64(r.normal, PngDepth::k8)},
            {"stress", png_base64(r.stress, PngDepth::k16)},
            {"mask", png_base64(r.mask, PngDepth::k8)},
            {"latency_ms", r.latency_ms},
            {"warnings", warnings}};
  }

  nlohmann::json aggregate(const nlohmann::json& request) const {
    const auto& m = model_for(request);
    const ImageF sketch = sketch_from(request);
    if (!request.contains("region") || !request["region"].is_object()) throw HttpError(400, "missing 'region' object");
    const auto& rj = request["region"];
    RegionSpec region;
    try {
      region.center = {rj.at("cx").get<int>(), rj.at("cy").get<int>()};
      region.radius = rj.value("radius", region.radius);
      region.angle_tolerance = rj.value("angle_tol_deg", region.angle_tolerance);
      region.max_points = rj.value("max_points", region.max_points);
    } catch (const nlohmann::json::exception& e) {
      throw HttpError(400, std::string("malformed region: ") + e.what());
    }
    AggregateMode mode = AggregateMode::kMean;
    try {
      mode = aggregate_mode_from_string(request.value("mode", std::string("mean")));
      region.validate();
    } catch (const Error& e) {
      throw HttpError(422, e.what());
    }
    check_bounds(sketch, region.center[0], region.center[1], "region centre");
    const MultiForceResult r =
        run_model([&] { return multi_force_query(*m.model, sketch, region, mode, config_.aggregate_workers); });
    nlohmann::json selected = nlohmann::json::array(), deviations = nlohmann::json::array();
    for (const auto& p : r.points) {
      selected.push_back(p.pixel);
      deviations.push_back(p.deviation_deg);
    }
    return {{"category", m.category},
            {"resolution", r.aggregated.width},
            {"stress", png_base64(r.aggregated, PngDepth::k16)},
            {"normal", png_base64(r.normal, PngDepth::k8)},
            {"mask", png_base64(r.mask, PngDepth::k8)},
            {"selected", selected},
            {"deviations_deg", deviations},
            {"per_force_count", r.per_force.size()},
            {"region",
             {{"cx", region.center[0]},
              {"cy", region.center[1]},
              {"radius", region.radius},
              {"angle_tol_deg", region.angle_tolerance},
              {"max_points", region.max_points}}},
            {"mode", mode == AggregateMode::kMean ? "mean" : "sum"},
            {"latency_ms", r.latency_ms},
            {"warnings", nlohmann::json::array()}};
  }

 private:
  void setup() {
    server_.new_task_queue = [n = std::max(1, config_.threads)] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
    server_.set_payload_max_length(config_.max_payload_bytes);
    server_.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(health().dump(), "application/json");
    });
    server_.Post("/api/v1/infer", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const nlohmann::json& j) { return infer(j); });
    });
    server_.Post("/api/v1/aggregate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const nlohmann::json& j) { return aggregate(j); });
    });
  }

  template <class F>
  static void handle(const httplib::Request& req, httplib::Response& res, F&& f) {
    int status = 200;
    nlohmann::json body;
    try {
      nlohmann::json request;
      try {
        request = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        throw HttpError(400, std::string("request body is not valid JSON: ") + e.what());
      }
      if (!request.is_object()) throw HttpError(400, "request body must be a JSON object");
      body = f(request);
    } catch (const HttpError& e) {
      status = e.status();
      body = {{"error", e.what()}, {"status", status}};
    } catch (const std::exception& e) {
      status = 500;
      body = {{"error", e.what()}, {"status", status}};
    }
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  const LoadedCheckpoint& model_for(const nlohmann::json& request) const {
    std::string category = config_.default_category;
    if (request.contains("category")) {
      if (!request["category"].is_string()) throw HttpError(400, "'category' must be a string");
      category = request["category"].get<std::string>();
    }
    const auto it = models_.find(category);
    if (it == models_.end()) {
      throw HttpError(404, models_.empty() ? "no checkpoint is loaded" : "unknown checkpoint category '" + category + "'");
    }
    return it->second;
  }

  static ImageF sketch_from(const nlohmann::json& request) {
    if (!request.contains("sketch") || !request["sketch"].is_string()) throw HttpError(400, "missing base64 'sketch'");
    DecodedPng png;
    try {
      const auto bytes = base64_decode(request["sketch"].get<std::string>());
      png = decode_png(bytes.data(), bytes.size());
    } catch (const Error& e) {
      throw HttpError(400, std::string("sketch is not a base64 PNG: ") + e.what());
    }
    if (png.image.channels == 1) return png.image;
    ImageF gray(png.image.width, png.image.height, 1);
    for (int r = 0; r < gray.height; ++r)
      for (int c = 0; c < gray.width; ++c) {
        float s = 0.0f;
        for (int k = 0; k < png.image.channels; ++k) s += png.image.at(c, r, k);
        gray.at(c, r) = s / static_cast<float>(png.image.channels);
      }
    return gray;
  }

  static std::array<int, 2> request_pixel(const nlohmann::json& request, const char* key) {
    if (!request.contains(key)) throw HttpError(400, std::string("missing '") + key + "'");
    try {
      const auto v = request[key].get<std::vector<int>>();
      if (v.size() != 2) throw HttpError(400, std::string("'") + key + "' must be [x, y]");
      return {v[0], v[1]};
    } catch (const nlohmann::json::exception&) {
      throw HttpError(400, std::string("'") + key + "' must be [x, y] integers");
    }
  }

  static void check_bounds(const ImageF& sketch, int x, int y, const char* what) {
    if (!sketch.contains(x, y)) {
      throw HttpError(422, std::string(what) + " (" + std::to_string(x) + ", " + std::to_string(y) +
                               ") lies outside the " + std::to_string(sketch.width) + "x" +
                               std::to_string(sketch.height) + " sketch");
    }
  }

  // Library errors from a well-formed request are semantic (422); I/O ones are ours (500).
  template <class F>
  static auto run_model(F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kIo) throw;
      throw HttpError(422, e.what());
    }
  }

  ServiceConfig config_;
  std::map<std::string, LoadedCheckpoint> models_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace sketchstress
