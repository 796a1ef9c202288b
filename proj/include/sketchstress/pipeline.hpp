#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <future>
#include <thread>

#include "sketchstress/dataset.hpp"
#include "sketchstress/fem.hpp"
#include "sketchstress/mesh_io.hpp"
#include "sketchstress/primitives.hpp"

namespace sketchstress {

/// A shape to process: a mesh file or a built-in procedural model ("chair", "table").
struct ShapeSource {
  std::string shape_id;
  std::string category;
  fs::path path;           // empty for procedural shapes
  std::string procedural;  // "chair" | "table"

  SurfaceMesh load() const {
    if (procedural == "chair") return primitives::chair();
    if (procedural == "table") return primitives::table();
    require(procedural.empty(), ErrorCode::kInvalidArgument, "unknown procedural shape '" + procedural + "'");
    return load_mesh(path);
  }
};

struct GenDataConfig {
  std::vector<ShapeSource> shapes;
  fs::path output;
  std::vector<double> azimuths{0.0, 45.0, 90.0};
  double elevation = 10.0;
  int forces_per_view = 10;
  double fem_resolution = 32.0;
  Material material;
  NormMode norm_mode = NormMode::kShape;
  double tau = 100.0;
  double fixed_ratio = 0.03;
  double magnitude = 100.0;
  int image_size = 256;
  double test_fraction = 0.0;  // 0 keeps every shape in the training split
  std::uint64_t seed = 0;
  int workers = 1;
  RenderConfig render;

  nlohmann::json to_json() const {
    nlohmann::json shapes_json = nlohmann::json::array();
    for (const auto& s : shapes) {
      shapes_json.push_back({{"shape_id", s.shape_id},
                             {"category", s.category},
                             {"path", s.path.generic_string()},
                             {"procedural", s.procedural}});
    }
    return {{"shapes", shapes_json},
            {"output", output.generic_string()},
            {"azimuths", azimuths},
            {"elevation", elevation},
            {"forces_per_view", forces_per_view},
            {"fem_resolution", fem_resolution},
            {"young_modulus", material.young_modulus},
            {"poisson_ratio", material.poisson_ratio},
            {"norm_mode", to_string(norm_mode)},
            {"tau", tau},
            {"fixed_ratio", fixed_ratio},
            {"magnitude", magnitude},
            {"image_size", image_size},
            {"test_fraction", test_fraction},
            {"seed", seed},
            {"workers", workers},
            {"canny", {render.canny_low, render.canny_high}},
            {"point_radius", render.point_radius}};
  }
};

/// Shapes under a directory: `dir/<category>/<mesh>` or flat `dir/<mesh>`
/// with `default_category`. Sorted by path for a stable order.
inline std::vector<ShapeSource> discover_meshes(const fs::path& dir, const std::string& default_category) {
  require(fs::is_directory(dir), ErrorCode::kNotFound, "mesh directory " + dir.string() + " does not exist");
  std::vector<ShapeSource> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".obj" && ext != ".stl") continue;
    const fs::path rel = fs::relative(entry.path(), dir);
    ShapeSource s;
    s.path = entry.path();
    s.shape_id = entry.path().stem().string();
    s.category = rel.has_parent_path() ? rel.begin()->string() : default_category;
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

/// The two procedural shapes of the toy preset.
inline std::vector<ShapeSource> toy_shapes() {
  return {{"chair_000", "chair", {}, "chair"}, {"table_000", "table", {}, "table"}};
}

struct GenDataReport {
  std::size_t samples = 0;
  std::vector<std::string> succeeded;
  std::vector<std::pair<std::string, std::string>> failures;  // shape id, reason
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& [id, why] : failures) f.push_back({{"shape_id", id}, {"error", why}});
    return {{"samples", samples}, {"succeeded", succeeded}, {"failures", f}, {"seconds", seconds}};
  }
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag, std::uint64_t extra) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;  // FNV-1a over the tag
  for (unsigned char c : tag) h = (h ^ c) * 1099511628211ULL;
  h ^= extra + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

struct SimulatedShape {
  ShapeSource source;
  SurfaceMesh mesh;
  RegionLabels labels;
  std::vector<ForceSample> forces;
  std::vector<StressField> fields;
};

inline SimulatedShape simulate_shape(const ShapeSource& src, const GenDataConfig& cfg) {
  SimulatedShape s;
  s.source = src;
  s.mesh = normalize_shape(src.load());
  s.labels = assign_regions(s.mesh, cfg.fixed_ratio);
  for (std::size_t v = 0; v < cfg.azimuths.size(); ++v) {
    const Camera cam = Camera::framing(s.mesh, cfg.azimuths[v], cfg.elevation, cfg.image_size);
    auto f = sample_forces(s.mesh, s.labels, cam, cfg.forces_per_view, mix_seed(cfg.seed, src.shape_id, v),
                           static_cast<int>(v), cfg.magnitude);
    s.forces.insert(s.forces.end(), f.begin(), f.end());
  }
  const VolumeMesh volume = discretize(s.mesh, cfg.fem_resolution);
  s.fields = batch_solve(s.mesh, volume, cfg.material, s.labels, s.forces);
  return s;
}

}  // namespace detail

inline std::string sample_id_for(const std::string& shape_id, int view, int force) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_v%d_f%03d", view, force);
  return shape_id + buf;
}

/// Simulates every shape, renders every (view, force) quadruple and writes
/// the dataset. Shapes that fail are reported and skipped.
inline GenDataReport generate_dataset(const GenDataConfig& cfg, std::function<void(const std::string&)> log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  require(!cfg.shapes.empty(), ErrorCode::kInvalidArgument, "no shapes to process");
  require(cfg.forces_per_view >= 1 && !cfg.azimuths.empty(), ErrorCode::kInvalidArgument,
          "need at least one view and one force per view");
  GenDataReport report;

  std::vector<detail::SimulatedShape> shapes;
  for (const auto& src : cfg.shapes) {
    try {
      shapes.push_back(detail::simulate_shape(src, cfg));
      say("simulated " + src.shape_id + " (" + std::to_string(shapes.back().forces.size()) + " forces)");
    } catch (const std::exception& e) {
      report.failures.emplace_back(src.shape_id, e.what());
      say("failed " + src.shape_id + ": " + e.what());
    }
  }
  require(!shapes.empty(), ErrorCode::kInvalidArgument, "every shape failed; see the run report");

  std::map<std::string, CategoryStats> stats;
  if (cfg.norm_mode == NormMode::kCategory) {
    std::map<std::string, std::vector<double>> pooled;
    for (const auto& s : shapes)
      for (const auto& f : s.fields) {
        auto& all = pooled[s.source.category];
        all.insert(all.end(), f.values.begin(), f.values.end());
      }
    for (const auto& [cat, values] : pooled) stats[cat] = category_stats(values, cfg.tau);
  }

  if (fs::exists(cfg.output / "manifest.json")) fs::remove(cfg.output / "manifest.json");
  DatasetWriter writer(cfg.output, false);
  for (const auto& [cat, st] : stats) writer.set_category_stats(cat, st);

  struct Job {
    const detail::SimulatedShape* shape;
    std::size_t force;
  };
  std::vector<Job> jobs;
  for (const auto& s : shapes)
    for (std::size_t i = 0; i < s.forces.size(); ++i) jobs.push_back({&s, i});

  std::mutex failure_mutex;
  std::set<std::string> failed_shapes;
  auto run = [&](std::size_t begin, std::size_t step) {
    for (std::size_t j = begin; j < jobs.size(); j += step) {
      const auto& s = *jobs[j].shape;
      const auto& force = s.forces[jobs[j].force];
      const int view = force.view_id;
      const double az = cfg.azimuths[static_cast<std::size_t>(view)];
      const int index_in_view = static_cast<int>(jobs[j].force) - view * cfg.forces_per_view;
      try {
        const Camera cam = Camera::framing(s.mesh, az, cfg.elevation, cfg.image_size);
        std::optional<CategoryStats> st;
        if (cfg.norm_mode == NormMode::kCategory) st = stats.at(s.source.category);
        const Quadruple q =
            build_quadruple(s.mesh, s.labels, force, s.fields[jobs[j].force], cam, cfg.norm_mode, st, cfg.render);
        SampleRecord rec;
        rec.sample_id = sample_id_for(s.source.shape_id, view, index_in_view);
        rec.shape_id = s.source.shape_id;
        rec.category = s.source.category;
        rec.azimuth = az;
        rec.elevation = cfg.elevation;
        rec.view_id = view;
        rec.force_pixel = q.force_pixel;
        rec.force_location = force.location;
        rec.force_normal = force.normal;
        rec.magnitude = force.magnitude;
        rec.norm_mode = cfg.norm_mode;
        writer.write_sample(rec, q);
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mutex);
        if (failed_shapes.insert(s.source.shape_id).second) report.failures.emplace_back(s.source.shape_id, e.what());
      }
    }
  };
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
    for (auto& t : pool) t.join();
  }

  for (const auto& s : shapes) {
    const std::string text =
        regions_sidecar(s.source.shape_id, cfg.fixed_ratio, s.labels, s.forces, cfg.seed).dump(2) + "\n";
    write_file_atomic(cfg.output / s.source.category / s.source.shape_id / "regions.json", text.data(), text.size());
    if (!failed_shapes.count(s.source.shape_id)) report.succeeded.push_back(s.source.shape_id);
  }

  Manifest manifest = writer.manifest();
  if (cfg.test_fraction > 0.0 && manifest.shape_ids().size() >= 2) {
    manifest = split_by_shape(std::move(manifest), cfg.test_fraction, cfg.seed);
  } else {
    for (const auto& id : manifest.shape_ids()) manifest.split[id] = "train";
  }
  manifest.save(cfg.output);
  report.samples = manifest.samples.size();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace sketchstress
