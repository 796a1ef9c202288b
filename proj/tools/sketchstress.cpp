// Command-line entry point: gen-data, train, eval, infer, serve.

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <csignal>
#include <cstdlib>
#include <iostream>

#include "sketchstress/aggregator.hpp"
#include "sketchstress/metrics.hpp"
#include "sketchstress/service.hpp"
#include "sketchstress/toy.hpp"

using namespace sketchstress;

namespace {

constexpr const char* kDeviceEnv = "SKETCHSTRESS_DEVICE";

// YAML keys become trailing "--key value" arguments; with last-wins option
// policy the file overrides anything given on the command line. Keys may
// sit at the top level or under the subcommand's name.
std::vector<std::string> yaml_arguments(const fs::path& path, const std::string& command) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kIo, "cannot read config " + path.string() + ": " + e.what());
  }
  require(root.IsMap() || root.IsNull(), ErrorCode::kInvalidArgument, "config must be a YAML mapping");
  std::vector<std::string> args;
  auto emit = [&](const YAML::Node& map) {
    for (const auto& kv : map) {
      std::string key = kv.first.as<std::string>();
      if (kv.second.IsMap()) continue;  // another subcommand's section
      std::replace(key.begin(), key.end(), '_', '-');
      if (kv.second.IsSequence()) {
        std::string joined;
        for (const auto& item : kv.second) joined += (joined.empty() ? "" : ",") + item.as<std::string>();
        args.push_back("--" + key);
        args.push_back(joined);
      } else {
        args.push_back("--" + key + "=" + kv.second.as<std::string>());
      }
    }
  };
  if (root.IsMap()) {
    emit(root);
    if (root[command] && root[command].IsMap()) emit(root[command]);
  }
  return args;
}

void write_run_json(const fs::path& dir, const std::string& command, const nlohmann::json& config,
                    const nlohmann::json& result) {
  fs::create_directories(dir);
  const nlohmann::json run{{"command", command}, {"config", config}, {"result", result}, {"device", "cpu"}};
  const std::string text = run.dump(2) + "\n";
  write_file_atomic(dir / "run.json", text.data(), text.size());
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    require(used == item.size(), ErrorCode::kInvalidArgument, "not a number: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::array<int, 2> parse_pixel(const std::string& text) {
  const auto v = parse_list(text);
  require(v.size() == 2, ErrorCode::kInvalidArgument, "expected X,Y but got '" + text + "'");
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

void check_device(const std::string& device) {
  require(device == "cpu", ErrorCode::kInvalidArgument,
          "compute device '" + device + "' is not available; this build runs on 'cpu' only");
}

// --- gen-data ---

struct GenDataArgs {
  std::string meshes, out, category = "shape", views = "0,45,90", norm = "shape";
  bool toy = false;
  GenDataConfig cfg;
};

int run_gen_data(GenDataArgs& a) {
  GenDataConfig cfg = a.toy ? toy::data_config(a.out) : a.cfg;
  if (a.toy) {
    // Explicit flags still refine the preset.
    cfg.seed = a.cfg.seed;
    cfg.workers = a.cfg.workers;
  } else {
    require(!a.meshes.empty(), ErrorCode::kInvalidArgument, "--meshes is required unless --toy is given");
    cfg.shapes = discover_meshes(a.meshes, a.category);
    require(!cfg.shapes.empty(), ErrorCode::kNotFound, "no .obj or .stl meshes under " + a.meshes);
    cfg.azimuths = parse_list(a.views);
    cfg.norm_mode = norm_mode_from_string(a.norm);
  }
  cfg.output = a.out;
  const GenDataReport report = generate_dataset(cfg, [](const std::string& m) { std::cerr << m << '\n'; });
  write_run_json(cfg.output, "gen-data", cfg.to_json(), report.to_json());
  std::cout << report.samples << " samples from " << report.succeeded.size() << " shape(s) in " << report.seconds
            << " s\n";
  for (const auto& [id, why] : report.failures) std::cerr << "failed " << id << ": " << why << '\n';
  return report.succeeded.empty() ? 1 : 0;
}

// --- train ---

struct TrainArgs {
  std::string data, out, split = "train";
  bool toy = false, no_normal_branch = false, no_normal_to_stress = false, conditional = false, no_augment = false;
  GeneratorConfig gen;
  TrainConfig train;
  CLI::App* app = nullptr;
};

int run_train(TrainArgs& a) {
  GeneratorConfig gen = a.gen;
  TrainConfig train = a.train;
  fs::path data = a.data;
  if (a.toy) {
    gen = toy::generator_config();
    train = toy::train_config();
    // Flags given explicitly override the preset.
    auto given = [&](const char* name) { return a.app->count(name) > 0; };
    if (given("--resolution")) gen.resolution = a.gen.resolution;
    if (given("--base-channels")) gen.base_channels = a.gen.base_channels;
    if (given("--batch-size")) train.batch_size = a.train.batch_size;
    if (given("--epochs")) train.epochs = a.train.epochs;
    if (given("--lr")) train.learning_rate = a.train.learning_rate;
    if (given("--lambda-shape")) train.lambda_shape = a.train.lambda_shape;
    if (given("--lambda-point")) train.lambda_point = a.train.lambda_point;
    if (given("--seed")) train.seed = a.train.seed;
    if (data.empty()) {
      data = fs::path(a.out) / "data";
      if (!fs::exists(data / "manifest.json")) {
        std::cerr << "generating toy dataset in " << data << '\n';
        const auto report = generate_dataset(toy::data_config(data), [](const std::string& m) { std::cerr << m << '\n'; });
        write_run_json(data, "gen-data", toy::data_config(data).to_json(), report.to_json());
      }
    }
  }
  require(!data.empty(), ErrorCode::kInvalidArgument, "--data is required unless --toy is given");
  if (a.no_normal_branch) gen.normal_branch = false;
  if (a.no_normal_to_stress) gen.normal_to_stress = false;
  if (a.conditional) train.conditional_discriminator = true;
  if (a.no_augment) train.augment = false;
  gen.validate();
  train.validate();

  TrainOptions opts;
  opts.dataset = data;
  opts.output = a.out;
  opts.generator = gen;
  opts.train = train;
  opts.split = a.split;
  opts.on_epoch = [&](int epoch, const Trainer& t) {
    if (epoch == 1 || epoch % 10 == 0 || epoch == train.epochs) std::cerr << "epoch " << epoch << " step " << t.steps() << '\n';
  };
  const TrainResult result = sketchstress::train(opts);

  // Fit on the training split, measured without augmentation.
  const Manifest manifest = Manifest::load(data);
  BatchOptions bo;
  bo.split = a.split;
  bo.batch_size = 16;
  bo.resolution = gen.resolution;
  bo.shuffle = false;
  BatchIterator it(data, manifest, bo);
  const InferenceModel model(result.checkpoint);
  const FitReport fit = evaluate_fit(model, it);

  nlohmann::json res{{"checkpoint", result.checkpoint.generic_string()},
                     {"steps", result.steps},
                     {"epochs", result.epochs},
                     {"stopped_on_nan", result.stopped_on_nan},
                     {"masked_l1", fit.masked_l1},
                     {"mask_iou", fit.mask_iou},
                     {"samples", fit.samples}};
  write_run_json(a.out, "train",
                 {{"dataset", data.generic_string()}, {"split", a.split}, {"generator", gen.to_json()},
                  {"train", train.to_json()}, {"toy", a.toy}},
                 res);
  std::cout << "steps " << result.steps << "  masked L1 " << fit.masked_l1 << "  mask IoU " << fit.mask_iou << '\n';
  if (result.stopped_on_nan) {
    std::cerr << "training stopped at a non-finite loss; the last good checkpoint is kept\n";
    return 1;
  }
  return 0;
}

// --- eval ---

struct EvalArgs {
  std::string pred, gt, out, checkpoint, data, split = "test";
  metrics::MetricConfig cfg;
  bool no_fid = false;
};

int run_eval(EvalArgs& a) {
  fs::path pred = a.pred, gt = a.gt;
  if (!a.checkpoint.empty()) {
    require(!a.data.empty() && !a.out.empty(), ErrorCode::kInvalidArgument, "--checkpoint needs --data and --out");
    const auto dirs = predict_split(InferenceModel(a.checkpoint), a.data, a.split, a.out);
    pred = dirs.first;
    gt = dirs.second;
  }
  require(!pred.empty() && !gt.empty(), ErrorCode::kInvalidArgument, "give --pred and --gt, or --checkpoint with --data");
  auto cfg = a.cfg;
  cfg.compute_fid = !a.no_fid;
  const metrics::MetricReport report = metrics::evaluate_directories(pred, gt, cfg);
  std::cout << report.table();
  if (!a.out.empty()) {
    const std::string text = report.to_json().dump(2) + "\n";
    fs::create_directories(a.out);
    write_file_atomic(fs::path(a.out) / "metrics.json", text.data(), text.size());
    write_run_json(a.out, "eval",
                   {{"pred", pred.generic_string()}, {"gt", gt.generic_string()}, {"metrics", cfg.to_json()},
                    {"checkpoint", a.checkpoint}, {"split", a.split}},
                   report.to_json());
  } else {
    std::cout << report.to_json().dump(2) << '\n';
  }
  return 0;
}

// --- infer ---

struct InferArgs {
  std::string checkpoint, sketch, force, out;
  double radius = 0.0;
  RegionSpec region;
  std::string mode = "mean";
};

int run_infer(InferArgs& a) {
  const InferenceModel model(a.checkpoint);
  const ImageF sketch = read_png(a.sketch).image;
  require(sketch.channels == 1, ErrorCode::kInvalidArgument, "sketch must be a grayscale PNG");
  const auto xy = parse_pixel(a.force);
  const fs::path out = a.out;
  fs::create_directories(out);
  nlohmann::json result;
  if (a.radius > 0.0) {
    RegionSpec region = a.region;
    region.center = xy;
    region.radius = a.radius;
    const auto r = multi_force_query(model, sketch, region, aggregate_mode_from_string(a.mode));
    write_png(out / "stress.png", r.aggregated, PngDepth::k16);
    write_png(out / "normal.png", r.normal, PngDepth::k8);
    write_png(out / "mask.png", r.mask, PngDepth::k8);
    for (std::size_t i = 0; i < r.per_force.size(); ++i)
      write_png(out / ("stress_force" + std::to_string(i) + ".png"), r.per_force[i], PngDepth::k16);
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.points) pts.push_back(p.pixel);
    result = {{"latency_ms", r.latency_ms}, {"selected", pts}, {"region", region.to_json()}, {"mode", a.mode}};
  } else {
    const InferenceResult r = model.infer(sketch, xy[0], xy[1]);
    write_png(out / "stress.png", r.stress, PngDepth::k16);
    write_png(out / "normal.png", r.normal, PngDepth::k8);
    write_png(out / "mask.png", r.mask, PngDepth::k8);
    result = {{"latency_ms", r.latency_ms}, {"force_outside_mask", r.force_outside_mask}};
    if (r.force_outside_mask) std::cerr << "warning: force pixel lies outside the predicted shape mask\n";
  }
  write_run_json(out, "infer", {{"checkpoint", a.checkpoint}, {"sketch", a.sketch}, {"force", xy}}, result);
  std::cout << "wrote " << (out / "stress.png").string() << " (" << result["latency_ms"].get<double>() << " ms)\n";
  return 0;
}

// --- serve ---

struct ServeArgs {
  std::vector<std::string> checkpoints;
  ServiceConfig cfg;
};

Service* g_service = nullptr;

int run_serve(ServeArgs& a) {
  for (const auto& spec : a.checkpoints) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      a.cfg.checkpoints["default"] = spec;
    } else {
      a.cfg.checkpoints[spec.substr(0, eq)] = spec.substr(eq + 1);
    }
  }
  Service service(a.cfg);
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  std::cerr << "serving " << a.cfg.checkpoints.size() << " checkpoint(s) on http://" << a.cfg.host << ':' << a.cfg.port
            << '\n';
  if (a.cfg.checkpoints.empty()) std::cerr << "warning: no checkpoint loaded; /health reports degraded\n";
  service.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sketch-to-stress pipeline: data generation, training, evaluation, inference, serving."};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  std::string device = std::getenv(kDeviceEnv) ? std::getenv(kDeviceEnv) : "cpu";
  app.add_option("--device", device, std::string("Compute device (env ") + kDeviceEnv + ")");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Simulate meshes and render training quadruples");
  gen->add_option("--meshes", gd.meshes, "Directory of .obj/.stl meshes (optionally <category>/<mesh>)");
  gen->add_option("--out", gd.out, "Dataset output directory")->required();
  gen->add_flag("--toy", gd.toy, "Two procedural shapes (chair, table) instead of --meshes");
  gen->add_option("--category", gd.category, "Category for meshes not in a category folder");
  gen->add_option("--views", gd.views, "Comma-separated azimuths in degrees");
  gen->add_option("--elevation", gd.cfg.elevation, "Camera elevation in degrees");
  gen->add_option("--forces-per-view", gd.cfg.forces_per_view)->check(CLI::PositiveNumber);
  gen->add_option("--fem-resolution", gd.cfg.fem_resolution, "Voxels along the longest bounding-box axis");
  gen->add_option("--young-modulus", gd.cfg.material.young_modulus);
  gen->add_option("--poisson-ratio", gd.cfg.material.poisson_ratio);
  gen->add_option("--norm", gd.norm, "Stress normalization: shape | category");
  gen->add_option("--tau", gd.cfg.tau, "Clipping bound of the category z-score");
  gen->add_option("--fixed-ratio", gd.cfg.fixed_ratio, "Height fraction treated as fixed support");
  gen->add_option("--magnitude", gd.cfg.magnitude, "Force magnitude in newtons");
  gen->add_option("--image-size", gd.cfg.image_size);
  gen->add_option("--test-fraction", gd.cfg.test_fraction, "Fraction of shapes held out (0 keeps all in train)");
  gen->add_option("--seed", gd.cfg.seed);
  gen->add_option("--workers", gd.cfg.workers, "Rendering threads");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the generator and discriminators");
  tr.app = train;
  train->add_option("--data", tr.data, "Dataset directory");
  train->add_option("--out", tr.out, "Run directory (checkpoint.bin, train_log.csv)")->required();
  train->add_flag("--toy", tr.toy, "Toy preset; generates its dataset under <out>/data when --data is absent");
  train->add_option("--split", tr.split);
  train->add_option("--resolution", tr.gen.resolution);
  train->add_option("--base-channels", tr.gen.base_channels);
  train->add_option("--batch-size", tr.train.batch_size);
  train->add_option("--epochs", tr.train.epochs);
  train->add_option("--lr", tr.train.learning_rate);
  train->add_option("--beta1", tr.train.beta1);
  train->add_option("--beta2", tr.train.beta2);
  train->add_option("--lambda-shape", tr.train.lambda_shape);
  train->add_option("--lambda-point", tr.train.lambda_point);
  train->add_option("--disc-channels", tr.train.disc_channels);
  train->add_option("--seed", tr.train.seed);
  train->add_flag("--no-normal-branch", tr.no_normal_branch, "Ablation: stress decoder only");
  train->add_flag("--no-normal-to-stress", tr.no_normal_to_stress, "Drop the normal-to-stress concatenation");
  train->add_flag("--conditional-discriminator", tr.conditional, "Critics also see the sketch and point map");
  train->add_flag("--no-augment", tr.no_augment, "Disable horizontal flips");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Compare predicted and ground-truth stress maps");
  eval->add_option("--pred", ev.pred, "Directory of predicted PNGs");
  eval->add_option("--gt", ev.gt, "Directory of ground-truth PNGs (matched by relative path)");
  eval->add_option("--checkpoint", ev.checkpoint, "Predict a dataset split first");
  eval->add_option("--data", ev.data, "Dataset for --checkpoint");
  eval->add_option("--split", ev.split, "Split for --checkpoint: train | test | all");
  eval->add_option("--out", ev.out, "Write metrics.json and run.json here");
  eval->add_option("--fm-threshold", ev.cfg.fm_threshold);
  eval->add_option("--emd-bins", ev.cfg.emd_bins);
  eval->add_option("--method", ev.cfg.method, "Method name in the table");
  eval->add_option("--workers", ev.cfg.workers);
  eval->add_flag("--no-fid", ev.no_fid);

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Predict stress for one force (or a region) on a sketch");
  infer->add_option("--checkpoint", in.checkpoint)->required();
  infer->add_option("--sketch", in.sketch, "Grayscale PNG, strokes bright on dark")->required();
  infer->add_option("--force", in.force, "Force pixel X,Y in sketch coordinates")->required();
  infer->add_option("--out", in.out, "Output directory")->required();
  infer->add_option("--radius", in.radius, "Aggregate over aligned points within this radius");
  infer->add_option("--angle-tol", in.region.angle_tolerance);
  infer->add_option("--max-points", in.region.max_points);
  infer->add_option("--mode", in.mode, "Aggregation: mean | sum");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "HTTP API for inference and aggregation");
  serve->add_option("--checkpoint", sv.checkpoints, "CATEGORY=PATH or PATH (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  serve->add_option("--host", sv.cfg.host);
  serve->add_option("--port", sv.cfg.port);
  serve->add_option("--default-category", sv.cfg.default_category);
  serve->add_option("--max-payload", sv.cfg.max_payload_bytes, "Request size limit in bytes");
  serve->add_option("--cors-origin", sv.cfg.cors_origin);
  serve->add_option("--threads", sv.cfg.threads);

  for (auto* sub : {gen, train, eval, infer, serve}) sub->add_option("--config", config_path, "YAML file overriding flags");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    app.parse(args.size() ? std::vector<std::string>(args.rbegin(), args.rend()) : std::vector<std::string>{});
    if (!config_path.empty()) {
      const std::string command = app.get_subcommands().front()->get_name();
      const auto extra = yaml_arguments(config_path, command);
      args.insert(args.end(), extra.begin(), extra.end());
      app.clear();
      app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    check_device(device);
    if (*gen) return run_gen_data(gd);
    if (*train) return run_train(tr);
    if (*eval) return run_eval(ev);
    if (*infer) return run_infer(in);
    if (*serve) return run_serve(sv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
