#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "glandscreen/config.hpp"
#include "glandscreen/dataset.hpp"
#include "glandscreen/error.hpp"
#include "glandscreen/evaluator.hpp"
#include "glandscreen/explainer.hpp"
#include "glandscreen/image.hpp"
#include "glandscreen/patcher.hpp"
#include "glandscreen/pipeline.hpp"
#include "glandscreen/service/case_store.hpp"
#include "glandscreen/service/registry.hpp"
#include "glandscreen/service/server.hpp"
#include "glandscreen/stain.hpp"
#include "glandscreen/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace glandscreen;
using dataset::Split;

namespace {

constexpr const char* kVersion = GLANDSCREEN_VERSION;

/// Usage problems detected after parsing (exit code 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

/// Files under `input` (or `input` itself) with a recognised image extension, sorted.
std::vector<fs::path> collect_images(const fs::path& input) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(input)) {
    out.push_back(input);
  } else if (fs::is_directory(input)) {
    for (const auto& e : fs::recursive_directory_iterator(input)) {
      if (e.is_regular_file() && is_image_extension(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    throw Error(ErrorCode::IoError, "input not found: " + input.string());
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no images under " + input.string());
  return out;
}

/// Records what a subcommand did; written next to its outputs.
class RunRecord {
 public:
  RunRecord(std::string command, std::vector<std::string> argv, const config::PipelineConfig& cfg)
      : command_(std::move(command)), argv_(std::move(argv)), config_(config::to_json(cfg)),
        started_(service::utc_timestamp()), t0_(std::chrono::steady_clock::now()) {}

  json& outputs() { return outputs_; }
  json& inputs() { return inputs_; }
  json& seeds() { return seeds_; }

  void write(const fs::path& dir, const std::string& name = "run_manifest.json") const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    write_json(dir / name, {{"tool", "glandscreen"},
                            {"version", kVersion},
                            {"command", command_},
                            {"argv", argv_},
                            {"started_at", started_},
                            {"wall_clock_seconds", secs},
                            {"config", config_},
                            {"seeds", seeds_},
                            {"inputs", inputs_},
                            {"outputs", outputs_}});
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  json config_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
  json inputs_ = json::object();
  json outputs_ = json::object();
  json seeds_ = json::object();
};

json stain_model_json(const stain::StainModel& m) {
  json basis = json::array();
  for (int r = 0; r < 3; ++r) basis.push_back({m.basis(r, 0), m.basis(r, 1)});
  return {{"basis", basis}, {"max_concentration", {m.max_concentration(0), m.max_concentration(1)}}};
}

/// Threshold precedence: explicit value, then the manifest next to the checkpoint, then 0.45.
double resolve_threshold(std::optional<double> flag, const fs::path& checkpoint) {
  if (flag) return *flag;
  const fs::path manifest = checkpoint.parent_path() / "manifest.json";
  if (fs::is_regular_file(manifest)) {
    const json m = read_json(manifest);
    if (m.contains("balanced_threshold")) return m.at("balanced_threshold").get<double>();
  }
  return service::kFallbackThreshold;
}

void check_threshold(double t) {
  if (!std::isfinite(t) || t < 0.0 || t > 1.0) throw UsageError("threshold must be in [0, 1]");
}

// ---------------------------------------------------------------------------

struct NormalizeArgs {
  fs::path input, output;
  std::optional<fs::path> reference;
  std::optional<double> beta, alpha, io;
};

int cmd_normalize(const NormalizeArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  if (a.reference) cfg.stain.reference_image = *a.reference;
  if (a.beta) cfg.stain.params.od_floor = *a.beta;
  if (a.alpha) {
    cfg.stain.params.angle_percentile_lo = *a.alpha;
    cfg.stain.params.angle_percentile_hi = 100.0 - *a.alpha;
  }
  if (a.io) cfg.stain.params.white_reference = *a.io;
  const auto pre = cfg.preprocessing();
  fs::create_directories(a.output);
  json items = json::array();
  int fallbacks = 0;
  for (const auto& path : collect_images(a.input)) {
    const auto outcome = stain::normalize_or_passthrough(read_image(path), pre.reference, pre.stain);
    const fs::path png = a.output / (path.stem().string() + ".png");
    write_image(png, outcome.image);
    json sidecar = {{"source", path.string()},
                    {"output", png.string()},
                    {"fallback", outcome.fallback},
                    {"fallback_reason", outcome.fallback_reason},
                    {"reference", stain_model_json(pre.reference)}};
    sidecar["estimated"] = outcome.source_model ? stain_model_json(*outcome.source_model) : json();
    write_json(a.output / (path.stem().string() + ".json"), sidecar);
    if (outcome.fallback) {
      ++fallbacks;
      std::cerr << "warning: " << path.string() << ": " << outcome.fallback_reason
                << "; passed through unmodified\n";
    }
    items.push_back(png.string());
  }
  run.inputs()["input"] = a.input.string();
  run.outputs()["images"] = items;
  run.outputs()["fallbacks"] = fallbacks;
  run.write(a.output);
  std::cout << "normalized " << items.size() << " image(s), " << fallbacks << " passed through\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PatchArgs {
  fs::path input, output;
  std::optional<double> saturation, value_ceiling;
  std::optional<int> open_radius, close_radius, max_patches, patch_size;
  std::optional<long> min_area;
};

int cmd_extract_patches(const PatchArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  auto& p = cfg.patch;
  if (a.saturation) p.saturation_threshold = *a.saturation;
  if (a.value_ceiling) p.value_ceiling = *a.value_ceiling;
  if (a.open_radius) p.open_radius = *a.open_radius;
  if (a.close_radius) p.close_radius = *a.close_radius;
  if (a.max_patches) p.max_patches = *a.max_patches;
  if (a.patch_size) p.patch_size = *a.patch_size;
  if (a.min_area) p.min_region_area = *a.min_area;
  p.validate();
  fs::create_directories(a.output);
  json entries = json::array();
  std::size_t count = 0;
  for (const auto& path : collect_images(a.input)) {
    const std::string stem = path.stem().string();
    const auto patches = patcher::patches_for_image(read_image(path), p, stem);
    for (std::size_t k = 0; k < patches.size(); ++k) {
      const auto& patch = patches[k];
      const std::string name = stem + "_p" + std::to_string(k) + ".png";
      write_image(a.output / name, patch.pixels);
      const auto& b = patch.source_bbox;
      entries.push_back({{"file", name},
                         {"source_id", patch.source_id},
                         {"source_path", path.string()},
                         {"bbox", {b.x, b.y, b.width, b.height}},
                         {"component_area", patch.component_area},
                         {"fallback", patch.fallback}});
      ++count;
    }
  }
  write_json(a.output / "patches.json", entries);
  run.inputs()["input"] = a.input.string();
  run.outputs()["patches_json"] = (a.output / "patches.json").string();
  run.outputs()["patch_count"] = count;
  run.write(a.output);
  std::cout << "wrote " << count << " patch(es) to " << a.output.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  fs::path root;
  fs::path output = "split.json";
  std::optional<double> fraction;
  std::optional<fs::path> class_map;
};

dataset::SplitFile make_split(const fs::path& root, const std::optional<fs::path>& class_map,
                              const config::PipelineConfig& cfg) {
  const auto layout = class_map ? dataset::ClassLayout::from_mapping_file(*class_map)
                                : dataset::ClassLayout{};
  const auto scan = dataset::scan_corpus(root, layout);
  const auto split = dataset::stratified_split(scan.samples, cfg.split.train_fraction, cfg.split.seed);
  dataset::SplitFile file;
  file.root = root;
  file.train_fraction = cfg.split.train_fraction;
  file.seed = cfg.split.seed;
  file.samples = split.train;
  file.samples.insert(file.samples.end(), split.val.begin(), split.val.end());
  return file;
}

void print_split(const dataset::SplitFile& f) {
  for (Split s : {Split::Train, Split::Val}) {
    const auto part = f.subset(s);
    const auto sum = dataset::summarize(part);
    std::cout << dataset::to_string(s) << ": " << part.size() << " (abnormal "
              << sum.count(Label::Abnormal) << ", normal " << sum.count(Label::Normal) << ")\n";
  }
}

int cmd_split(const SplitArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  if (a.fraction) cfg.split.train_fraction = *a.fraction;
  const auto file = make_split(a.root, a.class_map, cfg);
  dataset::write_split_json(a.output, file);
  print_split(file);
  run.inputs()["root"] = a.root.string();
  run.seeds()["split"] = cfg.split.seed;
  run.outputs()["split"] = a.output.string();
  const fs::path dir = a.output.has_parent_path() ? a.output.parent_path() : fs::path(".");
  run.write(dir, a.output.stem().string() + "_run_manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path split;
  fs::path out = "run";
  std::optional<int> epochs, batch_size, patience;
  std::optional<double> lr;
  std::optional<std::string> backbone;
  bool no_augment = false;
};

void apply_train_flags(const TrainArgs& a, config::PipelineConfig& cfg) {
  if (a.epochs) cfg.train.max_epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.patience) cfg.train.patience = *a.patience;
  if (a.lr) cfg.train.learning_rate = *a.lr;
  if (a.backbone) cfg.model.backbone = *a.backbone;
  if (a.no_augment) cfg.train.augment = false;
  cfg.train.augment_config = cfg.augment;
  cfg.train.validate();
  cfg.model.validate();
}

model::TrainOutcome run_training(const dataset::SplitFile& split, const config::PipelineConfig& cfg,
                                 const fs::path& out_dir) {
  const auto pre = cfg.preprocessing();
  auto progress = [](const char* what) {
    return [what](std::size_t done, std::size_t total) {
      if (done == total || done % 50 == 0) {
        std::cerr << "\rpreparing " << what << " " << done << "/" << total << std::flush;
        if (done == total) std::cerr << "\n";
      }
    };
  };
  const auto train_samples = split.subset(Split::Train);
  const auto val_samples = split.subset(Split::Val);
  const auto train_set = model::prepare_dataset(train_samples, pre, progress("train"));
  const auto val_set = model::prepare_dataset(val_samples, pre, progress("val"));

  model::TrainOptions opts;
  opts.out_dir = out_dir;
  opts.context = {{"pipeline", config::to_json(cfg)},
                  {"split", {{"root", split.root.string()},
                             {"train_fraction", split.train_fraction},
                             {"seed", split.seed}}}};
  opts.on_epoch = [](const model::EpochRecord& e) {
    std::cout << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4)
              << e.train_loss << "  val_acc " << e.val.accuracy << "  val_macro_f1 "
              << e.val.macro_f1() << "  (" << std::setprecision(1) << e.seconds << " s)\n"
              << std::defaultfloat << std::flush;
  };
  return model::train(train_set, val_set, cfg.model, cfg.train, opts);
}

int cmd_train(const TrainArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  apply_train_flags(a, cfg);
  const auto split = dataset::read_split_json(a.split);
  const auto outcome = run_training(split, cfg, a.out);
  const auto& m = outcome.manifest;
  std::cout << "best epoch " << m.best().epoch << "  val_acc " << m.best().val.accuracy
            << "  balanced threshold " << m.balanced_threshold << "\n";
  run.inputs()["split"] = a.split.string();
  run.seeds() = m.seeds;
  run.outputs()["checkpoint"] = (a.out / "best.ckpt").string();
  run.outputs()["manifest"] = (a.out / "manifest.json").string();
  run.write(a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  fs::path checkpoint;
  std::vector<fs::path> inputs;
  std::optional<fs::path> split;
  std::string subset = "val";
  fs::path output = "predictions.json";
  std::optional<double> threshold;
};

int cmd_predict(const PredictArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  if (a.inputs.empty() && !a.split) throw UsageError("predict needs image paths or --split");
  const double threshold = resolve_threshold(a.threshold, a.checkpoint);
  check_threshold(threshold);
  auto model = model::load_checkpoint(a.checkpoint);
  const auto pre = cfg.preprocessing();

  std::vector<std::pair<fs::path, std::optional<Label>>> work;
  for (const auto& in : a.inputs) {
    for (const auto& p : collect_images(in)) work.emplace_back(p, std::nullopt);
  }
  if (a.split) {
    const auto file = dataset::read_split_json(*a.split);
    const auto part = a.subset == "all" ? file.samples : file.subset(dataset::split_from_string(a.subset));
    for (const auto& s : part) work.emplace_back(s.path, s.label);
  }
  json out = json::array();
  for (const auto& [path, label] : work) {
    const auto result = pipeline::predict_image(*model, read_image(path), pre, threshold);
    json item = {{"id", path.string()},
                 {"abnormal_probability", result.abnormal_probability()},
                 {"predicted", to_string(result.label)},
                 {"prediction", pipeline::to_json(result)}};
    if (label) item["label"] = to_string(*label);
    out.push_back(item);
    std::cout << path.string() << "  " << to_string(result.label) << "  p_abnormal "
              << std::fixed << std::setprecision(4) << result.abnormal_probability()
              << std::defaultfloat << "\n";
  }
  write_json(a.output, out);
  run.inputs()["checkpoint"] = a.checkpoint.string();
  run.inputs()["threshold"] = threshold;
  run.outputs()["predictions"] = a.output.string();
  const fs::path dir = a.output.has_parent_path() ? a.output.parent_path() : fs::path(".");
  run.write(dir, a.output.stem().string() + "_run_manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  fs::path predictions;
  fs::path out = "evaluation";
  double threshold = 0.5;
  std::optional<double> grid_start, grid_stop, grid_step;
};

struct Evaluation {
  eval::ConfusionMatrix cm;
  eval::MetricsReport report;
  eval::ThresholdSweep sweep;
  json metrics;
};

Evaluation evaluate_probabilities(const std::vector<double>& probs, const std::vector<Label>& actual,
                                  double threshold, const std::vector<double>& grid,
                                  const fs::path& out_dir) {
  Evaluation ev;
  std::vector<Label> predicted;
  predicted.reserve(probs.size());
  for (double p : probs) predicted.push_back(eval::threshold_label(p, threshold));
  ev.cm = eval::confusion(predicted, actual);
  ev.report = eval::metrics(ev.cm);
  ev.sweep = eval::threshold_sweep(probs, actual, grid);
  const auto files = eval::render_reports(ev.sweep, ev.cm, out_dir);
  const auto balanced = std::find_if(ev.sweep.rows.begin(), ev.sweep.rows.end(), [&](const auto& r) {
    return r.threshold == ev.sweep.balanced_threshold;
  });
  ev.metrics = eval::to_json(ev.report);
  ev.metrics["threshold"] = threshold;
  ev.metrics["n"] = probs.size();
  ev.metrics["confusion"] = eval::to_json(ev.cm);
  ev.metrics["macro_f1"] = ev.report.macro_f1();
  ev.metrics["balanced_threshold"] = ev.sweep.balanced_threshold;
  if (balanced != ev.sweep.rows.end()) {
    ev.metrics["balanced"] = {{"confusion", eval::to_json(balanced->cm)},
                              {"metrics", eval::to_json(balanced->report)}};
  }
  ev.metrics["artifacts"] = {{"sweep_csv", files.sweep_csv.string()},
                             {"confusion_png", files.confusion_png.string()},
                             {"threshold_curves_png", files.curves_png.string()}};
  write_json(out_dir / "metrics.json", ev.metrics);
  return ev;
}

void print_report(const Evaluation& ev) {
  const auto& r = ev.report;
  const auto& c = ev.cm;
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "confusion (rows actual, cols predicted; abnormal first)\n"
            << "  abnormal  " << c.correct_abnormal << "  " << c.missed_abnormal << "\n"
            << "  normal    " << c.false_abnormal << "  " << c.correct_normal << "\n";
  std::cout << "class     precision  recall  f1      support\n"
            << "abnormal  " << r.precision_abnormal << "     " << r.recall_abnormal << "  "
            << r.f1_abnormal << "  " << r.support_abnormal << "\n"
            << "normal    " << r.precision_normal << "     " << r.recall_normal << "  "
            << r.f1_normal << "  " << r.support_normal << "\n";
  std::cout << "accuracy " << r.accuracy << "\n";
  std::cout << "balanced threshold " << std::setprecision(2) << ev.sweep.balanced_threshold << "\n";
  std::cout << std::defaultfloat;
  for (const auto& name : r.degenerate) std::cerr << "warning: " << name << " is 0/0, reported as 0\n";
}

int cmd_evaluate(const EvaluateArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  check_threshold(a.threshold);
  if (a.grid_start) cfg.evaluate.grid_start = *a.grid_start;
  if (a.grid_stop) cfg.evaluate.grid_stop = *a.grid_stop;
  if (a.grid_step) cfg.evaluate.grid_step = *a.grid_step;
  const auto grid = cfg.evaluate.grid();

  json j = read_json(a.predictions);
  if (j.is_object() && j.contains("predictions")) j = j.at("predictions");
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "predictions must be a JSON array");
  std::vector<double> probs;
  std::vector<Label> actual;
  try {
    for (const auto& item : j) {
      probs.push_back(item.at("abnormal_probability").get<double>());
      actual.push_back(label_from_string(item.at("label").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad prediction entry: ") + e.what());
  }
  const auto ev = evaluate_probabilities(probs, actual, a.threshold, grid, a.out);
  print_report(ev);
  run.inputs()["predictions"] = a.predictions.string();
  run.outputs()["metrics"] = (a.out / "metrics.json").string();
  run.write(a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct ExplainArgs {
  fs::path checkpoint, image;
  fs::path out = "explain";
  std::string target = "abnormal";
  double opacity = 0.5;
  std::string layer;
};

int cmd_explain(const ExplainArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  if (a.opacity < 0.0 || a.opacity > 1.0) throw UsageError("opacity must be in [0, 1]");
  int target = 0;
  if (a.target == "0" || a.target == "1") {
    target = std::stoi(a.target);
  } else {
    target = class_index(label_from_string(a.target));
  }
  auto model = model::load_checkpoint(a.checkpoint);
  const RgbImage img = read_image(a.image);
  const auto e =
      explain::explain_image(*model, img, cfg.preprocessing(), target, a.opacity, a.layer);
  fs::create_directories(a.out);
  const std::string stem = a.image.stem().string();
  json files = json::array();
  for (std::size_t k = 0; k < e.patches.size(); ++k) {
    const fs::path p = a.out / (stem + "_p" + std::to_string(k) + "_gradcam.png");
    write_image(p, e.patches[k].overlay);
    files.push_back(p.string());
  }
  const fs::path composite = a.out / (stem + "_gradcam.png");
  write_image(composite, e.composite_overlay);
  json sidecar = explain::to_json(e);
  sidecar["source"] = a.image.string();
  sidecar["overlays"] = files;
  sidecar["composite"] = composite.string();
  write_json(a.out / (stem + "_gradcam.json"), sidecar);
  run.inputs()["checkpoint"] = a.checkpoint.string();
  run.inputs()["image"] = a.image.string();
  run.outputs()["sidecar"] = (a.out / (stem + "_gradcam.json")).string();
  run.write(a.out);
  std::cout << "explained " << e.patches.size() << " patch(es); composite " << composite.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<fs::path> model_dir, data_dir, static_dir;
  std::optional<double> threshold, max_upload_mb;
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

template <class T>
T env_number(const char* name, const std::string& raw) {
  std::istringstream in(raw);
  T v{};
  if (!(in >> v) || !in.eof()) throw UsageError(std::string(name) + ": not a number: " + raw);
  return v;
}

std::atomic<service::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const ServeArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  auto& s = cfg.service;
  // Precedence: flag > environment > config file.
  if (auto v = env("GLANDSCREEN_HOST")) s.host = *v;
  if (auto v = env("GLANDSCREEN_PORT")) s.port = env_number<int>("GLANDSCREEN_PORT", *v);
  if (auto v = env("GLANDSCREEN_MODEL_DIR")) s.model_dir = *v;
  if (auto v = env("GLANDSCREEN_DATA_DIR")) s.data_dir = *v;
  if (auto v = env("GLANDSCREEN_STATIC_DIR")) s.static_dir = *v;
  if (auto v = env("GLANDSCREEN_THRESHOLD")) {
    s.default_threshold = env_number<double>("GLANDSCREEN_THRESHOLD", *v);
  }
  if (auto v = env("GLANDSCREEN_MAX_UPLOAD_MB")) {
    s.max_upload_mb = env_number<double>("GLANDSCREEN_MAX_UPLOAD_MB", *v);
  }
  if (a.host) s.host = *a.host;
  if (a.port) s.port = *a.port;
  if (a.model_dir) s.model_dir = *a.model_dir;
  if (a.data_dir) s.data_dir = *a.data_dir;
  if (a.static_dir) s.static_dir = *a.static_dir;
  if (a.threshold) s.default_threshold = *a.threshold;
  if (a.max_upload_mb) s.max_upload_mb = *a.max_upload_mb;
  if (s.default_threshold) check_threshold(*s.default_threshold);
  if (s.port < 0 || s.port > 65535) throw UsageError("port must be in [0, 65535]");
  if (!(s.max_upload_mb > 0.0)) throw UsageError("max upload size must be positive");

  service::ModelRegistry registry;
  registry.discover(s.model_dir);
  if (registry.entries().empty()) {
    throw Error(ErrorCode::InvalidArgument, "no *.ckpt files under " + s.model_dir.string());
  }
  fs::create_directories(s.data_dir);
  service::SqliteCaseStore store(s.data_dir / "cases.sqlite");

  service::ServerOptions opts;
  opts.data_dir = s.data_dir;
  opts.max_upload_bytes = static_cast<std::size_t>(s.max_upload_mb * 1024.0 * 1024.0);
  opts.default_threshold = s.default_threshold;
  opts.preprocessing = cfg.preprocessing();
  opts.static_dir = s.static_dir;
  service::Server server(registry, store, opts);
  const int port = server.bind(s.host, s.port);
  if (port < 0) {
    throw Error(ErrorCode::IoError, "cannot bind " + s.host + ":" + std::to_string(s.port));
  }

  run.outputs()["host"] = s.host;
  run.outputs()["port"] = port;
  run.write(s.data_dir, "serve_run_manifest.json");

  std::thread loader([&] {
    registry.load_all();
    for (const auto& m : registry.entries()) {
      if (m.state == service::LoadState::Ready) {
        store.record_model(m.id, m.checkpoint.string(), model::to_json(*m.config), m.is_default);
        std::cerr << "loaded model " << m.id << "\n";
      } else {
        std::cerr << "failed to load model " << m.id << ": " << m.error << "\n";
      }
    }
  });
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << s.host << ":" << port << std::endl;
  const bool ok = server.run();
  g_server = nullptr;
  loader.join();
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ReproduceArgs {
  fs::path root;
  fs::path out = "reproduce";
  std::optional<fs::path> class_map;
  TrainArgs train;
};

int cmd_reproduce(const ReproduceArgs& a, config::PipelineConfig cfg, RunRecord& run) {
  apply_train_flags(a.train, cfg);
  fs::create_directories(a.out);
  const auto split = make_split(a.root, a.class_map, cfg);
  dataset::write_split_json(a.out / "split.json", split);
  print_split(split);

  const auto outcome = run_training(split, cfg, a.out / "train");
  const auto& m = outcome.manifest;

  std::vector<Label> actual;
  for (const auto& s : split.subset(Split::Val)) actual.push_back(s.label);
  const auto& probs = m.best_val_probabilities;
  json predictions = json::array();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    predictions.push_back({{"id", m.val_ids.at(i)},
                           {"abnormal_probability", probs[i]},
                           {"label", to_string(actual.at(i))}});
  }
  write_json(a.out / "val_predictions.json", predictions);

  const auto ev = evaluate_probabilities(probs, actual, cfg.train.metric_threshold,
                                         cfg.evaluate.grid(), a.out);
  std::cout << "best epoch " << m.best().epoch << " of " << m.epochs.size() << "\n";
  print_report(ev);

  run.inputs()["root"] = a.root.string();
  run.seeds() = m.seeds;
  run.seeds()["split"] = cfg.split.seed;
  run.outputs()["metrics"] = (a.out / "metrics.json").string();
  run.outputs()["checkpoint"] = (a.out / "train" / "best.ckpt").string();
  run.write(a.out);
  return 0;
}

void add_train_options(CLI::App* sub, TrainArgs& t) {
  sub->add_option("--epochs", t.epochs, "Maximum epochs");
  sub->add_option("--batch-size", t.batch_size, "Mini-batch size");
  sub->add_option("--patience", t.patience, "Early-stopping patience (0 disables)");
  sub->add_option("--lr", t.lr, "Learning rate");
  sub->add_option("--backbone", t.backbone, "Backbone name");
  sub->add_flag("--no-augment", t.no_augment, "Disable training augmentation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cervical gland H&E screening pipeline"};
  app.set_version_flag("--version", std::string("glandscreen ") + kVersion);
  app.require_subcommand(1);

  std::optional<fs::path> config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON pipeline configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for every stochastic stage");

  NormalizeArgs norm;
  auto* s_norm = app.add_subcommand("normalize", "Macenko stain normalization");
  s_norm->add_option("-i,--input", norm.input, "Image file or directory")->required();
  s_norm->add_option("-o,--output", norm.output, "Output directory")->required();
  s_norm->add_option("--reference", norm.reference, "Reference image")->check(CLI::ExistingFile);
  s_norm->add_option("--beta", norm.beta, "Optical density floor");
  s_norm->add_option("--alpha", norm.alpha, "Angle percentile (uses alpha and 100 - alpha)");
  s_norm->add_option("--io", norm.io, "Transmitted light intensity");

  PatchArgs pat;
  auto* s_pat = app.add_subcommand("extract-patches", "Tissue segmentation and patch extraction");
  s_pat->add_option("-i,--input", pat.input, "Image file or directory")->required();
  s_pat->add_option("-o,--output", pat.output, "Output directory")->required();
  s_pat->add_option("--saturation-threshold", pat.saturation);
  s_pat->add_option("--value-ceiling", pat.value_ceiling);
  s_pat->add_option("--open-radius", pat.open_radius);
  s_pat->add_option("--close-radius", pat.close_radius);
  s_pat->add_option("--min-area", pat.min_area);
  s_pat->add_option("--max-patches", pat.max_patches);
  s_pat->add_option("--patch-size", pat.patch_size);

  SplitArgs spl;
  auto* s_split = app.add_subcommand("split", "Stratified train/validation split");
  s_split->add_option("--root", spl.root, "Corpus root")->required();
  s_split->add_option("--fraction", spl.fraction, "Training fraction");
  s_split->add_option("-o,--output", spl.output, "split.json path");
  s_split->add_option("--class-map", spl.class_map, "JSON mapping of class to directory");

  TrainArgs trn;
  auto* s_train = app.add_subcommand("train", "Train a classifier from split.json");
  s_train->add_option("--split", trn.split, "split.json")->required()->check(CLI::ExistingFile);
  s_train->add_option("-o,--out", trn.out, "Run directory");
  add_train_options(s_train, trn);

  PredictArgs prd;
  auto* s_pred = app.add_subcommand("predict", "Whole-image prediction");
  s_pred->add_option("--checkpoint", prd.checkpoint)->required()->check(CLI::ExistingFile);
  s_pred->add_option("inputs", prd.inputs, "Image files or directories");
  s_pred->add_option("--split", prd.split, "Predict the samples of a split.json");
  s_pred->add_option("--subset", prd.subset, "train, val or all")
      ->check(CLI::IsMember({"train", "val", "all"}));
  s_pred->add_option("-o,--output", prd.output, "Predictions JSON");
  s_pred->add_option("--threshold", prd.threshold, "Abnormal iff probability >= threshold");

  EvaluateArgs evl;
  auto* s_eval = app.add_subcommand("evaluate", "Metrics, threshold sweep and plots");
  s_eval->add_option("--predictions", evl.predictions)->required()->check(CLI::ExistingFile);
  s_eval->add_option("-o,--out", evl.out, "Output directory");
  s_eval->add_option("--threshold", evl.threshold, "Operating threshold");
  s_eval->add_option("--grid-start", evl.grid_start);
  s_eval->add_option("--grid-stop", evl.grid_stop);
  s_eval->add_option("--grid-step", evl.grid_step);

  ExplainArgs exp;
  auto* s_exp = app.add_subcommand("explain", "Grad-CAM overlays");
  s_exp->add_option("--checkpoint", exp.checkpoint)->required()->check(CLI::ExistingFile);
  s_exp->add_option("--image", exp.image)->required()->check(CLI::ExistingFile);
  s_exp->add_option("-o,--out", exp.out, "Output directory");
  s_exp->add_option("--target-class", exp.target, "abnormal, normal, 0 or 1");
  s_exp->add_option("--opacity", exp.opacity, "Overlay opacity in [0, 1]");
  s_exp->add_option("--layer", exp.layer, "Feature layer (default: last spatial layer)");

  ServeArgs srv;
  auto* s_serve = app.add_subcommand("serve", "HTTP inference service");
  s_serve->add_option("--host", srv.host);
  s_serve->add_option("--port", srv.port);
  s_serve->add_option("--model-dir", srv.model_dir);
  s_serve->add_option("--data-dir", srv.data_dir);
  s_serve->add_option("--threshold", srv.threshold, "Default decision threshold");
  s_serve->add_option("--static-dir", srv.static_dir, "Serve a built UI from this directory");
  s_serve->add_option("--max-upload-mb", srv.max_upload_mb);

  ReproduceArgs rep;
  auto* s_rep = app.add_subcommand("reproduce", "split, train and evaluate in one run");
  s_rep->add_option("--root", rep.root, "Corpus root")->required();
  s_rep->add_option("-o,--out", rep.out, "Output directory");
  s_rep->add_option("--class-map", rep.class_map);
  add_train_options(s_rep, rep.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    config::PipelineConfig cfg = config_path ? config::load(*config_path) : config::PipelineConfig{};
    if (seed) {
      cfg.split.seed = *seed;
      cfg.train.seed = *seed;
      cfg.model.init_seed = *seed;
      cfg.augment.seed = *seed;
    }
    cfg.train.augment_config = cfg.augment;
    const std::string name = app.get_subcommands().front()->get_name();
    RunRecord run(name, args, cfg);
    if (name == "normalize") return cmd_normalize(norm, cfg, run);
    if (name == "extract-patches") return cmd_extract_patches(pat, cfg, run);
    if (name == "split") return cmd_split(spl, cfg, run);
    if (name == "train") return cmd_train(trn, cfg, run);
    if (name == "predict") return cmd_predict(prd, cfg, run);
    if (name == "evaluate") return cmd_evaluate(evl, cfg, run);
    if (name == "explain") return cmd_explain(exp, cfg, run);
    if (name == "serve") return cmd_serve(srv, cfg, run);
    if (name == "reproduce") return cmd_reproduce(rep, cfg, run);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code_name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
