#include "glandscreen/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "glandscreen/dataset.hpp"
#include "glandscreen/error.hpp"
#include "glandscreen/focal_loss.hpp"
#include "glandscreen/optim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace glandscreen::model {

void TrainConfig::validate() const {
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
  if (weight_decay < 0.0) throw Error(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorCode::InvalidArgument, "max_epochs must be >= 1");
  if (patience < 0) throw Error(ErrorCode::InvalidArgument, "patience must be >= 0");
  if (!(metric_threshold >= 0.0 && metric_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "metric_threshold must lie in [0, 1]");
  }
  if (alpha && alpha->size() != static_cast<std::size_t>(kNumClasses)) {
    throw Error(ErrorCode::InvalidArgument, "alpha needs one weight per class");
  }
  augment_config.validate();
}

json to_json(const patcher::AugmentConfig& c) {
  return {{"rotate", c.rotate},
          {"rotate_prob", c.rotate_prob},
          {"rotate_limit_deg", c.rotate_limit_deg},
          {"hflip", c.hflip},
          {"hflip_prob", c.hflip_prob},
          {"vflip", c.vflip},
          {"vflip_prob", c.vflip_prob},
          {"shift_scale_rotate", c.shift_scale_rotate},
          {"ssr_prob", c.ssr_prob},
          {"shift_limit", c.shift_limit},
          {"scale_limit", c.scale_limit},
          {"ssr_rotate_limit_deg", c.ssr_rotate_limit_deg},
          {"brightness_contrast", c.brightness_contrast},
          {"bc_prob", c.bc_prob},
          {"brightness_limit", c.brightness_limit},
          {"contrast_limit", c.contrast_limit},
          {"seed", c.seed}};
}

patcher::AugmentConfig augment_config_from_json(const json& j) {
  patcher::AugmentConfig c;
  c.rotate = j.value("rotate", c.rotate);
  c.rotate_prob = j.value("rotate_prob", c.rotate_prob);
  c.rotate_limit_deg = j.value("rotate_limit_deg", c.rotate_limit_deg);
  c.hflip = j.value("hflip", c.hflip);
  c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
  c.vflip = j.value("vflip", c.vflip);
  c.vflip_prob = j.value("vflip_prob", c.vflip_prob);
  c.shift_scale_rotate = j.value("shift_scale_rotate", c.shift_scale_rotate);
  c.ssr_prob = j.value("ssr_prob", c.ssr_prob);
  c.shift_limit = j.value("shift_limit", c.shift_limit);
  c.scale_limit = j.value("scale_limit", c.scale_limit);
  c.ssr_rotate_limit_deg = j.value("ssr_rotate_limit_deg", c.ssr_rotate_limit_deg);
  c.brightness_contrast = j.value("brightness_contrast", c.brightness_contrast);
  c.bc_prob = j.value("bc_prob", c.bc_prob);
  c.brightness_limit = j.value("brightness_limit", c.brightness_limit);
  c.contrast_limit = j.value("contrast_limit", c.contrast_limit);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const TrainConfig& c) {
  json j{{"gamma", c.gamma},
         {"alpha", c.alpha ? json(*c.alpha) : json(nullptr)},
         {"learning_rate", c.learning_rate},
         {"weight_decay", c.weight_decay},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"patience", c.patience},
         {"seed", c.seed},
         {"metric_threshold", c.metric_threshold},
         {"augment", c.augment},
         {"augment_config", to_json(c.augment_config)},
         {"class_order", {kClassOrder[0], kClassOrder[1]}}};
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("alpha") && !j.at("alpha").is_null()) c.alpha = j.at("alpha").get<std::vector<double>>();
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.metric_threshold = j.value("metric_threshold", c.metric_threshold);
  c.augment = j.value("augment", c.augment);
  if (j.contains("augment_config")) c.augment_config = augment_config_from_json(j.at("augment_config"));
  return c;
}

RgbImage ImageRecord::patch(std::size_t i) const { return decode_image(patches.at(i)); }

ImageRecord make_record(const std::string& id, Label label, const pipeline::PreparedImage& prep) {
  ImageRecord r;
  r.id = id;
  r.label = label;
  r.stain_fallback = prep.stain_fallback;
  for (const auto& p : prep.patches) {
    r.patches.push_back(encode_png(p.pixels));
    r.patch_fallback = r.patch_fallback || p.fallback;
  }
  return r;
}

PatchDataset prepare_dataset(std::span<const dataset::LabeledSample> samples,
                             const pipeline::Preprocessing& pre,
                             const std::function<void(std::size_t, std::size_t)>& progress) {
  PatchDataset out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const RgbImage img = read_image(s.path);
    out.push_back(make_record(s.path.string(), s.label,
                              pipeline::prepare_image(img, pre, s.path.stem().string())));
    if (progress) progress(i + 1, samples.size());
  }
  return out;
}

ValidationResult evaluate_dataset(Classifier& model, const PatchDataset& data, double threshold) {
  ValidationResult r;
  std::vector<Label> predicted;
  for (const auto& rec : data) {
    std::vector<RgbImage> pixels;
    for (std::size_t i = 0; i < rec.patches.size(); ++i) pixels.push_back(rec.patch(i));
    const auto probs = model.predict_proba(pixels);
    const auto agg = pipeline::aggregate_probabilities(probs);
    r.abnormal_probabilities.push_back(agg[0]);
    r.actual.push_back(rec.label);
    predicted.push_back(eval::threshold_label(agg[0], threshold));
  }
  r.cm = eval::confusion(predicted, r.actual);
  r.metrics = eval::metrics(r.cm);
  return r;
}

const EpochRecord& RunManifest::best() const {
  for (const auto& e : epochs) {
    if (e.epoch == best_epoch) return e;
  }
  throw Error(ErrorCode::InvalidArgument, "manifest has no record for its best epoch");
}

json to_json(const RunManifest& m) {
  json epochs = json::array();
  for (const auto& e : m.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_metrics", eval::to_json(e.val)},
                      {"val_confusion", eval::to_json(e.val_cm)},
                      {"sample_hash", e.sample_hash},
                      {"seconds", e.seconds}});
  }
  return {{"configs", m.configs},
          {"epochs", epochs},
          {"best_epoch", m.best_epoch},
          {"selection_rule", m.selection_rule},
          {"checkpoint", m.checkpoint},
          {"seeds", m.seeds},
          {"wall_clock_seconds", m.wall_clock_seconds},
          {"balanced_threshold", m.balanced_threshold},
          {"val_ids", m.val_ids},
          {"best_val_probabilities", m.best_val_probabilities}};
}

RunManifest run_manifest_from_json(const json& j) {
  RunManifest m;
  m.configs = j.value("configs", json::object());
  for (const auto& e : j.at("epochs")) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.train_loss = e.at("train_loss").get<double>();
    r.val_cm = eval::confusion_from_json(e.at("val_confusion"));
    r.val = eval::metrics(r.val_cm);
    r.sample_hash = e.value("sample_hash", std::uint64_t{0});
    r.seconds = e.value("seconds", 0.0);
    m.epochs.push_back(r);
  }
  m.best_epoch = j.at("best_epoch").get<int>();
  m.selection_rule = j.value("selection_rule", m.selection_rule);
  m.checkpoint = j.value("checkpoint", std::string{});
  m.seeds = j.value("seeds", json::object());
  m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  m.balanced_threshold = j.value("balanced_threshold", 0.5);
  m.val_ids = j.value("val_ids", std::vector<std::string>{});
  m.best_val_probabilities = j.value("best_val_probabilities", std::vector<double>{});
  return m;
}

namespace {

struct Item {
  std::size_t image;
  std::size_t patch;
  Label label;
};

std::uint64_t fnv1a(const std::vector<std::size_t>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t x : v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(x) >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

TrainOutcome train(const PatchDataset& train_set, const PatchDataset& val_set,
                   const ModelConfig& model_cfg, const TrainConfig& cfg,
                   const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) {
    throw Error(ErrorCode::InvalidArgument, "training and validation sets must be non-empty");
  }
  const auto t_start = std::chrono::steady_clock::now();

  std::vector<Item> items;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    for (std::size_t p = 0; p < train_set[i].patches.size(); ++p) {
      items.push_back({i, p, train_set[i].label});
    }
  }
  std::vector<Label> item_labels;
  for (const auto& it : items) item_labels.push_back(it.label);
  const dataset::WeightedSampler sampler(dataset::sampler_weights(item_labels));

  auto model = build_model(model_cfg);
  const std::uint64_t dropout_seed = cfg.seed + 2;
  model->set_dropout_seed(dropout_seed);
  AdamW optimizer(model->params(), {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  Rng sampler_rng(cfg.seed);
  Rng augment_rng(cfg.augment_config.seed);

  TrainOutcome outcome;
  RunManifest& manifest = outcome.manifest;
  manifest.configs = options.context;
  manifest.configs["model"] = to_json(model_cfg);
  manifest.configs["train"] = to_json(cfg);
  manifest.seeds = {{"sampler", cfg.seed},
                    {"augment", cfg.augment_config.seed},
                    {"dropout", dropout_seed},
                    {"init", model_cfg.init_seed}};
  for (const auto& rec : val_set) manifest.val_ids.push_back(rec.id);

  std::vector<unsigned char> best_bytes;
  double best_f1 = -1.0;
  int since_best = 0;
  if (options.out_dir) fs::create_directories(*options.out_dir);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    const auto order = sampler.draw(items.size(), sampler_rng);
    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<RgbImage> pixels;
      std::vector<int> targets;
      for (std::size_t k = start; k < end; ++k) {
        const Item& it = items[order[k]];
        RgbImage px = train_set[it.image].patch(it.patch);
        if (cfg.augment) px = patcher::augment_pixels(px, cfg.augment_config, augment_rng);
        pixels.push_back(std::move(px));
        targets.push_back(class_index(it.label));
      }
      const nn::Tensor logits = model->forward(to_input_tensor(pixels), true);
      Eigen::MatrixXd z(logits.n(), kNumClasses);
      for (int n = 0; n < logits.n(); ++n) {
        for (int c = 0; c < kNumClasses; ++c) z(n, c) = logits.at(n, c);
      }
      const FocalLossResult fl = focal_loss_with_grad(z, targets, cfg.gamma, cfg.alpha);
      if (!std::isfinite(fl.loss)) {
        throw Error(ErrorCode::DivergedTraining,
                    "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batches));
      }
      nn::Tensor grad(logits.n(), kNumClasses, 1, 1);
      for (int n = 0; n < logits.n(); ++n) {
        for (int c = 0; c < kNumClasses; ++c) grad.at(n, c) = static_cast<float>(fl.grad(n, c));
      }
      optimizer.zero_grad();
      model->backward(grad);
      optimizer.step();
      loss_sum += fl.loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    const ValidationResult val = evaluate_dataset(*model, val_set, cfg.metric_threshold);
    rec.val = val.metrics;
    rec.val_cm = val.cm;
    rec.sample_hash = fnv1a(order);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
    outcome.sampled_indices.push_back(order);
    manifest.epochs.push_back(rec);

    if (rec.val.macro_f1() > best_f1) {
      best_f1 = rec.val.macro_f1();
      since_best = 0;
      manifest.best_epoch = epoch;
      manifest.best_val_probabilities = val.abnormal_probabilities;
      const auto grid = eval::default_grid();
      manifest.balanced_threshold =
          eval::threshold_sweep(val.abnormal_probabilities, val.actual, grid).balanced_threshold;
      best_bytes = serialize(*model, {{"best_epoch", epoch}});
      if (options.out_dir) {
        const fs::path ckpt = *options.out_dir / "best.ckpt";
        std::ofstream out(ckpt, std::ios::binary);
        out.write(reinterpret_cast<const char*>(best_bytes.data()),
                  static_cast<std::streamsize>(best_bytes.size()));
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + ckpt.string());
        manifest.checkpoint = ckpt.string();
      }
    } else {
      ++since_best;
    }
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (options.out_dir) write_json(*options.out_dir / "manifest.json", to_json(manifest));
    if (options.on_epoch) options.on_epoch(rec);
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }

  outcome.best_model = deserialize(best_bytes);
  return outcome;
}

}  // namespace glandscreen::model
