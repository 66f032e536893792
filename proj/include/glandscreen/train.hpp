#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandscreen/evaluator.hpp"
#include "glandscreen/model.hpp"
#include "glandscreen/patcher.hpp"
#include "glandscreen/pipeline.hpp"

namespace glandscreen::model {

struct TrainConfig {
  double gamma = 2.0;
  /// Per-class focal weights (abnormal, normal); disabled when empty.
  std::optional<std::vector<double>> alpha;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 16;
  int max_epochs = 30;
  /// Epochs without macro-F1 improvement before stopping; 0 disables early stopping.
  int patience = 5;
  std::uint64_t seed = 42;
  /// Threshold used for per-epoch validation metrics.
  double metric_threshold = 0.5;
  bool augment = true;
  patcher::AugmentConfig augment_config;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const patcher::AugmentConfig& cfg);
patcher::AugmentConfig augment_config_from_json(const nlohmann::json& j);

/// One source image with its preprocessed patches kept PNG-encoded in memory.
struct ImageRecord {
  std::string id;
  Label label = Label::Normal;
  std::vector<std::vector<unsigned char>> patches;
  bool stain_fallback = false;
  bool patch_fallback = false;

  RgbImage patch(std::size_t i) const;
};

using PatchDataset = std::vector<ImageRecord>;

ImageRecord make_record(const std::string& id, Label label, const pipeline::PreparedImage& prep);

PatchDataset prepare_dataset(std::span<const dataset::LabeledSample> samples,
                             const pipeline::Preprocessing& pre,
                             const std::function<void(std::size_t, std::size_t)>& progress = {});

struct ValidationResult {
  std::vector<double> abnormal_probabilities;
  std::vector<Label> actual;
  eval::ConfusionMatrix cm;
  eval::MetricsReport metrics;
};

/// Whole-image validation: mean patch probabilities, abnormal iff >= threshold.
ValidationResult evaluate_dataset(Classifier& model, const PatchDataset& data, double threshold);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  eval::MetricsReport val;
  eval::ConfusionMatrix val_cm;
  std::uint64_t sample_hash = 0;
  double seconds = 0.0;
};

struct RunManifest {
  nlohmann::json configs;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::string selection_rule = "max validation macro-F1, earliest epoch on ties";
  std::string checkpoint;
  nlohmann::json seeds;
  double wall_clock_seconds = 0.0;
  double balanced_threshold = 0.5;
  std::vector<std::string> val_ids;
  std::vector<double> best_val_probabilities;

  const EpochRecord& best() const;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

struct TrainOptions {
  /// When set, best.ckpt and manifest.json are written here.
  std::optional<std::filesystem::path> out_dir;
  /// Extra resolved configuration recorded under manifest.configs.
  nlohmann::json context = nlohmann::json::object();
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainOutcome {
  RunManifest manifest;
  std::unique_ptr<Classifier> best_model;
  /// Sampled training-item indices, one vector per epoch.
  std::vector<std::vector<std::size_t>> sampled_indices;
};

TrainOutcome train(const PatchDataset& train_set, const PatchDataset& val_set,
                   const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const TrainOptions& options = {});

}  // namespace glandscreen::model
