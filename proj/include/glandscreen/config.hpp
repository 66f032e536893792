#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandscreen/model.hpp"
#include "glandscreen/patcher.hpp"
#include "glandscreen/pipeline.hpp"
#include "glandscreen/stain.hpp"
#include "glandscreen/train.hpp"

namespace glandscreen::config {

struct StainSection {
  stain::StainParams params;
  bool normalize = true;
  /// Fit the reference StainModel to this image instead of the shipped default.
  std::optional<std::filesystem::path> reference_image;
};

struct SplitSection {
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
};

struct EvaluateSection {
  double grid_start = 0.0;
  double grid_stop = 1.0;
  double grid_step = 0.01;

  std::vector<double> grid() const;
};

struct ServiceSection {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path model_dir = "models";
  std::filesystem::path data_dir = "data";
  std::optional<double> default_threshold;
  double max_upload_mb = 20.0;
  std::optional<std::filesystem::path> static_dir;
};

/// Every field has a default; unknown keys in a config file are rejected.
struct PipelineConfig {
  StainSection stain;
  patcher::PatchParams patch;
  patcher::AugmentConfig augment;
  SplitSection split;
  model::ModelConfig model;
  model::TrainConfig train;
  EvaluateSection evaluate;
  ServiceSection service;

  pipeline::Preprocessing preprocessing() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Merges `overrides` onto the defaults; throws ConfigError on unknown keys or bad types.
PipelineConfig config_from_json(const nlohmann::json& overrides);
PipelineConfig load(const std::filesystem::path& path);
/// Applies a (possibly partial) override document to an existing config.
PipelineConfig apply(const PipelineConfig& base, const nlohmann::json& overrides);

}  // namespace glandscreen::config
