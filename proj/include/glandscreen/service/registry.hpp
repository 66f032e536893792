#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandscreen/model.hpp"

namespace glandscreen::service {

/// A model loaded for serving. `mutex` serializes use of the (stateful) forward pass.
struct LoadedModel {
  std::unique_ptr<model::Classifier> model;
  nlohmann::json manifest;
  std::optional<double> balanced_threshold;
  std::mutex mutex;
};

enum class LoadState { Pending, Loading, Ready, Failed };
std::string_view to_string(LoadState s);

struct ModelRegistryEntry {
  std::string id;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> manifest_path;
  bool is_default = false;
  LoadState state = LoadState::Pending;
  std::string error;
  std::optional<model::ModelConfig> config;
};

class ModelRegistry {
 public:
  enum class Lookup { Found, Unknown, NotReady };

  /// Finds `*.ckpt` under model_dir (one level of subdirectories). A checkpoint
  /// named best.ckpt takes its directory's name as id. A `default` file may name
  /// the default model; otherwise the lexicographically first id is default.
  void discover(const std::filesystem::path& model_dir);
  /// Registers a checkpoint directly.
  void add(const std::string& id, const std::filesystem::path& checkpoint, bool is_default = false);

  /// Loads every pending entry. Safe to run on a background thread.
  void load_all();
  /// Atomically replaces a model; in-flight requests keep the old instance.
  void swap(const std::string& id, std::shared_ptr<LoadedModel> replacement);

  std::shared_ptr<LoadedModel> get(const std::string& id, Lookup& status) const;
  std::string default_id() const;
  std::vector<ModelRegistryEntry> entries() const;
  /// "loading" until every entry has finished, then "ok" when the default is ready, else "error".
  std::string status() const;

  static std::shared_ptr<LoadedModel> load(const std::filesystem::path& checkpoint,
                                           const std::optional<std::filesystem::path>& manifest);

 private:
  mutable std::mutex mutex_;
  std::vector<ModelRegistryEntry> entries_;
  std::vector<std::shared_ptr<LoadedModel>> loaded_;
};

}  // namespace glandscreen::service
