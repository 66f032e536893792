#include "glandscreen/service/registry.hpp"

#include <algorithm>
#include <fstream>

#include "glandscreen/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace glandscreen::service {

std::string_view to_string(LoadState s) {
  switch (s) {
    case LoadState::Pending: return "pending";
    case LoadState::Loading: return "loading";
    case LoadState::Ready: return "ready";
    case LoadState::Failed: return "failed";
  }
  return "failed";
}

void ModelRegistry::discover(const fs::path& model_dir) {
  if (!fs::is_directory(model_dir)) {
    throw Error(ErrorCode::IoError, "model directory not found: " + model_dir.string());
  }
  std::vector<std::pair<std::string, fs::path>> found;
  auto consider = [&](const fs::path& p, const std::string& dir_name) {
    if (p.extension() != ".ckpt") return;
    const std::string id = p.filename() == "best.ckpt" && !dir_name.empty() ? dir_name
                                                                             : p.stem().string();
    found.emplace_back(id, p);
  };
  for (const auto& e : fs::directory_iterator(model_dir)) {
    if (e.is_regular_file()) {
      consider(e.path(), {});
    } else if (e.is_directory()) {
      for (const auto& inner : fs::directory_iterator(e.path())) {
        if (inner.is_regular_file()) consider(inner.path(), e.path().filename().string());
      }
    }
  }
  std::sort(found.begin(), found.end());
  std::string preferred;
  if (std::ifstream def(model_dir / "default"); def) std::getline(def, preferred);

  std::lock_guard lock(mutex_);
  for (const auto& [id, path] : found) {
    if (std::any_of(entries_.begin(), entries_.end(),
                    [&](const ModelRegistryEntry& m) { return m.id == id; })) {
      throw Error(ErrorCode::ConfigError, "duplicate model id '" + id + "' in " + model_dir.string());
    }
    ModelRegistryEntry entry;
    entry.id = id;
    entry.checkpoint = path;
    for (const fs::path& cand : {path.parent_path() / (path.stem().string() + ".manifest.json"),
                                 path.parent_path() / "manifest.json"}) {
      if (fs::is_regular_file(cand)) {
        entry.manifest_path = cand;
        break;
      }
    }
    entries_.push_back(std::move(entry));
    loaded_.emplace_back();
  }
  if (!entries_.empty()) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const ModelRegistryEntry& m) { return m.id == preferred; });
    const bool any_default = std::any_of(entries_.begin(), entries_.end(),
                                         [](const ModelRegistryEntry& m) { return m.is_default; });
    if (it != entries_.end()) {
      for (auto& m : entries_) m.is_default = false;
      it->is_default = true;
    } else if (!any_default) {
      entries_.front().is_default = true;
    }
  }
}

void ModelRegistry::add(const std::string& id, const fs::path& checkpoint, bool is_default) {
  std::lock_guard lock(mutex_);
  for (const auto& m : entries_) {
    if (m.id == id) throw Error(ErrorCode::ConfigError, "duplicate model id '" + id + "'");
  }
  if (is_default || entries_.empty()) {
    for (auto& m : entries_) m.is_default = false;
    is_default = true;
  }
  ModelRegistryEntry entry;
  entry.id = id;
  entry.checkpoint = checkpoint;
  entry.is_default = is_default;
  const fs::path manifest = checkpoint.parent_path() / "manifest.json";
  if (fs::is_regular_file(manifest)) entry.manifest_path = manifest;
  entries_.push_back(std::move(entry));
  loaded_.emplace_back();
}

std::shared_ptr<LoadedModel> ModelRegistry::load(const fs::path& checkpoint,
                                                 const std::optional<fs::path>& manifest) {
  auto lm = std::make_shared<LoadedModel>();
  json extra;
  lm->model = model::load_checkpoint(checkpoint, &extra);
  if (manifest) {
    std::ifstream in(*manifest);
    if (in) {
      try {
        lm->manifest = json::parse(in);
        if (lm->manifest.contains("balanced_threshold")) {
          lm->balanced_threshold = lm->manifest.at("balanced_threshold").get<double>();
        }
      } catch (const json::exception&) {
        lm->manifest = json::object();
      }
    }
  }
  return lm;
}

void ModelRegistry::load_all() {
  for (std::size_t i = 0;; ++i) {
    fs::path ckpt;
    std::optional<fs::path> manifest;
    {
      std::lock_guard lock(mutex_);
      if (i >= entries_.size()) break;
      if (entries_[i].state != LoadState::Pending) continue;
      entries_[i].state = LoadState::Loading;
      ckpt = entries_[i].checkpoint;
      manifest = entries_[i].manifest_path;
    }
    std::shared_ptr<LoadedModel> lm;
    std::string error;
    try {
      lm = load(ckpt, manifest);
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::lock_guard lock(mutex_);
    if (lm) {
      entries_[i].config = lm->model->config();
      entries_[i].state = LoadState::Ready;
      loaded_[i] = std::move(lm);
    } else {
      entries_[i].state = LoadState::Failed;
      entries_[i].error = error;
    }
  }
}

void ModelRegistry::swap(const std::string& id, std::shared_ptr<LoadedModel> replacement) {
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id == id) {
      entries_[i].config = replacement->model->config();
      entries_[i].state = LoadState::Ready;
      loaded_[i] = std::move(replacement);
      return;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model id '" + id + "'");
}

std::shared_ptr<LoadedModel> ModelRegistry::get(const std::string& id, Lookup& status) const {
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const bool match = id.empty() ? entries_[i].is_default : entries_[i].id == id;
    if (!match) continue;
    if (!loaded_[i]) {
      status = Lookup::NotReady;
      return nullptr;
    }
    status = Lookup::Found;
    return loaded_[i];
  }
  status = id.empty() ? Lookup::NotReady : Lookup::Unknown;
  return nullptr;
}

std::string ModelRegistry::default_id() const {
  std::lock_guard lock(mutex_);
  for (const auto& m : entries_) {
    if (m.is_default) return m.id;
  }
  return {};
}

std::vector<ModelRegistryEntry> ModelRegistry::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::string ModelRegistry::status() const {
  std::lock_guard lock(mutex_);
  bool default_ready = false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto s = entries_[i].state;
    if (s == LoadState::Pending || s == LoadState::Loading) return "loading";
    if (entries_[i].is_default && loaded_[i]) default_ready = true;
  }
  if (entries_.empty()) return "loading";
  return default_ready ? "ok" : "error";
}

}  // namespace glandscreen::service
