#include "glandscreen/config.hpp"

#include <cmath>
#include <fstream>

#include "glandscreen/error.hpp"

using nlohmann::json;

namespace glandscreen::config {

std::vector<double> EvaluateSection::grid() const {
  if (!(grid_step > 0.0) || grid_stop < grid_start) {
    throw Error(ErrorCode::ConfigError, "evaluate grid needs step > 0 and stop >= start");
  }
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor((grid_stop - grid_start) / grid_step + 1e-9));
  for (long i = 0; i <= n; ++i) {
    // Round to 1e-9 so that 0.07 prints and compares as 0.07.
    g.push_back(std::round((grid_start + static_cast<double>(i) * grid_step) * 1e9) / 1e9);
  }
  return g;
}

pipeline::Preprocessing PipelineConfig::preprocessing() const {
  pipeline::Preprocessing pre;
  pre.stain = stain.params;
  pre.patch = patch;
  pre.normalize = stain.normalize;
  if (stain.reference_image) {
    const RgbImage ref = read_image(*stain.reference_image);
    pre.reference = stain::estimate_stain_model(stain::rgb_to_od(ref, stain.params), stain.params);
  }
  return pre;
}

json to_json(const PipelineConfig& c) {
  json train = model::to_json(c.train);
  train.erase("augment_config");
  train.erase("class_order");
  const auto& sp = c.stain.params;
  return {
      {"stain",
       {{"od_floor", sp.od_floor},
        {"angle_percentiles", {sp.angle_percentile_lo, sp.angle_percentile_hi}},
        {"conc_percentile", sp.conc_percentile},
        {"white_reference", sp.white_reference},
        {"min_tissue_pixels", sp.min_tissue_pixels},
        {"normalize", c.stain.normalize},
        {"reference_image",
         c.stain.reference_image ? json(c.stain.reference_image->string()) : json(nullptr)}}},
      {"patch",
       {{"saturation_threshold", c.patch.saturation_threshold},
        {"value_ceiling", c.patch.value_ceiling},
        {"open_radius", c.patch.open_radius},
        {"close_radius", c.patch.close_radius},
        {"min_region_area", c.patch.min_region_area},
        {"max_patches", c.patch.max_patches},
        {"patch_size", c.patch.patch_size}}},
      {"augment", model::to_json(c.augment)},
      {"split", {{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}}},
      {"model", [&] {
         json m = model::to_json(c.model);
         m.erase("num_classes");
         return m;
       }()},
      {"train", train},
      {"evaluate",
       {{"grid_start", c.evaluate.grid_start},
        {"grid_stop", c.evaluate.grid_stop},
        {"grid_step", c.evaluate.grid_step}}},
      {"service",
       {{"host", c.service.host},
        {"port", c.service.port},
        {"model_dir", c.service.model_dir.string()},
        {"data_dir", c.service.data_dir.string()},
        {"default_threshold",
         c.service.default_threshold ? json(*c.service.default_threshold) : json(nullptr)},
        {"max_upload_mb", c.service.max_upload_mb},
        {"static_dir",
         c.service.static_dir ? json(c.service.static_dir->string()) : json(nullptr)}}},
  };
}

namespace {

void merge_strict(json& base, const json& over, const std::string& path) {
  if (!over.is_object()) {
    throw Error(ErrorCode::ConfigError, "expected an object at '" + path + "'");
  }
  for (const auto& [key, value] : over.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw Error(ErrorCode::ConfigError, "unknown config key '" + where + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, where);
    } else if (slot.is_null() || value.is_null() || slot.type() == value.type() ||
               (slot.is_number() && value.is_number())) {
      slot = value;
    } else {
      throw Error(ErrorCode::ConfigError, "wrong type for config key '" + where + "'");
    }
  }
}

PipelineConfig parse(const json& j) {
  PipelineConfig c;
  const auto& s = j.at("stain");
  c.stain.params.od_floor = s.at("od_floor").get<double>();
  const auto pct = s.at("angle_percentiles").get<std::vector<double>>();
  if (pct.size() != 2) throw Error(ErrorCode::ConfigError, "stain.angle_percentiles needs 2 values");
  c.stain.params.angle_percentile_lo = pct[0];
  c.stain.params.angle_percentile_hi = pct[1];
  c.stain.params.conc_percentile = s.at("conc_percentile").get<double>();
  c.stain.params.white_reference = s.at("white_reference").get<double>();
  c.stain.params.min_tissue_pixels = s.at("min_tissue_pixels").get<int>();
  c.stain.normalize = s.at("normalize").get<bool>();
  if (!s.at("reference_image").is_null()) {
    c.stain.reference_image = s.at("reference_image").get<std::string>();
  }
  c.stain.params.validate();

  const auto& p = j.at("patch");
  c.patch.saturation_threshold = p.at("saturation_threshold").get<double>();
  c.patch.value_ceiling = p.at("value_ceiling").get<double>();
  c.patch.open_radius = p.at("open_radius").get<int>();
  c.patch.close_radius = p.at("close_radius").get<int>();
  c.patch.min_region_area = p.at("min_region_area").get<long>();
  c.patch.max_patches = p.at("max_patches").get<int>();
  c.patch.patch_size = p.at("patch_size").get<int>();
  c.patch.validate();

  c.augment = model::augment_config_from_json(j.at("augment"));
  c.augment.validate();

  c.split.train_fraction = j.at("split").at("train_fraction").get<double>();
  c.split.seed = j.at("split").at("seed").get<std::uint64_t>();

  c.model = model::model_config_from_json(j.at("model"));
  c.model.validate();

  c.train = model::train_config_from_json(j.at("train"));
  c.train.augment_config = c.augment;
  c.train.validate();

  const auto& e = j.at("evaluate");
  c.evaluate.grid_start = e.at("grid_start").get<double>();
  c.evaluate.grid_stop = e.at("grid_stop").get<double>();
  c.evaluate.grid_step = e.at("grid_step").get<double>();
  (void)c.evaluate.grid();

  const auto& v = j.at("service");
  c.service.host = v.at("host").get<std::string>();
  c.service.port = v.at("port").get<int>();
  c.service.model_dir = v.at("model_dir").get<std::string>();
  c.service.data_dir = v.at("data_dir").get<std::string>();
  if (!v.at("default_threshold").is_null()) {
    c.service.default_threshold = v.at("default_threshold").get<double>();
  }
  c.service.max_upload_mb = v.at("max_upload_mb").get<double>();
  if (!v.at("static_dir").is_null()) c.service.static_dir = v.at("static_dir").get<std::string>();
  return c;
}

}  // namespace

PipelineConfig apply(const PipelineConfig& base, const json& overrides) {
  json merged = to_json(base);
  merge_strict(merged, overrides, "");
  // The network consumes patches at their native size.
  const bool explicit_input = overrides.contains("model") && overrides["model"].is_object() &&
                              overrides["model"].contains("input_size");
  if (!explicit_input && merged["patch"].contains("patch_size"))
    merged["model"]["input_size"] = merged["patch"]["patch_size"];
  if (merged["model"]["input_size"] != merged["patch"]["patch_size"])
    throw Error(ErrorCode::ConfigError, "model.input_size must equal patch.patch_size");
  try {
    return parse(merged);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("invalid config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, std::string("invalid config: ") + e.what());
  }
}

PipelineConfig config_from_json(const json& overrides) { return config::apply(PipelineConfig{}, overrides); }

PipelineConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

}  // namespace glandscreen::config
