#include "glandscreen/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "glandscreen/error.hpp"
#include "glandscreen/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace glandscreen {

std::string_view to_string(Label label) { return kClassOrder[static_cast<std::size_t>(label)]; }

Label label_from_string(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "abnormal") return Label::Abnormal;
  if (lower == "normal") return Label::Normal;
  throw Error(ErrorCode::InvalidArgument, "unknown label: " + std::string(name));
}

}  // namespace glandscreen

namespace glandscreen::dataset {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "unassigned") return Split::Unassigned;
  throw Error(ErrorCode::InvalidArgument, "unknown split: " + std::string(name));
}

long CorpusSummary::count(Label label) const {
  const auto& row = counts[static_cast<std::size_t>(label)];
  return row[0] + row[1] + row[2];
}

long CorpusSummary::count(Label label, Split split) const {
  return counts[static_cast<std::size_t>(label)][static_cast<std::size_t>(split)];
}

CorpusSummary summarize(std::span<const LabeledSample> samples) {
  CorpusSummary s;
  for (const auto& sample : samples) {
    ++s.counts[static_cast<std::size_t>(sample.label)][static_cast<std::size_t>(sample.split)];
    ++s.total;
  }
  return s;
}

ClassLayout ClassLayout::from_mapping_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open class mapping: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "invalid class mapping JSON: " + std::string(e.what()));
  }
  ClassLayout layout;
  for (const auto& [key, value] : j.items()) {
    if (key == "abnormal") {
      layout.abnormal_dir = value.get<std::string>();
    } else if (key == "normal") {
      layout.normal_dir = value.get<std::string>();
    } else {
      throw Error(ErrorCode::ConfigError, "unknown class in mapping file: " + key);
    }
  }
  return layout;
}

namespace {

bool decodable(const fs::path& path) {
  try {
    return !cv::imread(path.string(), cv::IMREAD_REDUCED_COLOR_8).empty();
  } catch (const cv::Exception&) {
    return false;
  }
}

}  // namespace

ScanResult scan_corpus(const fs::path& root, const ClassLayout& layout, bool verify_decodable) {
  ScanResult result;
  const std::array<std::pair<Label, std::string>, 2> classes = {
      std::pair{Label::Abnormal, layout.abnormal_dir}, std::pair{Label::Normal, layout.normal_dir}};
  for (const auto& [label, dirname] : classes) {
    const fs::path dir = root / dirname;
    if (!fs::is_directory(dir)) {
      throw Error(ErrorCode::EmptyClass, "missing class directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    long kept = 0;
    for (const auto& f : files) {
      if (!is_image_extension(f)) continue;
      if (verify_decodable && !decodable(f)) {
        std::cerr << "warning: UnreadableFile: skipping " << f.string() << '\n';
        result.unreadable.push_back(f);
        continue;
      }
      result.samples.push_back({f, label, Split::Unassigned});
      ++kept;
    }
    if (kept == 0) {
      throw Error(ErrorCode::EmptyClass,
                  "class '" + std::string(to_string(label)) + "' has no decodable images in " +
                      dir.string());
    }
  }
  std::sort(result.samples.begin(), result.samples.end(),
            [](const LabeledSample& a, const LabeledSample& b) { return a.path < b.path; });
  return result;
}

SplitResult stratified_split(std::span<const LabeledSample> samples, double train_fraction,
                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "train_fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  SplitResult out;
  for (const Label label : {Label::Abnormal, Label::Normal}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label == label) idx.push_back(i);
    }
    if (idx.empty()) {
      throw Error(ErrorCode::EmptyClass,
                  "cannot split: class '" + std::string(to_string(label)) + "' is absent");
    }
    rng.shuffle(idx.begin(), idx.end());
    const auto n_train =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      LabeledSample s = samples[idx[k]];
      s.split = k < n_train ? Split::Train : Split::Val;
      (k < n_train ? out.train : out.val).push_back(std::move(s));
    }
  }
  auto by_path = [](const LabeledSample& a, const LabeledSample& b) { return a.path < b.path; };
  std::sort(out.train.begin(), out.train.end(), by_path);
  std::sort(out.val.begin(), out.val.end(), by_path);
  return out;
}

std::vector<double> sampler_weights(std::span<const Label> labels) {
  std::array<long, kNumClasses> counts{};
  for (Label l : labels) ++counts[static_cast<std::size_t>(l)];
  if (counts[0] == 0 || counts[1] == 0) {
    throw Error(ErrorCode::EmptyClass, "sampler weights need both classes present");
  }
  std::vector<double> w;
  w.reserve(labels.size());
  for (Label l : labels) w.push_back(1.0 / static_cast<double>(counts[static_cast<std::size_t>(l)]));
  return w;
}

std::vector<double> sampler_weights(std::span<const LabeledSample> samples) {
  std::vector<Label> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return sampler_weights(labels);
}

WeightedSampler::WeightedSampler(std::vector<double> weights) {
  if (weights.empty()) throw Error(ErrorCode::InvalidArgument, "sampler needs weights");
  cumulative_.resize(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw Error(ErrorCode::InvalidArgument, "sampler weights must be finite and >= 0");
    }
    acc += weights[i];
    cumulative_[i] = acc;
  }
  if (!(acc > 0.0)) throw Error(ErrorCode::InvalidArgument, "sampler weights sum to zero");
}

std::size_t WeightedSampler::draw(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

std::vector<std::size_t> WeightedSampler::draw(std::size_t n, Rng& rng) const {
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = draw(rng);
  return out;
}

std::vector<LabeledSample> SplitFile::subset(Split split) const {
  std::vector<LabeledSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [split](const LabeledSample& s) { return s.split == split; });
  return out;
}

void write_split_json(const fs::path& path, const SplitFile& split) {
  json j;
  j["root"] = split.root.string();
  j["train_fraction"] = split.train_fraction;
  j["seed"] = split.seed;
  j["class_order"] = {kClassOrder[0], kClassOrder[1]};
  j["samples"] = json::array();
  for (const auto& s : split.samples) {
    j["samples"].push_back({{"path", s.path.string()},
                            {"label", to_string(s.label)},
                            {"split", to_string(s.split)}});
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

SplitFile read_split_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    const auto order = j.at("class_order").get<std::vector<std::string>>();
    if (order.size() != 2 || order[0] != kClassOrder[0] || order[1] != kClassOrder[1]) {
      throw Error(ErrorCode::ConfigError, "split file class_order must be [abnormal, normal]");
    }
    SplitFile s;
    s.root = j.value("root", std::string{});
    s.train_fraction = j.at("train_fraction").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("samples")) {
      s.samples.push_back({e.at("path").get<std::string>(),
                           label_from_string(e.at("label").get<std::string>()),
                           split_from_string(e.at("split").get<std::string>())});
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "malformed split file: " + std::string(e.what()));
  }
}

}  // namespace glandscreen::dataset
