#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glandscreen/rng.hpp"

namespace glandscreen {

/// Class index convention used everywhere: 0 = abnormal, 1 = normal.
enum class Label : int { Abnormal = 0, Normal = 1 };
inline constexpr int kNumClasses = 2;
inline constexpr std::array<std::string_view, kNumClasses> kClassOrder = {"abnormal", "normal"};

std::string_view to_string(Label label);
Label label_from_string(std::string_view name);
inline int class_index(Label label) { return static_cast<int>(label); }

}  // namespace glandscreen

namespace glandscreen::dataset {

enum class Split { Train, Val, Unassigned };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct LabeledSample {
  std::filesystem::path path;
  Label label = Label::Normal;
  Split split = Split::Unassigned;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct CorpusSummary {
  /// counts[class][split] with split order train, val, unassigned.
  std::array<std::array<long, 3>, kNumClasses> counts{};
  long total = 0;

  long count(Label label) const;
  long count(Label label, Split split) const;
};

CorpusSummary summarize(std::span<const LabeledSample> samples);

/// Subdirectory names for each class under the corpus root.
struct ClassLayout {
  std::string abnormal_dir = "abnormal";
  std::string normal_dir = "normal";

  /// Reads {"abnormal": "<dir>", "normal": "<dir>"}.
  static ClassLayout from_mapping_file(const std::filesystem::path& path);
};

struct ScanResult {
  std::vector<LabeledSample> samples;
  std::vector<std::filesystem::path> unreadable;
};

/// Lexicographically ordered samples; undecodable files are skipped and listed.
ScanResult scan_corpus(const std::filesystem::path& root, const ClassLayout& layout = {},
                       bool verify_decodable = true);

struct SplitResult {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
};

SplitResult stratified_split(std::span<const LabeledSample> samples, double train_fraction,
                             std::uint64_t seed);

/// weight = 1 / count(class of the sample).
std::vector<double> sampler_weights(std::span<const Label> labels);
std::vector<double> sampler_weights(std::span<const LabeledSample> samples);

/// Draws indices with replacement, proportional to the given weights.
class WeightedSampler {
 public:
  explicit WeightedSampler(std::vector<double> weights);

  std::size_t draw(Rng& rng) const;
  std::vector<std::size_t> draw(std::size_t n, Rng& rng) const;
  std::size_t size() const { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
};

struct SplitFile {
  std::filesystem::path root;
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
  std::vector<LabeledSample> samples;

  std::vector<LabeledSample> subset(Split split) const;
};

void write_split_json(const std::filesystem::path& path, const SplitFile& split);
SplitFile read_split_json(const std::filesystem::path& path);

}  // namespace glandscreen::dataset
