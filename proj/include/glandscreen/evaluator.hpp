#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandscreen/dataset.hpp"

namespace glandscreen::eval {

/// Cells named by actual/predicted class, with abnormal as the positive class.
struct ConfusionMatrix {
  long correct_abnormal = 0;  // actual abnormal, predicted abnormal
  long missed_abnormal = 0;   // actual abnormal, predicted normal
  long false_abnormal = 0;    // actual normal, predicted abnormal
  long correct_normal = 0;    // actual normal, predicted normal

  long total() const { return correct_abnormal + missed_abnormal + false_abnormal + correct_normal; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct MetricsReport {
  double precision_abnormal = 0.0;
  double recall_abnormal = 0.0;
  double f1_abnormal = 0.0;
  double precision_normal = 0.0;
  double recall_normal = 0.0;
  double f1_normal = 0.0;
  double accuracy = 0.0;
  long support_abnormal = 0;
  long support_normal = 0;
  /// Names of metrics whose ratio was 0/0 and was reported as 0.
  std::vector<std::string> degenerate;

  bool is_degenerate() const { return !degenerate.empty(); }
  double macro_f1() const { return 0.5 * (f1_abnormal + f1_normal); }
};

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> actual);

MetricsReport metrics(const ConfusionMatrix& cm);

/// Abnormal iff probability >= threshold.
Label threshold_label(double abnormal_probability, double threshold);

struct SweepRow {
  double threshold = 0.0;
  ConfusionMatrix cm;
  MetricsReport report;
};

struct ThresholdSweep {
  std::vector<SweepRow> rows;
  /// Grid threshold minimizing |recall_abnormal - recall_normal|; ties go to the lower threshold.
  double balanced_threshold = 0.0;
};

/// 0.00, 0.01, ..., 1.00.
std::vector<double> default_grid();

ThresholdSweep threshold_sweep(std::span<const double> abnormal_probabilities,
                               std::span<const Label> actual, std::span<const double> grid);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& report);
ConfusionMatrix confusion_from_json(const nlohmann::json& j);

struct ReportFiles {
  std::filesystem::path confusion_png;
  std::filesystem::path curves_png;
  std::filesystem::path sweep_csv;
};

/// Deterministic CSV of the sweep table.
std::string sweep_csv(const ThresholdSweep& sweep);

ReportFiles render_reports(const ThresholdSweep& sweep, const ConfusionMatrix& cm,
                           const std::filesystem::path& out_dir);

}  // namespace glandscreen::eval
