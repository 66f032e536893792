#include "glandscreen/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "glandscreen/error.hpp"

namespace glandscreen::eval {

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> actual) {
  if (predicted.size() != actual.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "predicted has " + std::to_string(predicted.size()) + " labels, actual has " +
                    std::to_string(actual.size()));
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool pred_abn = predicted[i] == Label::Abnormal;
    if (actual[i] == Label::Abnormal) {
      ++(pred_abn ? cm.correct_abnormal : cm.missed_abnormal);
    } else {
      ++(pred_abn ? cm.false_abnormal : cm.correct_normal);
    }
  }
  return cm;
}

namespace {

double ratio(long num, long den, const char* name, std::vector<std::string>& degenerate) {
  if (den == 0) {
    degenerate.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

double f1(double p, double r, const char* name, std::vector<std::string>& degenerate) {
  if (p + r == 0.0) {
    degenerate.emplace_back(name);
    return 0.0;
  }
  return 2.0 * p * r / (p + r);
}

}  // namespace

MetricsReport metrics(const ConfusionMatrix& cm) {
  if (cm.correct_abnormal < 0 || cm.missed_abnormal < 0 || cm.false_abnormal < 0 ||
      cm.correct_normal < 0) {
    throw Error(ErrorCode::InvalidArgument, "confusion counts must be non-negative");
  }
  if (cm.total() == 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix is empty");
  MetricsReport r;
  auto& d = r.degenerate;
  r.precision_abnormal =
      ratio(cm.correct_abnormal, cm.correct_abnormal + cm.false_abnormal, "precision_abnormal", d);
  r.recall_abnormal =
      ratio(cm.correct_abnormal, cm.correct_abnormal + cm.missed_abnormal, "recall_abnormal", d);
  r.precision_normal =
      ratio(cm.correct_normal, cm.correct_normal + cm.missed_abnormal, "precision_normal", d);
  r.recall_normal =
      ratio(cm.correct_normal, cm.correct_normal + cm.false_abnormal, "recall_normal", d);
  r.f1_abnormal = f1(r.precision_abnormal, r.recall_abnormal, "f1_abnormal", d);
  r.f1_normal = f1(r.precision_normal, r.recall_normal, "f1_normal", d);
  r.accuracy = static_cast<double>(cm.correct_abnormal + cm.correct_normal) /
               static_cast<double>(cm.total());
  r.support_abnormal = cm.correct_abnormal + cm.missed_abnormal;
  r.support_normal = cm.false_abnormal + cm.correct_normal;
  return r;
}

Label threshold_label(double abnormal_probability, double threshold) {
  return abnormal_probability >= threshold ? Label::Abnormal : Label::Normal;
}

std::vector<double> default_grid() {
  std::vector<double> grid(101);
  for (int i = 0; i <= 100; ++i) grid[static_cast<std::size_t>(i)] = i / 100.0;
  return grid;
}

ThresholdSweep threshold_sweep(std::span<const double> probs, std::span<const Label> actual,
                               std::span<const double> grid) {
  if (probs.size() != actual.size()) {
    throw Error(ErrorCode::LengthMismatch, "probabilities and labels differ in length");
  }
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "threshold grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i]) || grid[i] < 0.0 || (i > 0 && !(grid[i] > grid[i - 1]))) {
      throw Error(ErrorCode::InvalidArgument,
                  "threshold grid must be finite, non-negative and strictly increasing");
    }
  }
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "probabilities must lie in [0, 1]");
    }
  }
  ThresholdSweep sweep;
  std::vector<Label> predicted(probs.size());
  double best_gap = INFINITY;
  for (double t : grid) {
    for (std::size_t i = 0; i < probs.size(); ++i) predicted[i] = threshold_label(probs[i], t);
    SweepRow row{t, confusion(predicted, actual), {}};
    row.report = metrics(row.cm);
    const double gap = std::abs(row.report.recall_abnormal - row.report.recall_normal);
    if (gap < best_gap) {
      best_gap = gap;
      sweep.balanced_threshold = t;
    }
    sweep.rows.push_back(std::move(row));
  }
  return sweep;
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"correct_abnormal", cm.correct_abnormal},
          {"missed_abnormal", cm.missed_abnormal},
          {"false_abnormal", cm.false_abnormal},
          {"correct_normal", cm.correct_normal}};
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  return {j.at("correct_abnormal").get<long>(), j.at("missed_abnormal").get<long>(),
          j.at("false_abnormal").get<long>(), j.at("correct_normal").get<long>()};
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"accuracy", r.accuracy},
          {"abnormal",
           {{"precision", r.precision_abnormal},
            {"recall", r.recall_abnormal},
            {"f1", r.f1_abnormal},
            {"support", r.support_abnormal}}},
          {"normal",
           {{"precision", r.precision_normal},
            {"recall", r.recall_normal},
            {"f1", r.f1_normal},
            {"support", r.support_normal}}},
          {"macro_f1", r.macro_f1()},
          {"degenerate", r.degenerate}};
}

std::string sweep_csv(const ThresholdSweep& sweep) {
  std::string out =
      "threshold,correct_abnormal,missed_abnormal,false_abnormal,correct_normal,"
      "precision_abnormal,recall_abnormal,f1_abnormal,precision_normal,recall_normal,f1_normal,"
      "accuracy\n";
  char buf[512];
  for (const auto& row : sweep.rows) {
    const auto& m = row.report;
    std::snprintf(buf, sizeof buf, "%.4f,%ld,%ld,%ld,%ld,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  row.threshold, row.cm.correct_abnormal, row.cm.missed_abnormal,
                  row.cm.false_abnormal, row.cm.correct_normal, m.precision_abnormal,
                  m.recall_abnormal, m.f1_abnormal, m.precision_normal, m.recall_normal,
                  m.f1_normal, m.accuracy);
    out += buf;
  }
  return out;
}

}  // namespace glandscreen::eval
