#include <cmath>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glandscreen/error.hpp"
#include "glandscreen/evaluator.hpp"

namespace fs = std::filesystem;

namespace glandscreen::eval {
namespace {

// Colors are BGR (OpenCV drawing order).
const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrid(220, 220, 220);
const cv::Scalar kPrecision(180, 119, 31);  // blue
const cv::Scalar kRecall(14, 127, 255);     // orange
const cv::Scalar kF1(44, 160, 44);          // green
const cv::Scalar kNormalRecall(189, 103, 148);  // purple

void put(cv::Mat& img, const std::string& text, cv::Point at, double scale = 0.5,
         cv::Scalar color = kBlack, int thickness = 1) {
  cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, thickness, cv::LINE_AA);
}

void write_png(const fs::path& path, const cv::Mat& bgr) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

cv::Mat render_confusion(const ConfusionMatrix& cm) {
  cv::Mat img(420, 520, CV_8UC3, cv::Scalar(255, 255, 255));
  const long cells[2][2] = {{cm.correct_abnormal, cm.missed_abnormal},
                            {cm.false_abnormal, cm.correct_normal}};
  long max_cell = 1;
  for (auto& row : cells) {
    for (long v : row) max_cell = std::max(max_cell, v);
  }
  const int x0 = 150, y0 = 70, side = 120;
  put(img, "Confusion matrix (positive class = abnormal)", {20, 30}, 0.55);
  put(img, "predicted", {x0 + side - 40, y0 - 25});
  put(img, "abnormal", {x0 + 20, y0 - 5}, 0.45);
  put(img, "normal", {x0 + side + 30, y0 - 5}, 0.45);
  put(img, "actual abnormal", {10, y0 + side / 2}, 0.45);
  put(img, "actual normal", {10, y0 + side + side / 2}, 0.45);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const double shade = static_cast<double>(cells[r][c]) / static_cast<double>(max_cell);
      const auto level = static_cast<int>(std::lround(255.0 - 175.0 * shade));
      const cv::Rect box(x0 + c * side, y0 + r * side, side, side);
      cv::rectangle(img, box, cv::Scalar(255, level, level), cv::FILLED);
      cv::rectangle(img, box, kBlack, 1);
      put(img, std::to_string(cells[r][c]), {box.x + 40, box.y + side / 2 + 8}, 0.8,
          shade > 0.6 ? cv::Scalar(255, 255, 255) : kBlack, 2);
    }
  }
  const int ly = y0 + 2 * side + 30;
  put(img, "correct_abnormal = actual abnormal, predicted abnormal", {20, ly}, 0.4);
  put(img, "missed_abnormal  = actual abnormal, predicted normal (false negative)", {20, ly + 18},
      0.4);
  put(img, "false_abnormal   = actual normal, predicted abnormal", {20, ly + 36}, 0.4);
  put(img, "correct_normal   = actual normal, predicted normal", {20, ly + 54}, 0.4);
  return img;
}

cv::Mat render_curves(const ThresholdSweep& sweep) {
  const int W = 760, H = 480, left = 70, right = 190, top = 40, bottom = 60;
  const int pw = W - left - right, ph = H - top - bottom;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  double t_max = 1.0;
  for (const auto& row : sweep.rows) t_max = std::max(t_max, row.threshold);
  auto px = [&](double t, double v) {
    return cv::Point(left + static_cast<int>(std::lround(t / t_max * pw)),
                     top + static_cast<int>(std::lround((1.0 - v) * ph)));
  };
  for (int i = 0; i <= 10; ++i) {
    const double f = i / 10.0;
    cv::line(img, px(f * t_max, 0.0), px(f * t_max, 1.0), kGrid, 1);
    cv::line(img, px(0.0, f), px(t_max, f), kGrid, 1);
    char label[16];
    std::snprintf(label, sizeof label, "%.1f", f);
    put(img, label, {left - 35, px(0.0, f).y + 5}, 0.4);
    std::snprintf(label, sizeof label, "%.1f", f * t_max);
    put(img, label, {px(f * t_max, 0.0).x - 10, top + ph + 20}, 0.4);
  }
  cv::rectangle(img, cv::Rect(left, top, pw, ph), kBlack, 1);
  put(img, "Metrics vs. decision threshold", {left, 25}, 0.6);
  put(img, "threshold", {left + pw / 2 - 30, H - 15}, 0.5);

  struct Curve {
    const char* name;
    cv::Scalar color;
    double (*get)(const MetricsReport&);
    bool dashed;
  };
  const Curve curves[] = {
      {"abnormal precision", kPrecision, [](const MetricsReport& m) { return m.precision_abnormal; },
       false},
      {"abnormal recall", kRecall, [](const MetricsReport& m) { return m.recall_abnormal; }, false},
      {"abnormal F1", kF1, [](const MetricsReport& m) { return m.f1_abnormal; }, false},
      {"normal recall", kNormalRecall, [](const MetricsReport& m) { return m.recall_normal; },
       true},
  };
  for (std::size_t c = 0; c < std::size(curves); ++c) {
    const auto& curve = curves[c];
    for (std::size_t i = 1; i < sweep.rows.size(); ++i) {
      if (curve.dashed && i % 2 == 0) continue;
      cv::line(img, px(sweep.rows[i - 1].threshold, curve.get(sweep.rows[i - 1].report)),
               px(sweep.rows[i].threshold, curve.get(sweep.rows[i].report)), curve.color, 2,
               cv::LINE_AA);
    }
    if (curve.dashed) {
      for (std::size_t i = 0; i < sweep.rows.size(); i += 5) {
        const cv::Point p = px(sweep.rows[i].threshold, curve.get(sweep.rows[i].report));
        cv::drawMarker(img, p, curve.color, cv::MARKER_TILTED_CROSS, 8, 1);
      }
    }
    const int ly = top + 20 + static_cast<int>(c) * 22;
    cv::line(img, {W - right + 15, ly - 4}, {W - right + 40, ly - 4}, curve.color, 2);
    put(img, curve.name, {W - right + 46, ly}, 0.42);
  }
  const cv::Point bt0 = px(sweep.balanced_threshold, 0.0), bt1 = px(sweep.balanced_threshold, 1.0);
  for (int y = bt1.y; y < bt0.y; y += 8) {
    cv::line(img, {bt0.x, y}, {bt0.x, std::min(y + 4, bt0.y)}, kBlack, 1);
  }
  char bal[64];
  std::snprintf(bal, sizeof bal, "balanced %.2f", sweep.balanced_threshold);
  put(img, bal, {W - right + 15, top + 20 + 4 * 22 + 10}, 0.42);
  return img;
}

}  // namespace

ReportFiles render_reports(const ThresholdSweep& sweep, const ConfusionMatrix& cm,
                           const fs::path& out_dir) {
  if (sweep.rows.empty()) throw Error(ErrorCode::InvalidArgument, "empty sweep");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string());
  ReportFiles files{out_dir / "confusion.png", out_dir / "threshold_curves.png",
                    out_dir / "sweep.csv"};
  write_png(files.confusion_png, render_confusion(cm));
  write_png(files.curves_png, render_curves(sweep));
  std::ofstream csv(files.sweep_csv, std::ios::binary);
  if (!csv) throw Error(ErrorCode::IoError, "cannot write " + files.sweep_csv.string());
  csv << sweep_csv(sweep);
  if (!csv) throw Error(ErrorCode::IoError, "cannot write " + files.sweep_csv.string());
  return files;
}

}  // namespace glandscreen::eval
