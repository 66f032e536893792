#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "glandscreen/image.hpp"
#include "glandscreen/model.hpp"
#include "glandscreen/pipeline.hpp"

namespace glandscreen::explain {

struct Heatmap {
  /// CV_32F, values in [0, 1], same size as the explained patch.
  cv::Mat values;
  int target_class = 0;

  int height() const { return values.rows; }
  int width() const { return values.cols; }
  /// (x, y) of the maximum; (0, 0) for an all-zero map.
  cv::Point peak() const;
  bool all_zero() const;
};

/// Grad-CAM at `layer` (default: the last spatial backbone layer). Leaves the
/// model's parameter gradients zeroed.
Heatmap gradcam(model::Classifier& model, const RgbImage& patch, int target_class,
                const std::string& layer = {});

/// Colormap used by overlays: blue (0) -> cyan -> yellow -> red (1), RGB order.
cv::Vec3b heat_color(float value);

/// Per-pixel blend: out = (1 - a) * img + a * heat_color(h), a = opacity * h.
/// Zero heat leaves the pixel untouched; opacity 0 returns the input exactly.
RgbImage overlay(const RgbImage& img, const Heatmap& heatmap, double opacity);

struct PatchExplanation {
  cv::Rect bbox;
  Heatmap heatmap;
  RgbImage overlay;
  /// Peak activation in source-image coordinates.
  cv::Point peak_source;
};

struct ImageExplanation {
  std::vector<PatchExplanation> patches;
  /// Per-patch maps resized onto their source boxes, overlaps take the maximum.
  Heatmap composite;
  RgbImage composite_overlay;
  int target_class = 0;
};

ImageExplanation explain_image(model::Classifier& model, const RgbImage& img,
                               const pipeline::Preprocessing& pre, int target_class,
                               double opacity = 0.5, const std::string& layer = {});

ImageExplanation explain_prepared(model::Classifier& model, const RgbImage& img,
                                  const pipeline::PreparedImage& prepared, int target_class,
                                  double opacity = 0.5, const std::string& layer = {});

/// Sidecar: per-patch bbox and peak coordinates.
nlohmann::json to_json(const ImageExplanation& e);

}  // namespace glandscreen::explain
