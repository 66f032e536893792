#include "glandscreen/explainer.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "glandscreen/error.hpp"

using nlohmann::json;

namespace glandscreen::explain {

cv::Point Heatmap::peak() const {
  double max_v = 0.0;
  cv::Point loc(0, 0);
  cv::minMaxLoc(values, nullptr, &max_v, nullptr, &loc);
  return max_v > 0.0 ? loc : cv::Point(0, 0);
}

bool Heatmap::all_zero() const { return cv::countNonZero(values) == 0; }

Heatmap gradcam(model::Classifier& model, const RgbImage& patch, int target_class,
                const std::string& layer) {
  if (target_class < 0 || target_class >= kNumClasses) {
    throw Error(ErrorCode::InvalidArgument, "target class out of range");
  }
  auto& backbone = model.backbone();
  const std::string name = layer.empty() ? model.last_feature_layer() : layer;
  const std::size_t idx = backbone.index_of(name);
  if (idx == backbone.size()) {
    throw Error(ErrorCode::InvalidArgument, "no backbone layer named '" + name + "'");
  }
  if (!backbone.at(idx).spatial()) {
    throw Error(ErrorCode::NoConvFeatures, "layer '" + name + "' has no spatial extent");
  }

  const RgbImage inputs[] = {patch};
  const nn::Tensor x = model::to_input_tensor(inputs);
  const nn::Tensor features = backbone.forward_range(x, 0, idx + 1, false);
  if (features.h() < 1 || features.w() < 1) {
    throw Error(ErrorCode::NoConvFeatures, "layer '" + name + "' produced an empty map");
  }
  const nn::Tensor rest = backbone.forward_range(features, idx + 1, backbone.size(), false);
  const nn::Tensor logits = model.head().forward(rest, false);

  nn::Tensor seed = nn::Tensor::zeros_like(logits);
  seed.at(0, target_class) = 1.0f;
  const nn::Tensor dfeat =
      backbone.backward_range(model.head().backward(seed), idx + 1, backbone.size());
  model.zero_grad();

  const int h = features.h(), w = features.w();
  const std::size_t plane = features.plane();
  cv::Mat cam = cv::Mat::zeros(h, w, CV_64F);
  for (int k = 0; k < features.c(); ++k) {
    const float* g = dfeat.sample(0) + k * plane;
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += g[i];
    weight /= static_cast<double>(plane);
    if (weight == 0.0) continue;
    const float* a = features.sample(0) + k * plane;
    for (int r = 0; r < h; ++r) {
      auto* row = cam.ptr<double>(r);
      for (int c = 0; c < w; ++c) row[c] += weight * a[r * w + c];
    }
  }
  cam = cv::max(cam, 0.0);

  Heatmap out;
  out.target_class = target_class;
  cv::Mat up;
  cv::resize(cam, up, cv::Size(patch.width(), patch.height()), 0, 0, cv::INTER_LINEAR);
  up = cv::max(up, 0.0);
  double max_v = 0.0;
  cv::minMaxLoc(up, nullptr, &max_v);
  if (max_v > 0.0 && std::isfinite(max_v)) {
    up /= max_v;
  } else {
    up.setTo(0.0);
  }
  up.convertTo(out.values, CV_32F);
  return out;
}

cv::Vec3b heat_color(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  // Piecewise-linear: (0,0,255) -> (0,255,255) -> (255,255,0) -> (255,0,0).
  float r, g, b;
  if (v < 1.0f / 3.0f) {
    const float t = v * 3.0f;
    r = 0.0f, g = 255.0f * t, b = 255.0f;
  } else if (v < 2.0f / 3.0f) {
    const float t = (v - 1.0f / 3.0f) * 3.0f;
    r = 255.0f * t, g = 255.0f, b = 255.0f * (1.0f - t);
  } else {
    const float t = (v - 2.0f / 3.0f) * 3.0f;
    r = 255.0f, g = 255.0f * (1.0f - t), b = 0.0f;
  }
  return {static_cast<unsigned char>(std::lround(r)), static_cast<unsigned char>(std::lround(g)),
          static_cast<unsigned char>(std::lround(b))};
}

RgbImage overlay(const RgbImage& img, const Heatmap& heatmap, double opacity) {
  if (img.height() != heatmap.height() || img.width() != heatmap.width()) {
    throw Error(ErrorCode::DimensionMismatch, "heatmap and image sizes differ");
  }
  if (!(opacity >= 0.0 && opacity <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "opacity must lie in [0, 1]");
  }
  RgbImage out = img.clone();
  if (opacity == 0.0) return out;
  for (int r = 0; r < img.height(); ++r) {
    const float* h = heatmap.values.ptr<float>(r);
    for (int c = 0; c < img.width(); ++c) {
      const double a = opacity * std::clamp(static_cast<double>(h[c]), 0.0, 1.0);
      if (a == 0.0) continue;
      const cv::Vec3b col = heat_color(h[c]);
      cv::Vec3b& px = out.at(r, c);
      for (int k = 0; k < 3; ++k) {
        px[k] = static_cast<unsigned char>(std::lround((1.0 - a) * px[k] + a * col[k]));
      }
    }
  }
  return out;
}

ImageExplanation explain_prepared(model::Classifier& model, const RgbImage& img,
                                  const pipeline::PreparedImage& prepared, int target_class,
                                  double opacity, const std::string& layer) {
  ImageExplanation out;
  out.target_class = target_class;
  out.composite.target_class = target_class;
  out.composite.values = cv::Mat::zeros(img.height(), img.width(), CV_32F);
  for (const auto& patch : prepared.patches) {
    PatchExplanation pe;
    pe.bbox = patch.source_bbox;
    pe.heatmap = gradcam(model, patch.pixels, target_class, layer);
    pe.overlay = overlay(patch.pixels, pe.heatmap, opacity);
    const cv::Point pk = pe.heatmap.peak();
    pe.peak_source = {
        pe.bbox.x + static_cast<int>((pk.x + 0.5) * pe.bbox.width / pe.heatmap.width()),
        pe.bbox.y + static_cast<int>((pk.y + 0.5) * pe.bbox.height / pe.heatmap.height())};

    cv::Mat placed;
    cv::resize(pe.heatmap.values, placed, pe.bbox.size(), 0, 0, cv::INTER_LINEAR);
    cv::Mat roi = out.composite.values(pe.bbox);
    cv::max(roi, cv::min(cv::max(placed, 0.0), 1.0), roi);
    out.patches.push_back(std::move(pe));
  }
  out.composite_overlay = overlay(img, out.composite, opacity);
  return out;
}

ImageExplanation explain_image(model::Classifier& model, const RgbImage& img,
                               const pipeline::Preprocessing& pre, int target_class,
                               double opacity, const std::string& layer) {
  return explain_prepared(model, img, pipeline::prepare_image(img, pre), target_class, opacity,
                          layer);
}

json to_json(const ImageExplanation& e) {
  json patches = json::array();
  for (const auto& p : e.patches) {
    patches.push_back({{"bbox", {p.bbox.x, p.bbox.y, p.bbox.width, p.bbox.height}},
                       {"peak", {p.peak_source.x, p.peak_source.y}},
                       {"all_zero", p.heatmap.all_zero()}});
  }
  return {{"target_class", kClassOrder[static_cast<std::size_t>(e.target_class)]},
          {"patches", patches},
          {"composite_peak", {e.composite.peak().x, e.composite.peak().y}}};
}

}  // namespace glandscreen::explain
