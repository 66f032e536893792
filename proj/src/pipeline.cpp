#include "glandscreen/pipeline.hpp"

#include <cmath>

#include "glandscreen/error.hpp"
#include "glandscreen/evaluator.hpp"

using nlohmann::json;

namespace glandscreen::pipeline {

PreparedImage prepare_image(const RgbImage& img, const Preprocessing& pre,
                            const std::string& source_id) {
  PreparedImage out;
  RgbImage working = img;
  if (pre.normalize) {
    auto norm = stain::normalize_or_passthrough(img, pre.reference, pre.stain);
    working = std::move(norm.image);
    out.stain_fallback = norm.fallback;
    out.stain_fallback_reason = std::move(norm.fallback_reason);
  }
  out.patches = patcher::patches_for_image(working, pre.patch, source_id);
  return out;
}

std::array<double, 2> aggregate_probabilities(std::span<const std::array<double, 2>> probs) {
  if (probs.empty()) throw Error(ErrorCode::InvalidArgument, "no patch probabilities to aggregate");
  std::array<double, 2> sum{0.0, 0.0};
  for (const auto& p : probs) {
    sum[0] += p[0];
    sum[1] += p[1];
  }
  const auto n = static_cast<double>(probs.size());
  return {sum[0] / n, sum[1] / n};
}

PredictionResult aggregate_prediction(std::span<const std::array<double, 2>> probs,
                                      double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0, 1]");
  }
  PredictionResult r;
  for (const auto& p : probs) r.patches.push_back({p, {}, false});
  r.aggregate = aggregate_probabilities(probs);
  r.threshold = threshold;
  r.label = eval::threshold_label(r.aggregate[0], threshold);
  return r;
}

PredictionResult predict_prepared(model::Classifier& model, const PreparedImage& prepared,
                                  double threshold) {
  std::vector<RgbImage> pixels;
  pixels.reserve(prepared.patches.size());
  for (const auto& p : prepared.patches) pixels.push_back(p.pixels);
  const auto probs = model.predict_proba(pixels);
  PredictionResult r = aggregate_prediction(probs, threshold);
  for (std::size_t i = 0; i < prepared.patches.size(); ++i) {
    r.patches[i].bbox = prepared.patches[i].source_bbox;
    r.patches[i].fallback = prepared.patches[i].fallback;
    r.patch_fallback = r.patch_fallback || prepared.patches[i].fallback;
  }
  r.stain_fallback = prepared.stain_fallback;
  return r;
}

PredictionResult predict_image(model::Classifier& model, const RgbImage& img,
                               const Preprocessing& pre, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0, 1]");
  }
  return predict_prepared(model, prepare_image(img, pre), threshold);
}

json to_json(const PredictionResult& r) {
  json patches = json::array();
  for (const auto& p : r.patches) {
    patches.push_back({{"probabilities", p.probabilities},
                       {"bbox", {p.bbox.x, p.bbox.y, p.bbox.width, p.bbox.height}},
                       {"fallback", p.fallback}});
  }
  return {{"class_order", {kClassOrder[0], kClassOrder[1]}},
          {"patches", patches},
          {"aggregate", r.aggregate},
          {"abnormal_probability", r.aggregate[0]},
          {"threshold", r.threshold},
          {"label", to_string(r.label)},
          {"patch_fallback", r.patch_fallback},
          {"stain_fallback", r.stain_fallback}};
}

PredictionResult prediction_from_json(const json& j) {
  PredictionResult r;
  for (const auto& p : j.at("patches")) {
    const auto b = p.at("bbox").get<std::array<int, 4>>();
    r.patches.push_back({p.at("probabilities").get<std::array<double, 2>>(),
                         cv::Rect(b[0], b[1], b[2], b[3]), p.value("fallback", false)});
  }
  r.aggregate = j.at("aggregate").get<std::array<double, 2>>();
  r.threshold = j.at("threshold").get<double>();
  r.label = label_from_string(j.at("label").get<std::string>());
  r.patch_fallback = j.value("patch_fallback", false);
  r.stain_fallback = j.value("stain_fallback", false);
  return r;
}

}  // namespace glandscreen::pipeline
