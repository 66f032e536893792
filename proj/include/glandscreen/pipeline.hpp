#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandscreen/dataset.hpp"
#include "glandscreen/model.hpp"
#include "glandscreen/patcher.hpp"
#include "glandscreen/stain.hpp"

namespace glandscreen::pipeline {

/// Fixed preprocessing order: stain-normalize the whole image, then patch.
struct Preprocessing {
  stain::StainModel reference = stain::StainModel::default_reference();
  stain::StainParams stain;
  patcher::PatchParams patch;
  /// When false, images are patched without stain normalization.
  bool normalize = true;
};

struct PreparedImage {
  std::vector<patcher::Patch> patches;
  bool stain_fallback = false;
  std::string stain_fallback_reason;
};

PreparedImage prepare_image(const RgbImage& img, const Preprocessing& pre,
                            const std::string& source_id = {});

struct PatchPrediction {
  std::array<double, 2> probabilities{};  // (abnormal, normal)
  cv::Rect bbox;
  bool fallback = false;
};

struct PredictionResult {
  std::vector<PatchPrediction> patches;
  std::array<double, 2> aggregate{};
  double threshold = 0.5;
  Label label = Label::Normal;
  bool patch_fallback = false;
  bool stain_fallback = false;

  double abnormal_probability() const { return aggregate[0]; }
};

/// Arithmetic mean of the patch probability vectors.
std::array<double, 2> aggregate_probabilities(std::span<const std::array<double, 2>> patch_probs);

/// Probabilities -> aggregate -> label (abnormal iff aggregate[0] >= threshold).
PredictionResult aggregate_prediction(std::span<const std::array<double, 2>> patch_probs,
                                      double threshold);

PredictionResult predict_image(model::Classifier& model, const RgbImage& img,
                               const Preprocessing& pre, double threshold);

PredictionResult predict_prepared(model::Classifier& model, const PreparedImage& prepared,
                                  double threshold);

nlohmann::json to_json(const PredictionResult& result);
PredictionResult prediction_from_json(const nlohmann::json& j);

}  // namespace glandscreen::pipeline
