#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandscreen/image.hpp"
#include "glandscreen/nn/layers.hpp"

namespace glandscreen::model {

struct ModelConfig {
  /// "small_cnn" or "mbconv_small".
  std::string backbone = "mbconv_small";
  bool pretrained = false;
  double dropout = 0.3;
  int input_size = 320;
  std::uint64_t init_seed = 42;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::vector<std::string> available_backbones();

/// Backbone feature extractor followed by GAP -> dropout -> linear(2).
/// Forward passes cache activations, so one instance serves one caller at a time.
class Classifier {
 public:
  Classifier(ModelConfig cfg, nn::Sequential backbone, nn::Sequential head);

  const ModelConfig& config() const { return cfg_; }
  nn::Sequential& backbone() { return backbone_; }
  nn::Sequential& head() { return head_; }

  /// (N, 3, H, W) -> (N, 2, 1, 1) logits.
  nn::Tensor forward(const nn::Tensor& input, bool training);
  /// Backpropagates dL/dlogits through head and backbone; returns dL/dinput.
  nn::Tensor backward(const nn::Tensor& grad_logits);

  std::vector<nn::Param*> params();
  std::vector<std::pair<std::string, nn::Tensor*>> buffers();
  void zero_grad();

  /// Softmax class probabilities (abnormal, normal) in inference mode.
  std::vector<std::array<double, 2>> predict_proba(std::span<const RgbImage> images,
                                                   int batch_size = 16);

  /// Name of the last spatial backbone layer (default Grad-CAM target).
  std::string last_feature_layer() const;
  void set_dropout_seed(std::uint64_t seed);

 private:
  ModelConfig cfg_;
  nn::Sequential backbone_;
  nn::Sequential head_;
};

/// Throws UnknownBackbone for unsupported identifiers or unavailable pretrained weights.
std::unique_ptr<Classifier> build_model(const ModelConfig& cfg);

/// Scales to [0,1] and standardizes with ImageNet channel statistics.
nn::Tensor to_input_tensor(std::span<const RgbImage> images);

std::array<double, 2> softmax2(float logit0, float logit1);

std::vector<unsigned char> serialize(Classifier& model, const nlohmann::json& extra = {});
std::unique_ptr<Classifier> deserialize(std::span<const unsigned char> bytes,
                                        nlohmann::json* extra = nullptr);

void save_checkpoint(const std::filesystem::path& path, Classifier& model,
                     const nlohmann::json& extra = {});
std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path& path,
                                            nlohmann::json* extra = nullptr);

}  // namespace glandscreen::model
