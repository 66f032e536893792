#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>


#include "glandscreen/nn/tensor.hpp"
#include "glandscreen/rng.hpp"

namespace glandscreen::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;

  explicit Param(std::string name_, Tensor v, bool decay_ = true)
      : name(std::move(name_)), value(std::move(v)), grad(Tensor::zeros_like(value)),
        decay(decay_) {}
};

/// Layers cache what they need during forward and consume it in backward.
/// backward() accumulates into parameter gradients and returns dL/d(input).
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<Param*> params() { return {}; }
  /// Non-trainable state that must be checkpointed (e.g. running statistics).
  virtual std::vector<std::pair<std::string, Tensor*>> buffers() { return {}; }
  virtual void init(Rng& /*rng*/) {}
  virtual bool spatial() const { return true; }
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d : public Layer {
 public:
  /// groups must be 1 or equal to in_channels == out_channels (depthwise).
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
         int groups = 1, bool bias = true);

  std::string kind() const override { return depthwise() ? "DepthwiseConv2d" : "Conv2d"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override;
  void init(Rng& rng) override;

  Param& weight() { return weight_; }
  Param* bias() { return bias_ ? &*bias_ : nullptr; }
  bool depthwise() const { return groups_ > 1; }

 private:
  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
  Tensor forward_dense(const Tensor& x) const;
  Tensor forward_depthwise(const Tensor& x) const;
  Tensor backward_dense(const Tensor& g);
  Tensor backward_depthwise(const Tensor& g);

  int in_, out_, k_, stride_, pad_, groups_;
  Param weight_;
  std::optional<Param> bias_;
  Tensor input_;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, float momentum = 0.1f, float eps = 1e-5f);

  std::string kind() const override { return "BatchNorm2d"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor*>> buffers() override;

 private:
  std::string name_;
  int channels_;
  float momentum_, eps_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  // forward cache
  bool was_training_ = false;
  Tensor x_hat_;
  std::vector<float> inv_std_;
};

class ReLU : public Layer {
 public:
  std::string kind() const override { return "ReLU"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

class SiLU : public Layer {
 public:
  std::string kind() const override { return "SiLU"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

class Sigmoid : public Layer {
 public:
  std::string kind() const override { return "Sigmoid"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

/// (N, C, H, W) -> (N, C, 1, 1).
class GlobalAvgPool : public Layer {
 public:
  std::string kind() const override { return "GlobalAvgPool"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  bool spatial() const override { return false; }

 private:
  std::array<int, 4> in_shape_{};
};

class Dropout : public Layer {
 public:
  Dropout(float rate, std::uint64_t seed = 0) : rate_(rate), rng_(seed) {}

  std::string kind() const override { return "Dropout"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  bool spatial() const override { return false; }
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  float rate() const { return rate_; }

 private:
  float rate_;
  Rng rng_;
  std::vector<float> mask_;
  bool was_training_ = false;
};

/// Operates on the channel axis of (N, F, 1, 1) tensors.
class Linear : public Layer {
 public:
  Linear(std::string name, int in_features, int out_features);

  std::string kind() const override { return "Linear"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override;
  bool spatial() const override { return false; }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  int in_, out_;
  Param weight_, bias_;
  Tensor input_;
};

/// Ordered, named chain of layers.
class Sequential : public Layer {
 public:
  std::string kind() const override { return "Sequential"; }
  Sequential& add(std::string name, LayerPtr layer);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  /// Runs layers [begin, end).
  Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end, bool training);
  /// Backpropagates through layers [begin, end) in reverse.
  Tensor backward_range(const Tensor& grad_out, std::size_t begin, std::size_t end);

  std::vector<Param*> params() override;
  std::vector<std::pair<std::string, Tensor*>> buffers() override;
  void init(Rng& rng) override;

  std::size_t size() const { return layers_.size(); }
  const std::string& name_at(std::size_t i) const { return names_[i]; }
  Layer& at(std::size_t i) { return *layers_[i]; }
  /// Index of the named layer, or size() when absent.
  std::size_t index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<LayerPtr> layers_;
};

/// x * sigmoid(fc2(silu(fc1(gap(x))))) broadcast over space.
class SqueezeExcite : public Layer {
 public:
  SqueezeExcite(const std::string& name, int channels, int reduced);

  std::string kind() const override { return "SqueezeExcite"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return gate_.params(); }
  void init(Rng& rng) override { gate_.init(rng); }

 private:
  Sequential gate_;
  Tensor input_, scale_;
};

/// Inverted-residual block: [expand 1x1] -> depthwise kxk -> SE -> project 1x1, skip when shapes match.
class MBConv : public Layer {
 public:
  MBConv(const std::string& name, int in_channels, int out_channels, int expand_ratio, int kernel,
         int stride, double se_ratio = 0.25);

  std::string kind() const override { return "MBConv"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return body_.params(); }
  std::vector<std::pair<std::string, Tensor*>> buffers() override { return body_.buffers(); }
  void init(Rng& rng) override { body_.init(rng); }
  bool residual() const { return residual_; }

 private:
  Sequential body_;
  bool residual_;
};

}  // namespace glandscreen::nn
