#pragma once

#include <vector>

#include "glandscreen/nn/layers.hpp"

namespace glandscreen::model {

/// Adam with decoupled weight decay. Decay applies to params flagged `decay`.
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<nn::Param*> params, Options opts);

  void step();
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<nn::Param*> params_;
  Options opts_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

}  // namespace glandscreen::model
