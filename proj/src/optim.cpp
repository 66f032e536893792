#include "glandscreen/optim.hpp"

#include <cmath>

#include "glandscreen/error.hpp"

namespace glandscreen::model {

AdamW::AdamW(std::vector<nn::Param*> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  if (!(opts_.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0");
  }
  if (opts_.weight_decay < 0.0) throw Error(ErrorCode::InvalidArgument, "weight decay must be >= 0");
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
  const auto lr = static_cast<float>(opts_.learning_rate);
  const auto step_size = static_cast<float>(opts_.learning_rate / bc1);
  const auto inv_bc2_sqrt = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(opts_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value.data;
    const auto& grad = params_[k]->grad.data;
    auto& m = m_[k];
    auto& v = v_[k];
    const float decay = params_[k]->decay ? 1.0f - lr * static_cast<float>(opts_.weight_decay) : 1.0f;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      value[i] *= decay;
      value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_bc2_sqrt + eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
}

}  // namespace glandscreen::model
