#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace glandscreen::model {

struct FocalLossResult {
  double loss = 0.0;
  /// dLoss/dLogits, same shape as the logits.
  Eigen::MatrixXd grad;
};

/// Mean over the batch of -alpha_t * (1 - p_t)^gamma * ln(p_t), p_t the softmax
/// probability of the target class, clamped to [1e-12, 1].
double focal_loss(const Eigen::MatrixXd& logits, std::span<const int> targets, double gamma,
                  const std::optional<std::vector<double>>& alpha = std::nullopt);

FocalLossResult focal_loss_with_grad(const Eigen::MatrixXd& logits, std::span<const int> targets,
                                     double gamma,
                                     const std::optional<std::vector<double>>& alpha = std::nullopt);

}  // namespace glandscreen::model
