#include "glandscreen/focal_loss.hpp"

#include <algorithm>
#include <cmath>

#include "glandscreen/error.hpp"

namespace glandscreen::model {

namespace {

constexpr double kMinProb = 1e-12;

void check(const Eigen::MatrixXd& logits, std::span<const int> targets, double gamma,
           const std::optional<std::vector<double>>& alpha) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw Error(ErrorCode::LengthMismatch, "focal loss: logits rows and targets differ");
  }
  if (logits.rows() == 0) throw Error(ErrorCode::InvalidArgument, "focal loss: empty batch");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "focal loss: gamma must be >= 0");
  for (int t : targets) {
    if (t < 0 || t >= logits.cols()) {
      throw Error(ErrorCode::InvalidArgument, "focal loss: target index out of range");
    }
  }
  if (alpha && static_cast<Eigen::Index>(alpha->size()) != logits.cols()) {
    throw Error(ErrorCode::InvalidArgument, "focal loss: alpha needs one weight per class");
  }
}

}  // namespace

FocalLossResult focal_loss_with_grad(const Eigen::MatrixXd& logits, std::span<const int> targets,
                                     double gamma, const std::optional<std::vector<double>>& alpha) {
  check(logits, targets, gamma, alpha);
  const Eigen::Index n = logits.rows(), k = logits.cols();
  FocalLossResult out;
  out.grad = Eigen::MatrixXd::Zero(n, k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd z = logits.row(i).array() - logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = z.array().exp();
    const Eigen::RowVectorXd p = e / e.sum();
    const int t = targets[static_cast<std::size_t>(i)];
    // 1 - p_t as the sum of the other probabilities keeps precision when p_t -> 1.
    const double q = (e.sum() - e(t)) / e.sum();
    const double a = alpha ? (*alpha)[static_cast<std::size_t>(t)] : 1.0;
    const bool clamped = p(t) < kMinProb;
    const double pt = std::clamp(p(t), kMinProb, 1.0);
    const double log_pt = clamped ? std::log(kMinProb) : z(t) - std::log(e.sum());
    const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    total += -a * mod * log_pt;
    if (clamped) continue;
    // dL/dp_t = -a [ (1-p)^g / p - g (1-p)^(g-1) ln p ]
    double dmod_term = 0.0;
    if (gamma != 0.0 && q > 0.0) dmod_term = gamma * std::pow(q, gamma - 1.0) * log_pt;
    const double dl_dpt = -a * (mod / pt - dmod_term);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double dpt_dz = pt * ((j == t ? 1.0 : 0.0) - p(j));
      out.grad(i, j) = dl_dpt * dpt_dz / static_cast<double>(n);
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

double focal_loss(const Eigen::MatrixXd& logits, std::span<const int> targets, double gamma,
                  const std::optional<std::vector<double>>& alpha) {
  return focal_loss_with_grad(logits, targets, gamma, alpha).loss;
}

}  // namespace glandscreen::model
