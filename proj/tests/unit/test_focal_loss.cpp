#include <doctest.h>

#include <cmath>

#include "glandscreen/focal_loss.hpp"
#include "glandscreen/optim.hpp"
#include "glandscreen/rng.hpp"

using namespace glandscreen;
using namespace glandscreen::model;

namespace {

/// Cross-entropy of a two-logit row, written as log(1 + exp(other - target)).
double cross_entropy_row(double z_target, double z_other) {
  const double d = z_other - z_target;
  return d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
}

Eigen::MatrixXd random_logits(Rng& rng, int n, double scale) {
  Eigen::MatrixXd z(n, 2);
  for (int i = 0; i < n; ++i) {
    z(i, 0) = rng.uniform(-scale, scale);
    z(i, 1) = rng.uniform(-scale, scale);
  }
  return z;
}

std::vector<int> random_targets(Rng& rng, int n) {
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng.index(2));
  return t;
}

}  // namespace

TEST_CASE("focal loss scalar values") {
  Eigen::MatrixXd z(1, 2);
  z << 0.3, 0.3;  // p_t = 0.5
  const std::vector<int> t{0};
  CHECK(std::abs(focal_loss(z, t, 2.0) - 0.25 * std::log(2.0)) < 1e-9);
  CHECK(std::abs(focal_loss(z, t, 0.0) - std::log(2.0)) < 1e-12);

  z << 800.0, -800.0;  // p_t = 1
  CHECK(focal_loss(z, t, 2.0) == doctest::Approx(0.0));
  CHECK(focal_loss(z, t, 0.0) == doctest::Approx(0.0));

  z << -800.0, 800.0;  // p_t clamped to 1e-12
  CHECK(std::isfinite(focal_loss(z, t, 2.0)));
  CHECK(focal_loss(z, t, 0.0) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("gamma zero reduces to cross-entropy") {
  Rng rng(1);
  double worst = 0.0;
  for (int b = 0; b < 1000; ++b) {
    const int n = 1 + static_cast<int>(rng.index(16));
    const auto z = random_logits(rng, n, 6.0);
    const auto t = random_targets(rng, n);
    double ce = 0.0;
    for (int i = 0; i < n; ++i) ce += cross_entropy_row(z(i, t[i]), z(i, 1 - t[i]));
    ce /= n;
    worst = std::max(worst, std::abs(focal_loss(z, t, 0.0) - ce));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(2);
  const double h = 1e-5;
  for (double gamma : {0.0, 0.5, 2.0, 3.5}) {
    for (int b = 0; b < 50; ++b) {
      const int n = 1 + static_cast<int>(rng.index(8));
      Eigen::MatrixXd z = random_logits(rng, n, 4.0);
      const auto t = random_targets(rng, n);
      std::optional<std::vector<double>> alpha;
      if (b % 2 == 1) alpha = std::vector<double>{0.3, 0.7};
      const auto r = focal_loss_with_grad(z, t, gamma, alpha);
      CHECK(r.loss == doctest::Approx(focal_loss(z, t, gamma, alpha)).epsilon(1e-12));
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 2; ++j) {
          const double keep = z(i, j);
          z(i, j) = keep + h;
          const double up = focal_loss(z, t, gamma, alpha);
          z(i, j) = keep - h;
          const double down = focal_loss(z, t, gamma, alpha);
          z(i, j) = keep;
          const double fd = (up - down) / (2 * h);
          const double an = r.grad(i, j);
          const double scale = std::max(std::abs(fd), std::abs(an));
          if (scale > 1e-6) {
            CHECK(std::abs(fd - an) / scale < 1e-4);
          } else {
            CHECK(std::abs(fd - an) < 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("focal loss decreases in p_t and never exceeds cross-entropy") {
  const std::vector<int> t{0};
  Eigen::MatrixXd z(1, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double p = 0.01; p < 0.995; p += 0.01) {
    z << std::log(p / (1 - p)), 0.0;
    const double fl = focal_loss(z, t, 2.0);
    CHECK(fl < prev);
    CHECK(fl <= focal_loss(z, t, 0.0) + 1e-15);
    prev = fl;
  }
}

TEST_CASE("alpha weights each sample by its target class") {
  Eigen::MatrixXd z(2, 2);
  z << 0.2, -0.4, 1.0, 0.5;
  const std::vector<int> t{0, 1};
  const std::vector<double> alpha{0.25, 0.75};
  const double plain0 = focal_loss(z.topRows(1), std::vector<int>{0}, 2.0);
  const double plain1 = focal_loss(z.bottomRows(1), std::vector<int>{1}, 2.0);
  CHECK(focal_loss(z, t, 2.0, alpha) == doctest::Approx((0.25 * plain0 + 0.75 * plain1) / 2));
  CHECK_THROWS(focal_loss(z, t, -1.0));
  CHECK_THROWS(focal_loss(z, std::vector<int>{0, 2}, 2.0));
}

TEST_CASE("AdamW first step and decoupled decay") {
  nn::Param w("w", nn::Tensor(1, 2, 1, 1), true);
  nn::Param b("b", nn::Tensor(1, 1, 1, 1), false);
  w.value.data = {1.0f, -2.0f};
  b.value.data = {0.5f};
  w.grad.data = {0.3f, -0.1f};
  b.grad.data = {2.0f};
  AdamW::Options o;
  o.learning_rate = 0.1;
  o.weight_decay = 0.05;
  AdamW opt({&w, &b}, o);
  opt.step();
  // Step 1: bias-corrected moments are g and g^2, so the Adam update is lr * sign(g).
  auto expected = [&](double p, double g, bool decay) {
    const double decayed = decay ? p * (1 - o.learning_rate * o.weight_decay) : p;
    return decayed - o.learning_rate * g / (std::abs(g) + o.eps);
  };
  CHECK(w.value.data[0] == doctest::Approx(expected(1.0, 0.3, true)).epsilon(1e-6));
  CHECK(w.value.data[1] == doctest::Approx(expected(-2.0, -0.1, true)).epsilon(1e-6));
  CHECK(b.value.data[0] == doctest::Approx(expected(0.5, 2.0, false)).epsilon(1e-6));
  opt.zero_grad();
  CHECK(w.grad.data[0] == 0.0f);
  CHECK(opt.steps() == 1);
}
