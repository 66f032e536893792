#include <doctest.h>

#include <cmath>

#include "glandscreen/error.hpp"
#include "glandscreen/stain.hpp"
#include "error_code.hpp"
#include "synthetic.hpp"

using namespace glandscreen;
using namespace glandscreen::stain;
using glandscreen::testing::Basis;

namespace {

OdImage single_pixel_od(const Eigen::Vector3d& v) {
  OdImage od;
  od.height = 1;
  od.width = 1;
  od.od.resize(1, 3);
  od.od.row(0) = v.transpose();
  return od;
}

/// Independent least-squares oracle: solve (B^T B) c = B^T v with Cramer's rule.
Eigen::Vector2d normal_equations(const Basis& b, const Eigen::Vector3d& v) {
  const double a11 = b.col(0).dot(b.col(0)), a12 = b.col(0).dot(b.col(1)),
               a22 = b.col(1).dot(b.col(1));
  const double r1 = b.col(0).dot(v), r2 = b.col(1).dot(v);
  const double det = a11 * a22 - a12 * a12;
  return {(r1 * a22 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det};
}

}  // namespace

TEST_CASE("rgb_to_od follows the Beer-Lambert definition") {
  StainParams p;
  RgbImage img(1, 3);
  img.at(0, 0) = {255, 255, 255};
  img.at(0, 1) = {25, 25, 25};
  img.at(0, 2) = {0, 1, 2};
  p.white_reference = 250.0;
  const auto od = rgb_to_od(img, p);
  CHECK(od.od(0, 0) == doctest::Approx(0.0));  // clamped at zero: 255 > I0
  CHECK(od.od(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  // zero is clamped to one before the logarithm
  CHECK(od.od(2, 0) == doctest::Approx(od.od(2, 1)));
  CHECK(std::isfinite(od.od(2, 0)));

  p.white_reference = 255.0;
  const auto od255 = rgb_to_od(img, p);
  CHECK(od255.od(0, 0) == 0.0);
}

TEST_CASE("od_to_rgb rounds half up and clamps") {
  StainParams p;
  CHECK(od_to_rgb(single_pixel_od({0.0, 1.0, 50.0}), p).at(0, 0) == cv::Vec3b(255, 26, 0));
}

TEST_CASE("OD round trip is identity within one level for inputs >= 1") {
  StainParams p;
  RgbImage img(1, 255);
  for (int v = 1; v <= 255; ++v) img.at(0, v - 1) = cv::Vec3b(v, 256 - v, (v * 7) % 255 + 1);
  const auto back = od_to_rgb(rgb_to_od(img, p), p);
  for (int x = 0; x < 255; ++x) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(back.at(0, x)[c] - img.at(0, x)[c]) <= 1);
  }
}

TEST_CASE("estimate_stain_model recovers a known basis") {
  Rng rng(7);
  StainParams p;
  for (int trial = 0; trial < 8; ++trial) {
    const Basis truth = testing::random_basis(rng);
    const auto img = testing::render_stains(truth, testing::random_concentrations(rng, truth, 96), 96);
    const auto m = estimate_stain_model(rgb_to_od(img, p), p);
    CHECK(testing::basis_error_deg(m.basis, truth) < 2.0);
    for (int c = 0; c < 2; ++c) {
      CHECK(m.basis.col(c).norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(m.basis.col(c).minCoeff() >= 0.0);
      CHECK(m.max_concentration(c) > 0.0);
    }
    CHECK(m.basis(0, 0) >= m.basis(0, 1));  // hematoxylin column has the larger red OD
  }
}

TEST_CASE("estimate_stain_model rejects degenerate inputs") {
  StainParams p;
  using testing::error_code;
  CHECK(error_code([&] {
          estimate_stain_model(rgb_to_od(RgbImage(32, 32, {255, 255, 255}), p), p);
        }) == ErrorCode::InsufficientTissue);
  CHECK(error_code([&] {
          estimate_stain_model(rgb_to_od(RgbImage(32, 32, {128, 128, 128}), p), p);
        }) == ErrorCode::DegenerateStains);
}

TEST_CASE("compute_concentrations solves the least-squares problem") {
  const auto ref = StainModel::default_reference();
  SUBCASE("exact combination is recovered") {
    const Eigen::Vector2d c(0.7, 0.3);
    const auto map = compute_concentrations(single_pixel_od(ref.basis * c), ref);
    CHECK(map.conc(0, 0) == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(map.conc(0, 1) == doctest::Approx(0.3).epsilon(1e-9));
  }
  SUBCASE("zero OD gives zero") {
    const auto map = compute_concentrations(single_pixel_od(Eigen::Vector3d::Zero()), ref);
    CHECK(map.conc(0, 0) == 0.0);
    CHECK(map.conc(0, 1) == 0.0);
  }
  SUBCASE("off-plane residual matches the normal equations") {
    Rng rng(3);
    const Eigen::Vector3d normal = ref.basis.col(0).cross(ref.basis.col(1)).normalized();
    for (int i = 0; i < 200; ++i) {
      const Eigen::Vector2d c(rng.uniform(0.1, 2.0), rng.uniform(0.1, 1.0));
      const Eigen::Vector3d v = ref.basis * c + rng.uniform(-0.3, 0.3) * normal;
      const auto oracle = normal_equations(ref.basis, v);
      const auto map = compute_concentrations(single_pixel_od(v), ref);
      CHECK(std::abs(map.conc(0, 0) - std::max(0.0, oracle(0))) < 1e-6);
      CHECK(std::abs(map.conc(0, 1) - std::max(0.0, oracle(1))) < 1e-6);
    }
  }
}

TEST_CASE("normalize_macenko is a fixed point for reference-stained input") {
  Rng rng(11);
  StainParams p;
  const auto img = testing::reference_fixed_point_image(rng, 96, p);
  const auto out = normalize_macenko(img, StainModel::default_reference(), p);
  REQUIRE(out.height() == img.height());
  REQUIRE(out.width() == img.width());
  int worst = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(out.at(y, x)[c] - img.at(y, x)[c]));
    }
  }
  CHECK(worst <= 2);
}

TEST_CASE("same concentrations under different stains normalize to the same image") {
  Rng rng(5);
  StainParams p;
  const auto ref = StainModel::default_reference();
  Basis other = ref.basis;
  other.col(0) = Eigen::Vector3d(0.62, 0.68, 0.45).normalized();
  other.col(1) = Eigen::Vector3d(0.25, 0.75, 0.52).normalized();
  Basis floor = ref.basis.cwiseMin(other);
  const auto conc = testing::random_concentrations(rng, floor, 96);
  const auto a = normalize_macenko(testing::render_stains(ref.basis, conc, 96), ref, p);
  const auto b = normalize_macenko(testing::render_stains(other, conc, 96), ref, p);
  cv::Mat diff;
  cv::absdiff(a.mat(), b.mat(), diff);
  const cv::Scalar mean = cv::mean(diff);
  CHECK((mean[0] + mean[1] + mean[2]) / 3.0 < 3.0);
}

TEST_CASE("normalization policy passes failures through unchanged") {
  StainParams p;
  const RgbImage white(40, 40, {255, 255, 255});
  CHECK(testing::error_code([&] { normalize_macenko(white, StainModel::default_reference(), p); }) ==
        ErrorCode::InsufficientTissue);
  const auto outcome = normalize_or_passthrough(white, StainModel::default_reference(), p);
  CHECK(outcome.fallback);
  CHECK(outcome.image == white);
  CHECK(!outcome.fallback_reason.empty());
}

TEST_CASE("default reference basis is valid") {
  const auto ref = StainModel::default_reference();
  CHECK_NOTHROW(ref.validate());
  CHECK(ref.basis.col(0).norm() == doctest::Approx(1.0));
  CHECK(ref.max_concentration(0) == doctest::Approx(1.9705));
  CHECK(ref.max_concentration(1) == doctest::Approx(1.0308));
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 50.0) == doctest::Approx(2.5));
  CHECK(percentile({5.0}, 99.0) == doctest::Approx(5.0));
  CHECK(percentile({0.0, 10.0}, 99.0) == doctest::Approx(9.9));
}
