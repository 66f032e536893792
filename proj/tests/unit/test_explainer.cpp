#include <doctest.h>

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "glandscreen/explainer.hpp"
#include "error_code.hpp"
#include "synthetic.hpp"

using namespace glandscreen;
using namespace glandscreen::explain;

namespace {

double mass_in_top_left(const Heatmap& h) {
  const int hh = h.height() / 2, hw = h.width() / 2;
  return cv::sum(h.values(cv::Rect(0, 0, hw, hh)))[0] / cv::sum(h.values)[0];
}

}  // namespace

TEST_CASE("toy model focuses on its quadrant") {
  auto m = testing::quadrant_model(1.0f);
  const auto img = testing::red_quadrant_image(64);
  const auto h = gradcam(*m, img, 0);
  CHECK(h.height() == 64);
  CHECK(h.width() == 64);
  double lo, hi;
  cv::minMaxLoc(h.values, &lo, &hi);
  CHECK(lo >= 0.0);
  CHECK(hi == doctest::Approx(1.0));
  CHECK(mass_in_top_left(h) >= 0.5);
  CHECK(h.peak().x < 32);
  CHECK(h.peak().y < 32);
  for (auto& p : m->params()) {
    for (float g : p->grad.data) CHECK(g == 0.0f);
  }
}

TEST_CASE("score independent of features gives an all-zero map") {
  auto m = testing::quadrant_model(0.0f);
  const auto h = gradcam(*m, testing::red_quadrant_image(32), 0);
  CHECK(h.all_zero());
  CHECK(h.peak() == cv::Point(0, 0));
  CHECK(cv::countNonZero(h.values != h.values) == 0);  // no NaN
}

TEST_CASE("positive score scaling leaves the map unchanged") {
  const auto img = testing::red_quadrant_image(48);
  auto a = testing::quadrant_model(1.0f);
  auto b = testing::quadrant_model(7.5f);
  const auto ha = gradcam(*a, img, 0);
  const auto hb = gradcam(*b, img, 0);
  CHECK(cv::norm(ha.values, hb.values, cv::NORM_INF) < 1e-5);

  model::ModelConfig cfg;
  cfg.backbone = "small_cnn";
  auto real = model::build_model(cfg);
  Rng rng(2);
  const auto patch = testing::color_separable_image(rng, Label::Abnormal, 64);
  for (int target : {0, 1}) {
    const auto h = gradcam(*real, patch, target);
    CHECK(h.height() == 64);
    double lo, hi;
    cv::minMaxLoc(h.values, &lo, &hi);
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
  }
}

TEST_CASE("layers without spatial extent are rejected") {
  nn::Sequential backbone;
  backbone.add("conv", std::make_unique<nn::Conv2d>("conv", 3, 2, 3, 1, 1));
  backbone.add("pool", std::make_unique<nn::GlobalAvgPool>());
  nn::Sequential head;
  head.add("fc", std::make_unique<nn::Linear>("fc", 2, 2));
  model::Classifier m(model::ModelConfig{}, std::move(backbone), std::move(head));
  const auto img = testing::red_quadrant_image(16);
  CHECK(testing::error_code([&] { gradcam(m, img, 0, "pool"); }) == ErrorCode::NoConvFeatures);
  CHECK(testing::error_code([&] { gradcam(m, img, 0, "missing"); }) == ErrorCode::InvalidArgument);
  CHECK(!gradcam(m, img, 0, "conv").values.empty());
}

TEST_CASE("overlay blending") {
  Rng rng(9);
  const auto img = testing::color_separable_image(rng, Label::Normal, 24);
  Heatmap h;
  h.values = cv::Mat(24, 24, CV_32F);
  cv::randu(h.values, 0.0f, 1.0f);

  CHECK(overlay(img, h, 0.0) == img);
  Heatmap zero;
  zero.values = cv::Mat::zeros(24, 24, CV_32F);
  CHECK(overlay(img, zero, 1.0) == img);

  Heatmap small;
  small.values = cv::Mat::zeros(10, 24, CV_32F);
  CHECK(testing::error_code([&] { overlay(img, small, 0.5); }) == ErrorCode::DimensionMismatch);

  CHECK(heat_color(0.0f) == cv::Vec3b(0, 0, 255));
  CHECK(heat_color(1.0f) == cv::Vec3b(255, 0, 0));
  const cv::Vec3b mid = heat_color(0.5f);  // r and b sit on a .5 rounding boundary
  CHECK(std::abs(mid[0] - 127.5) <= 0.5);
  CHECK(mid[1] == 255);
  CHECK(std::abs(mid[2] - 127.5) <= 0.5);
}

TEST_CASE("overlay golden pixels") {
  // Gray 4x1 strip, heat 0, 1/3, 2/3, 1 at opacity 1: alpha equals the heat value.
  RgbImage img(1, 4, cv::Vec3b(100, 100, 100));
  Heatmap h;
  h.values = (cv::Mat_<float>(1, 4) << 0.0f, 1.0f / 3.0f, 2.0f / 3.0f, 1.0f);
  const auto out = overlay(img, h, 1.0);
  // 100*(1-a) + a*color, rounded: cyan at 1/3, yellow at 2/3, red at 1.
  CHECK(out.at(0, 0) == cv::Vec3b(100, 100, 100));
  CHECK(out.at(0, 1) == cv::Vec3b(67, 152, 152));
  CHECK(out.at(0, 2) == cv::Vec3b(203, 203, 33));
  CHECK(out.at(0, 3) == cv::Vec3b(255, 0, 0));
  const auto half = overlay(img, h, 0.5);
  CHECK(half.at(0, 3) == cv::Vec3b(178, 50, 50));
}

TEST_CASE("whole-image explanation composes patch maps") {
  model::ModelConfig cfg;
  cfg.backbone = "small_cnn";
  auto m = model::build_model(cfg);
  pipeline::Preprocessing pre;
  pre.patch.patch_size = 64;
  const auto img = testing::blob_image(420, 360, {{{110, 110}, {70, 60}}, {{300, 250}, {80, 70}}});
  const auto e = explain_image(*m, img, pre, 0, 0.4);
  REQUIRE(e.patches.size() == 2);
  CHECK(e.composite.height() == 360);
  CHECK(e.composite.width() == 420);
  CHECK(e.composite_overlay.height() == 360);
  for (const auto& p : e.patches) {
    CHECK(p.heatmap.height() == 64);
    CHECK(p.bbox.contains(p.peak_source));
  }
  const auto j = to_json(e);
  CHECK(j.at("patches").size() == 2);
  CHECK(j.at("patches")[0].contains("bbox"));
}
