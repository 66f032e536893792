#include <doctest.h>

#include "glandscreen/pipeline.hpp"
#include "synthetic.hpp"

using namespace glandscreen;
using namespace glandscreen::pipeline;

TEST_CASE("aggregation is the arithmetic mean of patch vectors") {
  const std::vector<std::array<double, 2>> probs{{0.2, 0.8}, {0.4, 0.6}, {0.9, 0.1}};
  const auto agg = aggregate_probabilities(probs);
  CHECK(agg[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(agg[0] + agg[1] == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<std::array<double, 2>> single{{0.37, 0.63}};
  CHECK(aggregate_probabilities(single) == single[0]);
  CHECK_THROWS(aggregate_probabilities({}));
}

TEST_CASE("label uses the >= rule") {
  const std::vector<std::array<double, 2>> probs{{0.2, 0.8}, {0.4, 0.6}, {0.9, 0.1}};
  const double agg = aggregate_probabilities(probs)[0];
  CHECK(aggregate_prediction(probs, agg).label == Label::Abnormal);
  CHECK(aggregate_prediction(probs, std::nextafter(agg, 1.0)).label == Label::Normal);
  CHECK(aggregate_prediction(probs, 0.0).label == Label::Abnormal);
  CHECK_THROWS(aggregate_prediction(probs, 1.5));
}

TEST_CASE("predict_image runs normalize, patch, classify, average") {
  model::ModelConfig cfg;
  cfg.backbone = "small_cnn";
  auto m = model::build_model(cfg);
  Preprocessing pre;
  pre.patch.patch_size = 64;
  const auto img = testing::blob_image(500, 400, {{{120, 120}, {70, 60}}, {{350, 280}, {80, 70}}});

  const auto r = predict_image(*m, img, pre, 0.5);
  const auto prepared = prepare_image(img, pre);
  REQUIRE(r.patches.size() == prepared.patches.size());
  CHECK(r.patches.size() == 2);
  std::array<double, 2> sum{0, 0};
  for (std::size_t i = 0; i < r.patches.size(); ++i) {
    const auto& p = r.patches[i];
    CHECK(p.probabilities[0] + p.probabilities[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.bbox == prepared.patches[i].source_bbox);
    sum[0] += p.probabilities[0];
    sum[1] += p.probabilities[1];
  }
  CHECK(r.aggregate[0] == sum[0] / 2);
  CHECK(r.aggregate[1] == sum[1] / 2);
  CHECK(!r.patch_fallback);

  const auto again = predict_image(*m, img, pre, 0.5);
  CHECK(again.aggregate == r.aggregate);

  const auto json = to_json(r);
  const auto back = prediction_from_json(json);
  CHECK(back.aggregate == r.aggregate);
  CHECK(back.label == r.label);
  CHECK(back.patches.size() == r.patches.size());
  CHECK(json.at("class_order") == nlohmann::json::array({"abnormal", "normal"}));
}

TEST_CASE("blank image sets both fallback flags") {
  model::ModelConfig cfg;
  cfg.backbone = "small_cnn";
  auto m = model::build_model(cfg);
  Preprocessing pre;
  pre.patch.patch_size = 32;
  const auto r = predict_image(*m, RgbImage(100, 100), pre, 0.5);
  CHECK(r.stain_fallback);
  CHECK(r.patch_fallback);
  CHECK(r.patches.size() == 1);
}
