#include <doctest.h>

#include <fstream>

#include "glandscreen/config.hpp"
#include "error_code.hpp"
#include "synthetic.hpp"

using namespace glandscreen;
using namespace glandscreen::config;
using nlohmann::json;

TEST_CASE("defaults round trip through JSON") {
  const PipelineConfig d;
  const json j = to_json(d);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(to_json(config_from_json(json::object())) == j);
  CHECK(d.train.gamma == 2.0);
  CHECK(d.train.batch_size == 16);
  CHECK(d.train.max_epochs == 30);
  CHECK(d.train.patience == 5);
  CHECK(d.train.learning_rate == 1e-4);
  CHECK(d.split.train_fraction == 0.8);
  CHECK(d.patch.patch_size == 320);
  CHECK(d.evaluate.grid().size() == 101);
}

TEST_CASE("partial overrides merge onto defaults") {
  const auto cfg = config_from_json(json::parse(R"({"train": {"batch_size": 4}, "patch": {"max_patches": 3}})"));
  CHECK(cfg.train.batch_size == 4);
  CHECK(cfg.patch.max_patches == 3);
  CHECK(cfg.train.max_epochs == 30);
  const auto again = config::apply(cfg, json::parse(R"({"train": {"max_epochs": 2}})"));
  CHECK(again.train.batch_size == 4);
  CHECK(again.train.max_epochs == 2);
  CHECK(again.preprocessing().patch.max_patches == 3);
}

TEST_CASE("unknown keys and bad types are rejected") {
  CHECK(testing::error_code([] { config_from_json(json::parse(R"({"trian": {}})")); }) ==
        ErrorCode::ConfigError);
  CHECK(testing::error_code([] { config_from_json(json::parse(R"({"train": {"gama": 2}})")); }) ==
        ErrorCode::ConfigError);
  CHECK(testing::error_code([] { config_from_json(json::parse(R"({"train": {"batch_size": "x"}})")); }) ==
        ErrorCode::ConfigError);
  CHECK(testing::error_code([] { config_from_json(json::parse(R"({"train": {"batch_size": 0}})")); }) ==
        ErrorCode::ConfigError);
}

TEST_CASE("load reads a file") {
  const auto dir = testing::temp_dir("cfg");
  std::ofstream(dir / "c.json") << R"({"split": {"seed": 9}})";
  CHECK(load(dir / "c.json").split.seed == 9);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK(testing::error_code([&] { load(dir / "bad.json"); }) == ErrorCode::ConfigError);
  CHECK(testing::error_code([&] { load(dir / "missing.json"); }).has_value());
  std::filesystem::remove_all(dir);
}

TEST_CASE("model input size follows the patch size") {
  const auto cfg = config::config_from_json(nlohmann::json{{"patch", {{"patch_size", 64}}}});
  CHECK(cfg.model.input_size == 64);
  CHECK_THROWS_AS(config::config_from_json(nlohmann::json{{"model", {{"input_size", 96}}}}), Error);
}
