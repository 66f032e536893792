#include <doctest.h>

#include <fstream>

#include "glandscreen/train.hpp"
#include "error_code.hpp"
#include "synthetic.hpp"

using namespace glandscreen;
using namespace glandscreen::model;
namespace fs = std::filesystem;

namespace {

pipeline::Preprocessing tiny_preprocessing() {
  pipeline::Preprocessing pre;
  pre.normalize = false;
  pre.patch.patch_size = 32;
  pre.patch.min_region_area = 200;
  return pre;
}

PatchDataset tiny_set(std::uint64_t seed, int per_class) {
  Rng rng(seed);
  PatchDataset out;
  const auto pre = tiny_preprocessing();
  for (int i = 0; i < 2 * per_class; ++i) {
    const Label label = i % 2 == 0 ? Label::Abnormal : Label::Normal;
    const auto img = testing::color_separable_image(rng, label, 96);
    out.push_back(make_record("img" + std::to_string(i), label, pipeline::prepare_image(img, pre)));
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.seed = 11;
  return cfg;
}

ModelConfig small_model() {
  ModelConfig m;
  m.backbone = "small_cnn";
  m.init_seed = 4;
  return m;
}

}  // namespace

TEST_CASE("one-epoch run writes a checkpoint and a manifest") {
  const auto train_set = tiny_set(1, 8);
  const auto val_set = tiny_set(2, 4);
  auto cfg = quick_config();
  cfg.max_epochs = 1;
  const auto dir = testing::temp_dir("train1");
  TrainOptions opts;
  opts.out_dir = dir;
  const auto out = train(train_set, val_set, small_model(), cfg, opts);
  REQUIRE(out.manifest.epochs.size() == 1);
  CHECK(out.manifest.best_epoch == 0);
  CHECK(fs::exists(dir / "best.ckpt"));
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(out.sampled_indices.size() == 1);
  CHECK(out.manifest.val_ids.size() == val_set.size());
  CHECK(out.manifest.best_val_probabilities.size() == val_set.size());

  std::ifstream in(dir / "manifest.json");
  const auto back = run_manifest_from_json(nlohmann::json::parse(in));
  CHECK(back.best_epoch == out.manifest.best_epoch);
  CHECK(back.epochs.size() == 1);
  CHECK(back.balanced_threshold == doctest::Approx(out.manifest.balanced_threshold));

  // Reloading the best checkpoint reproduces its validation metrics.
  auto reloaded = load_checkpoint(dir / "best.ckpt");
  const auto v = evaluate_dataset(*reloaded, val_set, cfg.metric_threshold);
  CHECK(std::abs(v.metrics.macro_f1() - out.manifest.best().val.macro_f1()) < 1e-6);
  CHECK(std::abs(v.metrics.accuracy - out.manifest.best().val.accuracy) < 1e-6);
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    CHECK(std::abs(v.abnormal_probabilities[i] - out.manifest.best_val_probabilities[i]) < 1e-6);
  }
  fs::remove_all(dir);
}

TEST_CASE("identical seeds reproduce sampled indices and weights") {
  const auto train_set = tiny_set(3, 6);
  const auto val_set = tiny_set(4, 3);
  const auto a = train(train_set, val_set, small_model(), quick_config());
  const auto b = train(train_set, val_set, small_model(), quick_config());
  CHECK(a.sampled_indices == b.sampled_indices);
  REQUIRE(a.manifest.epochs.size() == b.manifest.epochs.size());
  for (std::size_t e = 0; e < a.manifest.epochs.size(); ++e) {
    CHECK(a.manifest.epochs[e].sample_hash == b.manifest.epochs[e].sample_hash);
    CHECK(a.manifest.epochs[e].train_loss == b.manifest.epochs[e].train_loss);
  }
  CHECK(serialize(*a.best_model) == serialize(*b.best_model));

  auto other = quick_config();
  other.seed = 12;
  const auto c = train(train_set, val_set, small_model(), other);
  CHECK(c.sampled_indices != a.sampled_indices);
}

TEST_CASE("early stopping and config validation") {
  auto cfg = quick_config();
  cfg.max_epochs = 8;
  cfg.patience = 1;
  cfg.learning_rate = 1e-12;  // nothing improves after the first epoch
  const auto out = train(tiny_set(5, 4), tiny_set(6, 2), small_model(), cfg);
  CHECK(out.manifest.epochs.size() == 2);
  CHECK(out.manifest.best_epoch == 0);

  auto bad = quick_config();
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  bad = quick_config();
  bad.gamma = -1.0;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(train({}, tiny_set(6, 2), small_model(), quick_config()));
}

TEST_CASE("train config JSON round trip") {
  auto cfg = quick_config();
  cfg.alpha = std::vector<double>{0.4, 0.6};
  const auto back = train_config_from_json(to_json(cfg));
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.seed == cfg.seed);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.learning_rate == cfg.learning_rate);
}
