#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "synthetic.hpp"

using namespace glandscreen;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

/// Runs the CLI with stdout and stderr merged.
Run cli(const std::string& args) {
  const std::string cmd = std::string(GLANDSCREEN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

const fs::path kFixtures = GLANDSCREEN_FIXTURES;

}  // namespace

TEST_CASE("version and usage errors") {
  const auto v = cli("--version");
  CHECK(v.code == 0);
  CHECK(v.output.find("glandscreen") != std::string::npos);
  CHECK(cli("").code == 2);
  CHECK(cli("--no-such-flag").code == 2);
  CHECK(cli("evaluate").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("evaluate --predictions /nonexistent.json").code == 2);
}

TEST_CASE("evaluate reproduces the reference matrix") {
  const auto dir = testing::temp_dir("cli_eval");
  const auto r = cli("evaluate --predictions " + (kFixtures / "reference_matrix_predictions.json").string() +
                     " -o " + dir.string());
  CHECK(r.code == 0);
  CHECK(r.output.find("accuracy 0.7323") != std::string::npos);
  const auto m = read_json(dir / "metrics.json");
  CHECK(m.at("confusion").at("correct_abnormal") == 123);
  CHECK(m.at("confusion").at("missed_abnormal") == 46);
  CHECK(m.at("confusion").at("false_abnormal") == 37);
  CHECK(m.at("confusion").at("correct_normal") == 104);
  const double f1 = m.at("abnormal").at("f1");
  CHECK(std::abs(f1 - 0.747720) < 1e-6);
  CHECK(fs::exists(dir / "sweep.csv"));
  const auto manifest = read_json(dir / "run_manifest.json");
  CHECK(manifest.at("command") == "evaluate");
  CHECK(manifest.contains("config"));
  CHECK(manifest.contains("version"));
  fs::remove_all(dir);
}

TEST_CASE("domain errors exit with 1") {
  const auto dir = testing::temp_dir("cli_err");
  std::ofstream(dir / "bad.json") << R"([{"abnormal_probability": 0.5, "label": "benign"}])";
  const auto r = cli("evaluate --predictions " + (dir / "bad.json").string() + " -o " + dir.string());
  CHECK(r.code == 1);
  CHECK(r.output.find("error:") != std::string::npos);

  std::ofstream(dir / "cfg.json") << R"({"train": {"nonsense": 1}})";
  CHECK(cli("--config " + (dir / "cfg.json").string() + " split --root " + dir.string()).code == 1);

  fs::create_directories(dir / "corpus" / "abnormal");
  fs::create_directories(dir / "corpus" / "normal");
  write_image(dir / "corpus" / "abnormal" / "a.png", RgbImage(8, 8));
  const auto empty = cli("split --root " + (dir / "corpus").string() + " -o " + (dir / "s.json").string());
  CHECK(empty.code == 1);
  CHECK(empty.output.find("EmptyClass") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("split, train, predict and explain end to end") {
  const auto dir = testing::temp_dir("cli_e2e");
  testing::write_color_corpus(dir / "corpus", 8, 96, 3);
  std::ofstream(dir / "cfg.json") << R"({
    "stain": {"normalize": false},
    "patch": {"patch_size": 32, "min_region_area": 200},
    "model": {"backbone": "small_cnn"},
    "train": {"max_epochs": 1, "batch_size": 8}
  })";
  const std::string base = "--seed 5 --config " + (dir / "cfg.json").string() + " ";

  const auto s = cli(base + "split --root " + (dir / "corpus").string() + " -o " + (dir / "split.json").string());
  REQUIRE(s.code == 0);
  const auto split = read_json(dir / "split.json");
  CHECK(split.at("samples").size() == 16);
  CHECK(split.at("seed") == 5);

  const auto t = cli(base + "train --split " + (dir / "split.json").string() + " -o " + (dir / "run").string());
  REQUIRE(t.code == 0);
  CHECK(fs::exists(dir / "run" / "best.ckpt"));
  const auto manifest = read_json(dir / "run" / "run_manifest.json");
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("config").at("train").at("seed") == 5);

  const auto p = cli(base + "predict --checkpoint " + (dir / "run" / "best.ckpt").string() + " --split " +
                     (dir / "split.json").string() + " --subset val -o " + (dir / "pred.json").string());
  REQUIRE(p.code == 0);
  const auto preds = read_json(dir / "pred.json");
  CHECK(preds.size() == 4);
  CHECK(preds[0].contains("label"));
  CHECK(fs::exists(dir / "pred_run_manifest.json"));

  const auto e = cli(base + "evaluate --predictions " + (dir / "pred.json").string() + " -o " +
                     (dir / "eval").string());
  CHECK(e.code == 0);
  CHECK(fs::exists(dir / "eval" / "threshold_curves.png"));

  const auto first = fs::directory_iterator(dir / "corpus" / "abnormal")->path();
  const auto x = cli(base + "explain --checkpoint " + (dir / "run" / "best.ckpt").string() + " --image " +
                     first.string() + " -o " + (dir / "explain").string() + " --target-class normal");
  CHECK(x.code == 0);
  CHECK(fs::exists(dir / "explain" / "run_manifest.json"));
  const auto sidecar = read_json(dir / "explain" / (first.stem().string() + "_gradcam.json"));
  CHECK(fs::exists(sidecar.at("composite").get<std::string>()));
  CHECK(sidecar.at("overlays").size() == sidecar.at("patches").size());
  fs::remove_all(dir);
}
