#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dcg/cli.hpp"
#include "dcg/engine.hpp"
#include "dcg/manifest.hpp"
#include "test_util.hpp"

using namespace dcg;
namespace fs = std::filesystem;

namespace {

// Small enough for a few seconds per stage on one core.
const char* kTinyConfig = R"({
  // comments are allowed
  "output_dir": "runs",
  "synth": {"n_train": 16, "n_test": 4, "n_groups": 4, "out_dir": "synth"},
  "data": {"width": 32, "height": 32},
  "train": {"seed": 3, "folds": 2},
  "detector": {"model": {"base_channels": 4, "levels": 2}, "epochs": 1, "batch_size": 8},
  "gan": {"model": {"residual_filters": 8, "residual_blocks": 1, "disc_base_filters": 4},
          "epochs": 1, "batch_size": 4, "replay_capacity": 4},
  "det_weights": {"variant": "var1"}
})";

struct Workspace {
  TempDir dir;
  std::string config;
  Workspace(const std::string& text = kTinyConfig) : config(dir.file("experiment.json")) {
    std::ofstream(config) << text;
  }
  std::string path(const std::string& rel) const { return dir.file(rel); }
};

int dcg_main(std::vector<std::string> args, std::string* log_out = nullptr) {
  args.insert(args.begin(), "dcg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), log);
  if (log_out) *log_out = log.str();
  return code;
}

}  // namespace

TEST_CASE("exit codes map error kinds") {
  CHECK(cli::exit_code_for(ErrorKind::kConfig) == 2);
  CHECK(cli::exit_code_for(ErrorKind::kValidation) == 2);
  CHECK(cli::exit_code_for(ErrorKind::kMissingArtifact) == 3);
  CHECK(cli::exit_code_for(ErrorKind::kLeakage) == 4);
  CHECK(cli::exit_code_for(ErrorKind::kIo) == 5);
  CHECK(cli::exit_code_for(ErrorKind::kShape) == 6);
  CHECK(cli::parse_command("fuse-retrain") == cli::Command::kFuseRetrain);
  CHECK_THROWS_AS(cli::parse_command("train"), ConfigError);
}

TEST_CASE("run names encode non-default weights") {
  CHECK(cli::run_name(DetLossWeights::baseline()) == "baseline");
  CHECK(cli::run_name(DetLossWeights::var1()) == "var1");
  CHECK(cli::run_name(DetLossWeights::var1(1.0, 0.5)) == "var1_a1_0.5");
  CHECK(cli::run_name(DetLossWeights::var2()) == "var2");
}

TEST_CASE("configuration errors exit with the config code") {
  Workspace ws(R"({"detector": {"epochs": 1, "epoch_count": 3}})");
  std::string log;
  CHECK(dcg_main({"-c", ws.config, "report"}, &log) == cli::exit_code::kConfig);
  CHECK(log.find("detector.epoch_count") != std::string::npos);
  CHECK(dcg_main({"--set", "train.folds=0", "report"}) == cli::exit_code::kConfig);
  CHECK(dcg_main({"--device", "tpu", "report"}) == cli::exit_code::kConfig);
  CHECK(dcg_main({"frobnicate"}) == cli::exit_code::kUsage);
  CHECK(dcg_main({"-c", ws.path("absent.json"), "report"}) == cli::exit_code::kConfig);
}

TEST_CASE("overrides and the device variable feed the resolved config") {
  cli::RunOptions opt;
  opt.overrides = {"eval.radius=4.5", "gan.model.adversarial_form=cross_entropy"};
  opt.seed = 9;
  opt.fold = 1;
  ::setenv(cli::kDeviceEnv, "cpu", 1);
  const auto cfg = cli::resolve_config(opt);
  ::unsetenv(cli::kDeviceEnv);
  CHECK(cfg.eval.radius == 4.5);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.train.fold == 1);
  CHECK(cfg.device == "cpu");
  CHECK(cfg.gan.model.adversarial_form == AdversarialForm::kCrossEntropy);
  CHECK(cfg.detector_config().seed == 9);
  CHECK(cfg.gan_config().seed == 9);
}

TEST_CASE("train-gan for a detection variant refuses to start without detectors") {
  Workspace ws;
  REQUIRE(dcg_main({"-c", ws.config, "synth-gen"}) == 0);
  std::string log;
  CHECK(dcg_main({"-c", ws.config, "train-gan"}, &log) == cli::exit_code::kConfig);
  CHECK(log.find("pre-trained detectors") != std::string::npos);
  CHECK_FALSE(fs::exists(ws.path("runs/gan/var1/gan_fold0_last.pt")));
  CHECK(dcg_main({"-c", ws.config, "translate"}) == cli::exit_code::kMissingArtifact);
}

TEST_CASE("predictions equal to the labels score F1 = 1") {
  Workspace ws;
  REQUIRE(dcg_main({"-c", ws.config, "synth-gen"}) == 0);
  const auto test_dir = ws.path("synth/or_test");
  const auto pred_dir = ws.path("pred");
  fs::create_directories(pred_dir);
  for (const auto& rec : read_manifest(test_dir + "/manifest.jsonl"))
    fs::copy_file(fs::path(test_dir) / *rec.annotation_path, fs::path(pred_dir) / fs::path(*rec.annotation_path).filename());
  REQUIRE(dcg_main({"-c", ws.config, "evaluate", "--manifest", "synth/or_test/manifest.jsonl", "--predictions",
                    "pred", "--name", "oracle"}) == 0);
  std::ifstream f(ws.path("runs/eval/oracle/report.json"));
  const auto report = nlohmann::json::parse(f);
  CHECK(report["pooled"]["f1"].get<double>() == 1.0);
  CHECK(fs::exists(ws.path("runs/eval/oracle/report.csv")));
  CHECK(fs::exists(ws.path("runs/eval/oracle/config.resolved.json")));

  CHECK(dcg_main({"-c", ws.config, "evaluate", "--manifest", "synth/or_test/manifest.jsonl", "--predictions",
                  "nowhere"}) == cli::exit_code::kMissingArtifact);
}

TEST_CASE("the staged pipeline runs end to end") {
  Workspace ws;
  const std::vector<std::string> c{"-c", ws.config};
  const auto run = [&](std::vector<std::string> extra) {
    auto args = c;
    args.insert(args.end(), extra.begin(), extra.end());
    std::string log;
    const int code = dcg_main(args, &log);
    INFO(log);
    CHECK(code == 0);
    return code;
  };
  REQUIRE(run({"synth-gen"}) == 0);
  CHECK(read_manifest(ws.path("synth/sim/manifest.jsonl")).size() == 16);
  CHECK(read_manifest(ws.path("synth/or_test/manifest.jsonl")).size() == 4);
  REQUIRE(run({"train-detector", "--domain", "sim"}) == 0);
  REQUIRE(run({"train-detector", "--domain", "or"}) == 0);
  for (int f : {0, 1}) {
    CHECK(fs::exists(ws.path("runs/detector/or/detector_fold" + std::to_string(f) + "_best.pt")));
    CHECK(fs::exists(ws.path("runs/detector/sim/detector_fold" + std::to_string(f) + "_history.jsonl")));
  }
  CHECK(fs::exists(ws.path("runs/detector/or/seed.txt")));
  REQUIRE(run({"train-gan"}) == 0);
  CHECK(fs::exists(ws.path("runs/gan/var1/gan_fold1_epoch001.pt")));
  REQUIRE(run({"translate"}) == 0);
  CHECK(read_manifest(ws.path("runs/fake/var1/manifest.jsonl")).size() == 16);
  REQUIRE(run({"evaluate"}) == 0);
  CHECK(fs::exists(ws.path("runs/eval/fake_var1/report.json")));
  REQUIRE(run({"evaluate", "--checkpoint", "runs/detector/or/detector_fold0_best.pt"}) == 0);
  REQUIRE(run({"fuse-retrain"}) == 0);
  CHECK(fs::exists(ws.path("runs/fusion/var1/report.json")));
  CHECK(fs::exists(ws.path("runs/fusion/var1/fusion_fold0_history.jsonl")));
  REQUIRE(run({"report"}) == 0);
  std::ifstream f(ws.path("runs/summary.json"));
  const auto summary = nlohmann::json::parse(f);
  CHECK(summary.contains("fusion/var1"));
  CHECK(summary.contains("eval/fake_var1"));

  // The test set leaking into the fused training data is fatal.
  std::string log;
  CHECK(dcg_main({"-c", ws.config, "--set", "data.test_manifest=synth/or/manifest.jsonl", "fuse-retrain"}, &log) ==
        cli::exit_code::kLeakage);
}
