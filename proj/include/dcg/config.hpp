#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcg/detcyclegan.hpp"
#include "dcg/engine.hpp"
#include "json.hpp"

namespace dcg {

struct SynthSection {
  int n_train = 400;  ///< per domain
  int n_test = 100;   ///< or-domain frames held out for the fusion test
  int n_groups = 8;   ///< source groups per domain
  std::string out_dir = "synth";
};

struct DataSection {
  std::string sim_manifest = "synth/sim/manifest.jsonl";
  std::string or_manifest = "synth/or/manifest.jsonl";
  std::string test_manifest = "synth/or_test/manifest.jsonl";
  int width = 128;
  int height = 128;
  double sigma = 2.0;  ///< heatmap sigma shared by the detector and the detection losses
};

struct TrainSection {
  std::uint64_t seed = 0;
  int folds = 4;
  int fold = -1;  ///< -1: every fold
};

struct EvalSection {
  double radius = kMatchRadius;
  double threshold = kExtractThreshold;
  bool on_refined = false;
};

struct FusionSection {
  bool include_fake = true;
  std::string fake_variant = "var1";  ///< which translated set to fuse (the run directory name)
};

/// Whole-experiment configuration, read from a JSON file.
///
/// Shared values live in one place only: the seed in `train`, the heatmap sigma in `data`,
/// matching parameters in `eval` and the detection weights in `det_weights`. They are copied
/// into the stage configurations by `detector_config()` and `gan_config()`.
struct ExperimentConfig {
  std::string workspace = ".";  ///< root for every relative path
  std::string output_dir = "runs/default";
  std::string device = "cpu";
  SynthSection synth;
  DataSection data;
  DetectorTrainConfig detector;
  GanTrainConfig gan;
  DetLossWeights det_weights;
  TrainSection train;
  EvalSection eval;
  FusionSection fusion;

  /// Throws ConfigError (with the offending key) on any invalid value.
  void validate() const;
  /// The resolved configuration with every default expanded.
  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys take their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);

  DetectorTrainConfig detector_config() const;
  GanTrainConfig gan_config() const;
  /// `path` made absolute against the workspace.
  std::string resolve(const std::string& path) const;
  std::string output_path(const std::string& relative) const;
};

/// Applies `key.path=value` overrides; the value is parsed as JSON when possible, else taken
/// as a string. Throws ConfigError on malformed overrides.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// Reads the file (empty path: all defaults), applies overrides and validates. A relative
/// workspace is taken relative to the config file's directory.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Throws ConfigError naming the first key of `given` that `resolved` does not have.
void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& resolved, const std::string& prefix = "");

/// "cpu", "cuda" or "cuda:N"; ConfigError if the device is unknown or unavailable.
torch::Device parse_device(const std::string& name);

}  // namespace dcg
