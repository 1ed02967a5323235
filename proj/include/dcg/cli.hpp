#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dcg/config.hpp"
#include "dcg/error.hpp"

namespace dcg::cli {

enum class Command { kSynthGen, kTrainDetector, kTrainGan, kTranslate, kEvaluate, kFuseRetrain, kReport };

std::string_view to_string(Command c);
Command parse_command(std::string_view s);

/// Process exit codes.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;         ///< anything uncategorized
inline constexpr int kConfig = 2;          ///< invalid or inconsistent configuration
inline constexpr int kMissingArtifact = 3;  ///< an upstream file is absent
inline constexpr int kLeakage = 4;         ///< test data reached a training set
inline constexpr int kIo = 5;
inline constexpr int kData = 6;  ///< malformed data files, shape or contract violations
inline constexpr int kUsage = 64;
}  // namespace exit_code

int exit_code_for(ErrorKind kind);

/// Environment variable consulted for the compute device when --device is not given.
inline constexpr const char* kDeviceEnv = "DCG_DEVICE";

struct RunOptions {
  Command command = Command::kReport;
  std::string config_path;             ///< empty: defaults only
  std::vector<std::string> overrides;  ///< key.path=value
  std::optional<std::uint64_t> seed;
  std::optional<int> fold;
  std::optional<std::string> device;

  std::string domain = "or";  ///< train-detector: which domain's detectors to train
  std::string checkpoint;     ///< evaluate: detector checkpoint to run on --manifest
  std::string manifest;       ///< evaluate: data to score (default: the translated set)
  std::string predictions;    ///< evaluate: directory of predicted annotation files
  std::string name;           ///< evaluate: report directory name under eval/
  std::string resume;         ///< train-detector / train-gan: checkpoint to continue from
};

/// Config with the universal overrides (--seed, --fold, --device, then the environment) applied.
ExperimentConfig resolve_config(const RunOptions& opt);

/// Runs one stage. Errors are reported on `log` and mapped to an exit code.
int run(const RunOptions& opt, std::ostream& log);

/// Parses a command line (argv[0] is the program name) and runs it.
int main(int argc, const char* const* argv, std::ostream& log);

/// Name of a GAN run directory: the variant, plus the weights when they differ from its defaults.
std::string run_name(const DetLossWeights& w);

}  // namespace dcg::cli
