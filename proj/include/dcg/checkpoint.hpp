#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace dcg {

inline constexpr const char* kCheckpointMagic = "dcg-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Checkpoint container: a versioned header, the producing configuration, free-form training
/// state, and named modules, optimizers and tensors.
struct CheckpointWriter {
  std::string kind;
  nlohmann::json config;
  nlohmann::json state;
  std::vector<std::pair<std::string, const torch::nn::Module*>> modules;
  std::vector<std::pair<std::string, const torch::optim::Optimizer*>> optimizers;
  std::map<std::string, torch::Tensor> tensors;

  void save(const std::string& path) const;
};

class CheckpointReader {
 public:
  /// Throws MissingArtifactError if absent, ParseError on a wrong magic or version.
  explicit CheckpointReader(const std::string& path);

  const std::string& kind() const { return kind_; }
  int version() const { return version_; }
  const nlohmann::json& config() const { return config_; }
  const nlohmann::json& state() const { return state_; }

  void load_module(const std::string& name, torch::nn::Module& module);
  void load_optimizer(const std::string& name, torch::optim::Optimizer& optimizer);
  /// Undefined tensor when the key is absent.
  torch::Tensor tensor(const std::string& name);

 private:
  std::string path_;
  torch::serialize::InputArchive archive_;
  std::string kind_;
  int version_ = 0;
  nlohmann::json config_;
  nlohmann::json state_;
};

}  // namespace dcg
