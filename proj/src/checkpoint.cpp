#include "dcg/checkpoint.hpp"

#include <filesystem>

#include "dcg/error.hpp"

namespace dcg {

void CheckpointWriter::save(const std::string& path) const {
  torch::serialize::OutputArchive ar;
  ar.write("header.magic", c10::IValue(std::string(kCheckpointMagic)));
  ar.write("header.version", c10::IValue(static_cast<int64_t>(kCheckpointVersion)));
  ar.write("header.kind", c10::IValue(kind));
  ar.write("config", c10::IValue(config.dump()));
  ar.write("state", c10::IValue(state.dump()));
  for (const auto& [name, module] : modules) {
    torch::serialize::OutputArchive sub;
    module->save(sub);
    ar.write("module." + name, sub);
  }
  for (const auto& [name, opt] : optimizers) {
    torch::serialize::OutputArchive sub;
    opt->save(sub);
    ar.write("optim." + name, sub);
  }
  std::vector<std::string> names;
  for (const auto& [name, t] : tensors) {
    if (!t.defined()) continue;
    ar.write("tensor." + name, t.detach().cpu(), /*is_buffer=*/true);
    names.push_back(name);
  }
  ar.write("tensor_names", c10::IValue(nlohmann::json(names).dump()));

  const auto tmp = path + ".tmp";
  try {
    ar.save_to(tmp);
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path + ": " + e.what_without_backtrace());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

CheckpointReader::CheckpointReader(const std::string& path) : path_(path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("checkpoint not found: " + path);
  try {
    archive_.load_from(path);
    c10::IValue v;
    archive_.read("header.magic", v);
    if (!v.isString() || v.toStringRef() != kCheckpointMagic) throw ParseError(path + ": not a checkpoint file");
    archive_.read("header.version", v);
    version_ = static_cast<int>(v.toInt());
    if (version_ != kCheckpointVersion)
      throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version_));
    archive_.read("header.kind", v);
    kind_ = v.toStringRef();
    archive_.read("config", v);
    config_ = nlohmann::json::parse(v.toStringRef());
    archive_.read("state", v);
    state_ = nlohmann::json::parse(v.toStringRef());
  } catch (const c10::Error& e) {
    throw ParseError(path + ": " + e.what_without_backtrace());
  }
}

void CheckpointReader::load_module(const std::string& name, torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  try {
    archive_.read("module." + name, sub);
    module.load(sub);
  } catch (const c10::Error& e) {
    throw ParseError(path_ + ": cannot load module '" + name + "': " + e.what_without_backtrace());
  }
}

void CheckpointReader::load_optimizer(const std::string& name, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive sub;
  try {
    archive_.read("optim." + name, sub);
    optimizer.load(sub);
  } catch (const c10::Error& e) {
    throw ParseError(path_ + ": cannot load optimizer '" + name + "': " + e.what_without_backtrace());
  }
}

torch::Tensor CheckpointReader::tensor(const std::string& name) {
  c10::IValue v;
  archive_.read("tensor_names", v);
  const auto names = nlohmann::json::parse(v.toStringRef()).get<std::vector<std::string>>();
  if (std::find(names.begin(), names.end(), name) == names.end()) return {};
  torch::Tensor t;
  archive_.read("tensor." + name, t, /*is_buffer=*/true);
  return t;
}

}  // namespace dcg
