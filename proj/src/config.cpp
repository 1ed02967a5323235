#include "dcg/config.hpp"

#include <filesystem>
#include <fstream>

#include "dcg/error.hpp"

namespace dcg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Keys owned by another section of the experiment config.
void erase_shared_detector_keys(json& j) {
  j.erase("seed");
  j.erase("eval_radius");
  j.erase("eval_threshold");
  j.erase("eval_on_refined");
  j["model"].erase("heatmap_sigma");
}

void erase_shared_gan_keys(json& j) {
  j.erase("seed");
  j.erase("heatmap_sigma");
  j.erase("det_weights");
}

template <class F>
auto section(const char* name, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config section '") + name + "': " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("config section '") + name + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (synth.n_train < 1 || synth.n_test < 0) throw ConfigError("synth: n_train must be >= 1 and n_test >= 0");
  if (synth.n_groups < 1) throw ConfigError("synth.n_groups must be >= 1");
  if (data.width < 8 || data.height < 8) throw ConfigError("data.width and data.height must be at least 8");
  if (!(data.sigma > 0.0)) throw ConfigError("data.sigma must be positive");
  if (train.folds < 1) throw ConfigError("train.folds must be >= 1");
  if (train.fold < -1 || train.fold >= train.folds) throw ConfigError("train.fold must be -1 or in [0, folds)");
  if (!(eval.radius > 0.0)) throw ConfigError("eval.radius must be positive");
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval.threshold must lie in (0, 1)");
  section("detector", [&] {
    detector_config().validate();
    return 0;
  });
  section("gan", [&] {
    gan_config().validate();
    return 0;
  });
  if (fusion.fake_variant.empty()) throw ConfigError("fusion.fake_variant must name a translated set");
  parse_device(device);
}

json ExperimentConfig::to_json() const {
  json det = detector.to_json();
  erase_shared_detector_keys(det);
  json gan_j = gan.to_json();
  erase_shared_gan_keys(gan_j);
  return {{"workspace", workspace},
          {"output_dir", output_dir},
          {"device", device},
          {"synth",
           {{"n_train", synth.n_train},
            {"n_test", synth.n_test},
            {"n_groups", synth.n_groups},
            {"out_dir", synth.out_dir}}},
          {"data",
           {{"sim_manifest", data.sim_manifest},
            {"or_manifest", data.or_manifest},
            {"test_manifest", data.test_manifest},
            {"width", data.width},
            {"height", data.height},
            {"sigma", data.sigma}}},
          {"detector", det},
          {"gan", gan_j},
          {"det_weights", dcg::to_json(det_weights)},
          {"train", {{"seed", train.seed}, {"folds", train.folds}, {"fold", train.fold}}},
          {"eval", {{"radius", eval.radius}, {"threshold", eval.threshold}, {"on_refined", eval.on_refined}}},
          {"fusion", {{"include_fake", fusion.include_fake}, {"fake_variant", fusion.fake_variant}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  ExperimentConfig c;
  section("root", [&] {
    c.workspace = j.value("workspace", c.workspace);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.device = j.value("device", c.device);
    return 0;
  });
  if (j.contains("synth")) section("synth", [&] {
      const auto& s = j.at("synth");
      c.synth.n_train = s.value("n_train", c.synth.n_train);
      c.synth.n_test = s.value("n_test", c.synth.n_test);
      c.synth.n_groups = s.value("n_groups", c.synth.n_groups);
      c.synth.out_dir = s.value("out_dir", c.synth.out_dir);
      return 0;
    });
  if (j.contains("data")) section("data", [&] {
      const auto& d = j.at("data");
      c.data.sim_manifest = d.value("sim_manifest", c.data.sim_manifest);
      c.data.or_manifest = d.value("or_manifest", c.data.or_manifest);
      c.data.test_manifest = d.value("test_manifest", c.data.test_manifest);
      c.data.width = d.value("width", c.data.width);
      c.data.height = d.value("height", c.data.height);
      c.data.sigma = d.value("sigma", c.data.sigma);
      return 0;
    });
  if (j.contains("detector")) c.detector = section("detector", [&] { return DetectorTrainConfig::from_json(j.at("detector")); });
  if (j.contains("gan")) c.gan = section("gan", [&] { return GanTrainConfig::from_json(j.at("gan")); });
  if (j.contains("det_weights"))
    c.det_weights = section("det_weights", [&] { return det_weights_from_json(j.at("det_weights")); });
  if (j.contains("train")) section("train", [&] {
      const auto& t = j.at("train");
      c.train.seed = t.value("seed", c.train.seed);
      c.train.folds = t.value("folds", c.train.folds);
      c.train.fold = t.value("fold", c.train.fold);
      return 0;
    });
  if (j.contains("eval")) section("eval", [&] {
      const auto& e = j.at("eval");
      c.eval.radius = e.value("radius", c.eval.radius);
      c.eval.threshold = e.value("threshold", c.eval.threshold);
      c.eval.on_refined = e.value("on_refined", c.eval.on_refined);
      return 0;
    });
  if (j.contains("fusion")) section("fusion", [&] {
      const auto& f = j.at("fusion");
      c.fusion.include_fake = f.value("include_fake", c.fusion.include_fake);
      c.fusion.fake_variant = f.value("fake_variant", c.fusion.fake_variant);
      return 0;
    });
  reject_unknown_keys(j, c.to_json());
  c.validate();
  return c;
}

DetectorTrainConfig ExperimentConfig::detector_config() const {
  auto d = detector;
  d.seed = train.seed;
  d.model.heatmap_sigma = data.sigma;
  d.eval_radius = eval.radius;
  d.eval_threshold = eval.threshold;
  d.eval_on_refined = eval.on_refined;
  d.device = parse_device(device);
  return d;
}

GanTrainConfig ExperimentConfig::gan_config() const {
  auto g = gan;
  g.seed = train.seed;
  g.heatmap_sigma = data.sigma;
  g.det_weights = det_weights;
  g.device = parse_device(device);
  return g;
}

std::string ExperimentConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (fs::path(workspace) / p).lexically_normal().string();
}

std::string ExperimentConfig::output_path(const std::string& relative) const {
  return (fs::path(resolve(output_dir)) / relative).lexically_normal().string();
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override key '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  std::string base = ".";
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    try {
      j = json::parse(f, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
    base = fs::path(path).parent_path().string();
    if (base.empty()) base = ".";
  }
  for (const auto& o : overrides) apply_override(j, o);
  auto cfg = ExperimentConfig::from_json(j);
  if (fs::path(cfg.workspace).is_relative()) cfg.workspace = (fs::path(base) / cfg.workspace).lexically_normal().string();
  return cfg;
}

void reject_unknown_keys(const json& given, const json& resolved, const std::string& prefix) {
  if (!given.is_object() || !resolved.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!resolved.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    reject_unknown_keys(value, resolved.at(key), path);
  }
}

torch::Device parse_device(const std::string& name) {
  torch::Device dev(torch::kCPU);
  try {
    dev = torch::Device(name);
  } catch (const c10::Error&) {
    throw ConfigError("unknown device '" + name + "'");
  }
  if (dev.is_cuda() && !torch::cuda::is_available()) throw ConfigError("device '" + name + "' is not available");
  if (!dev.is_cpu() && !dev.is_cuda()) throw ConfigError("unsupported device '" + name + "'");
  return dev;
}

}  // namespace dcg
