#include "dcg/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dcg/checkpoint.hpp"
#include "dcg/error.hpp"
#include "dcg/heatmap.hpp"
#include "dcg/normalize.hpp"

namespace dcg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kDetector: return "detector";
    case Stage::kGan: return "gan";
    case Stage::kFusion: return "fusion";
  }
  return "detector";
}

// ---------------------------------------------------------------------------------------------
// JSON helpers

json to_json(const AugmentationConfig& cfg) {
  const auto& c = cfg.color;
  const auto& g = cfg.geometric;
  return {{"color",
           {{"brightness", c.brightness},
            {"contrast_min", c.contrast_min},
            {"contrast_max", c.contrast_max},
            {"saturation_min", c.saturation_min},
            {"saturation_max", c.saturation_max},
            {"hue", c.hue},
            {"probability", c.probability}}},
          {"geometric",
           {{"rotation_deg", g.rotation_deg},
            {"translate_frac", g.translate_frac},
            {"shear", g.shear},
            {"p_rotate", g.p_rotate},
            {"p_translate", g.p_translate},
            {"p_shear", g.p_shear},
            {"p_hflip", g.p_hflip},
            {"p_vflip", g.p_vflip}}}};
}

AugmentationConfig augmentation_from_json(const json& j) {
  AugmentationConfig cfg;
  if (j.contains("color")) {
    const auto& c = j.at("color");
    auto& o = cfg.color;
    o.brightness = c.value("brightness", o.brightness);
    o.contrast_min = c.value("contrast_min", o.contrast_min);
    o.contrast_max = c.value("contrast_max", o.contrast_max);
    o.saturation_min = c.value("saturation_min", o.saturation_min);
    o.saturation_max = c.value("saturation_max", o.saturation_max);
    o.hue = c.value("hue", o.hue);
    o.probability = c.value("probability", o.probability);
  }
  if (j.contains("geometric")) {
    const auto& g = j.at("geometric");
    auto& o = cfg.geometric;
    o.rotation_deg = g.value("rotation_deg", o.rotation_deg);
    o.translate_frac = g.value("translate_frac", o.translate_frac);
    o.shear = g.value("shear", o.shear);
    o.p_rotate = g.value("p_rotate", o.p_rotate);
    o.p_translate = g.value("p_translate", o.p_translate);
    o.p_shear = g.value("p_shear", o.p_shear);
    o.p_hflip = g.value("p_hflip", o.p_hflip);
    o.p_vflip = g.value("p_vflip", o.p_vflip);
  }
  cfg.validate();
  return cfg;
}

json to_json(const DetLossWeights& w) {
  return {{"alpha1", w.alpha1}, {"alpha2", w.alpha2}, {"variant", std::string(to_string(w.variant))}};
}

DetLossWeights det_weights_from_json(const json& j) {
  DetLossWeights w;
  w.variant = parse_variant(j.value("variant", std::string("baseline")));
  // Variant defaults: var1 (1, 1), var2 (1, 0).
  const double a1 = w.variant == Variant::kBaseline ? 0.0 : 1.0;
  const double a2 = w.variant == Variant::kVar1 ? 1.0 : 0.0;
  w.alpha1 = j.value("alpha1", a1);
  w.alpha2 = j.value("alpha2", a2);
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------------------------
// Optimizer settings and schedule

void AdamSettings::validate() const {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ValidationError("Adam epsilon must be positive");
}

torch::optim::AdamOptions AdamSettings::options() const {
  return torch::optim::AdamOptions(lr).betas({beta1, beta2}).eps(eps);
}

json AdamSettings::to_json() const { return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}}; }

AdamSettings AdamSettings::from_json(const json& j) {
  AdamSettings a;
  a.lr = j.value("lr", a.lr);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.eps = j.value("eps", a.eps);
  a.validate();
  return a;
}

PlateauSchedule::PlateauSchedule(double factor, int patience, double threshold, double min_lr)
    : factor_(factor),
      threshold_(threshold),
      min_lr_(min_lr),
      patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw ValidationError("plateau factor must lie in (0, 1)");
  if (patience < 0) throw ValidationError("plateau patience must be non-negative");
}

double PlateauSchedule::step(double metric, double lr) {
  if (metric < best_ * (1.0 - threshold_) || std::isinf(best_)) {
    best_ = metric;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
  }
  if (bad_epochs_ > patience_) {
    bad_epochs_ = 0;
    const double next = std::max(lr * factor_, min_lr_);
    if (next < lr) ++reductions_;
    return next;
  }
  return lr;
}

json PlateauSchedule::state() const {
  return {{"best", std::isinf(best_) ? json(nullptr) : json(best_)},
          {"bad_epochs", bad_epochs_},
          {"reductions", reductions_}};
}

void PlateauSchedule::restore(const json& state) {
  best_ = state.at("best").is_null() ? std::numeric_limits<double>::infinity() : state.at("best").get<double>();
  bad_epochs_ = state.at("bad_epochs").get<int>();
  reductions_ = state.at("reductions").get<int>();
}

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) group.options().set_lr(lr);
}

double learning_rate(const torch::optim::Optimizer& optimizer) {
  return optimizer.param_groups().front().options().get_lr();
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ stream);
}

// ---------------------------------------------------------------------------------------------
// Metric history

json HistoryRecord::to_json() const {
  return {{"stage", stage}, {"fold", fold},     {"epoch", epoch}, {"losses", losses},
          {"metrics", metrics}, {"lr", lr}, {"seed", seed}};
}

HistoryRecord HistoryRecord::from_json(const json& j) {
  HistoryRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.fold = j.at("fold").get<int>();
  r.epoch = j.at("epoch").get<int>();
  r.losses = j.at("losses").get<std::map<std::string, double>>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.lr = j.at("lr").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

void MetricHistory::append(const MetricHistory& other) {
  records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

std::string MetricHistory::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) out += r.to_json().dump() + "\n";
  return out;
}

void MetricHistory::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write metric history " + path);
  f << to_jsonl();
}

MetricHistory MetricHistory::read(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("metric history not found: " + path);
  MetricHistory h;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      h.add(HistoryRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return h;
}

// ---------------------------------------------------------------------------------------------
// Batches

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentationConfig* augment,
                 std::mt19937_64& rng, NormTarget target, std::optional<double> heatmap_sigma) {
  if (indices.empty()) throw ValidationError("empty batch");
  Batch b;
  std::vector<torch::Tensor> images;
  images.reserve(indices.size());
  b.landmarks.reserve(indices.size());
  for (const auto i : indices) {
    const auto& s = data.at(i);
    if (augment) {
      auto a = augment_sample(s.image, s.landmarks, *augment, rng);
      images.push_back(normalize_for(a.image.pixels, target));
      b.landmarks.push_back(std::move(a.landmarks));
    } else {
      images.push_back(normalize_for(s.image.pixels, target));
      b.landmarks.push_back(s.landmarks);
    }
  }
  b.images = torch::stack(images);
  if (heatmap_sigma) {
    std::vector<const LandmarkSet*> ptrs;
    for (const auto& l : b.landmarks) ptrs.push_back(&l);
    b.heatmaps = render_heatmap_batch(ptrs, static_cast<int>(b.images.size(3)), static_cast<int>(b.images.size(2)),
                                      *heatmap_sigma);
  }
  return b;
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// std::shuffle's algorithm is unspecified; a hand-rolled Fisher-Yates keeps runs portable.
void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<torch::Tensor> state_tensors(torch::nn::Module& m) {
  auto out = m.parameters();
  for (auto& b : m.buffers()) out.push_back(b);
  return out;
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (auto& t : state_tensors(m)) out.push_back(t.detach().clone());
  return out;
}

void restore_snapshot(torch::nn::Module& m, const std::vector<torch::Tensor>& snap) {
  torch::NoGradGuard guard;
  auto dst = state_tensors(m);
  if (dst.size() != snap.size()) throw ShapeError("snapshot does not match the module");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].copy_(snap[i]);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string sample_id(const LabeledSample& s, std::size_t index) {
  if (s.image.annotation_path) return fs::path(*s.image.annotation_path).stem().string();
  return s.image.source_id + "#" + std::to_string(index);
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Detector training

void DetectorTrainConfig::validate() const {
  model.validate();
  adam.validate();
  augment.validate();
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ValidationError("plateau factor must lie in (0, 1)");
  if (plateau_patience < 0) throw ValidationError("plateau patience must be non-negative");
  if (!(eval_radius > 0.0)) throw ValidationError("evaluation radius must be positive");
  if (!(eval_threshold > 0.0 && eval_threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
}

json DetectorTrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"adam", adam.to_json()},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"plateau_factor", plateau_factor},
          {"plateau_patience", plateau_patience},
          {"augment", dcg::to_json(augment)},
          {"seed", seed},
          {"eval_radius", eval_radius},
          {"eval_threshold", eval_threshold},
          {"eval_on_refined", eval_on_refined}};
}

DetectorTrainConfig DetectorTrainConfig::from_json(const json& j) {
  DetectorTrainConfig c;
  if (j.contains("model")) c.model = DetectorConfig::from_json(j.at("model"));
  if (j.contains("adam")) c.adam = AdamSettings::from_json(j.at("adam"));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  if (j.contains("augment")) c.augment = augmentation_from_json(j.at("augment"));
  c.seed = j.value("seed", c.seed);
  c.eval_radius = j.value("eval_radius", c.eval_radius);
  c.eval_threshold = j.value("eval_threshold", c.eval_threshold);
  c.eval_on_refined = j.value("eval_on_refined", c.eval_on_refined);
  c.validate();
  return c;
}

DetectorEvaluation evaluate_detector(const DetectorModel& model, const Dataset& data, double radius,
                                     double threshold, bool on_refined, int batch_size, torch::Device device) {
  DetectorEvaluation ev;
  if (data.empty()) return ev;
  auto net = model.net();
  const bool was_training = net->is_training();
  net->eval();
  torch::NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  const auto& mc = model.config();
  double loss_sum = 0.0;
  const auto all = iota_indices(data.size());
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - start);
    const std::span<const std::size_t> idx(all.data() + start, n);
    auto b = make_batch(data, idx, nullptr, unused, NormTarget::kDetector, mc.heatmap_sigma);
    const auto out = model.predict(b.images.to(device));
    loss_sum += detection_loss(out, b.heatmaps.to(device), mc.loss_smoothing, mc.mse_reduction).item<double>() *
                static_cast<double>(n);
    const auto maps = (on_refined ? out.refined_map : out.sigmoid_map).to(torch::kCPU);
    for (std::size_t k = 0; k < n; ++k) {
      const auto pred = extract_points(maps[static_cast<int64_t>(k)][0], threshold);
      auto m = match_points(pred, data[start + k].landmarks, radius);
      ev.counts += m;
      ev.images.push_back({sample_id(data[start + k], start + k), data[start + k].image.fold_id, std::move(m)});
    }
  }
  if (was_training && !model.is_frozen()) net->train();
  ev.loss = loss_sum / static_cast<double>(data.size());
  ev.metrics = compute_metrics(ev.counts);
  return ev;
}

DetectorTrainResult train_detector_on(const Dataset& train, const Dataset* val, const DetectorTrainConfig& cfg,
                                      int fold, Stage stage, const std::string& resume_from) {
  cfg.validate();
  if (train.empty()) throw ConfigError("fold " + std::to_string(fold) + " has no training images");
  if (val && val->empty()) throw ConfigError("fold " + std::to_string(fold) + " has no validation images");

  const std::string stage_name(to_string(stage));
  const std::uint64_t run_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(fold), 0xde7ec7);
  DetectorTrainResult res;
  res.model = build_detector(cfg.model, run_seed);
  auto net = res.model.net();
  net->to(cfg.device);
  torch::optim::Adam opt(net->parameters(), cfg.adam.options());
  PlateauSchedule schedule(cfg.plateau_factor, cfg.plateau_patience);
  std::vector<torch::Tensor> best;
  int start_epoch = 0;
  res.best_val_loss = std::numeric_limits<double>::infinity();

  const std::string prefix =
      cfg.checkpoint_dir.empty() ? "" : cfg.checkpoint_dir + "/" + stage_name + "_fold" + std::to_string(fold);
  const json provenance = {{"train", cfg.to_json()}, {"fold", fold}, {"stage", stage_name}};

  if (!resume_from.empty()) {
    CheckpointReader r(resume_from);
    if (r.kind() != "detector-run") throw ConfigError(resume_from + " is not a detector training checkpoint");
    r.load_module("net", *net);
    r.load_optimizer("adam", opt);
    schedule.restore(r.state().at("plateau"));
    start_epoch = r.state().at("epoch").get<int>();
    res.best_epoch = r.state().at("best_epoch").get<int>();
    if (!r.state().at("best_val_loss").is_null()) res.best_val_loss = r.state().at("best_val_loss").get<double>();
    for (const auto& rec : r.state().at("history")) res.history.add(HistoryRecord::from_json(rec));
    for (std::size_t i = 0;; ++i) {
      auto t = r.tensor("best." + std::to_string(i));
      if (!t.defined()) break;
      best.push_back(t);
    }
  }

  const auto& mc = cfg.model;
  auto order = iota_indices(train.size());
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    torch::manual_seed(derive_seed(run_seed, static_cast<std::uint64_t>(epoch), 0));
    std::mt19937_64 rng(derive_seed(run_seed, static_cast<std::uint64_t>(epoch), 1));
    std::iota(order.begin(), order.end(), 0);
    shuffle_indices(order, rng);

    net->train();
    const double lr = learning_rate(opt);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      auto b = make_batch(train, std::span<const std::size_t>(order.data() + start, n), &cfg.augment, rng,
                          NormTarget::kDetector, mc.heatmap_sigma);
      const auto out = res.model.predict(b.images.to(cfg.device));
      auto loss = detection_loss(out, b.heatmaps.to(cfg.device), mc.loss_smoothing, mc.mse_reduction);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>() * static_cast<double>(n);
    }
    const double train_loss = loss_sum / static_cast<double>(train.size());

    HistoryRecord rec{stage_name, fold, epoch, {{"train", train_loss}}, {}, lr, cfg.seed};
    double monitor = train_loss;
    bool improved = false;
    if (val) {
      const auto ev = evaluate_detector(res.model, *val, cfg.eval_radius, cfg.eval_threshold, cfg.eval_on_refined,
                                        cfg.batch_size, cfg.device);
      monitor = ev.loss;
      rec.losses["val"] = ev.loss;
      rec.metrics = {{"val_ppv", ev.metrics.ppv}, {"val_tpr", ev.metrics.tpr}, {"val_f1", ev.metrics.f1}};
      if (ev.loss < res.best_val_loss) {
        res.best_val_loss = ev.loss;
        res.best_epoch = epoch;
        best = snapshot(*net);
        improved = true;
      }
    } else {
      res.best_epoch = epoch;
    }
    set_learning_rate(opt, schedule.step(monitor, lr));
    res.history.add(std::move(rec));

    if (!prefix.empty()) {
      ensure_dir(cfg.checkpoint_dir);
      CheckpointWriter w;
      w.kind = "detector-run";
      w.config = provenance;
      json hist = json::array();
      for (const auto& h : res.history.records()) hist.push_back(h.to_json());
      w.state = {{"epoch", epoch + 1},
                 {"best_epoch", res.best_epoch},
                 {"best_val_loss", std::isinf(res.best_val_loss) ? json(nullptr) : json(res.best_val_loss)},
                 {"plateau", schedule.state()},
                 {"history", hist}};
      w.modules = {{"net", net.get()}};
      w.optimizers = {{"adam", &opt}};
      for (std::size_t i = 0; i < best.size(); ++i) w.tensors["best." + std::to_string(i)] = best[i];
      w.save(prefix + "_last.pt");
      if (improved) save_detector(prefix + "_best.pt", res.model, provenance);
    }
  }

  if (val && !best.empty()) restore_snapshot(*net, best);
  if (!val) res.best_val_loss = 0.0;
  if (!prefix.empty()) {
    save_detector(prefix + "_best.pt", res.model, provenance);
    res.history.write(prefix + "_history.jsonl");
  }
  return res;
}

std::vector<DetectorTrainResult> train_detector(const Dataset& data, const FoldSplit& split,
                                                const DetectorTrainConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& s : data) ids.push_back(s.image.source_id);
  audit_split(split, ids);
  std::vector<DetectorTrainResult> out;
  for (int f = 0; f < split.k; ++f) {
    if (split.train[f].empty() || split.val[f].empty()) throw ConfigError("fold " + std::to_string(f) + " is empty");
    Dataset tr, va;
    for (auto i : split.train[f]) tr.push_back(data.at(i));
    for (auto i : split.val[f]) va.push_back(data.at(i));
    out.push_back(train_detector_on(tr, &va, cfg, f));
  }
  return out;
}

void save_detector(const std::string& path, const DetectorModel& model, const json& provenance) {
  CheckpointWriter w;
  w.kind = "detector";
  w.config = {{"detector", model.config().to_json()}, {"provenance", provenance}};
  w.state = json::object();
  w.modules = {{"net", model.net().get()}};
  w.save(path);
}

DetectorModel load_detector(const std::string& path) {
  CheckpointReader r(path);
  if (r.kind() != "detector") throw ConfigError(path + " holds a '" + r.kind() + "' checkpoint, not a detector");
  const auto cfg = DetectorConfig::from_json(r.config().at("detector"));
  DetectorModel model(cfg, UNet(cfg));
  r.load_module("net", *model.net());
  model.freeze();
  return model;
}

// ---------------------------------------------------------------------------------------------
// GAN training

bool GanTrainConfig::needs_detectors() const {
  return det_weights.alpha1 > 0.0 || det_weights.alpha2 > 0.0 || ablation.cross_domain_weight > 0.0 ||
         ablation.semantic_weight > 0.0;
}

void GanTrainConfig::validate() const {
  model.validate();
  weights.validate();
  det_weights.validate();
  adam.validate();
  augment.validate();
  if (ablation.cross_domain_weight < 0.0 || ablation.semantic_weight < 0.0)
    throw ValidationError("ablation weights must be non-negative");
  if (!(detection.smoothing > 0.0)) throw ValidationError("detection loss smoothing must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (!(heatmap_sigma > 0.0)) throw ValidationError("heatmap sigma must be positive");
}

json GanTrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"weights", {{"lambda_cycle", weights.lambda_cycle}, {"lambda_identity", weights.lambda_identity}}},
          {"det_weights", dcg::to_json(det_weights)},
          {"ablation",
           {{"cross_domain_weight", ablation.cross_domain_weight}, {"semantic_weight", ablation.semantic_weight}}},
          {"detection",
           {{"smoothing", detection.smoothing},
            {"mse_reduction", detection.reduction == MseReduction::kMean ? "mean" : "sum"}}},
          {"adam", adam.to_json()},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"augment", dcg::to_json(augment)},
          {"replay_capacity", replay_capacity},
          {"heatmap_sigma", heatmap_sigma},
          {"seed", seed}};
}

GanTrainConfig GanTrainConfig::from_json(const json& j) {
  GanTrainConfig c;
  if (j.contains("model")) c.model = GanConfig::from_json(j.at("model"));
  if (j.contains("weights")) {
    c.weights.lambda_cycle = j.at("weights").value("lambda_cycle", c.weights.lambda_cycle);
    c.weights.lambda_identity = j.at("weights").value("lambda_identity", c.weights.lambda_identity);
  }
  if (j.contains("det_weights")) c.det_weights = det_weights_from_json(j.at("det_weights"));
  if (j.contains("ablation")) {
    c.ablation.cross_domain_weight = j.at("ablation").value("cross_domain_weight", 0.0);
    c.ablation.semantic_weight = j.at("ablation").value("semantic_weight", 0.0);
  }
  if (j.contains("detection")) {
    c.detection.smoothing = j.at("detection").value("smoothing", c.detection.smoothing);
    const auto red = j.at("detection").value("mse_reduction", std::string("mean"));
    if (red != "mean" && red != "sum") throw ConfigError("mse_reduction must be 'mean' or 'sum'");
    c.detection.reduction = red == "mean" ? MseReduction::kMean : MseReduction::kSum;
  }
  if (j.contains("adam")) c.adam = AdamSettings::from_json(j.at("adam"));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("augment")) c.augment = augmentation_from_json(j.at("augment"));
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.heatmap_sigma = j.value("heatmap_sigma", c.heatmap_sigma);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

GanTrainer::GanTrainer(GanTrainConfig cfg, const DetectorModel* det_sim, const DetectorModel* det_or)
    : cfg_(std::move(cfg)),
      det_sim_(det_sim),
      det_or_(det_or),
      pool_sim_(cfg_.replay_capacity, 0.5, 0),
      pool_or_(cfg_.replay_capacity, 0.5, 0) {
  cfg_.validate();
  if (cfg_.needs_detectors() && (!det_sim_ || !det_or_))
    throw ConfigError("variant " + std::string(to_string(cfg_.det_weights.variant)) +
                      " needs pre-trained detectors for both domains");
  if ((det_sim_ == nullptr) != (det_or_ == nullptr)) throw ConfigError("give both detectors or neither");
  if (det_sim_) {
    if (!det_sim_->is_frozen() || !det_or_->is_frozen())
      throw ContractError("detectors must be frozen before GAN training");
    det_sim_checksum_ = det_sim_->checksum();
    det_or_checksum_ = det_or_->checksum();
  }
  models_ = build_gan_models(cfg_.model, cfg_.seed);
  for (auto* m : std::initializer_list<torch::nn::Module*>{models_.g_sim2or.get(), models_.g_or2sim.get(),
                                                          models_.d_sim.get(), models_.d_or.get()})
    m->to(cfg_.device);
  opt_g_ = std::make_unique<torch::optim::Adam>(models_.generator_parameters(), cfg_.adam.options());
  opt_d_sim_ = std::make_unique<torch::optim::Adam>(models_.d_sim->parameters(), cfg_.adam.options());
  opt_d_or_ = std::make_unique<torch::optim::Adam>(models_.d_or->parameters(), cfg_.adam.options());
}

void GanTrainer::begin_epoch(int epoch) {
  const auto e = static_cast<std::uint64_t>(epoch);
  torch::manual_seed(derive_seed(cfg_.seed, e, 0));
  rng_.seed(derive_seed(cfg_.seed, e, 1));
  pool_sim_.reseed(derive_seed(cfg_.seed, e, 2));
  pool_or_.reseed(derive_seed(cfg_.seed, e, 3));
}

LossMap GanTrainer::step(const torch::Tensor& x_sim, const torch::Tensor& x_or, const torch::Tensor& y_sim,
                         const torch::Tensor& y_or) {
  const auto form = cfg_.model.adversarial_form;
  const auto maps = maps_of(models_);
  LossMap out;
  CycleGanTerms gan;
  torch::Tensor total;
  if (det_sim_) {
    DetObjectiveOptions opt;
    opt.detection = cfg_.detection;
    opt.ablation = cfg_.ablation;
    opt.with_discriminator_losses = false;
    auto t = detcyclegan_objective(x_sim, x_or, maps, *det_sim_, *det_or_, y_sim, y_or, cfg_.weights, form,
                                   cfg_.det_weights, opt);
    if (t.det_fake_evaluated) out["det_fake"] = t.det_fake.item<double>();
    if (t.det_recovered_evaluated) out["det_recovered"] = t.det_recovered.item<double>();
    if (t.cross_domain.defined()) out["cross_domain"] = t.cross_domain.item<double>();
    if (t.semantic.defined()) out["semantic"] = t.semantic.item<double>();
    gan = std::move(t.gan);
    total = t.total;
  } else {
    gan = cyclegan_objective(x_sim, x_or, maps, cfg_.weights, form, false);
    total = gan.generator_loss;
  }
  opt_g_->zero_grad();
  total.backward();
  opt_g_->step();

  // Discriminators see replayed fakes; the 1/2 factor slows them relative to the generators.
  const auto replay_or = pool_or_.query(gan.fake_or.detach());
  const auto d_or = adversarial_terms(models_.d_or->forward(x_or), models_.d_or->forward(replay_or), form);
  const auto loss_d_or = 0.5 * d_or.loss_d;
  opt_d_or_->zero_grad();
  loss_d_or.backward();
  opt_d_or_->step();

  const auto replay_sim = pool_sim_.query(gan.fake_sim.detach());
  const auto d_sim = adversarial_terms(models_.d_sim->forward(x_sim), models_.d_sim->forward(replay_sim), form);
  const auto loss_d_sim = 0.5 * d_sim.loss_d;
  opt_d_sim_->zero_grad();
  loss_d_sim.backward();
  opt_d_sim_->step();

  out["g_total"] = total.item<double>();
  out["adv_sim2or"] = gan.adv_g_sim2or.item<double>();
  out["adv_or2sim"] = gan.adv_g_or2sim.item<double>();
  out["cycle"] = gan.cycle.item<double>();
  out["identity"] = gan.identity.item<double>();
  out["d_or"] = loss_d_or.item<double>();
  out["d_sim"] = loss_d_sim.item<double>();
  return out;
}

LossMap GanTrainer::train_epoch(const Dataset& sim, const Dataset& or_data) {
  if (sim.empty() || or_data.empty()) throw ConfigError("GAN training needs images from both domains");
  for (const auto& s : sim)
    if (s.image.domain != Domain::kSim) throw ValidationError("sim training set holds a non-sim image");
  for (const auto& s : or_data)
    if (s.image.domain != Domain::kOr) throw ValidationError("or training set holds a non-or image");

  begin_epoch(epochs_done_);
  auto perm_sim = iota_indices(sim.size());
  auto perm_or = iota_indices(or_data.size());
  shuffle_indices(perm_sim, rng_);
  shuffle_indices(perm_or, rng_);

  const bool labels = det_sim_ != nullptr;
  const std::optional<double> sigma = labels ? std::optional<double>(cfg_.heatmap_sigma) : std::nullopt;
  const std::size_t n = std::max(sim.size(), or_data.size());
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  LossMap sums;
  std::size_t steps = 0;
  std::vector<std::size_t> is, io;
  for (std::size_t start = 0; start < n; start += bs) {
    is.clear();
    io.clear();
    for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
      is.push_back(perm_sim[i % sim.size()]);
      io.push_back(perm_or[i % or_data.size()]);
    }
    auto bsim = make_batch(sim, is, &cfg_.augment, rng_, NormTarget::kGan, sigma);
    auto bor = make_batch(or_data, io, &cfg_.augment, rng_, NormTarget::kGan, sigma);
    const auto dev = cfg_.device;
    const auto losses = step(bsim.images.to(dev), bor.images.to(dev),
                             labels ? bsim.heatmaps.to(dev) : torch::Tensor(),
                             labels ? bor.heatmaps.to(dev) : torch::Tensor());
    for (const auto& [k, v] : losses) sums[k] += v;
    ++steps;
  }
  for (auto& [k, v] : sums) v /= static_cast<double>(steps);

  if (det_sim_ && (det_sim_->checksum() != det_sim_checksum_ || det_or_->checksum() != det_or_checksum_))
    throw ContractError("a frozen detector changed during GAN training (epoch " + std::to_string(epochs_done_) + ")");
  ++epochs_done_;
  return sums;
}

void GanTrainer::save(const std::string& path, const json& provenance) const {
  CheckpointWriter w;
  w.kind = "gan";
  w.config = {{"gan", cfg_.to_json()}, {"provenance", provenance}};
  w.state = {{"epochs_done", epochs_done_}, {"seed", cfg_.seed}, {"lr", learning_rate(*opt_g_)}};
  w.modules = {{"g_sim2or", models_.g_sim2or.get()},
               {"g_or2sim", models_.g_or2sim.get()},
               {"d_sim", models_.d_sim.get()},
               {"d_or", models_.d_or.get()}};
  w.optimizers = {{"g", opt_g_.get()}, {"d_sim", opt_d_sim_.get()}, {"d_or", opt_d_or_.get()}};
  w.tensors = {{"pool_sim", pool_sim_.contents()}, {"pool_or", pool_or_.contents()}};
  w.save(path);
}

void GanTrainer::load(const std::string& path) {
  CheckpointReader r(path);
  if (r.kind() != "gan") throw ConfigError(path + " holds a '" + r.kind() + "' checkpoint, not a GAN");
  const auto stored = GanTrainConfig::from_json(r.config().at("gan"));
  if (stored.model.to_json() != cfg_.model.to_json())
    throw ConfigError(path + ": network configuration differs from the current run");
  r.load_module("g_sim2or", *models_.g_sim2or);
  r.load_module("g_or2sim", *models_.g_or2sim);
  r.load_module("d_sim", *models_.d_sim);
  r.load_module("d_or", *models_.d_or);
  r.load_optimizer("g", *opt_g_);
  r.load_optimizer("d_sim", *opt_d_sim_);
  r.load_optimizer("d_or", *opt_d_or_);
  pool_sim_.restore(r.tensor("pool_sim").to(cfg_.device));
  pool_or_.restore(r.tensor("pool_or").to(cfg_.device));
  epochs_done_ = r.state().at("epochs_done").get<int>();
}

GanTrainResult train_gan(const Dataset& sim, const Dataset& or_data, const GanTrainConfig& cfg,
                         const DetectorModel* det_sim, const DetectorModel* det_or, int fold,
                         const std::string& resume_from) {
  GanTrainer trainer(cfg, det_sim, det_or);
  GanTrainResult res;
  const std::string prefix =
      cfg.checkpoint_dir.empty() ? "" : cfg.checkpoint_dir + "/gan_fold" + std::to_string(fold);
  if (!resume_from.empty()) {
    trainer.load(resume_from);
    if (!prefix.empty() && fs::exists(prefix + "_history.jsonl")) {
      const auto previous = MetricHistory::read(prefix + "_history.jsonl");
      for (const auto& r : previous.records())
        if (r.epoch < trainer.epochs_done()) res.history.add(r);
    }
  }
  const json provenance = {{"fold", fold}};
  while (trainer.epochs_done() < cfg.epochs) {
    const int epoch = trainer.epochs_done();
    const double lr = learning_rate(trainer.generator_optimizer());
    auto losses = trainer.train_epoch(sim, or_data);
    res.history.add({"gan", fold, epoch, std::move(losses), {}, lr, cfg.seed});
    if (!prefix.empty()) {
      ensure_dir(cfg.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof name, "_epoch%03d.pt", epoch + 1);
      trainer.save(prefix + name, provenance);
      trainer.save(prefix + "_last.pt", provenance);
      res.history.write(prefix + "_history.jsonl");
    }
  }
  res.models = trainer.models();
  return res;
}

Generator load_generator(const std::string& path, Domain source) {
  CheckpointReader r(path);
  if (r.kind() != "gan") throw ConfigError(path + " holds a '" + r.kind() + "' checkpoint, not a GAN");
  const auto cfg = GanConfig::from_json(r.config().at("gan").at("model"));
  Generator g(cfg);
  r.load_module(source == Domain::kSim ? "g_sim2or" : "g_or2sim", *g);
  g->eval();
  return g;
}

// ---------------------------------------------------------------------------------------------
// Translation and fusion

Dataset translate_dataset(const Generator& generator, Domain source, const Dataset& samples, int batch_size,
                          torch::Device device) {
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].image.domain != source)
      throw ValidationError("sample " + std::to_string(i) + " is from domain '" +
                            std::string(to_string(samples[i].image.domain)) + "', generator translates '" +
                            std::string(to_string(source)) + "'");
  }
  Generator g = generator;
  g->eval();
  torch::NoGradGuard no_grad;
  Dataset out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), samples.size() - start);
    std::vector<torch::Tensor> xs;
    for (std::size_t k = 0; k < n; ++k) xs.push_back(normalize_for(samples[start + k].image, NormTarget::kGan));
    const auto y = gan_to_unit(g->forward(torch::stack(xs).to(device))).clamp(0.0, 1.0).to(torch::kCPU);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& src = samples[start + k];
      LabeledSample fake;
      fake.image.pixels = y[static_cast<int64_t>(k)].contiguous();
      fake.image.domain = other(source);
      fake.image.fold_id = src.image.fold_id;
      fake.image.source_id = src.image.source_id;
      fake.landmarks = src.landmarks;
      out.push_back(std::move(fake));
    }
  }
  return out;
}

std::uint64_t pixel_hash(const ImageSample& image) {
  const auto t = image.pixels.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto s : t.sizes()) mix(reinterpret_cast<const unsigned char*>(&s), sizeof s);
  mix(static_cast<const unsigned char*>(t.data_ptr()), static_cast<std::size_t>(t.numel()) * sizeof(float));
  return h;
}

void check_disjoint(const Dataset& train, const Dataset& test) {
  std::unordered_map<std::uint64_t, std::size_t> hashes;
  std::set<std::string> groups;
  for (std::size_t i = 0; i < test.size(); ++i) {
    hashes.emplace(pixel_hash(test[i].image), i);
    if (!test[i].image.source_id.empty()) groups.insert(test[i].image.source_id);
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto it = hashes.find(pixel_hash(train[i].image));
    if (it != hashes.end() && torch::equal(train[i].image.pixels, test[it->second].image.pixels))
      throw LeakageError("training image " + std::to_string(i) + " is test image " + std::to_string(it->second));
    if (groups.count(train[i].image.source_id))
      throw LeakageError("training image " + std::to_string(i) + " comes from test source group '" +
                         train[i].image.source_id + "'");
  }
}

FusionResult fuse_retrain(const Dataset& real, const Dataset& fake, const Dataset& test,
                          const DetectorTrainConfig& cfg, int fold) {
  Dataset fused;
  fused.reserve(real.size() + fake.size());
  fused.insert(fused.end(), real.begin(), real.end());
  fused.insert(fused.end(), fake.begin(), fake.end());
  if (fused.empty()) throw ConfigError("fused training set is empty");
  if (test.empty()) throw ConfigError("fusion needs a held-out test set");
  check_disjoint(fused, test);

  FusionResult res;
  res.fused_size = fused.size();
  res.training = train_detector_on(fused, nullptr, cfg, fold, Stage::kFusion);
  res.test = evaluate_detector(res.training.model, test, cfg.eval_radius, cfg.eval_threshold, cfg.eval_on_refined,
                               cfg.batch_size, cfg.device);
  return res;
}

}  // namespace dcg
