#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcg/augment.hpp"
#include "dcg/detcyclegan.hpp"
#include "dcg/detector.hpp"
#include "dcg/eval.hpp"
#include "dcg/folds.hpp"
#include "dcg/translation.hpp"
#include "dcg/types.hpp"
#include "json.hpp"

namespace dcg {

enum class Stage { kDetector, kGan, kFusion };
std::string_view to_string(Stage s);

nlohmann::json to_json(const AugmentationConfig& cfg);
AugmentationConfig augmentation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DetLossWeights& w);
DetLossWeights det_weights_from_json(const nlohmann::json& j);

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  torch::optim::AdamOptions options() const;
  nlohmann::json to_json() const;
  static AdamSettings from_json(const nlohmann::json& j);
};

/// Reduce-on-plateau for a minimized metric. An epoch is an improvement when the metric drops
/// below best * (1 - threshold); after more than `patience` epochs without one, the rate is
/// multiplied by `factor` and the counter restarts.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(double factor = 0.1, int patience = 10, double threshold = 1e-4, double min_lr = 0.0);

  /// Feeds one epoch's metric and returns the learning rate to use from now on.
  double step(double metric, double lr);

  int reductions() const { return reductions_; }
  int bad_epochs() const { return bad_epochs_; }
  double best() const { return best_; }

  nlohmann::json state() const;
  void restore(const nlohmann::json& state);

 private:
  double factor_, threshold_, min_lr_;
  int patience_;
  double best_;
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr);
double learning_rate(const torch::optim::Optimizer& optimizer);

/// Mixes a run seed with an epoch and a stream index (splitmix64). Every epoch reseeds all its
/// random sources from this, which is what makes resumed runs line up with uninterrupted ones.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream);

struct HistoryRecord {
  std::string stage;
  int fold = 0;
  int epoch = 0;
  std::map<std::string, double> losses;
  std::map<std::string, double> metrics;
  double lr = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static HistoryRecord from_json(const nlohmann::json& j);
};

/// One JSON object per line, one line per epoch.
class MetricHistory {
 public:
  void add(HistoryRecord record) { records_.push_back(std::move(record)); }
  const std::vector<HistoryRecord>& records() const { return records_; }
  void append(const MetricHistory& other);

  std::string to_jsonl() const;
  void write(const std::string& path) const;
  static MetricHistory read(const std::string& path);

 private:
  std::vector<HistoryRecord> records_;
};

/// A batch ready for a network: images in the requested range and optional target heatmaps.
struct Batch {
  torch::Tensor images;    ///< [B, 3, H, W]
  torch::Tensor heatmaps;  ///< [B, 1, H, W], undefined unless requested
  std::vector<LandmarkSet> landmarks;
};

/// Stacks `indices` of `data`, augmenting each sample when `augment` is given.
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentationConfig* augment,
                 std::mt19937_64& rng, NormTarget target, std::optional<double> heatmap_sigma);

// ---------------------------------------------------------------------------------------------
// Detector training

struct DetectorTrainConfig {
  DetectorConfig model;
  AdamSettings adam{};
  int batch_size = 32;
  int epochs = 40;
  double plateau_factor = 0.1;
  int plateau_patience = 10;
  AugmentationConfig augment{};
  std::uint64_t seed = 0;
  double eval_radius = kMatchRadius;
  double eval_threshold = kExtractThreshold;
  bool eval_on_refined = false;  ///< extract points from the refined map instead of the sigmoid map
  std::string checkpoint_dir;    ///< empty: keep everything in memory
  torch::Device device = torch::kCPU;

  void validate() const;
  nlohmann::json to_json() const;
  static DetectorTrainConfig from_json(const nlohmann::json& j);
};

struct DetectorEvaluation {
  double loss = 0.0;
  Counts counts;
  Metrics metrics;
  std::vector<ImageEvaluation> images;
};

/// Loss and point metrics of `model` on `data` (no augmentation, eval mode).
DetectorEvaluation evaluate_detector(const DetectorModel& model, const Dataset& data, double radius,
                                     double threshold, bool on_refined = false, int batch_size = 16,
                                     torch::Device device = torch::kCPU);

struct DetectorTrainResult {
  DetectorModel model;  ///< best-by-validation weights, or the final weights without a validation set
  int best_epoch = -1;
  double best_val_loss = 0.0;
  MetricHistory history;
};

/// Trains a fresh detector on `train`. With `val` the plateau schedule follows the validation
/// loss and the best epoch is kept; without it the schedule follows the training loss and the
/// final epoch is kept. `resume_from` continues a run from its last checkpoint.
DetectorTrainResult train_detector_on(const Dataset& train, const Dataset* val, const DetectorTrainConfig& cfg,
                                      int fold, Stage stage = Stage::kDetector,
                                      const std::string& resume_from = {});

/// One detector per fold of `split` (validation = held-out fold). Throws ConfigError on an
/// empty fold and LeakageError if the split fails its audit.
std::vector<DetectorTrainResult> train_detector(const Dataset& data, const FoldSplit& split,
                                                const DetectorTrainConfig& cfg);

void save_detector(const std::string& path, const DetectorModel& model, const nlohmann::json& provenance = {});
/// Rebuilds the network from the stored configuration. Throws MissingArtifactError if absent.
DetectorModel load_detector(const std::string& path);

// ---------------------------------------------------------------------------------------------
// Translation network training

struct GanTrainConfig {
  GanConfig model;
  GanLossWeights weights;
  DetLossWeights det_weights;
  AblationOptions ablation;
  DetectionLossOptions detection;
  AdamSettings adam{2e-4};
  int batch_size = 8;
  int epochs = 60;
  AugmentationConfig augment = AugmentationConfig::gan_default();
  std::size_t replay_capacity = 50;
  double heatmap_sigma = 2.0;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  torch::Device device = torch::kCPU;

  bool needs_detectors() const;
  void validate() const;
  nlohmann::json to_json() const;
  static GanTrainConfig from_json(const nlohmann::json& j);
};

/// Averages of one training step's losses, keyed by name.
using LossMap = std::map<std::string, double>;

/// Alternating CycleGAN / DetCycleGAN optimisation: one Adam over both generators, one per
/// discriminator, replayed fakes for the discriminators, frozen detectors in the generator loss.
class GanTrainer {
 public:
  /// Detectors may be null when the configuration needs none; otherwise ConfigError. Detectors
  /// that are not frozen raise ContractError.
  GanTrainer(GanTrainConfig cfg, const DetectorModel* det_sim, const DetectorModel* det_or);

  /// Reseeds torch, the shuffling/augmentation stream and the replay buffers for `epoch`.
  void begin_epoch(int epoch);

  /// One generator update followed by one update per discriminator. Images in [-1, 1].
  LossMap step(const torch::Tensor& x_sim, const torch::Tensor& x_or, const torch::Tensor& y_sim,
               const torch::Tensor& y_or);

  /// Runs the next epoch over unpaired data and returns the epoch-mean losses. Throws
  /// ContractError if a detector checksum changed.
  LossMap train_epoch(const Dataset& sim, const Dataset& or_data);

  int epochs_done() const { return epochs_done_; }
  GanModels& models() { return models_; }
  const GanModels& models() const { return models_; }
  const GanTrainConfig& config() const { return cfg_; }
  torch::optim::Adam& generator_optimizer() { return *opt_g_; }

  void save(const std::string& path, const nlohmann::json& provenance = {}) const;
  /// Restores networks, optimizers, replay buffers and the epoch counter.
  void load(const std::string& path);

 private:
  GanTrainConfig cfg_;
  GanModels models_;
  const DetectorModel* det_sim_;
  const DetectorModel* det_or_;
  std::uint64_t det_sim_checksum_ = 0;
  std::uint64_t det_or_checksum_ = 0;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_sim_, opt_d_or_;
  ReplayBuffer pool_sim_, pool_or_;
  std::mt19937_64 rng_;
  int epochs_done_ = 0;
};

struct GanTrainResult {
  GanModels models;
  MetricHistory history;
};

/// Trains on the given unpaired sets for the configured number of epochs, resuming from
/// `resume_from` if given. `fold` only names the checkpoint and history files.
GanTrainResult train_gan(const Dataset& sim, const Dataset& or_data, const GanTrainConfig& cfg,
                         const DetectorModel* det_sim, const DetectorModel* det_or, int fold = 0,
                         const std::string& resume_from = {});

/// The generator for `source -> other(source)` from a GAN checkpoint.
Generator load_generator(const std::string& path, Domain source);

// ---------------------------------------------------------------------------------------------
// Translation and fusion

/// Translates every sample with `generator` (which maps `source` to the other domain). Outputs
/// keep their labels, fold and source group; pixels are mapped back to [0, 1]. Throws
/// ValidationError when a sample is not from `source`.
Dataset translate_dataset(const Generator& generator, Domain source, const Dataset& samples, int batch_size = 8,
                          torch::Device device = torch::kCPU);

/// FNV-1a of an image's pixel bytes.
std::uint64_t pixel_hash(const ImageSample& image);

/// Throws LeakageError if a test image (by pixel content or source group) is present in `train`.
void check_disjoint(const Dataset& train, const Dataset& test);

struct FusionResult {
  DetectorTrainResult training;
  DetectorEvaluation test;
  std::size_t fused_size = 0;
};

/// Trains a fresh detector on real + fake and evaluates it on `test`.
FusionResult fuse_retrain(const Dataset& real, const Dataset& fake, const Dataset& test,
                          const DetectorTrainConfig& cfg, int fold = 0);

}  // namespace dcg
