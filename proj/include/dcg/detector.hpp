#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace dcg {

/// How the squared-error part of the detection loss is reduced over pixels.
enum class MseReduction { kMean, kSum };

struct DetectorConfig {
  int in_channels = 3;
  int levels = 4;  ///< downsampling (and upsampling) blocks
  int base_channels = 64;
  double dropout_outer = 0.3;
  double dropout_bottleneck = 0.5;
  int gaussian_kernel = 3;
  double gaussian_sigma = 1.0;
  int softargmax_window = 3;
  double softargmax_temperature = 1.0;
  double loss_smoothing = 1.0;
  double heatmap_sigma = 2.0;
  MseReduction mse_reduction = MseReduction::kMean;

  /// Throws ValidationError: kernels must be odd, dropout in [0, 1], smoothing and temperature > 0.
  void validate() const;
  /// Dropout after the block at `level` (0 = outermost, `levels` = bottleneck), stepped linearly.
  double dropout_at(int level) const;

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

/// Convolution -> ReLU -> BatchNorm, twice.
struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(int in, int out);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(ConvBlock);

/// U-Net with bilinear upsampling and a 1x1 convolution + sigmoid head.
struct UNetImpl : torch::nn::Module {
  explicit UNetImpl(const DetectorConfig& cfg);
  /// Returns the sigmoid map, [B, 1, H, W].
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::ModuleList down{nullptr};
  ConvBlock bottleneck{nullptr};
  torch::nn::ModuleList up{nullptr};
  torch::nn::Conv2d head{nullptr};
  std::vector<torch::nn::Dropout> down_drop, up_drop;
  torch::nn::Dropout bottleneck_drop{nullptr};
  int levels;
};
TORCH_MODULE(UNet);

struct DetectorOutput {
  torch::Tensor sigmoid_map;  ///< [B, 1, H, W]
  torch::Tensor refined_map;  ///< soft_argmax_layer(gaussian_filter(sigmoid_map))
};

/// A landmark detector: network plus configuration. Copies share the underlying network.
class DetectorModel {
 public:
  DetectorModel() = default;
  DetectorModel(DetectorConfig cfg, UNet net) : config_(std::move(cfg)), net_(std::move(net)) {}

  const DetectorConfig& config() const { return config_; }
  UNet& net() { return net_; }
  const UNet& net() const { return net_; }

  bool trainable() const { return trainable_; }
  bool is_frozen() const { return !trainable_; }
  /// Eval mode and no parameter gradients. Frozen detectors never change.
  void freeze();
  void unfreeze();

  /// Forward pass on detector-normalized input in [0, 1], [B, 3, H, W].
  DetectorOutput predict(const torch::Tensor& image) const;

  /// FNV-1a over every parameter and buffer, in registration order.
  std::uint64_t checksum() const;
  std::int64_t parameter_count() const;

 private:
  DetectorConfig config_;
  mutable UNet net_{nullptr};  // forward() is non-const in libtorch
  bool trainable_ = true;
};

/// Seeds the global torch generator with `seed`, then initializes a fresh network.
DetectorModel build_detector(const DetectorConfig& config, std::uint64_t seed);

/// Same as model.predict(image); throws ShapeError when H or W is not divisible by 2^levels.
DetectorOutput detector_forward(const DetectorModel& model, const torch::Tensor& image);

/// Depthwise convolution with a normalized Gaussian kernel and reflect padding.
/// Accepts [H, W], [C, H, W] or [B, C, H, W].
torch::Tensor gaussian_filter(const torch::Tensor& map, int kernel = 3, double sigma = 1.0);
/// The normalized 1-D Gaussian weights used by gaussian_filter.
torch::Tensor gaussian_kernel1d(int kernel, double sigma, torch::Dtype dtype = torch::kFloat64);

/// Local-window soft-argmax re-weighting:
///   out(p) = x(p) * exp((x(p) - max_{q in W(p)} x(q)) / T)
/// The factor is the window softmax at p divided by the window's largest softmax weight, so
/// local maxima keep their value and everything else in the window is damped, more strongly
/// as T -> 0. Outputs stay in [0, 1] for inputs in [0, 1].
torch::Tensor soft_argmax_layer(const torch::Tensor& map, int window = 3, double temperature = 1.0);

/// Per-image point-segmentation loss MSE + (1 - softDice), averaged over the batch.
torch::Tensor point_segmentation_loss(const torch::Tensor& pred, const torch::Tensor& target, double smoothing,
                                      MseReduction reduction = MseReduction::kMean);

/// Sum of the point-segmentation loss at the sigmoid stage and at the refined stage.
torch::Tensor detection_loss(const torch::Tensor& sigmoid_map, const torch::Tensor& refined_map,
                             const torch::Tensor& target, double smoothing,
                             MseReduction reduction = MseReduction::kMean);
inline torch::Tensor detection_loss(const DetectorOutput& out, const torch::Tensor& target, double smoothing,
                                    MseReduction reduction = MseReduction::kMean) {
  return detection_loss(out.sigmoid_map, out.refined_map, target, smoothing, reduction);
}

/// FNV-1a over the raw bytes of every parameter and buffer of `module`.
std::uint64_t module_checksum(const torch::nn::Module& module);

}  // namespace dcg
