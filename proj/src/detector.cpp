#include "dcg/detector.hpp"

#include <cmath>

#include "dcg/error.hpp"

namespace dcg {

namespace F = torch::nn::functional;

void DetectorConfig::validate() const {
  if (in_channels < 1) throw ValidationError("detector in_channels must be >= 1");
  if (levels < 1) throw ValidationError("detector needs at least one downsampling level");
  if (base_channels < 1) throw ValidationError("detector base_channels must be >= 1");
  for (double p : {dropout_outer, dropout_bottleneck})
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("dropout values must lie in [0, 1]");
  if (gaussian_kernel < 1 || gaussian_kernel % 2 == 0) throw ValidationError("gaussian kernel size must be odd");
  if (softargmax_window < 1 || softargmax_window % 2 == 0) throw ValidationError("soft-argmax window must be odd");
  if (!(gaussian_sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  if (!(softargmax_temperature > 0.0)) throw ValidationError("soft-argmax temperature must be positive");
  if (!(loss_smoothing > 0.0)) throw ValidationError("loss smoothing s must be positive");
  if (!(heatmap_sigma > 0.0)) throw ValidationError("heatmap sigma must be positive");
}

double DetectorConfig::dropout_at(int level) const {
  return dropout_outer + (dropout_bottleneck - dropout_outer) * static_cast<double>(level) / levels;
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"levels", levels},
          {"base_channels", base_channels},
          {"dropout_outer", dropout_outer},
          {"dropout_bottleneck", dropout_bottleneck},
          {"gaussian_kernel", gaussian_kernel},
          {"gaussian_sigma", gaussian_sigma},
          {"softargmax_window", softargmax_window},
          {"softargmax_temperature", softargmax_temperature},
          {"loss_smoothing", loss_smoothing},
          {"heatmap_sigma", heatmap_sigma},
          {"mse_reduction", mse_reduction == MseReduction::kMean ? "mean" : "sum"}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.levels = j.value("levels", c.levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.dropout_outer = j.value("dropout_outer", c.dropout_outer);
  c.dropout_bottleneck = j.value("dropout_bottleneck", c.dropout_bottleneck);
  c.gaussian_kernel = j.value("gaussian_kernel", c.gaussian_kernel);
  c.gaussian_sigma = j.value("gaussian_sigma", c.gaussian_sigma);
  c.softargmax_window = j.value("softargmax_window", c.softargmax_window);
  c.softargmax_temperature = j.value("softargmax_temperature", c.softargmax_temperature);
  c.loss_smoothing = j.value("loss_smoothing", c.loss_smoothing);
  c.heatmap_sigma = j.value("heatmap_sigma", c.heatmap_sigma);
  const std::string red = j.value("mse_reduction", std::string("mean"));
  if (red != "mean" && red != "sum") throw ConfigError("mse_reduction must be 'mean' or 'sum'");
  c.mse_reduction = red == "mean" ? MseReduction::kMean : MseReduction::kSum;
  c.validate();
  return c;
}

ConvBlockImpl::ConvBlockImpl(int in, int out) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(out));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = bn1(torch::relu(conv1(x)));
  return bn2(torch::relu(conv2(y)));
}

UNetImpl::UNetImpl(const DetectorConfig& cfg) : levels(cfg.levels) {
  std::vector<int> width(levels);
  for (int i = 0; i < levels; ++i) width[i] = cfg.base_channels << i;

  down = register_module("down", torch::nn::ModuleList());
  up = register_module("up", torch::nn::ModuleList());
  int in = cfg.in_channels;
  for (int i = 0; i < levels; ++i) {
    down->push_back(ConvBlock(in, width[i]));
    down_drop.push_back(register_module("down_drop" + std::to_string(i), torch::nn::Dropout(cfg.dropout_at(i))));
    in = width[i];
  }
  bottleneck = register_module("bottleneck", ConvBlock(width[levels - 1], width[levels - 1]));
  bottleneck_drop = register_module("bottleneck_drop", torch::nn::Dropout(cfg.dropout_at(levels)));
  // Decoder blocks are stored deepest first.
  for (int i = levels - 1; i >= 0; --i) {
    const int out = i > 0 ? width[i - 1] : width[0];
    up->push_back(ConvBlock(2 * width[i], out));
    up_drop.push_back(register_module("up_drop" + std::to_string(i), torch::nn::Dropout(cfg.dropout_at(i))));
  }
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width[0], 1, 1)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (int i = 0; i < levels; ++i) {
    h = down_drop[i](down[i]->as<ConvBlock>()->forward(h));
    skips.push_back(h);
    h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
  }
  h = bottleneck_drop(bottleneck(h));
  for (int j = 0; j < levels; ++j) {
    const auto& skip = skips[levels - 1 - j];
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    h = up_drop[j](up[j]->as<ConvBlock>()->forward(torch::cat({skip, h}, 1)));
  }
  return torch::sigmoid(head(h));
}

void DetectorModel::freeze() {
  trainable_ = false;
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

void DetectorModel::unfreeze() {
  trainable_ = true;
  net_->train();
  for (auto& p : net_->parameters()) p.set_requires_grad(true);
}

DetectorOutput DetectorModel::predict(const torch::Tensor& image) const {
  const int64_t div = int64_t{1} << config_.levels;
  if (image.dim() != 4 || image.size(1) != config_.in_channels) {
    throw ShapeError("detector expects [B, " + std::to_string(config_.in_channels) + ", H, W] input");
  }
  if (image.size(2) % div != 0 || image.size(3) % div != 0) {
    throw ShapeError("detector input " + std::to_string(image.size(2)) + "x" + std::to_string(image.size(3)) +
                     " is not divisible by " + std::to_string(div));
  }
  auto sig = net_->forward(image);
  auto refined = soft_argmax_layer(gaussian_filter(sig, config_.gaussian_kernel, config_.gaussian_sigma),
                                   config_.softargmax_window, config_.softargmax_temperature);
  return {sig, refined};
}

std::uint64_t module_checksum(const torch::nn::Module& module) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](const torch::Tensor& t) {
    auto c = t.detach().cpu().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = c.numel() * c.element_size();
    for (int64_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : module.named_parameters(true)) mix(p.value());
  for (const auto& b : module.named_buffers(true)) mix(b.value());
  return h;
}

std::uint64_t DetectorModel::checksum() const { return module_checksum(*net_); }

std::int64_t DetectorModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net_->parameters()) n += p.numel();
  return n;
}

DetectorModel build_detector(const DetectorConfig& config, std::uint64_t seed) {
  config.validate();
  torch::manual_seed(seed);
  return DetectorModel(config, UNet(config));
}

DetectorOutput detector_forward(const DetectorModel& model, const torch::Tensor& image) {
  return model.predict(image);
}

torch::Tensor gaussian_kernel1d(int kernel, double sigma, torch::Dtype dtype) {
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("gaussian kernel size must be odd");
  if (!(sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  auto x = torch::arange(kernel, torch::kFloat64) - (kernel - 1) / 2.0;
  auto g = torch::exp(-x.square() / (2.0 * sigma * sigma));
  return (g / g.sum()).to(dtype);
}

namespace {

// Views [H, W], [C, H, W] or [B, C, H, W] as [N, 1, H, W]; returns the original sizes.
std::pair<torch::Tensor, std::vector<int64_t>> as_planes(const torch::Tensor& map) {
  if (map.dim() < 2 || map.dim() > 4) throw ShapeError("expected a 2-D, 3-D or 4-D map");
  auto sizes = map.sizes().vec();
  return {map.reshape({-1, 1, map.size(-2), map.size(-1)}), sizes};
}

}  // namespace

torch::Tensor gaussian_filter(const torch::Tensor& map, int kernel, double sigma) {
  auto [planes, sizes] = as_planes(map);
  const auto g = gaussian_kernel1d(kernel, sigma, map.scalar_type()).to(map.device());
  const auto k2 = torch::outer(g, g).view({1, 1, kernel, kernel});
  const int r = kernel / 2;
  auto padded = F::pad(planes, F::PadFuncOptions({r, r, r, r}).mode(torch::kReflect));
  return F::conv2d(padded, k2).reshape(sizes);
}

torch::Tensor soft_argmax_layer(const torch::Tensor& map, int window, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("soft-argmax temperature must be positive");
  if (window < 1 || window % 2 == 0) throw ValidationError("soft-argmax window must be odd");
  auto [planes, sizes] = as_planes(map);
  const auto local_max =
      F::max_pool2d(planes, F::MaxPool2dFuncOptions(window).stride(1).padding(window / 2));
  return (planes * torch::exp((planes - local_max) / temperature)).reshape(sizes);
}

torch::Tensor point_segmentation_loss(const torch::Tensor& pred, const torch::Tensor& target, double smoothing,
                                      MseReduction reduction) {
  if (pred.sizes() != target.sizes()) throw ShapeError("prediction and target shapes differ");
  if (!(smoothing > 0.0)) throw ValidationError("loss smoothing s must be positive");
  const int64_t batch = pred.dim() >= 3 ? pred.size(0) : 1;
  const auto p = pred.reshape({batch, -1});
  const auto y = target.reshape({batch, -1}).to(pred.scalar_type());
  const auto sq = (y - p).square();
  const auto mse = reduction == MseReduction::kMean ? sq.mean(1) : sq.sum(1);
  const auto dice = (2.0 * (y * p).sum(1) + smoothing) / (y.sum(1) + p.sum(1) + smoothing);
  return (mse + 1.0 - dice).mean();
}

torch::Tensor detection_loss(const torch::Tensor& sigmoid_map, const torch::Tensor& refined_map,
                             const torch::Tensor& target, double smoothing, MseReduction reduction) {
  return point_segmentation_loss(sigmoid_map, target, smoothing, reduction) +
         point_segmentation_loss(refined_map, target, smoothing, reduction);
}

}  // namespace dcg
