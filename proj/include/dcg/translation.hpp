#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <set>

#include <torch/torch.h>

#include "dcg/types.hpp"
#include "json.hpp"

namespace dcg {

enum class AdversarialForm { kLeastSquares, kCrossEntropy };

struct GanConfig {
  int in_channels = 3;
  int residual_filters = 32;  ///< width of the residual trunk; the stem uses /4 and /2 of it
  int residual_blocks = 6;
  int disc_base_filters = 64;
  std::set<int> disc_norm_layers{2, 3, 4};  ///< 1-based conv layers followed by instance norm
  double leaky_slope = 0.2;
  AdversarialForm adversarial_form = AdversarialForm::kLeastSquares;

  void validate() const;
  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json& j);
};

struct GanLossWeights {
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;
  void validate() const;
};

struct ResidualBlockImpl : torch::nn::Module {
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::InstanceNorm2d in1{nullptr}, in2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// ResNet generator: 7x7 stem, two stride-2 downsampling blocks, residual trunk, two
/// transposed-convolution upsampling blocks and a 7x7 tanh output. Inputs/outputs live in [-1, 1].
struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(const GanConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Generator);

/// Five 4x4 convolutions (three stride-2, two stride-1) producing a patch score map.
struct DiscriminatorImpl : torch::nn::Module {
  explicit DiscriminatorImpl(const GanConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Discriminator);

/// Patch-score map size for an input extent along one axis.
int64_t discriminator_output_extent(int64_t input_extent);

struct GanModels {
  GanConfig config;
  Generator g_sim2or{nullptr};
  Generator g_or2sim{nullptr};
  Discriminator d_sim{nullptr};
  Discriminator d_or{nullptr};

  std::vector<torch::Tensor> generator_parameters() const;
};

/// Seeds the global torch generator, then builds G_sim2or, G_or2sim, D_sim, D_or in that order.
GanModels build_gan_models(const GanConfig& config, std::uint64_t seed);

using ImageMap = std::function<torch::Tensor(const torch::Tensor&)>;

/// Callable views of the four networks; tests substitute stubs here.
struct GanMaps {
  ImageMap g_sim2or;
  ImageMap g_or2sim;
  ImageMap d_sim;
  ImageMap d_or;
};
GanMaps maps_of(const GanModels& models);

struct AdversarialTerms {
  torch::Tensor loss_d;
  torch::Tensor loss_g;
};

/// Losses from discriminator outputs. Least squares takes raw scores; cross entropy takes logits
/// (D(x) = sigmoid(score)) and uses the non-saturating generator term -log D(fake).
AdversarialTerms adversarial_terms(const torch::Tensor& score_real, const torch::Tensor& score_fake,
                                   AdversarialForm form);

/// Generator side only: mean((score - 1)^2) or -log sigmoid(score).
torch::Tensor generator_adversarial_term(const torch::Tensor& score_fake, AdversarialForm form);

/// Runs D on both batches. The fake batch is detached for loss_d but not for loss_g.
AdversarialTerms adversarial_loss(const ImageMap& d, const torch::Tensor& real, const torch::Tensor& fake,
                                  AdversarialForm form);

/// Mean absolute difference.
torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_rec);

/// mean|G_sim2or(x_or) - x_or| + mean|G_or2sim(x_sim) - x_sim|.
torch::Tensor identity_loss(const ImageMap& g_sim2or, const ImageMap& g_or2sim, const torch::Tensor& x_or,
                            const torch::Tensor& x_sim);

struct CycleGanTerms {
  torch::Tensor generator_loss;
  torch::Tensor adv_g_sim2or;  ///< generator term against D_or
  torch::Tensor adv_g_or2sim;  ///< generator term against D_sim
  torch::Tensor cycle;
  torch::Tensor identity;
  torch::Tensor loss_d_sim;  ///< undefined unless requested
  torch::Tensor loss_d_or;
  // x'_or = G_sim2or(x_sim), x'_sim = G_or2sim(x_or), x''_sim = G_or2sim(x'_or), x''_or = G_sim2or(x'_sim)
  torch::Tensor fake_or;
  torch::Tensor fake_sim;
  torch::Tensor rec_sim;
  torch::Tensor rec_or;
};

/// Generator side of the CycleGAN objective on one unpaired batch pair (both in [-1, 1]).
/// With `with_discriminator_losses` the discriminator losses on the fresh (detached) fakes are
/// also returned; training computes them on replayed fakes instead.
CycleGanTerms cyclegan_objective(const torch::Tensor& batch_sim, const torch::Tensor& batch_or, const GanMaps& maps,
                                 const GanLossWeights& weights, AdversarialForm form,
                                 bool with_discriminator_losses = true);

/// Pool of past fakes for discriminator updates. Once full, each incoming image is swapped with
/// a random stored one with probability `swap_probability`.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50, double swap_probability = 0.5, std::uint64_t seed = 0);

  torch::Tensor query(const torch::Tensor& batch);
  std::size_t size() const { return images_.size(); }
  std::size_t capacity() const { return capacity_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  /// Stored images stacked to [N, C, H, W] (empty tensor when the pool is empty).
  torch::Tensor contents() const;
  void restore(const torch::Tensor& stacked);

 private:
  std::size_t capacity_;
  double swap_probability_;
  std::mt19937_64 rng_;
  std::vector<torch::Tensor> images_;
};

}  // namespace dcg
