#pragma once

#include "dcg/types.hpp"

namespace dcg {

enum class NormTarget { kDetector, kGan };

/// Detector inputs stay in [0, 1]; GAN inputs are standardized with mean 0.5 and std 0.5 to [-1, 1].
/// Throws ValidationError if any pixel lies outside [0, 1].
torch::Tensor normalize_for(const ImageSample& image, NormTarget target);
torch::Tensor normalize_for(const torch::Tensor& pixels, NormTarget target);

/// Differentiable bridge from generator output range [-1, 1] back to [0, 1].
inline torch::Tensor gan_to_unit(const torch::Tensor& x) { return (x + 1.0) * 0.5; }

}  // namespace dcg
