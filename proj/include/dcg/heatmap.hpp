#pragma once

#include "dcg/types.hpp"

namespace dcg {

/// Default rendering width of the Gaussian training targets, in pixels.
inline constexpr double kHeatmapSigma = 2.0;

/// Renders a peak-normalized Gaussian per landmark and combines overlapping Gaussians with a
/// per-pixel maximum, so every value stays in [0, 1]. An empty set renders all zeros.
HeatmapTensor render_heatmap(const LandmarkSet& landmarks, int width, int height, double sigma,
                             torch::Dtype dtype = torch::kFloat32);

/// Stacks rendered heatmaps into a [B, 1, H, W] batch.
torch::Tensor render_heatmap_batch(const std::vector<const LandmarkSet*>& landmarks, int width, int height,
                                   double sigma, torch::Dtype dtype = torch::kFloat32);

}  // namespace dcg
