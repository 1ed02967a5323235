#include "dcg/heatmap.hpp"

#include "dcg/error.hpp"

namespace dcg {

HeatmapTensor render_heatmap(const LandmarkSet& landmarks, int width, int height, double sigma,
                             torch::Dtype dtype) {
  if (!(sigma > 0.0)) throw ValidationError("heatmap sigma must be positive, got " + std::to_string(sigma));
  if (width <= 0 || height <= 0) throw ValidationError("heatmap size must be positive");

  // Evaluated in double and cast once, so the peak is exactly 1 whatever the output dtype.
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto values = torch::zeros({height, width}, opts);
  if (!landmarks.empty()) {
    const auto xs = torch::arange(width, opts).view({1, width});
    const auto ys = torch::arange(height, opts).view({height, 1});
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    for (const auto& lm : landmarks.points) {
      const auto d2 = (xs - lm.pos.x).square() + (ys - lm.pos.y).square();
      values = torch::maximum(values, torch::exp(-d2 * inv_two_var));
    }
  }
  return {values.to(dtype), sigma};
}

torch::Tensor render_heatmap_batch(const std::vector<const LandmarkSet*>& landmarks, int width, int height,
                                   double sigma, torch::Dtype dtype) {
  std::vector<torch::Tensor> maps;
  maps.reserve(landmarks.size());
  for (const auto* set : landmarks) maps.push_back(render_heatmap(*set, width, height, sigma, dtype).values);
  return torch::stack(maps).unsqueeze(1);
}

}  // namespace dcg
