#include "dcg/normalize.hpp"

#include "dcg/error.hpp"

namespace dcg {

torch::Tensor normalize_for(const torch::Tensor& pixels, NormTarget target) {
  if (pixels.numel() > 0) {
    const double lo = pixels.min().item<double>();
    const double hi = pixels.max().item<double>();
    if (lo < 0.0 || hi > 1.0) {
      throw ValidationError("pixel values must lie in [0, 1], got [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
    }
  }
  if (target == NormTarget::kDetector) return pixels;
  return (pixels - 0.5) / 0.5;
}

torch::Tensor normalize_for(const ImageSample& image, NormTarget target) {
  return normalize_for(image.pixels, target);
}

}  // namespace dcg
