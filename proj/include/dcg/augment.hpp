#pragma once

#include <random>

#include "dcg/types.hpp"

namespace dcg {

struct ColorJitterConfig {
  double brightness = 0.2;  ///< additive shift drawn from [-b, b]
  double contrast_min = 0.3;
  double contrast_max = 1.5;
  double saturation_min = 0.5;
  double saturation_max = 2.0;
  double hue = 0.1;  ///< fraction of a full hue turn, drawn from [-h, h]
  double probability = 0.5;
};

struct GeometricConfig {
  double rotation_deg = 60.0;
  double translate_frac = 0.1;
  double shear = 0.1;
  double p_rotate = 0.5;
  double p_translate = 0.5;
  double p_shear = 0.5;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
};

/// Augmentation ranges and probabilities. Defaults are the detector training setup.
struct AugmentationConfig {
  ColorJitterConfig color;
  GeometricConfig geometric;
  std::uint64_t seed = 0;

  /// Throws ValidationError on inverted ranges, negative magnitudes, or probabilities outside [0, 1].
  void validate() const;

  /// Every probability set to zero.
  static AugmentationConfig identity();
  /// Rotation and flips only, no color jitter (translation network setup).
  static AugmentationConfig gan_default();
};

/// What was sampled for one call; handy for tests and debugging dumps.
struct AugmentationTrace {
  bool color = false;
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
  bool hflip = false;
  bool vflip = false;
  double rotation_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double shear = 0.0;
  std::size_t dropped = 0;
};

struct AugmentedSample {
  ImageSample image;
  LandmarkSet landmarks;
  AugmentationTrace trace;
};

/// Color jitter touches pixels only; flips and the affine warp move pixels and landmarks together.
/// Landmarks that end up outside the frame are dropped.
AugmentedSample augment_sample(const ImageSample& image, const LandmarkSet& landmarks,
                               const AugmentationConfig& cfg, std::mt19937_64& rng);

}  // namespace dcg
