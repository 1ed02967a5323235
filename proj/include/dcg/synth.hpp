#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcg/manifest.hpp"
#include "dcg/types.hpp"

namespace dcg {

/// Procedural "suture phantom": smooth curves over a textured disk, rendered in two styles.
struct SceneParams {
  int width = 128;
  int height = 128;
  int min_sutures = 2;
  int max_sutures = 12;
  double control_jitter = 6.0;  ///< pixels; displacement of the middle control point
  double min_length = 14.0;     ///< pixels; entry-to-exit distance range
  double max_length = 30.0;
  double stroke_width = 2.0;  ///< pixels
  std::uint64_t texture_seed = 0;
  Domain style = Domain::kSim;
  double occlusion_probability = 0.2;
  std::string group_prefix = "synth";  ///< source ids read <prefix>-<style>-g<i>

  /// Throws ValidationError on negative counts, inverted ranges or stroke width < 1.
  void validate() const;
  /// Geometry scaled to a frame size, starting from the 128x128 defaults.
  static SceneParams for_size(int width, int height);
};

/// Both renders share the suture geometry; only the appearance differs.
struct Scene {
  ImageSample sim_image;
  ImageSample or_image;
  LandmarkSet landmarks;
  torch::Tensor suture_mask;  ///< [H, W] uint8, 1 on curve pixels
  std::vector<std::vector<Point>> sutures;  ///< sampled centerlines
};

Scene generate_scene(std::mt19937_64& rng, const SceneParams& params);

/// In-memory dataset in `params.style`. Image i belongs to source group i % n_groups.
/// `scenes`, when given, receives the full scene behind every sample.
Dataset generate_samples(std::mt19937_64& rng, const SceneParams& params, int n_images, int n_groups,
                         std::vector<Scene>* scenes = nullptr);

/// Writes `n_images` frames (PNG + annotation JSON) and `manifest.jsonl` to `out_dir`; also
/// writes each scene's suture mask and paired other-domain render under `masks/` and `paired/`.
std::vector<ManifestRecord> generate_dataset(std::mt19937_64& rng, const SceneParams& params, int n_images,
                                             int n_groups, const std::string& out_dir);

}  // namespace dcg
