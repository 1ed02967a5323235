#pragma once

#include <concepts>
#include <string>

#include "dcg/detector.hpp"
#include "dcg/error.hpp"
#include "dcg/normalize.hpp"
#include "dcg/translation.hpp"

namespace dcg {

enum class Variant { kBaseline, kVar1, kVar2 };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

/// Weights of the detection terms: alpha1 on translated images, alpha2 on recovered images.
struct DetLossWeights {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  Variant variant = Variant::kBaseline;

  /// Throws ValidationError on negative weights or weights that contradict the variant.
  void validate() const;

  static DetLossWeights baseline() { return {0.0, 0.0, Variant::kBaseline}; }
  static DetLossWeights var1(double a1 = 1.0, double a2 = 1.0) { return {a1, a2, Variant::kVar1}; }
  static DetLossWeights var2(double a1 = 1.0) { return {a1, 0.0, Variant::kVar2}; }
};

/// The (alpha1, alpha2) grid evaluated in the experiments: baseline, three Variant 1
/// weightings and Variant 2.
std::vector<DetLossWeights> weight_grid();

/// Anything that maps a detector-range batch to the two detector maps and can report being frozen.
template <class D>
concept FrozenDetector = requires(const D& d, const torch::Tensor& x) {
  { d.is_frozen() } -> std::convertible_to<bool>;
  { d.predict(x) } -> std::same_as<DetectorOutput>;
};

struct DetectionLossOptions {
  double smoothing = 1.0;
  MseReduction reduction = MseReduction::kMean;
};

namespace detail {

template <FrozenDetector D>
void require_frozen(const D& d, const char* name) {
  if (!d.is_frozen()) throw ContractError(std::string(name) + " must be frozen before it enters a GAN loss");
}

/// Generator outputs live in [-1, 1]; detectors read [0, 1].
template <FrozenDetector D>
DetectorOutput detect_gan_image(const D& d, const torch::Tensor& gan_image) {
  return d.predict(gan_to_unit(gan_image));
}

}  // namespace detail

/// L_Det' = L_Det(Det_or(x'_or), y_sim) + L_Det(Det_sim(x'_sim), y_or).
/// Translated images are in generator range; targets are [B, 1, H, W] heatmaps. Each translated
/// image keeps the labels of the image it was translated from.
template <FrozenDetector D>
torch::Tensor detection_consistency_loss(const D& det_or, const D& det_sim, const torch::Tensor& fake_or,
                                         const torch::Tensor& fake_sim, const torch::Tensor& y_sim,
                                         const torch::Tensor& y_or, const DetectionLossOptions& opt = {}) {
  detail::require_frozen(det_or, "Det_or");
  detail::require_frozen(det_sim, "Det_sim");
  return detection_loss(detail::detect_gan_image(det_or, fake_or), y_sim, opt.smoothing, opt.reduction) +
         detection_loss(detail::detect_gan_image(det_sim, fake_sim), y_or, opt.smoothing, opt.reduction);
}

/// L_Det'' = L_Det(Det_sim(x''_sim), y_sim) + L_Det(Det_or(x''_or), y_or).
template <FrozenDetector D>
torch::Tensor recovered_detection_loss(const D& det_sim, const D& det_or, const torch::Tensor& rec_sim,
                                       const torch::Tensor& rec_or, const torch::Tensor& y_sim,
                                       const torch::Tensor& y_or, const DetectionLossOptions& opt = {}) {
  detail::require_frozen(det_sim, "Det_sim");
  detail::require_frozen(det_or, "Det_or");
  return detection_loss(detail::detect_gan_image(det_sim, rec_sim), y_sim, opt.smoothing, opt.reduction) +
         detection_loss(detail::detect_gan_image(det_or, rec_or), y_or, opt.smoothing, opt.reduction);
}

/// Ablation: MSE(Det_or(x'_or), Det_sim(x''_sim)) + MSE(Det_sim(x'_sim), Det_or(x''_or)) on sigmoid maps.
template <FrozenDetector D>
torch::Tensor cross_domain_consistency_loss(const D& det_sim, const D& det_or, const torch::Tensor& fake_or,
                                            const torch::Tensor& rec_sim, const torch::Tensor& fake_sim,
                                            const torch::Tensor& rec_or) {
  detail::require_frozen(det_sim, "Det_sim");
  detail::require_frozen(det_or, "Det_or");
  const auto a = detail::detect_gan_image(det_or, fake_or).sigmoid_map;
  const auto b = detail::detect_gan_image(det_sim, rec_sim).sigmoid_map;
  const auto c = detail::detect_gan_image(det_sim, fake_sim).sigmoid_map;
  const auto d = detail::detect_gan_image(det_or, rec_or).sigmoid_map;
  if (a.sizes() != b.sizes() || c.sizes() != d.sizes()) throw ShapeError("cross-domain consistency: shapes differ");
  return (a - b).square().mean() + (c - d).square().mean();
}

/// Map-level form of the cross-domain term, for callers that already hold the predictions.
inline torch::Tensor cross_domain_consistency_loss(const torch::Tensor& pred_fake_or, const torch::Tensor& pred_rec_sim,
                                                   const torch::Tensor& pred_fake_sim,
                                                   const torch::Tensor& pred_rec_or) {
  if (pred_fake_or.sizes() != pred_rec_sim.sizes() || pred_fake_sim.sizes() != pred_rec_or.sizes())
    throw ShapeError("cross-domain consistency: shapes differ");
  return (pred_fake_or - pred_rec_sim).square().mean() + (pred_fake_sim - pred_rec_or).square().mean();
}

/// Ablation: the frozen detectors act as noisy labellers of the untranslated images,
///   L_sem = L_Det(Det_sim(x'_sim) vs label Det_sim(x_or)) + L_Det(Det_or(x'_or) vs label Det_or(x_sim)).
/// The label predictions are detached unless `detach_labels` is false; the value does not change.
template <FrozenDetector D>
torch::Tensor semantic_loss(const D& det_sim, const D& det_or, const torch::Tensor& x_or, const torch::Tensor& fake_sim,
                            const torch::Tensor& x_sim, const torch::Tensor& fake_or,
                            const DetectionLossOptions& opt = {}, bool detach_labels = true) {
  detail::require_frozen(det_sim, "Det_sim");
  detail::require_frozen(det_or, "Det_or");
  auto label_sim = detail::detect_gan_image(det_sim, x_or).sigmoid_map;
  auto label_or = detail::detect_gan_image(det_or, x_sim).sigmoid_map;
  if (detach_labels) {
    label_sim = label_sim.detach();
    label_or = label_or.detach();
  }
  return detection_loss(detail::detect_gan_image(det_sim, fake_sim), label_sim, opt.smoothing, opt.reduction) +
         detection_loss(detail::detect_gan_image(det_or, fake_or), label_or, opt.smoothing, opt.reduction);
}

struct AblationOptions {
  double cross_domain_weight = 0.0;  ///< off by default
  double semantic_weight = 0.0;      ///< off by default
};

struct DetCycleGanTerms {
  CycleGanTerms gan;
  torch::Tensor det_fake;       ///< L_Det' (undefined when skipped)
  torch::Tensor det_recovered;  ///< L_Det''
  torch::Tensor cross_domain;
  torch::Tensor semantic;
  torch::Tensor total;  ///< generator objective
  bool det_fake_evaluated = false;
  bool det_recovered_evaluated = false;
};

struct DetObjectiveOptions {
  DetectionLossOptions detection;
  AblationOptions ablation;
  /// Evaluate terms whose weight is zero too (they still contribute 0 * term).
  bool evaluate_zero_weight_terms = false;
  bool with_discriminator_losses = true;
};

/// L = L_CycleGAN + alpha1 * L_Det' + alpha2 * L_Det'' (+ optional ablation terms).
/// Terms with zero weight are skipped, so alpha1 = alpha2 = 0 reproduces the plain CycleGAN
/// objective exactly and never touches the detectors.
template <FrozenDetector D>
DetCycleGanTerms detcyclegan_objective(const torch::Tensor& batch_sim, const torch::Tensor& batch_or,
                                       const GanMaps& maps, const D& det_sim, const D& det_or,
                                       const torch::Tensor& y_sim, const torch::Tensor& y_or,
                                       const GanLossWeights& gan_weights, AdversarialForm form,
                                       const DetLossWeights& det_weights, const DetObjectiveOptions& opt = {}) {
  det_weights.validate();
  if (opt.ablation.cross_domain_weight < 0.0 || opt.ablation.semantic_weight < 0.0)
    throw ValidationError("ablation weights must be non-negative");

  DetCycleGanTerms t;
  t.gan = cyclegan_objective(batch_sim, batch_or, maps, gan_weights, form, opt.with_discriminator_losses);
  t.total = t.gan.generator_loss;
  const bool all = opt.evaluate_zero_weight_terms;

  if (det_weights.alpha1 > 0.0 || all) {
    t.det_fake =
        detection_consistency_loss(det_or, det_sim, t.gan.fake_or, t.gan.fake_sim, y_sim, y_or, opt.detection);
    t.det_fake_evaluated = true;
    t.total = t.total + det_weights.alpha1 * t.det_fake;
  }
  if (det_weights.alpha2 > 0.0 || all) {
    t.det_recovered =
        recovered_detection_loss(det_sim, det_or, t.gan.rec_sim, t.gan.rec_or, y_sim, y_or, opt.detection);
    t.det_recovered_evaluated = true;
    t.total = t.total + det_weights.alpha2 * t.det_recovered;
  }
  if (opt.ablation.cross_domain_weight > 0.0) {
    t.cross_domain =
        cross_domain_consistency_loss(det_sim, det_or, t.gan.fake_or, t.gan.rec_sim, t.gan.fake_sim, t.gan.rec_or);
    t.total = t.total + opt.ablation.cross_domain_weight * t.cross_domain;
  }
  if (opt.ablation.semantic_weight > 0.0) {
    t.semantic = semantic_loss(det_sim, det_or, batch_or, t.gan.fake_sim, batch_sim, t.gan.fake_or, opt.detection);
    t.total = t.total + opt.ablation.semantic_weight * t.semantic;
  }
  return t;
}

}  // namespace dcg
