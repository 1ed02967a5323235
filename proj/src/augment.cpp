#include "dcg/augment.hpp"

#include <cmath>
#include <numbers>
#include <opencv2/imgproc.hpp>

#include "dcg/error.hpp"
#include "dcg/image_io.hpp"

namespace dcg {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
}

void check_nonneg(double v, const char* name) {
  if (!(v >= 0.0)) throw ValidationError(std::string(name) + " must be non-negative");
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(std::mt19937_64& rng, double p) {
  // Always draw, so the stream position does not depend on the probability.
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < p;
}

void clip01(cv::Mat& m) { cv::min(cv::max(m, 0.0), 1.0, m); }

void apply_color(cv::Mat& rgb, const AugmentationTrace& t) {
  if (t.brightness != 0.0) {
    rgb += cv::Scalar::all(t.brightness);
    clip01(rgb);
  }
  if (t.contrast != 1.0) {
    cv::Mat gray;
    cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
    const double mean = cv::mean(gray)[0];
    rgb = (rgb - cv::Scalar::all(mean)) * t.contrast + cv::Scalar::all(mean);
    clip01(rgb);
  }
  if (t.saturation != 1.0) {
    cv::Mat gray;
    cv::Mat gray3;
    cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
    cv::cvtColor(gray, gray3, cv::COLOR_GRAY2RGB);
    rgb = gray3 + (rgb - gray3) * t.saturation;
    clip01(rgb);
  }
  if (t.hue != 0.0) {
    cv::Mat hsv;
    cv::cvtColor(rgb, hsv, cv::COLOR_RGB2HSV);
    std::vector<cv::Mat> ch;
    cv::split(hsv, ch);
    ch[0] += t.hue * 360.0;
    for (int y = 0; y < ch[0].rows; ++y) {
      auto* row = ch[0].ptr<float>(y);
      for (int x = 0; x < ch[0].cols; ++x) row[x] = std::fmod(std::fmod(row[x], 360.0f) + 360.0f, 360.0f);
    }
    cv::merge(ch, hsv);
    cv::cvtColor(hsv, rgb, cv::COLOR_HSV2RGB);
    clip01(rgb);
  }
}

}  // namespace

void AugmentationConfig::validate() const {
  check_nonneg(color.brightness, "brightness");
  if (!(color.contrast_min >= 0.0 && color.contrast_min <= color.contrast_max))
    throw ValidationError("contrast range must satisfy 0 <= min <= max");
  if (!(color.saturation_min >= 0.0 && color.saturation_min <= color.saturation_max))
    throw ValidationError("saturation range must satisfy 0 <= min <= max");
  if (!(color.hue >= 0.0 && color.hue <= 0.5)) throw ValidationError("hue must lie in [0, 0.5]");
  check_prob(color.probability, "color probability");
  check_nonneg(geometric.rotation_deg, "rotation");
  if (!(geometric.translate_frac >= 0.0 && geometric.translate_frac < 1.0))
    throw ValidationError("translation fraction must lie in [0, 1)");
  check_nonneg(geometric.shear, "shear");
  check_prob(geometric.p_rotate, "rotation probability");
  check_prob(geometric.p_translate, "translation probability");
  check_prob(geometric.p_shear, "shear probability");
  check_prob(geometric.p_hflip, "hflip probability");
  check_prob(geometric.p_vflip, "vflip probability");
}

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.color.probability = 0.0;
  c.geometric.p_rotate = c.geometric.p_translate = c.geometric.p_shear = 0.0;
  c.geometric.p_hflip = c.geometric.p_vflip = 0.0;
  return c;
}

AugmentationConfig AugmentationConfig::gan_default() {
  AugmentationConfig c;
  c.color.probability = 0.0;
  c.geometric.p_translate = c.geometric.p_shear = 0.0;
  return c;
}

AugmentedSample augment_sample(const ImageSample& image, const LandmarkSet& landmarks,
                               const AugmentationConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto& cc = cfg.color;
  const auto& gc = cfg.geometric;
  const int w = image.width();
  const int h = image.height();

  // Sample everything first, in a fixed order.
  AugmentationTrace t;
  t.color = coin(rng, cc.probability);
  const double b = uniform(rng, -cc.brightness, cc.brightness);
  const double c = uniform(rng, cc.contrast_min, cc.contrast_max);
  const double s = uniform(rng, cc.saturation_min, cc.saturation_max);
  const double hu = uniform(rng, -cc.hue, cc.hue);
  if (t.color) {
    t.brightness = b;
    t.contrast = c;
    t.saturation = s;
    t.hue = hu;
  }
  t.hflip = coin(rng, gc.p_hflip);
  t.vflip = coin(rng, gc.p_vflip);
  const bool rot = coin(rng, gc.p_rotate);
  const double angle = uniform(rng, -gc.rotation_deg, gc.rotation_deg);
  const bool tr = coin(rng, gc.p_translate);
  const double tx = uniform(rng, -gc.translate_frac, gc.translate_frac) * w;
  const double ty = uniform(rng, -gc.translate_frac, gc.translate_frac) * h;
  const bool sh = coin(rng, gc.p_shear);
  const double shear = uniform(rng, -gc.shear, gc.shear);
  if (rot) t.rotation_deg = angle;
  if (tr) {
    t.tx = tx;
    t.ty = ty;
  }
  if (sh) t.shear = shear;

  const bool any_geometric = t.hflip || t.vflip || rot || tr || sh;
  if (!t.color && !any_geometric) return {image, landmarks, t};

  cv::Mat rgb = to_mat(image.pixels);
  if (t.color) apply_color(rgb, t);

  LandmarkSet out_lm = landmarks;
  if (t.hflip) {
    cv::flip(rgb, rgb, 1);
    for (auto& p : out_lm.points) p.pos.x = (w - 1) - p.pos.x;
  }
  if (t.vflip) {
    cv::flip(rgb, rgb, 0);
    for (auto& p : out_lm.points) p.pos.y = (h - 1) - p.pos.y;
  }
  if (rot || tr || sh) {
    // x' = A (x - c) + c + t with A = R * Shear, about the image center in pixel-index coordinates.
    const double cx = (w - 1) * 0.5;
    const double cy = (h - 1) * 0.5;
    const double th = t.rotation_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(th);
    const double sa = std::sin(th);
    const double a00 = ca, a01 = ca * t.shear - sa;
    const double a10 = sa, a11 = sa * t.shear + ca;
    const double b0 = cx + t.tx - (a00 * cx + a01 * cy);
    const double b1 = cy + t.ty - (a10 * cx + a11 * cy);
    cv::Mat m = (cv::Mat_<double>(2, 3) << a00, a01, b0, a10, a11, b1);
    cv::Mat warped;
    cv::warpAffine(rgb, warped, m, rgb.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    rgb = warped;
    for (auto& p : out_lm.points) {
      const double x = p.pos.x;
      const double y = p.pos.y;
      p.pos.x = a00 * x + a01 * y + b0;
      p.pos.y = a10 * x + a11 * y + b1;
    }
  }

  LandmarkSet kept;
  for (const auto& p : out_lm.points) {
    if (p.pos.x >= 0.0 && p.pos.x < w && p.pos.y >= 0.0 && p.pos.y < h) kept.points.push_back(p);
  }
  t.dropped = out_lm.size() - kept.size();

  ImageSample out = image;
  out.pixels = from_mat(rgb);
  return {std::move(out), std::move(kept), t};
}

}  // namespace dcg
