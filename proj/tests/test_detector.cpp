#include <cmath>

#include "doctest.h"
#include "dcg/detector.hpp"
#include "dcg/error.hpp"

using namespace dcg;

namespace {

DetectorConfig small_config(int base = 4, int levels = 4) {
  DetectorConfig c;
  c.base_channels = base;
  c.levels = levels;
  return c;
}

// Parameter count of the U-Net derived from its layer list, independent of libtorch.
int64_t unet_parameter_oracle(int c, int levels, int in_channels) {
  const auto conv = [](int64_t i, int64_t o, int64_t k) { return i * o * k * k + o; };
  const auto block = [&](int64_t i, int64_t o) { return conv(i, o, 3) + 2 * o + conv(o, o, 3) + 2 * o; };
  std::vector<int64_t> w;
  for (int i = 0; i < levels; ++i) w.push_back(int64_t{c} << i);
  int64_t n = 0, in = in_channels;
  for (int i = 0; i < levels; ++i) {
    n += block(in, w[i]);
    in = w[i];
  }
  n += block(w.back(), w.back());
  for (int i = levels - 1; i >= 0; --i) n += block(2 * w[i], i > 0 ? w[i - 1] : w[0]);
  return n + conv(w[0], 1, 1);
}

}  // namespace

TEST_CASE("detector keeps the input resolution") {
  auto m = build_detector(small_config(), 0);
  m.freeze();
  const auto out = m.predict(torch::rand({1, 3, 288, 512}));
  CHECK(out.sigmoid_map.sizes() == torch::IntArrayRef{1, 1, 288, 512});
  CHECK(out.refined_map.sizes() == torch::IntArrayRef{1, 1, 288, 512});
  CHECK(out.sigmoid_map.min().item<float>() >= 0.0f);
  CHECK(out.sigmoid_map.max().item<float>() <= 1.0f);
  CHECK(out.refined_map.min().item<float>() >= 0.0f);
  CHECK(out.refined_map.max().item<float>() <= 1.0f);
}

TEST_CASE("detector rejects sizes not divisible by 2^levels before computing") {
  auto m = build_detector(small_config(), 0);
  CHECK_THROWS_AS(m.predict(torch::rand({1, 3, 40, 64})), ShapeError);
  CHECK_THROWS_AS(m.predict(torch::rand({1, 1, 64, 64})), ShapeError);
  CHECK_THROWS_AS(m.predict(torch::rand({3, 64, 64})), ShapeError);
}

TEST_CASE("equal seeds give identical detectors") {
  const auto a = build_detector(small_config(), 17);
  const auto b = build_detector(small_config(), 17);
  const auto c = build_detector(small_config(), 18);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
}

TEST_CASE("detector parameter count is a function of the configuration") {
  CHECK(build_detector(DetectorConfig{}, 0).parameter_count() == 13395329);
  CHECK(unet_parameter_oracle(64, 4, 3) == 13395329);
  for (int base : {2, 4, 8})
    for (int levels : {2, 3, 4}) {
      CAPTURE(base);
      CAPTURE(levels);
      CHECK(build_detector(small_config(base, levels), 1).parameter_count() ==
            unet_parameter_oracle(base, levels, 3));
    }
}

TEST_CASE("very negative head bias drives the sigmoid map to zero") {
  auto m = build_detector(small_config(), 3);
  {
    torch::NoGradGuard g;
    m.net()->head->bias.fill_(-40.0);
  }
  m.freeze();
  const auto out = m.predict(torch::rand({2, 3, 32, 32}));
  CHECK(out.sigmoid_map.max().item<float>() < 1e-3f);
}

TEST_CASE("detector output gradient matches finite differences") {
  auto m = build_detector(small_config(2, 2), 5);
  m.net()->to(torch::kFloat64);
  m.freeze();
  torch::manual_seed(9);
  auto x = torch::rand({1, 3, 16, 16}, torch::kFloat64).requires_grad_(true);
  m.predict(x).refined_map.sum().backward();
  const auto grad = x.grad();
  const double h = 1e-6;
  for (const auto& [c, i, j] : std::vector<std::tuple<int, int, int>>{{0, 5, 7}, {1, 8, 8}, {2, 0, 15}}) {
    auto xp = x.detach().clone();
    auto xm = x.detach().clone();
    xp[0][c][i][j] += h;
    xm[0][c][i][j] -= h;
    const double fd =
        (m.predict(xp).refined_map.sum().item<double>() - m.predict(xm).refined_map.sum().item<double>()) / (2 * h);
    const double an = grad[0][c][i][j].item<double>();
    CAPTURE(fd);
    CAPTURE(an);
    CHECK(std::abs(an - fd) <= 1e-3 * std::max(std::abs(fd), 1e-8));
  }
}

TEST_CASE("gaussian filter preserves constants and zeros") {
  const auto c = torch::full({2, 1, 9, 7}, 0.37, torch::kFloat64);
  CHECK((gaussian_filter(c) - c).abs().max().item<double>() < 1e-9);
  const auto z = torch::zeros({5, 5}, torch::kFloat64);
  CHECK(torch::equal(gaussian_filter(z), z));
}

TEST_CASE("gaussian filter impulse response is the kernel") {
  auto m = torch::zeros({5, 5}, torch::kFloat64);
  m[2][2] = 1.0;
  const auto out = gaussian_filter(m, 3, 1.0);
  const double w1 = 1.0 / (1.0 + 2.0 * std::exp(-0.5));
  CHECK(out[2][2].item<double>() == doctest::Approx(w1 * w1).epsilon(1e-12));
  CHECK(out[2][2].item<double>() == doctest::Approx(0.2042).epsilon(1e-3));
  CHECK(out.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gaussian filter preserves the interior mean") {
  torch::manual_seed(1);
  auto m = torch::zeros({12, 12}, torch::kFloat64);
  m.index_put_({torch::indexing::Slice(3, 9), torch::indexing::Slice(3, 9)}, torch::rand({6, 6}, torch::kFloat64));
  const auto out = gaussian_filter(m);
  CHECK(out.sum().item<double>() == doctest::Approx(m.sum().item<double>()).epsilon(1e-12));
}

TEST_CASE("soft-argmax layer keeps uniform maps uniform") {
  const auto u = torch::full({1, 1, 6, 6}, 0.4, torch::kFloat64);
  const auto out = soft_argmax_layer(u, 3, 0.5);
  CHECK((out - u).abs().max().item<double>() < 1e-15);
}

TEST_CASE("soft-argmax layer preserves a strict peak and concentrates as temperature drops") {
  auto m = torch::full({9, 9}, 0.2, torch::kFloat64);
  m[4][4] = 0.9;
  m[4][5] = 0.6;
  m[3][4] = 0.5;
  double last_ratio = 0.0;
  for (double t : {1.0, 0.5, 0.1}) {
    const auto out = soft_argmax_layer(m, 3, t);
    CHECK(out.argmax().item<int64_t>() == 4 * 9 + 4);
    CHECK(out[4][4].item<double>() == doctest::Approx(0.9));
    CHECK(out.min().item<double>() >= 0.0);
    CHECK(out.max().item<double>() <= 1.0);
    const double ratio = out[4][4].item<double>() / out[4][5].item<double>();
    CHECK(ratio > last_ratio);
    last_ratio = ratio;
  }
}

TEST_CASE("soft-argmax layer rejects non-positive temperature") {
  CHECK_THROWS_AS(soft_argmax_layer(torch::zeros({4, 4}), 3, 0.0), ValidationError);
  CHECK_THROWS_AS(soft_argmax_layer(torch::zeros({4, 4}), 3, -1.0), ValidationError);
}

TEST_CASE("detection loss worked values") {
  const auto y = (torch::rand({1, 1, 4, 4}, torch::kFloat64) > 0.5).to(torch::kFloat64);
  CHECK(detection_loss(y, y, y, 1.0).item<double>() == doctest::Approx(0.0).epsilon(1e-15));
  const auto z = torch::zeros({1, 1, 4, 4}, torch::kFloat64);
  CHECK(detection_loss(z, z, z, 1.0).item<double>() == 0.0);
  const auto half = torch::full({1, 1, 4, 4}, 0.5, torch::kFloat64);
  const double per_stage = 0.25 + (1.0 - 1.0 / 9.0);
  CHECK(detection_loss(half, half, z, 1.0).item<double>() == doctest::Approx(2.0 * per_stage).epsilon(1e-15));
  CHECK(2.0 * per_stage == doctest::Approx(2.277777777777778).epsilon(1e-15));
}

TEST_CASE("detection loss is non-negative and zero only at the target") {
  torch::manual_seed(4);
  for (int t = 0; t < 10; ++t) {
    const auto y = torch::rand({2, 1, 8, 8}, torch::kFloat64);
    const auto a = torch::rand({2, 1, 8, 8}, torch::kFloat64);
    const auto b = torch::rand({2, 1, 8, 8}, torch::kFloat64);
    CHECK(detection_loss(a, b, y, 1.0).item<double>() > 0.0);
  }
}

TEST_CASE("detection loss gradient matches central finite differences") {
  torch::manual_seed(21);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = torch::rand({1, 1, 8, 8}, torch::kFloat64);
    auto sig = torch::rand({1, 1, 8, 8}, torch::kFloat64).requires_grad_(true);
    auto ref = torch::rand({1, 1, 8, 8}, torch::kFloat64).requires_grad_(true);
    detection_loss(sig, ref, y, 1.0).backward();
    for (int k = 0; k < 4; ++k) {
      const int i = (trial + 3 * k) % 8, j = (5 * trial + k) % 8;
      for (int which = 0; which < 2; ++which) {
        auto base = (which == 0 ? sig : ref).detach();
        auto p = base.clone(), m = base.clone();
        p[0][0][i][j] += h;
        m[0][0][i][j] -= h;
        const auto other = (which == 0 ? ref : sig).detach();
        const double lp = which == 0 ? detection_loss(p, other, y, 1.0).item<double>()
                                     : detection_loss(other, p, y, 1.0).item<double>();
        const double lm = which == 0 ? detection_loss(m, other, y, 1.0).item<double>()
                                     : detection_loss(other, m, y, 1.0).item<double>();
        const double fd = (lp - lm) / (2 * h);
        const double an = (which == 0 ? sig : ref).grad()[0][0][i][j].item<double>();
        CHECK(std::abs(an - fd) <= 1e-3 * std::max(std::abs(fd), 1e-6));
      }
    }
  }
}

TEST_CASE("detection loss rejects mismatched shapes and bad smoothing") {
  CHECK_THROWS_AS(detection_loss(torch::zeros({1, 1, 4, 4}), torch::zeros({1, 1, 4, 4}), torch::zeros({1, 1, 4, 5}), 1.0),
                  ShapeError);
  CHECK_THROWS_AS(detection_loss(torch::zeros({4, 4}), torch::zeros({4, 4}), torch::zeros({4, 4}), 0.0),
                  ValidationError);
}

TEST_CASE("frozen detector has no trainable parameters") {
  auto m = build_detector(small_config(), 0);
  CHECK_FALSE(m.is_frozen());
  m.freeze();
  CHECK(m.is_frozen());
  CHECK_FALSE(m.net()->is_training());
  for (const auto& p : m.net()->parameters()) CHECK_FALSE(p.requires_grad());
  m.unfreeze();
  CHECK(m.net()->is_training());
}

TEST_CASE("detector config JSON round trip and validation") {
  DetectorConfig c;
  c.base_channels = 12;
  c.mse_reduction = MseReduction::kSum;
  c.softargmax_temperature = 0.25;
  const auto back = DetectorConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  c.gaussian_kernel = 4;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  DetectorConfig d;
  CHECK(d.dropout_at(0) == doctest::Approx(0.3));
  CHECK(d.dropout_at(d.levels) == doctest::Approx(0.5));
}
