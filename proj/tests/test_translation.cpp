#include <cmath>

#include "doctest.h"
#include "dcg/detector.hpp"
#include "dcg/error.hpp"
#include "dcg/translation.hpp"

using namespace dcg;

namespace {

GanConfig small_gan() {
  GanConfig c;
  c.residual_filters = 8;
  c.residual_blocks = 2;
  c.disc_base_filters = 8;
  return c;
}

double scalar(const torch::Tensor& t) { return t.item<double>(); }

// Affine stubs make every intermediate of the objective computable by hand.
GanMaps affine_maps() {
  GanMaps m;
  m.g_sim2or = [](const torch::Tensor& x) { return x + 0.1; };
  m.g_or2sim = [](const torch::Tensor& x) { return x - 0.2; };
  m.d_sim = [](const torch::Tensor& x) { return x; };
  m.d_or = [](const torch::Tensor& x) { return x; };
  return m;
}

}  // namespace

TEST_CASE("generator maps images to images of the same size in [-1, 1]") {
  auto models = build_gan_models(small_gan(), 0);
  torch::NoGradGuard g;
  const auto x = torch::rand({2, 3, 32, 48}) * 2 - 1;
  const auto y = models.g_sim2or->forward(x);
  CHECK(y.sizes() == x.sizes());
  CHECK(y.abs().max().item<float>() <= 1.0f);
}

TEST_CASE("discriminator patch map extent") {
  CHECK(discriminator_output_extent(288) == 34);
  CHECK(discriminator_output_extent(512) == 62);
  CHECK(discriminator_output_extent(64) == 6);
  auto models = build_gan_models(small_gan(), 0);
  torch::NoGradGuard g;
  const auto s = models.d_or->forward(torch::zeros({1, 3, 64, 96}));
  CHECK(s.sizes() == torch::IntArrayRef{1, 1, discriminator_output_extent(64), discriminator_output_extent(96)});
}

TEST_CASE("GAN network parameter counts") {
  const auto count = [](const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
  };
  GanConfig c;
  c.residual_filters = 32;
  c.disc_base_filters = 64;
  const auto big = build_gan_models(c, 0);
  CHECK(count(*big.g_sim2or) == 124931);
  CHECK(count(*big.d_or) == 2764737);
  c.disc_base_filters = 16;
  CHECK(count(*build_gan_models(c, 0).d_sim) == 175089);
}

TEST_CASE("equal seeds build identical GAN models") {
  const auto a = build_gan_models(small_gan(), 5);
  const auto b = build_gan_models(small_gan(), 5);
  CHECK(module_checksum(*a.g_sim2or) == module_checksum(*b.g_sim2or));
  CHECK(module_checksum(*a.d_sim) == module_checksum(*b.d_sim));
  CHECK(module_checksum(*a.g_sim2or) != module_checksum(*a.g_or2sim));
}

TEST_CASE("least-squares adversarial worked values") {
  const auto half = torch::full({4}, 0.5, torch::kFloat64);
  auto t = adversarial_terms(half, half, AdversarialForm::kLeastSquares);
  CHECK(scalar(t.loss_d) == doctest::Approx(0.5));
  CHECK(scalar(t.loss_g) == doctest::Approx(0.25));
  t = adversarial_terms(torch::ones({3}, torch::kFloat64), torch::zeros({3}, torch::kFloat64),
                        AdversarialForm::kLeastSquares);
  CHECK(scalar(t.loss_d) == 0.0);
  CHECK(scalar(t.loss_g) == doctest::Approx(1.0));
}

TEST_CASE("cross-entropy adversarial worked values") {
  const auto zero = torch::zeros({5}, torch::kFloat64);
  const auto t = adversarial_terms(zero, zero, AdversarialForm::kCrossEntropy);
  CHECK(scalar(t.loss_d) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(scalar(t.loss_g) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const auto big = torch::full({2}, 30.0, torch::kFloat64);
  CHECK(scalar(adversarial_terms(big, -big, AdversarialForm::kCrossEntropy).loss_d) < 1e-12);
  CHECK_THROWS_AS(adversarial_terms(torch::zeros({0}), zero, AdversarialForm::kCrossEntropy), ValidationError);
}

TEST_CASE("cycle and identity losses") {
  const auto x = torch::zeros({1, 3, 4, 4}, torch::kFloat64);
  CHECK(scalar(cycle_loss(x, x + 0.1)) == doctest::Approx(0.1));
  CHECK(scalar(cycle_loss(x, x)) == 0.0);
  CHECK_THROWS_AS(cycle_loss(x, torch::zeros({1, 3, 4, 5})), ShapeError);

  const auto c = torch::full({1, 3, 4, 4}, 0.3, torch::kFloat64);
  const ImageMap id = [](const torch::Tensor& t) { return t; };
  const ImageMap twice = [](const torch::Tensor& t) { return 2 * t; };
  CHECK(scalar(identity_loss(id, id, c, c)) == 0.0);
  CHECK(scalar(identity_loss(twice, twice, c, c)) == doctest::Approx(0.6));
  CHECK(scalar(identity_loss(twice, id, c, c)) == doctest::Approx(0.3));
}

TEST_CASE("cycle-consistent objective wires the four networks as specified") {
  const auto sim = torch::zeros({2, 3, 4, 4}, torch::kFloat64);
  const auto orr = torch::full({2, 3, 4, 4}, 0.5, torch::kFloat64);
  const auto t = cyclegan_objective(sim, orr, affine_maps(), GanLossWeights{}, AdversarialForm::kLeastSquares);
  CHECK(scalar(t.fake_or.mean()) == doctest::Approx(0.1));
  CHECK(scalar(t.fake_sim.mean()) == doctest::Approx(0.3));
  CHECK(scalar(t.rec_sim.mean()) == doctest::Approx(-0.1));
  CHECK(scalar(t.rec_or.mean()) == doctest::Approx(0.4));
  CHECK(scalar(t.cycle) == doctest::Approx(0.2));
  CHECK(scalar(t.identity) == doctest::Approx(0.3));
  CHECK(scalar(t.adv_g_sim2or) == doctest::Approx(0.81));
  CHECK(scalar(t.adv_g_or2sim) == doctest::Approx(0.49));
  CHECK(scalar(t.generator_loss) == doctest::Approx(0.81 + 0.49 + 10 * 0.2 + 5 * 0.3));
  CHECK(scalar(t.loss_d_or) == doctest::Approx(0.25 + 0.01));
  CHECK(scalar(t.loss_d_sim) == doctest::Approx(1.0 + 0.09));

  const auto no_d = cyclegan_objective(sim, orr, affine_maps(), GanLossWeights{}, AdversarialForm::kLeastSquares, false);
  CHECK_FALSE(no_d.loss_d_or.defined());
  CHECK(scalar(no_d.generator_loss) == doctest::Approx(scalar(t.generator_loss)));

  GanLossWeights no_identity;
  no_identity.lambda_identity = 0.0;
  const auto t0 = cyclegan_objective(sim, orr, affine_maps(), no_identity, AdversarialForm::kLeastSquares);
  CHECK(scalar(t0.generator_loss) == doctest::Approx(0.81 + 0.49 + 10 * 0.2));
}

TEST_CASE("discriminator losses do not reach the generators") {
  auto models = build_gan_models(small_gan(), 1);
  const auto sim = torch::rand({1, 3, 32, 32}) * 2 - 1;
  const auto orr = torch::rand({1, 3, 32, 32}) * 2 - 1;
  const auto t = cyclegan_objective(sim, orr, maps_of(models), GanLossWeights{}, AdversarialForm::kLeastSquares);
  (t.loss_d_or + t.loss_d_sim).backward();
  for (const auto& p : models.generator_parameters())
    CHECK((!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0));
  double d_grad = 0.0;
  for (const auto& p : models.d_or->parameters())
    if (p.grad().defined()) d_grad += p.grad().abs().sum().item<double>();
  CHECK(d_grad > 0.0);
}

TEST_CASE("the generator optimizer leaves discriminators untouched") {
  auto models = build_gan_models(small_gan(), 2);
  const auto d_or_before = module_checksum(*models.d_or);
  const auto d_sim_before = module_checksum(*models.d_sim);
  const auto g_before = module_checksum(*models.g_sim2or);
  torch::optim::Adam opt(models.generator_parameters(), torch::optim::AdamOptions(2e-4));
  const auto sim = torch::rand({1, 3, 32, 32}) * 2 - 1;
  const auto orr = torch::rand({1, 3, 32, 32}) * 2 - 1;
  opt.zero_grad();
  cyclegan_objective(sim, orr, maps_of(models), GanLossWeights{}, AdversarialForm::kLeastSquares, false)
      .generator_loss.backward();
  opt.step();
  CHECK(module_checksum(*models.d_or) == d_or_before);
  CHECK(module_checksum(*models.d_sim) == d_sim_before);
  CHECK(module_checksum(*models.g_sim2or) != g_before);
  CHECK(models.generator_parameters().size() == 2 * models.g_sim2or->parameters().size());
}

TEST_CASE("replay buffer fills up, then swaps according to its probability") {
  const auto batch = [](double v) { return torch::full({2, 1, 2, 2}, v); };
  ReplayBuffer keep(3, 0.0, 1);
  CHECK(torch::equal(keep.query(batch(1)), batch(1)));
  keep.query(batch(2));
  CHECK(keep.size() == 3);
  CHECK(torch::equal(keep.query(batch(3)), batch(3)));
  CHECK(keep.size() == 3);

  const auto single = [](double v) { return torch::full({1, 1, 2, 2}, v); };
  ReplayBuffer swap(1, 1.0, 1);
  swap.query(single(1));
  CHECK(torch::equal(swap.query(single(5)), single(1)));
  CHECK(torch::equal(swap.contents(), single(5)));

  ReplayBuffer off(0, 0.5, 1);
  CHECK(torch::equal(off.query(batch(4)), batch(4)));
  CHECK(off.size() == 0);
  CHECK_THROWS_AS(ReplayBuffer(4, 1.5), ValidationError);
}

TEST_CASE("replay buffer is reproducible and restorable") {
  torch::manual_seed(3);
  std::vector<torch::Tensor> batches;
  for (int i = 0; i < 8; ++i) batches.push_back(torch::rand({2, 1, 2, 2}));
  ReplayBuffer a(4, 0.5, 9), b(4, 0.5, 9);
  for (int i = 0; i < 4; ++i) CHECK(torch::equal(a.query(batches[i]), b.query(batches[i])));
  ReplayBuffer c(4, 0.5, 0);
  c.restore(a.contents());
  c.reseed(77);
  a.reseed(77);
  for (int i = 4; i < 8; ++i) CHECK(torch::equal(a.query(batches[i]), c.query(batches[i])));
}

TEST_CASE("GAN config JSON round trip and validation") {
  GanConfig c = small_gan();
  c.adversarial_form = AdversarialForm::kCrossEntropy;
  c.disc_norm_layers = {2, 3, 5};
  CHECK(GanConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.disc_norm_layers = {6};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  GanLossWeights w;
  w.lambda_cycle = -1;
  CHECK_THROWS_AS(w.validate(), ValidationError);
}
