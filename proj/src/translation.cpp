#include "dcg/translation.hpp"

#include "dcg/error.hpp"

namespace dcg {

namespace nn = torch::nn;

void GanConfig::validate() const {
  if (in_channels < 1) throw ValidationError("gan in_channels must be >= 1");
  if (residual_filters < 4 || residual_filters % 4 != 0)
    throw ValidationError("residual_filters must be a positive multiple of 4");
  if (residual_blocks < 0) throw ValidationError("residual_blocks must be >= 0");
  if (disc_base_filters < 1) throw ValidationError("disc_base_filters must be >= 1");
  for (int l : disc_norm_layers)
    if (l < 1 || l > 5) throw ValidationError("disc_norm_layers entries must lie in 1..5");
  if (!(leaky_slope >= 0.0)) throw ValidationError("leaky_slope must be non-negative");
}

nlohmann::json GanConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"residual_filters", residual_filters},
          {"residual_blocks", residual_blocks},
          {"disc_base_filters", disc_base_filters},
          {"disc_norm_layers", std::vector<int>(disc_norm_layers.begin(), disc_norm_layers.end())},
          {"leaky_slope", leaky_slope},
          {"adversarial_form",
           adversarial_form == AdversarialForm::kLeastSquares ? "least_squares" : "cross_entropy"}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
  GanConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.residual_filters = j.value("residual_filters", c.residual_filters);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  c.disc_base_filters = j.value("disc_base_filters", c.disc_base_filters);
  if (j.contains("disc_norm_layers")) {
    const auto v = j["disc_norm_layers"].get<std::vector<int>>();
    c.disc_norm_layers = std::set<int>(v.begin(), v.end());
  }
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  const std::string form = j.value("adversarial_form", std::string("least_squares"));
  if (form == "least_squares") {
    c.adversarial_form = AdversarialForm::kLeastSquares;
  } else if (form == "cross_entropy") {
    c.adversarial_form = AdversarialForm::kCrossEntropy;
  } else {
    throw ConfigError("adversarial_form must be 'least_squares' or 'cross_entropy'");
  }
  c.validate();
  return c;
}

void GanLossWeights::validate() const {
  if (!(lambda_cycle >= 0.0) || !(lambda_identity >= 0.0))
    throw ValidationError("cycle and identity weights must be non-negative");
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3)));
  in1 = register_module("in1", nn::InstanceNorm2d(channels));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3)));
  in2 = register_module("in2", nn::InstanceNorm2d(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  const auto pad = F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect);
  auto h = torch::relu(in1(conv1(F::pad(x, pad))));
  h = in2(conv2(F::pad(h, pad)));
  return x + h;
}

GeneratorImpl::GeneratorImpl(const GanConfig& cfg) {
  const int f = cfg.residual_filters;
  nn::Sequential s;
  s->push_back(nn::ReflectionPad2d(3));
  s->push_back(nn::Conv2d(nn::Conv2dOptions(cfg.in_channels, f / 4, 7)));
  s->push_back(nn::InstanceNorm2d(f / 4));
  s->push_back(nn::ReLU());
  s->push_back(nn::Conv2d(nn::Conv2dOptions(f / 4, f / 2, 3).stride(2).padding(1)));
  s->push_back(nn::InstanceNorm2d(f / 2));
  s->push_back(nn::ReLU());
  s->push_back(nn::Conv2d(nn::Conv2dOptions(f / 2, f, 3).stride(2).padding(1)));
  s->push_back(nn::InstanceNorm2d(f));
  s->push_back(nn::ReLU());
  for (int i = 0; i < cfg.residual_blocks; ++i) s->push_back(ResidualBlock(f));
  s->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(f, f / 2, 3).stride(2).padding(1).output_padding(1)));
  s->push_back(nn::InstanceNorm2d(f / 2));
  s->push_back(nn::ReLU());
  s->push_back(
      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(f / 2, f / 4, 3).stride(2).padding(1).output_padding(1)));
  s->push_back(nn::InstanceNorm2d(f / 4));
  s->push_back(nn::ReLU());
  s->push_back(nn::ReflectionPad2d(3));
  s->push_back(nn::Conv2d(nn::Conv2dOptions(f / 4, cfg.in_channels, 7)));
  s->push_back(nn::Tanh());
  body = register_module("body", s);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(2) % 4 != 0 || x.size(3) % 4 != 0)
    throw ShapeError("generator expects [B, C, H, W] input with H and W divisible by 4");
  return body->forward(x);
}

DiscriminatorImpl::DiscriminatorImpl(const GanConfig& cfg) {
  const int f = cfg.disc_base_filters;
  const int widths[5] = {f, 2 * f, 4 * f, 8 * f, 1};
  const int strides[5] = {2, 2, 2, 1, 1};
  nn::Sequential s;
  int in = cfg.in_channels;
  for (int layer = 1; layer <= 5; ++layer) {
    const int out = widths[layer - 1];
    s->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(strides[layer - 1]).padding(1)));
    if (cfg.disc_norm_layers.count(layer)) s->push_back(nn::InstanceNorm2d(out));
    if (layer < 5) s->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(cfg.leaky_slope)));
    in = out;
  }
  body = register_module("body", s);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) { return body->forward(x); }

int64_t discriminator_output_extent(int64_t n) {
  for (int i = 0; i < 3; ++i) n = (n + 2 - 4) / 2 + 1;
  for (int i = 0; i < 2; ++i) n = n + 2 - 4 + 1;
  return n;
}

std::vector<torch::Tensor> GanModels::generator_parameters() const {
  auto p = g_sim2or->parameters();
  for (auto& q : g_or2sim->parameters()) p.push_back(q);
  return p;
}

GanModels build_gan_models(const GanConfig& config, std::uint64_t seed) {
  config.validate();
  torch::manual_seed(seed);
  GanModels m;
  m.config = config;
  m.g_sim2or = Generator(config);
  m.g_or2sim = Generator(config);
  m.d_sim = Discriminator(config);
  m.d_or = Discriminator(config);
  return m;
}

GanMaps maps_of(const GanModels& models) {
  auto gs = models.g_sim2or;
  auto go = models.g_or2sim;
  auto ds = models.d_sim;
  auto dor = models.d_or;
  return {[gs](const torch::Tensor& x) mutable { return gs->forward(x); },
          [go](const torch::Tensor& x) mutable { return go->forward(x); },
          [ds](const torch::Tensor& x) mutable { return ds->forward(x); },
          [dor](const torch::Tensor& x) mutable { return dor->forward(x); }};
}

torch::Tensor generator_adversarial_term(const torch::Tensor& score_fake, AdversarialForm form) {
  if (score_fake.numel() == 0) throw ValidationError("adversarial loss on an empty batch");
  if (form == AdversarialForm::kLeastSquares) return (score_fake - 1.0).square().mean();
  return -torch::log_sigmoid(score_fake).mean();
}

AdversarialTerms adversarial_terms(const torch::Tensor& score_real, const torch::Tensor& score_fake,
                                   AdversarialForm form) {
  if (score_real.numel() == 0 || score_fake.numel() == 0) throw ValidationError("adversarial loss on an empty batch");
  if (form == AdversarialForm::kLeastSquares) {
    return {(score_real - 1.0).square().mean() + score_fake.square().mean(),
            generator_adversarial_term(score_fake, form)};
  }
  // log D = log_sigmoid(s), log(1 - D) = log_sigmoid(-s)
  return {-torch::log_sigmoid(score_real).mean() - torch::log_sigmoid(-score_fake).mean(),
          generator_adversarial_term(score_fake, form)};
}

AdversarialTerms adversarial_loss(const ImageMap& d, const torch::Tensor& real, const torch::Tensor& fake,
                                  AdversarialForm form) {
  if (real.numel() == 0 || fake.numel() == 0) throw ValidationError("adversarial loss on an empty batch");
  const auto s_real = d(real);
  const auto s_fake_det = d(fake.detach());
  const auto s_fake = fake.requires_grad() ? d(fake) : s_fake_det;
  return {adversarial_terms(s_real, s_fake_det, form).loss_d, generator_adversarial_term(s_fake, form)};
}

torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_rec) {
  if (x.sizes() != x_rec.sizes()) throw ShapeError("cycle loss: shapes differ");
  return (x_rec - x).abs().mean();
}

torch::Tensor identity_loss(const ImageMap& g_sim2or, const ImageMap& g_or2sim, const torch::Tensor& x_or,
                            const torch::Tensor& x_sim) {
  const auto id_or = g_sim2or(x_or);
  const auto id_sim = g_or2sim(x_sim);
  if (id_or.sizes() != x_or.sizes() || id_sim.sizes() != x_sim.sizes())
    throw ShapeError("identity loss: generator changed the image shape");
  return (id_or - x_or).abs().mean() + (id_sim - x_sim).abs().mean();
}

CycleGanTerms cyclegan_objective(const torch::Tensor& batch_sim, const torch::Tensor& batch_or, const GanMaps& maps,
                                 const GanLossWeights& weights, AdversarialForm form,
                                 bool with_discriminator_losses) {
  weights.validate();
  CycleGanTerms t;
  t.fake_or = maps.g_sim2or(batch_sim);
  t.fake_sim = maps.g_or2sim(batch_or);
  t.rec_sim = maps.g_or2sim(t.fake_or);
  t.rec_or = maps.g_sim2or(t.fake_sim);

  t.adv_g_sim2or = generator_adversarial_term(maps.d_or(t.fake_or), form);
  t.adv_g_or2sim = generator_adversarial_term(maps.d_sim(t.fake_sim), form);
  t.cycle = cycle_loss(batch_sim, t.rec_sim) + cycle_loss(batch_or, t.rec_or);
  t.generator_loss = t.adv_g_sim2or + t.adv_g_or2sim + weights.lambda_cycle * t.cycle;
  if (weights.lambda_identity > 0.0) {
    t.identity = identity_loss(maps.g_sim2or, maps.g_or2sim, batch_or, batch_sim);
    t.generator_loss = t.generator_loss + weights.lambda_identity * t.identity;
  } else {
    t.identity = torch::zeros({}, batch_sim.options());
  }

  if (with_discriminator_losses) {
    t.loss_d_sim = adversarial_terms(maps.d_sim(batch_sim), maps.d_sim(t.fake_sim.detach()), form).loss_d;
    t.loss_d_or = adversarial_terms(maps.d_or(batch_or), maps.d_or(t.fake_or.detach()), form).loss_d;
  }
  return t;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, double swap_probability, std::uint64_t seed)
    : capacity_(capacity), swap_probability_(swap_probability), rng_(seed) {
  if (!(swap_probability >= 0.0 && swap_probability <= 1.0))
    throw ValidationError("replay swap probability must lie in [0, 1]");
}

torch::Tensor ReplayBuffer::query(const torch::Tensor& batch) {
  if (capacity_ == 0) return batch.detach();
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < batch.size(0); ++i) {
    auto img = batch[i].detach().clone();
    if (images_.size() < capacity_) {
      images_.push_back(img);
      out.push_back(img);
      continue;
    }
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    if (u < swap_probability_) {
      const auto j = std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng_);
      out.push_back(images_[j]);
      images_[j] = img;
    } else {
      out.push_back(img);
    }
  }
  return torch::stack(out);
}

torch::Tensor ReplayBuffer::contents() const {
  if (images_.empty()) return torch::Tensor();
  return torch::stack(images_);
}

void ReplayBuffer::restore(const torch::Tensor& stacked) {
  images_.clear();
  if (!stacked.defined()) return;
  for (int64_t i = 0; i < stacked.size(0) && images_.size() < capacity_; ++i) images_.push_back(stacked[i].clone());
}

}  // namespace dcg
