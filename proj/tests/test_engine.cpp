#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dcg/checkpoint.hpp"
#include "dcg/engine.hpp"
#include "dcg/synth.hpp"
#include "test_util.hpp"

using namespace dcg;
namespace fs = std::filesystem;

namespace {

Dataset tiny_set(Domain style, std::uint64_t seed, int n = 8, const std::string& prefix = "synth") {
  auto p = SceneParams::for_size(32, 32);
  p.style = style;
  p.group_prefix = prefix;
  std::mt19937_64 rng(seed);
  return generate_samples(rng, p, n, 4);
}

DetectorTrainConfig tiny_detector_config() {
  DetectorTrainConfig c;
  c.model.base_channels = 4;
  c.model.levels = 2;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

GanTrainConfig tiny_gan_config() {
  GanTrainConfig c;
  c.model.residual_filters = 8;
  c.model.residual_blocks = 1;
  c.model.disc_base_filters = 4;
  c.batch_size = 4;
  c.epochs = 2;
  c.replay_capacity = 6;
  c.seed = 11;
  return c;
}

DetectorModel frozen_tiny_detector(std::uint64_t seed) {
  auto d = build_detector(tiny_detector_config().model, seed);
  d.freeze();
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("plateau schedule follows reduce-on-plateau semantics") {
  PlateauSchedule s(0.1, 10, 1e-4);
  double lr = 1e-3;
  std::vector<int> reduced_at;
  for (int epoch = 1; epoch <= 23; ++epoch) {
    const double next = s.step(1.0, lr);
    if (next < lr) reduced_at.push_back(epoch);
    lr = next;
  }
  CHECK(reduced_at == std::vector<int>{12, 23});
  CHECK(lr == doctest::Approx(1e-5));
  CHECK(s.reductions() == 2);

  PlateauSchedule t(0.5, 1, 0.1);
  CHECK(t.step(1.0, 1.0) == 1.0);
  CHECK(t.step(0.95, 1.0) == 1.0);  // not 10% better
  CHECK(t.step(0.95, 1.0) == 0.5);
  CHECK(t.step(0.5, 0.5) == 0.5);
  PlateauSchedule u(0.5, 1, 0.1);
  u.restore(t.state());
  CHECK(u.best() == t.best());
  CHECK(u.bad_epochs() == t.bad_epochs());
}

TEST_CASE("derived seeds are deterministic and separate streams") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t e = 0; e < 10; ++e)
    for (std::uint64_t s = 0; s < 4; ++s) seen.insert(derive_seed(7, e, s));
  CHECK(seen.size() == 40);
}

TEST_CASE("metric history round trips through JSON lines") {
  TempDir dir;
  MetricHistory h;
  h.add({"detector", 1, 0, {{"train", 0.5}, {"val", 0.25}}, {{"val_f1", 0.75}}, 1e-3, 42});
  h.add({"detector", 1, 1, {{"train", 0.125}}, {}, 1e-4, 42});
  h.write(dir.file("h.jsonl"));
  const auto back = MetricHistory::read(dir.file("h.jsonl"));
  CHECK(back.to_jsonl() == h.to_jsonl());
  const auto text = h.to_jsonl();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK_THROWS_AS(MetricHistory::read(dir.file("none.jsonl")), MissingArtifactError);
}

TEST_CASE("batches carry images and heatmaps in the requested range") {
  const auto data = tiny_set(Domain::kSim, 1, 4);
  std::mt19937_64 rng(0);
  const std::vector<std::size_t> idx{2, 0};
  const auto det = make_batch(data, idx, nullptr, rng, NormTarget::kDetector, 2.0);
  CHECK(det.images.sizes() == torch::IntArrayRef{2, 3, 32, 32});
  CHECK(det.heatmaps.sizes() == torch::IntArrayRef{2, 1, 32, 32});
  CHECK(det.images.min().item<float>() >= 0.0f);
  CHECK(torch::equal(det.images[0], data[2].image.pixels));
  const auto gan = make_batch(data, idx, nullptr, rng, NormTarget::kGan, std::nullopt);
  CHECK_FALSE(gan.heatmaps.defined());
  CHECK(gan.images.min().item<float>() >= -1.0f);
  CHECK(torch::allclose(gan.images[1], data[0].image.pixels * 2 - 1));
}

TEST_CASE("detector training is reproducible, checkpointed and resumable") {
  const auto train = tiny_set(Domain::kOr, 2);
  const auto val = tiny_set(Domain::kOr, 3, 4, "val");
  TempDir a, b;
  auto cfg = tiny_detector_config();
  cfg.checkpoint_dir = a.path();
  const auto r1 = train_detector_on(train, &val, cfg, 0);
  cfg.checkpoint_dir = b.path();
  const auto r2 = train_detector_on(train, &val, cfg, 0);
  CHECK(r1.model.checksum() == r2.model.checksum());
  CHECK(slurp(a.file("detector_fold0_history.jsonl")) == slurp(b.file("detector_fold0_history.jsonl")));
  CHECK(r1.history.records().size() == 2);
  CHECK(r1.history.records()[0].metrics.count("val_f1") == 1);

  const auto loaded = load_detector(a.file("detector_fold0_best.pt"));
  CHECK(loaded.checksum() == r1.model.checksum());
  CHECK(loaded.is_frozen());

  TempDir c;
  auto one = tiny_detector_config();
  one.epochs = 1;
  one.checkpoint_dir = c.path();
  train_detector_on(train, &val, one, 0);
  auto rest = tiny_detector_config();
  rest.checkpoint_dir = c.path();
  const auto resumed = train_detector_on(train, &val, rest, 0, Stage::kDetector, c.file("detector_fold0_last.pt"));
  CHECK(resumed.model.checksum() == r1.model.checksum());
  CHECK(slurp(c.file("detector_fold0_history.jsonl")) == slurp(a.file("detector_fold0_history.jsonl")));
}

TEST_CASE("detector split training refuses an empty fold") {
  const auto data = tiny_set(Domain::kOr, 2, 4);
  FoldSplit split;
  split.k = 2;
  split.train = {{}, {0, 1, 2, 3}};
  split.val = {{0, 1, 2, 3}, {}};
  CHECK_THROWS_AS(train_detector(data, split, tiny_detector_config()), ConfigError);
}

TEST_CASE("GAN trainer checks its detectors") {
  auto cfg = tiny_gan_config();
  cfg.det_weights = DetLossWeights::var1();
  CHECK_THROWS_AS(GanTrainer(cfg, nullptr, nullptr), ConfigError);
  const auto ds = frozen_tiny_detector(1);
  CHECK_THROWS_AS(GanTrainer(cfg, &ds, nullptr), ConfigError);
  auto open = build_detector(tiny_detector_config().model, 2);
  CHECK_THROWS_AS(GanTrainer(cfg, &ds, &open), ContractError);
  CHECK_NOTHROW(GanTrainer(tiny_gan_config(), nullptr, nullptr));
}

TEST_CASE("GAN training leaves the detectors untouched and resumes bit-identically") {
  const auto sim = tiny_set(Domain::kSim, 4);
  const auto orr = tiny_set(Domain::kOr, 5, 6);
  const auto ds = frozen_tiny_detector(1);
  const auto dor = frozen_tiny_detector(2);
  const auto ds_sum = ds.checksum(), dor_sum = dor.checksum();
  auto cfg = tiny_gan_config();
  cfg.det_weights = DetLossWeights::var1();

  TempDir full_dir;
  cfg.checkpoint_dir = full_dir.path();
  const auto full = train_gan(sim, orr, cfg, &ds, &dor);
  CHECK(ds.checksum() == ds_sum);
  CHECK(dor.checksum() == dor_sum);
  CHECK(full.history.records().size() == 2);
  CHECK(full.history.records()[0].losses.count("det_fake") == 1);
  CHECK(fs::exists(full_dir.file("gan_fold0_epoch001.pt")));
  CHECK(fs::exists(full_dir.file("gan_fold0_epoch002.pt")));

  TempDir part_dir;
  auto first = cfg;
  first.epochs = 1;
  first.checkpoint_dir = part_dir.path();
  train_gan(sim, orr, first, &ds, &dor);
  cfg.checkpoint_dir = part_dir.path();
  const auto resumed = train_gan(sim, orr, cfg, &ds, &dor, 0, part_dir.file("gan_fold0_last.pt"));
  CHECK(module_checksum(*resumed.models.g_sim2or) == module_checksum(*full.models.g_sim2or));
  CHECK(module_checksum(*resumed.models.g_or2sim) == module_checksum(*full.models.g_or2sim));
  CHECK(module_checksum(*resumed.models.d_or) == module_checksum(*full.models.d_or));
  CHECK(slurp(part_dir.file("gan_fold0_history.jsonl")) == slurp(full_dir.file("gan_fold0_history.jsonl")));

  const auto g = load_generator(full_dir.file("gan_fold0_last.pt"), Domain::kSim);
  CHECK(module_checksum(*g) == module_checksum(*full.models.g_sim2or));
}

TEST_CASE("GAN trainer refuses datasets from the wrong domain") {
  const auto sim = tiny_set(Domain::kSim, 4, 4);
  GanTrainer t(tiny_gan_config(), nullptr, nullptr);
  CHECK_THROWS_AS(t.train_epoch(sim, sim), ValidationError);
}

TEST_CASE("translation keeps labels and is deterministic") {
  const auto sim = tiny_set(Domain::kSim, 6, 5);
  const auto models = build_gan_models(tiny_gan_config().model, 0);
  const auto a = translate_dataset(models.g_sim2or, Domain::kSim, sim, 2);
  const auto b = translate_dataset(models.g_sim2or, Domain::kSim, sim, 3);
  REQUIRE(a.size() == sim.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.domain == Domain::kOr);
    CHECK(a[i].image.source_id == sim[i].image.source_id);
    CHECK(a[i].image.fold_id == sim[i].image.fold_id);
    CHECK(a[i].landmarks.positions() == sim[i].landmarks.positions());
    CHECK(a[i].image.pixels.sizes() == sim[i].image.pixels.sizes());
    CHECK(a[i].image.pixels.min().item<float>() >= 0.0f);
    CHECK(a[i].image.pixels.max().item<float>() <= 1.0f);
    CHECK(torch::allclose(a[i].image.pixels, b[i].image.pixels, 1e-5, 1e-6));
  }
  CHECK_THROWS_AS(translate_dataset(models.g_sim2or, Domain::kOr, sim), ValidationError);
}

TEST_CASE("leakage guard catches shared pixels and shared source groups") {
  const auto train = tiny_set(Domain::kOr, 7, 4, "train");
  const auto test = tiny_set(Domain::kOr, 8, 4, "test");
  CHECK_NOTHROW(check_disjoint(train, test));

  auto injected = train;
  auto copy = test[1];
  copy.image.source_id = "renamed";
  injected.push_back(copy);
  CHECK_THROWS_AS(check_disjoint(injected, test), LeakageError);

  auto same_group = train;
  same_group[0].image.source_id = test[2].image.source_id;
  CHECK_THROWS_AS(check_disjoint(same_group, test), LeakageError);

  CHECK(pixel_hash(train[0].image) == pixel_hash(train[0].image));
  CHECK(pixel_hash(train[0].image) != pixel_hash(train[1].image));
}

TEST_CASE("fusion trains on the union of real and fake images") {
  const auto real = tiny_set(Domain::kOr, 9, 4, "real");
  const auto fake = tiny_set(Domain::kOr, 10, 3, "fake");
  const auto test = tiny_set(Domain::kOr, 11, 3, "test");
  auto cfg = tiny_detector_config();
  cfg.epochs = 1;
  const auto r = fuse_retrain(real, fake, test, cfg);
  CHECK(r.fused_size == 7);
  CHECK(r.training.history.records().at(0).stage == "fusion");
  CHECK(r.test.images.size() == 3);

  auto leaky = fake;
  leaky.push_back(test[0]);
  CHECK_THROWS_AS(fuse_retrain(real, leaky, test, cfg), LeakageError);
}

TEST_CASE("checkpoint container round trip and errors") {
  TempDir dir;
  torch::nn::Linear lin(3, 2);
  CheckpointWriter w;
  w.kind = "probe";
  w.config = {{"a", 1}};
  w.state = {{"epoch", 4}};
  w.modules = {{"lin", lin.get()}};
  w.tensors["extra"] = torch::arange(5);
  w.save(dir.file("c.pt"));

  CheckpointReader r(dir.file("c.pt"));
  CHECK(r.kind() == "probe");
  CHECK(r.version() == kCheckpointVersion);
  CHECK(r.config()["a"] == 1);
  CHECK(r.state()["epoch"] == 4);
  CHECK(torch::equal(r.tensor("extra"), torch::arange(5)));
  CHECK_FALSE(r.tensor("absent").defined());
  torch::nn::Linear other(3, 2);
  r.load_module("lin", *other);
  CHECK(module_checksum(*other) == module_checksum(*lin));

  CHECK_THROWS_AS(CheckpointReader(dir.file("missing.pt")), MissingArtifactError);
  std::ofstream(dir.file("junk.pt")) << "not a checkpoint";
  CHECK_THROWS_AS(CheckpointReader(dir.file("junk.pt")), ParseError);
}

TEST_CASE("training configs round trip through JSON") {
  auto d = tiny_detector_config();
  d.plateau_patience = 3;
  CHECK(DetectorTrainConfig::from_json(d.to_json()).to_json() == d.to_json());
  auto g = tiny_gan_config();
  g.det_weights = DetLossWeights::var1(1.0, 0.5);
  g.ablation.semantic_weight = 0.25;
  CHECK(GanTrainConfig::from_json(g.to_json()).to_json() == g.to_json());
  d.batch_size = 0;
  CHECK_THROWS_AS(d.validate(), ValidationError);
}
