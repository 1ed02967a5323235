#include "dcg/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "CLI11.hpp"
#include "dcg/annotations.hpp"
#include "dcg/folds.hpp"
#include "dcg/manifest.hpp"
#include "dcg/synth.hpp"

namespace dcg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Command c) {
  switch (c) {
    case Command::kSynthGen: return "synth-gen";
    case Command::kTrainDetector: return "train-detector";
    case Command::kTrainGan: return "train-gan";
    case Command::kTranslate: return "translate";
    case Command::kEvaluate: return "evaluate";
    case Command::kFuseRetrain: return "fuse-retrain";
    case Command::kReport: return "report";
  }
  return "report";
}

Command parse_command(std::string_view s) {
  for (auto c : {Command::kSynthGen, Command::kTrainDetector, Command::kTrainGan, Command::kTranslate,
                 Command::kEvaluate, Command::kFuseRetrain, Command::kReport})
    if (to_string(c) == s) return c;
  throw ConfigError("unknown command '" + std::string(s) + "'");
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kValidation: return exit_code::kConfig;
    case ErrorKind::kMissingArtifact: return exit_code::kMissingArtifact;
    case ErrorKind::kLeakage: return exit_code::kLeakage;
    case ErrorKind::kIo: return exit_code::kIo;
    case ErrorKind::kParse:
    case ErrorKind::kShape:
    case ErrorKind::kContract: return exit_code::kData;
  }
  return exit_code::kFailure;
}

std::string run_name(const DetLossWeights& w) {
  const auto defaults = w.variant == Variant::kVar1   ? DetLossWeights::var1()
                        : w.variant == Variant::kVar2 ? DetLossWeights::var2()
                                                      : DetLossWeights::baseline();
  std::string name(to_string(w.variant));
  if (w.alpha1 != defaults.alpha1 || w.alpha2 != defaults.alpha2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "_a%g_%g", w.alpha1, w.alpha2);
    name += buf;
  }
  return name;
}

ExperimentConfig resolve_config(const RunOptions& opt) {
  auto overrides = opt.overrides;
  if (opt.seed) overrides.push_back("train.seed=" + std::to_string(*opt.seed));
  if (opt.fold) overrides.push_back("train.fold=" + std::to_string(*opt.fold));
  if (opt.device) {
    overrides.push_back("device=\"" + *opt.device + "\"");
  } else if (const char* env = std::getenv(kDeviceEnv); env && *env) {
    overrides.push_back("device=\"" + std::string(env) + "\"");
  }
  return load_config(opt.config_path, overrides);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void write_run_info(const fs::path& dir, const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "config.resolved.json", cfg.to_json().dump(2) + "\n");
  write_text(dir / "seed.txt", std::to_string(cfg.train.seed) + "\n");
}

Dataset load_manifest_data(const ExperimentConfig& cfg, const std::string& manifest) {
  const auto path = cfg.resolve(manifest);
  if (!fs::exists(path)) throw MissingArtifactError("manifest not found: " + path);
  return load_dataset(path, cfg.data.width, cfg.data.height);
}

/// Group-disjoint folds over the dataset; fold ids are rewritten to match.
FoldSplit assign_folds(Dataset& data, int k) {
  auto split = make_folds(data, k);
  for (auto& s : data) s.image.fold_id = split.assignments.at(s.image.source_id);
  return split;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.at(i));
  return out;
}

std::vector<int> selected_folds(const ExperimentConfig& cfg) {
  if (cfg.train.fold >= 0) return {cfg.train.fold};
  std::vector<int> f(static_cast<std::size_t>(cfg.train.folds));
  for (int i = 0; i < cfg.train.folds; ++i) f[static_cast<std::size_t>(i)] = i;
  return f;
}

std::string fold_file(const std::string& dir, const std::string& stem, int fold, const std::string& suffix) {
  return (fs::path(dir) / (stem + "_fold" + std::to_string(fold) + suffix)).string();
}

void write_report(const fs::path& dir, const std::vector<ImageEvaluation>& images, const ExperimentConfig& cfg,
                  const std::string& label, std::ostream& log) {
  const auto report = make_report(images, cfg.eval.radius, cfg.eval.threshold);
  std::map<int, Counts> per_fold;
  for (const auto& im : images) per_fold[im.fold] += im.match;
  std::vector<Counts> counts;
  std::vector<int> folds;
  for (const auto& [f, c] : per_fold) {
    folds.push_back(f);
    counts.push_back(c);
  }
  write_run_info(dir, cfg);
  write_text(dir / "report.json", report.dump(1) + "\n");
  if (!counts.empty()) {
    const auto agg = aggregate_folds(counts);
    write_text(dir / "report.csv", report_csv(agg, folds, label));
    log << label << ": F1 " << agg.f1.mean << " +- " << agg.f1.std << " over " << folds.size() << " fold(s)\n";
  }
}

// ---------------------------------------------------------------------------------------------

void cmd_synth_gen(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path out = cfg.resolve(cfg.synth.out_dir);
  auto params = SceneParams::for_size(cfg.data.width, cfg.data.height);
  std::mt19937_64 rng_sim(derive_seed(cfg.train.seed, 0, 1));
  std::mt19937_64 rng_or(derive_seed(cfg.train.seed, 0, 2));
  std::mt19937_64 rng_test(derive_seed(cfg.train.seed, 0, 3));
  params.style = Domain::kSim;
  generate_dataset(rng_sim, params, cfg.synth.n_train, cfg.synth.n_groups, (out / "sim").string());
  params.style = Domain::kOr;
  generate_dataset(rng_or, params, cfg.synth.n_train, cfg.synth.n_groups, (out / "or").string());
  if (cfg.synth.n_test > 0) {
    params.group_prefix = "test";
    generate_dataset(rng_test, params, cfg.synth.n_test, std::max(1, cfg.synth.n_groups / 2),
                     (out / "or_test").string());
  }
  write_run_info(out, cfg);
  log << "synthetic data written to " << out.string() << "\n";
}

void cmd_train_detector(const ExperimentConfig& cfg, const RunOptions& opt, std::ostream& log) {
  const Domain domain = parse_domain(opt.domain);
  Dataset data = load_manifest_data(cfg, domain == Domain::kSim ? cfg.data.sim_manifest : cfg.data.or_manifest);
  const auto split = assign_folds(data, cfg.train.folds);
  std::vector<std::string> ids;
  for (const auto& s : data) ids.push_back(s.image.source_id);
  audit_split(split, ids);

  const auto folds = selected_folds(cfg);
  if (!opt.resume.empty() && folds.size() != 1) throw ConfigError("--resume needs a single --fold");
  auto dc = cfg.detector_config();
  dc.checkpoint_dir = cfg.output_path("detector/" + std::string(to_string(domain)));
  write_run_info(dc.checkpoint_dir, cfg);
  for (int f : folds) {
    if (split.train[f].empty() || split.val[f].empty()) throw ConfigError("fold " + std::to_string(f) + " is empty");
    const auto tr = subset(data, split.train[f]);
    const auto va = subset(data, split.val[f]);
    auto res = train_detector_on(tr, &va, dc, f, Stage::kDetector, opt.resume);
    res.model.freeze();
    const auto ev = evaluate_detector(res.model, va, dc.eval_radius, dc.eval_threshold, dc.eval_on_refined,
                                      dc.batch_size, dc.device);
    log << "Det_" << to_string(domain) << " fold " << f << ": best epoch " << res.best_epoch << ", val F1 "
        << ev.metrics.f1 << "\n";
  }
}

void cmd_train_gan(const ExperimentConfig& cfg, const RunOptions& opt, std::ostream& log) {
  auto gc = cfg.gan_config();
  const auto name = run_name(cfg.det_weights);
  gc.checkpoint_dir = cfg.output_path("gan/" + name);
  const auto folds = selected_folds(cfg);
  if (!opt.resume.empty() && folds.size() != 1) throw ConfigError("--resume needs a single --fold");

  // Fail on missing detectors before any data is touched.
  const auto det_dir_sim = cfg.output_path("detector/sim");
  const auto det_dir_or = cfg.output_path("detector/or");
  if (gc.needs_detectors()) {
    for (int f : folds)
      for (const auto& dir : {det_dir_sim, det_dir_or}) {
        const auto path = fold_file(dir, "detector", f, "_best.pt");
        if (!fs::exists(path))
          throw ConfigError("variant " + std::string(to_string(gc.det_weights.variant)) +
                            " needs pre-trained detectors; missing " + path);
      }
  }

  Dataset sim = load_manifest_data(cfg, cfg.data.sim_manifest);
  Dataset or_data = load_manifest_data(cfg, cfg.data.or_manifest);
  const auto split_sim = assign_folds(sim, cfg.train.folds);
  const auto split_or = assign_folds(or_data, cfg.train.folds);
  write_run_info(gc.checkpoint_dir, cfg);
  for (int f : folds) {
    std::optional<DetectorModel> det_sim, det_or;
    if (gc.needs_detectors()) {
      det_sim = load_detector(fold_file(det_dir_sim, "detector", f, "_best.pt"));
      det_or = load_detector(fold_file(det_dir_or, "detector", f, "_best.pt"));
      det_sim->freeze();
      det_or->freeze();
    }
    const auto res = train_gan(subset(sim, split_sim.train[f]), subset(or_data, split_or.train[f]), gc,
                               det_sim ? &*det_sim : nullptr, det_or ? &*det_or : nullptr, f, opt.resume);
    const auto& last = res.history.records();
    log << "GAN " << name << " fold " << f << ": " << last.size() << " epoch(s)";
    if (!last.empty()) log << ", final generator loss " << last.back().losses.at("g_total");
    log << "\n";
  }
}

void cmd_translate(const ExperimentConfig& cfg, std::ostream& log) {
  const auto name = run_name(cfg.det_weights);
  const auto gan_dir = cfg.output_path("gan/" + name);
  const fs::path out = cfg.output_path("fake/" + name);
  Dataset sim = load_manifest_data(cfg, cfg.data.sim_manifest);
  const auto split = assign_folds(sim, cfg.train.folds);
  Dataset fakes;
  // Every fold's generator translates the sim images it never saw.
  for (int f : selected_folds(cfg)) {
    const auto g = load_generator(fold_file(gan_dir, "gan", f, "_last.pt"), Domain::kSim);
    auto part = translate_dataset(g, Domain::kSim, subset(sim, split.val[f]), 8, parse_device(cfg.device));
    fakes.insert(fakes.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  const auto records = write_dataset(fakes, out.string(), "fake");
  write_manifest((out / "manifest.jsonl").string(), records);
  write_run_info(out, cfg);
  log << "translated " << fakes.size() << " sim images with " << name << " generators into " << out.string()
      << "\n";
}

std::vector<ImageEvaluation> evaluate_predictions(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (opt.manifest.empty()) throw ConfigError("--predictions needs --manifest with the ground truth");
  const auto manifest = cfg.resolve(opt.manifest);
  if (!fs::exists(manifest)) throw MissingArtifactError("manifest not found: " + manifest);
  const fs::path root = fs::path(manifest).parent_path();
  std::vector<ImageEvaluation> images;
  for (const auto& rec : read_manifest(manifest)) {
    if (!rec.annotation_path) throw ConfigError("manifest record " + rec.path + " has no annotation");
    const auto gt = read_annotation_file((root / *rec.annotation_path).string());
    const auto pred_path = fs::path(cfg.resolve(opt.predictions)) / fs::path(*rec.annotation_path).filename();
    if (!fs::exists(pred_path)) throw MissingArtifactError("prediction not found: " + pred_path.string());
    const auto pred = read_annotation_file(pred_path.string());
    images.push_back({fs::path(rec.path).stem().string(), rec.fold,
                      match_points(pred.landmarks, gt.landmarks, cfg.eval.radius)});
  }
  return images;
}

void cmd_evaluate(const ExperimentConfig& cfg, const RunOptions& opt, std::ostream& log) {
  std::vector<ImageEvaluation> images;
  std::string name = opt.name;
  const auto dev = parse_device(cfg.device);
  if (!opt.predictions.empty()) {
    images = evaluate_predictions(cfg, opt);
    if (name.empty()) name = "predictions";
  } else if (!opt.checkpoint.empty()) {
    auto model = load_detector(cfg.resolve(opt.checkpoint));
    model.freeze();
    const auto data = load_manifest_data(cfg, opt.manifest.empty() ? cfg.data.test_manifest : opt.manifest);
    images = evaluate_detector(model, data, cfg.eval.radius, cfg.eval.threshold, cfg.eval.on_refined, 16, dev).images;
    if (name.empty()) name = fs::path(opt.checkpoint).stem().string();
  } else {
    // Frozen Det_or of each fold on the fakes made by that fold's generator.
    const auto run = run_name(cfg.det_weights);
    const auto fakes = load_manifest_data(cfg, cfg.output_path("fake/" + run + "/manifest.jsonl"));
    std::map<int, Dataset> by_fold;
    for (const auto& s : fakes) by_fold[s.image.fold_id].push_back(s);
    for (const auto& [f, part] : by_fold) {
      auto det = load_detector(fold_file(cfg.output_path("detector/or"), "detector", f, "_best.pt"));
      det.freeze();
      auto ev = evaluate_detector(det, part, cfg.eval.radius, cfg.eval.threshold, cfg.eval.on_refined, 16, dev);
      for (auto& im : ev.images) im.fold = f;
      images.insert(images.end(), ev.images.begin(), ev.images.end());
    }
    if (name.empty()) name = "fake_" + run;
  }
  write_report(cfg.output_path("eval/" + name), images, cfg, name, log);
}

void cmd_fuse_retrain(const ExperimentConfig& cfg, std::ostream& log) {
  const Dataset real = load_manifest_data(cfg, cfg.data.or_manifest);
  const Dataset test = load_manifest_data(cfg, cfg.data.test_manifest);
  Dataset fake;
  if (cfg.fusion.include_fake)
    fake = load_manifest_data(cfg, cfg.output_path("fake/" + cfg.fusion.fake_variant + "/manifest.jsonl"));
  const std::string name = cfg.fusion.include_fake ? cfg.fusion.fake_variant : "real_only";
  auto dc = cfg.detector_config();
  dc.checkpoint_dir = cfg.output_path("fusion/" + name);
  write_run_info(dc.checkpoint_dir, cfg);
  const auto res = fuse_retrain(real, fake, test, dc);
  log << "fused training set: " << res.fused_size << " images (" << real.size() << " real + " << fake.size()
      << " fake)\n";
  write_report(dc.checkpoint_dir, res.test.images, cfg, "fusion_" + name, log);
}

void cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path root = cfg.output_path("");
  if (!fs::exists(root)) throw MissingArtifactError("output directory not found: " + root.string());
  std::vector<fs::path> reports;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "report.json") reports.push_back(e.path());
  std::sort(reports.begin(), reports.end());
  json summary = json::object();
  std::string csv = "run,pooled_f1,mean_f1,std_f1\n";
  for (const auto& p : reports) {
    std::ifstream f(p);
    json r;
    try {
      r = json::parse(f);
    } catch (const json::exception& e) {
      throw ParseError(p.string() + ": " + e.what());
    }
    const auto key = fs::relative(p.parent_path(), root).generic_string();
    json entry = {{"pooled", r.at("pooled")}};
    if (r.contains("aggregate")) entry["aggregate"] = r.at("aggregate");
    summary[key] = entry;
    char line[256];
    const double mean = r.contains("aggregate") ? r["aggregate"]["f1"]["mean"].get<double>() : 0.0;
    const double sd = r.contains("aggregate") ? r["aggregate"]["f1"]["std"].get<double>() : 0.0;
    std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%.4f\n", key.c_str(), r["pooled"]["f1"].get<double>(), mean, sd);
    csv += line;
  }
  write_text(root / "summary.json", summary.dump(1) + "\n");
  write_text(root / "summary.csv", csv);
  log << "summarized " << reports.size() << " report(s) into " << (root / "summary.csv").string() << "\n";
}

}  // namespace

int run(const RunOptions& opt, std::ostream& log) {
  try {
    const auto cfg = resolve_config(opt);
    switch (opt.command) {
      case Command::kSynthGen: cmd_synth_gen(cfg, log); break;
      case Command::kTrainDetector: cmd_train_detector(cfg, opt, log); break;
      case Command::kTrainGan: cmd_train_gan(cfg, opt, log); break;
      case Command::kTranslate: cmd_translate(cfg, log); break;
      case Command::kEvaluate: cmd_evaluate(cfg, opt, log); break;
      case Command::kFuseRetrain: cmd_fuse_retrain(cfg, log); break;
      case Command::kReport: cmd_report(cfg, log); break;
    }
    return exit_code::kOk;
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const c10::Error& e) {
    log << "error: " << e.what_without_backtrace() << "\n";
    return exit_code::kFailure;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return exit_code::kFailure;
  }
}

int main(int argc, const char* const* argv, std::ostream& log) {
  CLI::App app{"Suture landmark detection with detection-consistent image translation"};
  app.require_subcommand(1);
  app.fallthrough();

  RunOptions opt;
  std::uint64_t seed = 0;
  int fold = -1;
  std::string device;
  app.add_option("-c,--config", opt.config_path, "JSON experiment configuration");
  app.add_option("--set", opt.overrides, "Override a config value: key.path=value (repeatable)");
  auto* seed_opt = app.add_option("--seed", seed, "Run seed (train.seed)");
  auto* fold_opt = app.add_option("--fold", fold, "Run a single fold (train.fold)");
  auto* dev_opt = app.add_option("--device", device, std::string("Compute device; default from $") + kDeviceEnv);

  app.add_subcommand("synth-gen", "Generate the synthetic two-domain dataset");
  auto* td = app.add_subcommand("train-detector", "Train per-fold landmark detectors for one domain");
  td->add_option("--domain", opt.domain, "sim or or")->check(CLI::IsMember({"sim", "or"}));
  td->add_option("--resume", opt.resume, "Continue from a *_last.pt checkpoint");
  auto* tg = app.add_subcommand("train-gan", "Train per-fold translation networks");
  tg->add_option("--resume", opt.resume, "Continue from a gan_fold*_last.pt checkpoint");
  app.add_subcommand("translate", "Translate sim images to fake or images with the per-fold generators");
  auto* ev = app.add_subcommand("evaluate", "Score detections against annotations");
  ev->add_option("--checkpoint", opt.checkpoint, "Detector checkpoint to run on --manifest");
  ev->add_option("--manifest", opt.manifest, "Ground-truth manifest");
  ev->add_option("--predictions", opt.predictions, "Directory of predicted annotation files");
  ev->add_option("--name", opt.name, "Report directory name under eval/");
  app.add_subcommand("fuse-retrain", "Train a detector on real plus fake images and test it");
  app.add_subcommand("report", "Summarize every report under the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_code::kOk : exit_code::kUsage;
  }
  opt.command = parse_command(app.get_subcommands().front()->get_name());
  if (*seed_opt) opt.seed = seed;
  if (*fold_opt) opt.fold = fold;
  if (*dev_opt) opt.device = device;
  return run(opt, log);
}

}  // namespace dcg::cli
