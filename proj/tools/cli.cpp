#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ascnet/errors.hpp"
#include "ascnet/experiment.hpp"
#include "ascnet/gradcheck.hpp"
#include "ascnet/parallel.hpp"

namespace ascnet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

fs::path parent_or_dot(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

void echo_config(const fs::path& dir, const nlohmann::ordered_json& j) {
  ensure_dir(dir);
  write_text(dir / "effective_config.json", j.dump(2) + "\n");
}

struct SimulateArgs {
  std::string config;
  std::string preset;
  int subjects = 0;
  int size = 0;
  int slices = 0;
  double counts = 0;
  double scatter_fraction = 0;
  double variability = 0;
  bool couch = true;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, const CLI::App& sub) {
  SimulationRecord r;
  if (!a.config.empty()) r = simulation_record_from_json(read_text(a.config), r);
  if (sub.count("--preset")) r.preset = a.preset;
  if (sub.count("--subjects")) r.subjects = a.subjects;
  if (sub.count("--size")) r.size = a.size;
  if (sub.count("--slices")) r.slices = a.slices;
  if (sub.count("--counts")) r.counts = a.counts;
  if (sub.count("--scatter-fraction")) r.scatter_fraction = a.scatter_fraction;
  if (sub.count("--variability")) r.variability = a.variability;
  if (sub.count("--couch") || sub.count("--no-couch")) r.couch = a.couch;
  if (sub.count("--seed")) r.seed = a.seed;

  preset_from_string(r.preset);
  if (r.subjects < 1) throw ConfigError("--subjects must be >= 1");
  if (r.size < 8) throw ConfigError("--size must be >= 8");
  if (!(r.variability >= 0.0 && r.variability <= 1.0)) throw ConfigError("--variability must be in [0, 1]");

  const fs::path out = a.out;
  ensure_dir(out);
  write_text(out / "effective_config.json", simulation_record_to_json(r));
  const auto t0 = Clock::now();
  const DatasetManifest m = simulate_dataset(r, out, log);
  std::printf("simulated %zu subjects (%zu train / %zu test) in %.1f s -> %s\n", m.subjects.size(),
              m.split.train_ids.size(), m.split.test_ids.size(), seconds_since(t0),
              (out / "manifest.json").string().c_str());
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string out;
  std::string history;
  int epochs = 0;
  int batch_size = 0;
  double lr = 0;
  std::uint64_t seed = 0;
  int snapshot_every = 0;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub, bool deterministic) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_text(a.config), cfg);
  if (sub.count("--epochs")) cfg.max_epochs = a.epochs;
  if (sub.count("--batch-size")) cfg.batch_size = a.batch_size;
  if (sub.count("--lr")) cfg.learning_rate = a.lr;
  if (sub.count("--seed")) cfg.seed = a.seed;
  cfg.validate();

  const fs::path manifest_path = a.manifest;
  const fs::path base = parent_or_dot(manifest_path);
  const DatasetManifest m = read_manifest(manifest_path);
  m.validate(&base);  // fail fast, before any training

  const fs::path out = a.out;
  const fs::path history = a.history.empty() ? fs::path(out.string() + ".history.jsonl") : fs::path(a.history);
  ensure_dir(parent_or_dot(out));
  ensure_dir(parent_or_dot(history));
  write_text(parent_or_dot(out) / "effective_config.json", train_config_to_json(cfg));

  const std::vector<SlicePair> slices = load_training_slices(m, base);
  log("training on " + std::to_string(slices.size()) + " slices from " + std::to_string(m.split.train_ids.size()) +
      " subjects");
  const auto t0 = Clock::now();
  TrainResult r = train(slices, cfg, [](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3d  loss %.6g  lr %.3g%s  %.1f s", e.epoch, e.loss, e.lr,
                  e.lr_halved ? " (halved)" : "", e.wall_seconds);
    log(buf);
  }, [&](int epoch, const UNet<float>& model) {
    if (a.snapshot_every > 0 && epoch % a.snapshot_every == 0) {
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, ".e%03d", epoch);
      save_checkpoint(model, out.string() + suffix);
    }
  });
  save_checkpoint(r.model, out);
  write_text(history, r.history.to_jsonl(!deterministic));
  std::printf("final epoch %d loss %.6g, wall time %.1f s -> %s\n", r.history.epochs.back().epoch,
              r.history.epochs.back().loss, seconds_since(t0), out.string().c_str());
  return 0;
}

struct PredictArgs {
  std::string model;
  std::string in;
  std::string out;
  std::string manifest;
  std::string out_dir;
  std::string ids = "test";
};

int cmd_predict(const PredictArgs& a) {
  UNet<float> model = load_checkpoint(a.model);
  if (!a.manifest.empty()) {
    if (a.out_dir.empty()) throw ConfigError("--manifest needs --out-dir");
    const fs::path manifest_path = a.manifest;
    const fs::path base = parent_or_dot(manifest_path);
    const DatasetManifest m = read_manifest(manifest_path);
    m.validate(&base);
    std::vector<std::string> ids;
    if (a.ids == "test") {
      ids = m.split.test_ids;
    } else if (a.ids == "train") {
      ids = m.split.train_ids;
    } else if (a.ids == "all") {
      for (const auto& s : m.subjects) ids.push_back(s.id);
    } else {
      throw ConfigError("--ids must be test, train or all");
    }
    echo_config(a.out_dir, {{"model", a.model}, {"manifest", a.manifest}, {"ids", a.ids}});
    const auto t0 = Clock::now();
    predict_subjects(model, m, base, ids, a.out_dir, log);
    std::printf("predicted %zu volumes in %.2f s (%.3f s per volume) -> %s\n", ids.size(), seconds_since(t0),
                ids.empty() ? 0.0 : seconds_since(t0) / ids.size(), a.out_dir.c_str());
    return 0;
  }
  if (a.in.empty() || a.out.empty()) throw ConfigError("predict needs --in and --out (or --manifest and --out-dir)");
  const RawVolume nc = read_raw_volume(a.in);
  const auto t0 = Clock::now();
  const ImageVolume pred = predict(model, nc.volume);
  const double dt = seconds_since(t0);
  echo_config(parent_or_dot(a.out), {{"model", a.model}, {"in", a.in}, {"out", a.out}});
  write_raw_volume(a.out, pred, "pet_dcnn");
  std::printf("predicted %dx%dx%d volume in %.3f s -> %s\n", pred.slices, pred.height, pred.width, dt,
              payload_path(a.out).string().c_str());
  return 0;
}

struct EvaluateArgs {
  std::string manifest;
  std::string pred;
  std::string report;
  std::string hist;
  bool whole_image = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const fs::path manifest_path = a.manifest;
  const DatasetManifest m = read_manifest(manifest_path);
  const MetricsReport rep = evaluate_predictions(m, parent_or_dot(manifest_path), a.pred, a.whole_image);
  echo_config(parent_or_dot(a.report), {{"manifest", a.manifest},
                                         {"pred", a.pred},
                                         {"whole_image", a.whole_image},
                                         {"histogram", {{"range", {0.5, 20.0}}, {"bins", 100}}}});
  write_text(a.report, rep.to_json());
  if (!a.hist.empty()) {
    ensure_dir(parent_or_dot(a.hist));
    write_histogram_pgm(rep.histogram, a.hist);
  }
  std::printf("subjects %zu  nrmse %.4f +/- %.4f  psnr %.2f +/- %.2f dB  ssim %.4f +/- %.4f\n", rep.subjects.size(),
              rep.nrmse.mean, rep.nrmse.std, rep.psnr_db.mean, rep.psnr_db.std, rep.ssim.mean, rep.ssim.std);
  std::printf("joint histogram: %zu pairs  slope %.4f  R2 %.4f\n", rep.histogram.pairs, rep.histogram.slope,
              rep.histogram.r2);
  std::printf("groups: G1 %zu  G2 %zu  G3 %zu\n", rep.groups.g1.size(), rep.groups.g2.size(), rep.groups.g3.size());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
  GradCheckOptions opt;
  opt.seed = seed;
  opt.corrupt_conv_backward = corrupt;
  const auto rows = run_gradcheck(opt);
  bool ok = true;
  std::printf("%-20s %14s %8s  %s\n", "layer", "max_rel_error", "checked", "result");
  for (const auto& r : rows) {
    std::printf("%-20s %14.3e %8zu  %s\n", r.name.c_str(), r.max_rel_error, r.checked, r.pass ? "pass" : "FAIL");
    ok &= r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Image-space attenuation and scatter correction: simulation, training, prediction, evaluation"};
  app.require_subcommand(1);
  bool deterministic = false;
  int threads = 0;
  app.add_flag("--deterministic", deterministic, "Single-threaded, fixed-order execution");
  app.add_option("--threads", threads, "Worker threads (default: ASC_THREADS or all cores)")->check(CLI::PositiveNumber);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Simulate paired NC/ASC volumes and write a dataset manifest");
  sim->add_option("--config", sa.config, "JSON file with simulation settings")->check(CLI::ExistingFile);
  sim->add_option("--preset", sa.preset, "Phantom preset")->check(CLI::IsMember({"brain", "abdomen"}));
  sim->add_option("--subjects", sa.subjects, "Number of subjects")->check(CLI::PositiveNumber);
  sim->add_option("--size", sa.size, "Image height and width in pixels")->check(CLI::Range(8, 4096));
  sim->add_option("--slices", sa.slices, "Slices per volume")->check(CLI::PositiveNumber);
  sim->add_option("--counts", sa.counts, "Expected prompts per slice for a 300 s scan")->check(CLI::PositiveNumber);
  sim->add_option("--scatter-fraction", sa.scatter_fraction, "Scatter fraction in [0, 0.9)")
      ->check(CLI::Range(0.0, 0.9));
  sim->add_option("--variability", sa.variability, "Phantom variability in [0, 1]")->check(CLI::Range(0.0, 1.0));
  sim->add_flag("--couch,!--no-couch", sa.couch, "Include the couch in the attenuation map");
  sim->add_option("--seed", sa.seed, "Root seed");
  sim->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the network on a manifest's training subjects");
  tr->add_option("--manifest", ta.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", ta.config, "JSON training config")->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--history", ta.history, "History JSONL path (default <out>.history.jsonl)");
  tr->add_option("--epochs", ta.epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", ta.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", ta.lr, "Initial learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--seed", ta.seed, "Training seed");
  tr->add_option("--snapshot-every", ta.snapshot_every, "Also save <out>.eNNN every N epochs")
      ->check(CLI::PositiveNumber);

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Predict ASC volumes from NC volumes");
  pr->add_option("--model", pa.model, "Checkpoint")->required();
  pr->add_option("--in", pa.in, "Input NC volume (.f32 or .json)");
  pr->add_option("--out", pa.out, "Output volume path");
  pr->add_option("--manifest", pa.manifest, "Predict subjects of this manifest instead");
  pr->add_option("--out-dir", pa.out_dir, "Output directory for --manifest mode");
  pr->add_option("--ids", pa.ids, "Subjects for --manifest mode")->check(CLI::IsMember({"test", "train", "all"}));

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score predictions of the test subjects");
  ev->add_option("--manifest", ea.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--pred", ea.pred, "Directory with <id>_pet_dcnn volumes")->required();
  ev->add_option("--report", ea.report, "Report JSON path")->required();
  ev->add_option("--hist", ea.hist, "Joint-histogram PGM path");
  ev->add_flag("--whole-image", ea.whole_image, "Score every voxel instead of the body mask");

  std::uint64_t gc_seed = 1;
  bool gc_corrupt = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer and the full network");
  gc->add_option("--seed", gc_seed, "Seed for the random test tensors");
  gc->add_flag("--corrupt-conv-backward", gc_corrupt, "Scale conv weight gradients by 1.05")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (deterministic) {
    set_thread_limit(1);
  } else if (threads > 0) {
    set_thread_limit(threads);
  }

  try {
    if (*sim) return cmd_simulate(sa, *sim);
    if (*tr) return cmd_train(ta, *tr, deterministic);
    if (*pr) return cmd_predict(pa);
    if (*ev) return cmd_evaluate(ea);
    if (*gc) return cmd_gradcheck(gc_seed, gc_corrupt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"ascnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ascnet
