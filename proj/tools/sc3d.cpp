// sc3d command-line driver. See docs/cli.md for the flag and config reference.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sc3d/sc3d.hpp"

namespace fs = std::filesystem;
using namespace sc3d;

namespace {

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4 };

// ---------------------------------------------------------------------------
// Shared option groups

struct TrackFlags {
  std::string sampler = "grid";
  std::string scorer = "model";
  std::string fusion = "early";
  std::string scheme = "all_previous";
  std::string agg = "mean";
  std::string grid_center = "gt";
  std::size_t count = 147;
  std::size_t gmm_k = 25;
  std::size_t batch_size = 64;
  GridSpec grid;

  void add_to(CLI::App& app) {
    app.add_option("--sampler", sampler, "Candidate sampler: grid, kalman, particle or gmm")
        ->capture_default_str();
    app.add_option("--scorer", scorer, "Candidate scorer: model or oracle (closest to ground truth)")
        ->capture_default_str();
    app.add_option("--fusion", fusion, "Model fusion: early (point clouds) or late (latents)")
        ->capture_default_str();
    app.add_option("--scheme", scheme, "Model frames: first_only, previous_only, first_and_previous, all_previous")
        ->capture_default_str();
    app.add_option("--agg", agg, "Late-fusion aggregator: mean, median or max")->capture_default_str();
    app.add_option("--grid-center", grid_center, "Grid reference: gt (evaluation protocol) or previous")
        ->capture_default_str();
    app.add_option("--count", count, "Candidates per frame for kalman, particle and gmm")->capture_default_str();
    app.add_option("--gmm-k", gmm_k, "Mixture components fitted on training-split motion")->capture_default_str();
    app.add_option("--batch-size", batch_size, "Candidates encoded per forward pass")->capture_default_str();
    app.add_option("--grid-range-t", grid.range_t, "Grid half-range in meters")->capture_default_str();
    app.add_option("--grid-step-t", grid.step_t, "Grid translation step in meters")->capture_default_str();
    app.add_option("--grid-range-alpha", grid.range_alpha, "Grid half-range in degrees")->capture_default_str();
    app.add_option("--grid-step-alpha", grid.step_alpha, "Grid rotation step in degrees")->capture_default_str();
  }
};

std::vector<Tracklet> load_split(const fs::path& root, Split split) {
  if (!fs::exists(root)) throw DataError("dataset root " + root.string() + " does not exist");
  return extract_tracklets(load_scenes(root, split_scenes(split)), split);
}

// Builds the tracker configuration; the GMM sampler is fitted on the
// training split found under `root`.
TrackerConfig tracker_config(const TrackFlags& f, std::uint64_t seed, const fs::path& root) {
  TrackerConfig cfg;
  cfg.sampler.kind = parse_sampler(f.sampler);
  cfg.scorer = parse_scorer(f.scorer);
  cfg.fusion = {parse_fusion_mode(f.fusion), parse_fusion_scheme(f.scheme), parse_aggregator(f.agg)};
  cfg.sampler.grid = f.grid;
  cfg.sampler.grid.validate();
  if (f.grid_center != "gt" && f.grid_center != "previous") {
    throw ConfigError("--grid-center expects gt or previous, got '" + f.grid_center + "'");
  }
  cfg.sampler.grid_on_ground_truth = f.grid_center == "gt";
  if (f.count < 1) throw ConfigError("--count must be >= 1");
  if (f.batch_size < 1) throw ConfigError("--batch-size must be >= 1");
  cfg.sampler.count = f.count;
  cfg.batch_size = f.batch_size;
  cfg.seed = seed;
  if (cfg.sampler.kind == SamplerKind::gmm) {
    if (f.gmm_k < 1) throw ConfigError("--gmm-k must be >= 1");
    const std::vector<PoseOffset> motion = collect_motion_offsets(load_split(root, Split::train));
    if (motion.empty()) throw DataError("gmm sampler: no training-split motion under " + root.string());
    std::mt19937_64 rng(seed ^ 0x6A09E667F3BCC909ULL);
    cfg.sampler.gmm = std::make_shared<const GaussianMixture>(fit_gmm(std::span(motion), f.gmm_k, rng));
  }
  return cfg;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config c = path.empty() ? Config{} : Config::load(path);
  for (const std::string& o : overrides) c.set(o);
  return c;
}

void warn_unused(const Config& c) {
  for (const std::string& k : c.unused_keys()) std::cerr << "warning: config key '" << k << "' was not used\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Training shared by `train` and `ablate`

struct TrainJob {
  TrainingConfig training;
  std::size_t pretrain_steps = 0;
  std::size_t pretrain_shapes = 200;
  std::size_t pretrain_batch = 8;
  std::string init_checkpoint;
};

TrainJob train_job_from(const Config& c) {
  TrainJob j;
  j.training = training_config_from(c);
  j.pretrain_steps = c.get_uint("pretrain_steps", 0);
  j.pretrain_shapes = c.get_uint("pretrain_shapes", j.pretrain_shapes);
  j.pretrain_batch = c.get_uint("pretrain_batch", j.pretrain_batch);
  j.init_checkpoint = c.get_string("init_checkpoint", "");
  if (j.pretrain_steps > 0 && j.pretrain_shapes < 1) throw ConfigError("config key 'pretrain_shapes' must be >= 1");
  return j;
}

FitResult run_training(const TrainJob& job, const std::vector<Tracklet>& train, const std::vector<Tracklet>& val,
                       const std::string& tag) {
  const TrainingConfig& tc = job.training;
  SiameseModel model = job.init_checkpoint.empty() ? SiameseModel(tc.shape, tc.seed)
                                                   : load_checkpoint(job.init_checkpoint);
  if (model.shape != tc.shape) {
    throw ConfigError("init_checkpoint " + job.init_checkpoint + " does not match the configured network sizes");
  }
  if (job.pretrain_steps > 0) {
    const auto shapes = synthetic_shape_collection(SyntheticConfig{}, job.pretrain_shapes, tc.shape.points,
                                                   tc.seed ^ 0xB5297A4D3F84D5B5ULL);
    PretrainConfig pc;
    pc.steps = job.pretrain_steps;
    pc.batch_size = job.pretrain_batch;
    pc.adam = tc.adam;
    pc.seed = tc.seed;
    const auto losses = pretrain_completion(shapes, model, pc);
    std::cerr << tag << "pretrain: completion loss " << losses.front() << " -> " << losses.back() << "\n";
  }
  return fit(train, val, tc, std::move(model), [&](const EpochLog& e) {
    std::cerr << tag << "epoch " << e.epoch << "  val l_tr " << e.val.l_tr << "  l_comp " << e.val.l_comp
              << "  l_total " << e.val.l_total << "  lr " << e.lr << "\n";
  });
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const fs::path& out, std::uint64_t seed, const SyntheticConfig& sc) {
  sc.validate();
  const auto scenes = generate_synthetic_dataset(sc, seed);
  std::size_t frames = 0;
  for (const Scene& s : scenes) {
    write_scene(out, s);
    frames += s.frames.size();
  }
  std::cout << "wrote " << scenes.size() << " scenes (" << frames << " frames) to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::optional<std::uint64_t> seed, std::string out, std::string log_path) {
  Config c = load_config(config_path, overrides);
  if (seed) c.set("seed", std::to_string(*seed));
  const fs::path root = dataset_root(c);
  const TrainJob job = train_job_from(c);
  if (out.empty()) out = c.get_string("checkpoint", "model.ckpt");
  if (log_path.empty()) log_path = c.get_string("log", out + ".log.csv");
  warn_unused(c);

  const auto train = load_split(root, Split::train);
  const auto val = load_split(root, Split::val);
  std::cerr << "train: " << train.size() << " tracklets, val: " << val.size() << " tracklets\n";
  const FitResult r = run_training(job, train, val, "");
  save_checkpoint(out, r.best);
  std::ostringstream log;
  write_training_log(log, r.log);
  write_text(log_path, log.str());
  std::cout << "best epoch " << r.best_epoch << " val l_total " << r.log[r.best_epoch].val.l_total << "\n"
            << "checkpoint " << out << "\nlog " << log_path << "\n";
  return kOk;
}

int cmd_track(const std::string& checkpoint, const fs::path& root, const std::string& split_name,
              const TrackFlags& flags, std::uint64_t seed, std::size_t jobs, const fs::path& out) {
  const TrackerConfig cfg = tracker_config(flags, seed, root);
  std::optional<SiameseModel> model;
  if (cfg.scorer == ScorerKind::model) {
    if (checkpoint.empty()) throw ConfigError("--checkpoint is required with the model scorer");
    model = load_checkpoint(checkpoint);
  }
  const auto tracklets = load_split(root, parse_split(split_name));
  if (tracklets.empty()) throw DataError("no tracklets in the " + split_name + " split under " + root.string());
  const auto results = track_all(tracklets, cfg, model ? &model->encoder : nullptr, jobs);

  std::ostringstream os;
  write_track_results(os, results);
  write_text(out, os.str());
  std::size_t frames = 0, candidates = 0, failed = 0;
  for (const TrackResult& r : results) {
    failed += r.failed;
    for (std::size_t i = 1; i < r.frames.size(); ++i) {
      ++frames;
      candidates += r.frames[i].candidates;
    }
  }
  std::cout << "tracked " << results.size() << " tracklets, " << frames << " frames";
  if (frames) std::cout << ", " << candidates / frames << " candidates per frame";
  if (failed) std::cout << ", " << failed << " failed";
  std::cout << "\n";
  for (const TrackResult& r : results) {
    if (r.failed) std::cerr << "scene " << r.scene_id << " track " << r.track_id << " failed: " << r.error << "\n";
  }
  std::cout << "results " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const std::vector<std::string>& result_paths, const fs::path& root, const std::string& split_name,
             const std::string& mode, const std::vector<std::string>& groups, const fs::path& out) {
  EvalOptions opts;
  opts.mode = parse_eval_mode(mode);
  for (const std::string& g : groups) {
    if (g == "occlusion") opts.group_occlusion = true;
    else if (g == "motion") opts.group_motion = true;
    else throw ConfigError("unknown group '" + g + "' (expected occlusion or motion)");
  }
  const auto tracklets = load_split(root, parse_split(split_name));
  std::vector<OpeReport> runs;
  for (const std::string& p : result_paths) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open results " + p);
    try {
      runs.push_back(evaluate_run(read_track_results(in, p), tracklets, opts));
    } catch (const DataError& e) {
      throw DataError(p + ": " + e.what());
    }
  }
  const OpeReport rep = average_reports(runs);
  nlohmann::json j = report_to_json(rep);
  j["mode"] = mode;
  j["split"] = split_name;
  fs::create_directories(out);
  write_text(out / "report.json", j.dump(2) + "\n");
  std::ostringstream sc, pc;
  write_curve_csv(sc, rep.success_curve, false);
  write_curve_csv(pc, rep.precision_curve, true);
  write_text(out / "success_curve.csv", sc.str());
  write_text(out / "precision_curve.csv", pc.str());

  std::cout << std::fixed << std::setprecision(2) << "Success " << rep.success << "  Precision " << rep.precision
            << "  (" << rep.frames << " frames, " << rep.runs << " run" << (rep.runs == 1 ? "" : "s") << ")\n";
  for (const auto& [name, g] : rep.groups) {
    std::cout << "  " << name << ": Success " << g.success << "  Precision " << g.precision << "  (" << g.frames
              << " frames)\n";
  }
  if (rep.failed_tracklets) std::cout << "  failed tracklets: " << rep.failed_tracklets << "\n";
  return kOk;
}

int cmd_complete(const std::string& checkpoint, const fs::path& input, const fs::path& out, std::uint64_t seed) {
  const SiameseModel m = load_checkpoint(checkpoint);
  const PointCloud x = read_cloud(input);
  if (x.empty()) throw DataError(input.string() + " contains no points");
  std::mt19937_64 rng(seed);
  const PointCloud xs = resample(x, m.encoder.num_points(), rng);
  const PointCloud recon = decode(m.decoder, encode(m.encoder, xs));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_cloud(out, recon);
  std::cout << "wrote " << recon.size() << " points to " << out.string() << "\n"
            << "completion_metric " << std::setprecision(9) << completion_metric(recon, x) << "\n";
  return kOk;
}

int cmd_heatmap(const std::string& checkpoint, const fs::path& root, const std::string& split_name,
                std::optional<int> scene, std::optional<int> track, std::size_t frame, const TrackFlags& flags,
                std::uint64_t seed, const fs::path& out) {
  const SiameseModel m = load_checkpoint(checkpoint);
  const auto tracklets = load_split(root, parse_split(split_name));
  const Tracklet* t = nullptr;
  for (const Tracklet& c : tracklets) {
    if ((!scene || c.scene_id == *scene) && (!track || c.track_id == *track)) {
      t = &c;
      break;
    }
  }
  if (!t) throw DataError("no matching tracklet in the " + split_name + " split");
  if (frame >= t->size()) {
    throw PreconditionError("--frame " + std::to_string(frame) + " is outside the tracklet's " +
                            std::to_string(t->size()) + " frames");
  }
  const FusionConfig fc{parse_fusion_mode(flags.fusion), parse_fusion_scheme(flags.scheme),
                        parse_aggregator(flags.agg)};
  const CropPolicy crop;
  // Model from the ground-truth shapes preceding `frame` (frame 0 uses itself).
  ModelState state = init_model(frame_shape(t->frames[0], crop), fc, m.encoder, seed);
  for (std::size_t i = 1; i < frame; ++i) {
    const PointCloud s = frame_shape(t->frames[i], crop);
    if (fc.mode == FusionMode::early) {
      update_model(state, s, m.encoder);
    } else {
      std::mt19937_64 rng = detail::frame_rng(seed, *t, i, 3);
      update_model_latent(state, encode(m.encoder, resample(s, m.encoder.num_points(), rng)));
    }
  }
  GridSpec grid = flags.grid;
  grid.validate();
  const Box3D& gt = t->frames[frame].box;
  const auto cells = exhaustive_grid(grid, gt);
  std::vector<Box3D> boxes;
  for (const Candidate& c : cells) boxes.push_back(c.box);
  std::mt19937_64 rng = detail::frame_rng(seed, *t, frame, 2);
  std::vector<PointCloud> shapes;
  for (const PointCloud& s : candidate_shapes(*t->frames[frame].cloud, boxes, crop)) {
    shapes.push_back(resample(s, m.encoder.num_points(), rng));
  }
  const auto scores = score_candidates(model_latent(state, m.encoder), shapes, m.encoder, flags.batch_size);

  std::ostringstream os;
  os << "t_x,t_y,alpha,score\n" << std::setprecision(17);
  std::size_t best = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    os << cells[i].offset.t_x << ',' << cells[i].offset.t_y << ',' << cells[i].offset.alpha << ',' << scores[i]
       << '\n';
    if (scores[i] > scores[best]) best = i;
  }
  write_text(out, os.str());
  std::cout << "scene " << t->scene_id << " track " << t->track_id << " frame " << frame << ": " << cells.size()
            << " cells\n"
            << "best cell t_x " << cells[best].offset.t_x << " t_y " << cells[best].offset.t_y << " alpha "
            << cells[best].offset.alpha << " score " << scores[best] << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  std::string setting;
  double success = 0.0, precision = 0.0;
  std::optional<double> completion;
};

OpeReport track_and_score(const std::vector<Tracklet>& test, const TrackerConfig& cfg, const Encoder* enc,
                          std::size_t jobs) {
  return evaluate_run(track_all(test, cfg, enc, jobs), test);
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               std::optional<std::uint64_t> seed, const std::string& sweep, std::vector<std::string> values,
               TrackFlags flags, std::size_t jobs, const fs::path& out) {
  Config c = load_config(config_path, overrides);
  if (seed) c.set("seed", std::to_string(*seed));
  const fs::path root = dataset_root(c);
  const TrainJob base = train_job_from(c);
  const std::uint64_t run_seed = base.training.seed;
  if (sweep != "lambda" && sweep != "K" && sweep != "fusion" && sweep != "sampler") {
    throw ConfigError("unknown sweep '" + sweep + "' (expected lambda, K, fusion or sampler)");
  }
  warn_unused(c);
  const auto train = load_split(root, Split::train);
  const auto val = load_split(root, Split::val);
  const auto test = load_split(root, Split::test);
  if (test.empty()) throw DataError("no test-split tracklets under " + root.string());

  std::vector<AblationRow> rows;
  if (sweep == "lambda" || sweep == "K") {
    if (values.empty()) {
      values = sweep == "lambda" ? std::vector<std::string>{"0", "1e-6", "completion_only"}
                                 : std::vector<std::string>{"32", "128"};
    }
    std::vector<TrainJob> settings;
    for (const std::string& v : values) {
      TrainJob j = base;
      Config one;
      if (sweep == "lambda" && v == "completion_only") {
        j.training.weights = {1.0, 0.0};
      } else if (sweep == "lambda") {
        one.set("lambda_comp", v);
        j.training.weights.lambda_comp = one.get_double("lambda_comp");
        if (j.training.weights.lambda_comp < 0.0) throw ConfigError("lambda values must be >= 0");
      } else {
        one.set("latent_size", v);
        j.training.shape.latent = one.get_uint("latent_size");
        if (j.training.shape.latent < 1) throw ConfigError("K values must be >= 1");
      }
      settings.push_back(j);
    }
    TrackerConfig tcfg = tracker_config(flags, run_seed, root);
    rows.resize(settings.size());
    parallel_for(settings.size(), jobs, [&](std::size_t i) {
      const std::string tag = "[" + sweep + "=" + values[i] + "] ";
      const FitResult r = run_training(settings[i], train, val, tag);
      const OpeReport rep = track_and_score(test, tcfg, &r.best.encoder, 1);
      rows[i] = {sweep + "=" + values[i], rep.success, rep.precision,
                 score_model_completion(r.best, test, settings[i].training.crop, run_seed).chamfer};
    });
  } else {
    const FitResult r = run_training(base, train, val, "");
    const Encoder* enc = &r.best.encoder;
    struct Variant {
      std::string name;
      TrackFlags flags;
    };
    std::vector<Variant> variants;
    if (sweep == "fusion") {
      for (const char* s : {"first_only", "previous_only", "first_and_previous", "all_previous"}) {
        TrackFlags f = flags;
        f.fusion = "early";
        f.scheme = s;
        variants.push_back({std::string("early/") + s, f});
      }
      for (const char* a : {"mean", "max"}) {
        TrackFlags f = flags;
        f.fusion = "late";
        f.scheme = "all_previous";
        f.agg = a;
        variants.push_back({std::string("late/all_previous/") + a, f});
      }
    } else {
      for (const char* s : {"grid", "kalman", "particle", "gmm"})
        for (const char* sc : {"model", "oracle"}) {
          TrackFlags f = flags;
          f.sampler = s;
          f.scorer = sc;
          variants.push_back({std::string(s) + "/" + sc, f});
        }
    }
    for (const Variant& v : variants) {
      const OpeReport rep = track_and_score(test, tracker_config(v.flags, run_seed, root), enc, jobs);
      rows.push_back({v.name, rep.success, rep.precision, std::nullopt});
      std::cerr << v.name << ": Success " << rep.success << "  Precision " << rep.precision << "\n";
    }
  }

  std::ostringstream os;
  os << "setting,success,precision,completion\n" << std::setprecision(10);
  for (const AblationRow& r : rows) {
    os << r.setting << ',' << r.success << ',' << r.precision << ',';
    if (r.completion) os << *r.completion;
    os << '\n';
  }
  write_text(out, os.str());
  std::cout << os.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sc3d: Siamese point-cloud tracking with shape-completion regularization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sc3d 1.0");

  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
  std::size_t jobs = 1;
  std::vector<std::string> overrides;
  std::string config_path, checkpoint, data, split = "test", out, log_path;

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic KITTI-format tracking dataset");
  SyntheticConfig sc;
  bool clean = false, no_occlusion = false, no_clutter = false;
  std::optional<double> speed;
  gen->add_option("--out", out, "Dataset root to create")->required();
  gen->add_option("--seed", seed, "Generator seed")->capture_default_str();
  gen->add_option("--frames", sc.frames, "Frames per scene")->capture_default_str();
  gen->add_option("--noise", sc.noise_sigma, "Per-point Gaussian noise in meters")->capture_default_str();
  gen->add_option("--dropout", sc.dropout, "Per-point drop probability")->capture_default_str();
  gen->add_option("--speed", speed, "Fixed speed in meters per frame for every car");
  gen->add_flag("--no-occlusion", no_occlusion, "Disable inter-car occlusion");
  gen->add_flag("--no-clutter", no_clutter, "Disable ground points and clutter objects");
  gen->add_flag("--clean", clean, "Noiseless, dense, unoccluded scans (implies the two flags above)");

  // train
  auto* train = app.add_subcommand("train", "Train encoder and decoder from a config file");
  train->add_option("--config", config_path, "Key = value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--set", overrides, "Override a config key (key=value), repeatable");
  train->add_option("--seed", seed_override, "Overrides the 'seed' key");
  train->add_option("--out", out, "Checkpoint path (default: 'checkpoint' key or model.ckpt)");
  train->add_option("--log", log_path, "Training log CSV (default: <checkpoint>.log.csv)");

  // track
  auto* track = app.add_subcommand("track", "Track every tracklet of a split and write JSON lines");
  TrackFlags track_flags;
  track->add_option("--checkpoint", checkpoint, "Model checkpoint (not needed with --scorer oracle)");
  track->add_option("--data", data, "Dataset root (SC3D_DATA_ROOT overrides)");
  track->add_option("--split", split, "train, val or test")->capture_default_str();
  track->add_option("--out", out, "Results file (JSON lines)")->required();
  track->add_option("--seed", seed, "Seed for sampling and resampling")->capture_default_str();
  track->add_option("--jobs", jobs, "Parallel tracklets")->capture_default_str();
  track_flags.add_to(*track);

  // eval
  auto* eval = app.add_subcommand("eval", "One Pass Evaluation of tracking results");
  std::vector<std::string> results, groups;
  std::string mode = "3d";
  eval->add_option("--results", results, "Results file(s); several files are averaged as runs")->required();
  eval->add_option("--data", data, "Dataset root (SC3D_DATA_ROOT overrides)");
  eval->add_option("--split", split, "train, val or test")->capture_default_str();
  eval->add_option("--mode", mode, "3d or bev")->capture_default_str();
  eval->add_option("--groups", groups, "Breakdowns: occlusion, motion")->delimiter(',');
  eval->add_option("--out", out, "Output directory for report.json and curve CSVs")->required();

  // complete
  auto* complete = app.add_subcommand("complete", "Decode the completed shape of a canonical cloud");
  std::string input;
  complete->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  complete->add_option("--input", input, "Input cloud (.bin KITTI quadruples or text)")->required();
  complete->add_option("--out", out, "Output cloud (.bin or text)")->required();
  complete->add_option("--seed", seed, "Resampling seed")->capture_default_str();

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "Similarity scores over the exhaustive grid for one frame");
  TrackFlags heat_flags;
  std::optional<int> scene_id, track_id;
  std::size_t frame = 1;
  heatmap->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  heatmap->add_option("--data", data, "Dataset root (SC3D_DATA_ROOT overrides)");
  heatmap->add_option("--split", split, "train, val or test")->capture_default_str();
  heatmap->add_option("--scene", scene_id, "Scene id (default: first in split)");
  heatmap->add_option("--track", track_id, "Track id (default: first in scene)");
  heatmap->add_option("--frame", frame, "Frame index within the tracklet")->capture_default_str();
  heatmap->add_option("--out", out, "CSV of t_x,t_y,alpha,score rows")->required();
  heatmap->add_option("--seed", seed, "Resampling seed")->capture_default_str();
  heat_flags.add_to(*heatmap);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train/evaluate a sweep and write a results table");
  std::string sweep;
  std::vector<std::string> values;
  TrackFlags ablate_flags;
  ablate->add_option("--config", config_path, "Key = value config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--set", overrides, "Override a config key (key=value), repeatable");
  ablate->add_option("--seed", seed_override, "Overrides the 'seed' key");
  ablate->add_option("--sweep", sweep, "lambda, K, fusion or sampler")->required();
  ablate->add_option("--values", values, "Sweep values for lambda or K (comma separated)")->delimiter(',');
  ablate->add_option("--jobs", jobs, "Parallel settings (lambda, K) or tracklets (fusion, sampler)")
      ->capture_default_str();
  ablate->add_option("--out", out, "Output CSV")->required();
  ablate_flags.add_to(*ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  auto data_root = [&]() -> fs::path {
    Config c;
    if (!data.empty()) c.set("data", data);
    try {
      return dataset_root(c);
    } catch (const ConfigError&) {
      throw ConfigError("no dataset: pass --data or set SC3D_DATA_ROOT");
    }
  };

  try {
    if (*gen) {
      if (clean) {
        sc.noise_sigma = 0.0;
        sc.dropout = 0.0;
        sc.falloff_range = 0.0;
        sc.resample_surface = false;
        no_occlusion = no_clutter = true;
      }
      if (no_occlusion) sc.occlusion = false;
      if (no_clutter) {
        sc.ground_points = 0;
        sc.clutter_objects = 0;
      }
      sc.speed = speed;
      return cmd_generate(out, seed, sc);
    }
    if (*train) return cmd_train(config_path, overrides, seed_override, out, log_path);
    if (*track) return cmd_track(checkpoint, data_root(), split, track_flags, seed, jobs, out);
    if (*eval) return cmd_eval(results, data_root(), split, mode, groups, out);
    if (*complete) return cmd_complete(checkpoint, input, out, seed);
    if (*heatmap) {
      return cmd_heatmap(checkpoint, data_root(), split, scene_id, track_id, frame, heat_flags, seed, out);
    }
    if (*ablate) return cmd_ablate(config_path, overrides, seed_override, sweep, values, ablate_flags, jobs, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
