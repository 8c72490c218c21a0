#pragma once

// Frame-by-frame single-object tracking: sample candidate boxes, score each
// against the model latent, keep the best and fold it into the model.

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sc3d/data_io.hpp"
#include "sc3d/errors.hpp"
#include "sc3d/fusion.hpp"
#include "sc3d/geometry.hpp"
#include "sc3d/network.hpp"
#include "sc3d/sampling.hpp"

namespace sc3d {

enum class SamplerKind { grid, kalman, particle, gmm };
enum class ScorerKind { model, oracle };

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "grid") return SamplerKind::grid;
  if (s == "kalman") return SamplerKind::kalman;
  if (s == "particle") return SamplerKind::particle;
  if (s == "gmm") return SamplerKind::gmm;
  throw ConfigError("unknown sampler '" + s + "' (expected grid, kalman, particle or gmm)");
}

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::grid: return "grid";
    case SamplerKind::kalman: return "kalman";
    case SamplerKind::particle: return "particle";
    case SamplerKind::gmm: return "gmm";
  }
  return "?";
}

inline ScorerKind parse_scorer(const std::string& s) {
  if (s == "model") return ScorerKind::model;
  if (s == "oracle") return ScorerKind::oracle;
  throw ConfigError("unknown scorer '" + s + "' (expected model or oracle)");
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::grid;
  GridSpec grid;
  // Evaluation protocol: center the grid on the current ground-truth box.
  bool grid_on_ground_truth = true;
  std::size_t count = 147;  // candidates per frame for the stochastic samplers
  KalmanConfig kalman;
  ParticleConfig particle;
  std::shared_ptr<const GaussianMixture> gmm;  // fitted on training motion
};

struct TrackerConfig {
  SamplerConfig sampler;
  FusionConfig fusion;
  CropPolicy crop;
  ScorerKind scorer = ScorerKind::model;
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;  // candidates encoded per forward pass
};

struct FrameResult {
  int frame = 0;
  Box3D box;
  double score = 0.0;
  std::size_t candidates = 0;
};

struct TrackResult {
  int scene_id = 0;
  int track_id = 0;
  std::vector<FrameResult> frames;
  bool failed = false;
  std::string error;
};

// Cosine similarity of every candidate against `model_z`, encoded in batches.
inline std::vector<double> score_candidates(const LatentVector& model_z, const std::vector<PointCloud>& candidates,
                                            const Encoder& enc, std::size_t batch_size = 64) {
  if (batch_size < 1) throw PreconditionError("score_candidates: batch size must be >= 1");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  const std::size_t k = enc.latent_size();
  for (std::size_t start = 0; start < candidates.size(); start += batch_size) {
    const std::size_t end = std::min(candidates.size(), start + batch_size);
    const Tensor z = enc.infer(clouds_to_tensor(std::span(candidates.data() + start, end - start), enc.num_points()));
    for (std::size_t b = 0; b < end - start; ++b) {
      scores.push_back(cosine_similarity(std::span(z.values.data() + b * k, k), model_z));
    }
  }
  return scores;
}

// Highest score; ties go to the box nearest `previous`, then to the lowest index.
inline std::pair<std::size_t, Box3D> select_best(const std::vector<Box3D>& candidates,
                                                 const std::vector<double>& scores, const Box3D& previous) {
  if (candidates.empty()) throw PreconditionError("select_best: no candidates");
  if (candidates.size() != scores.size()) throw DimensionError("select_best: scores and candidates differ in length");
  std::size_t best = 0;
  double best_d = pose_distance(candidates[0], previous);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (scores[i] > scores[best]) {
      best = i;
      best_d = pose_distance(candidates[i], previous);
    } else if (scores[i] == scores[best]) {
      const double d = pose_distance(candidates[i], previous);
      if (d < best_d) {
        best = i;
        best_d = d;
      }
    }
  }
  return {best, candidates[best]};
}

namespace detail {

// Points that can fall inside any enlarged candidate box, order preserved.
inline PointCloud candidate_region(const PointCloud& cloud, const std::vector<Box3D>& boxes, const CropPolicy& crop) {
  if (boxes.empty()) return {};
  double cx = 0.0, cy = 0.0;
  for (const Box3D& b : boxes) {
    cx += b.center.x;
    cy += b.center.y;
  }
  cx /= static_cast<double>(boxes.size());
  cy /= static_cast<double>(boxes.size());
  double radius = 0.0, zlo = std::numeric_limits<double>::infinity(), zhi = -zlo;
  for (const Box3D& b : boxes) {
    const Box3D e = crop.apply(b);
    const double half_diag = 0.5 * std::hypot(e.size.width, e.size.length);
    radius = std::max(radius, std::hypot(b.center.x - cx, b.center.y - cy) + half_diag);
    zlo = std::min(zlo, e.center.z - 0.5 * e.size.height);
    zhi = std::max(zhi, e.center.z + 0.5 * e.size.height);
  }
  const double r2 = radius * radius;
  PointCloud out;
  for (const Vec3& p : cloud.points) {
    const double dx = p.x - cx, dy = p.y - cy;
    if (dx * dx + dy * dy <= r2 && p.z >= zlo && p.z <= zhi) out.points.push_back(p);
  }
  return out;
}

inline std::mt19937_64 frame_rng(std::uint64_t seed, const Tracklet& t, std::size_t frame, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t.scene_id), static_cast<std::uint32_t>(t.track_id),
                    static_cast<std::uint32_t>(frame), purpose};
  return std::mt19937_64(seq);
}

inline std::uint64_t tracklet_stream(std::uint64_t seed, const Tracklet& t) {
  return seed * 0x9E3779B97F4A7C15ULL + (static_cast<std::uint64_t>(t.scene_id) << 32) +
         static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.track_id));
}

}  // namespace detail

// Canonical crop of every candidate box, at native point counts.
inline std::vector<PointCloud> candidate_shapes(const PointCloud& cloud, const std::vector<Box3D>& boxes,
                                                const CropPolicy& crop) {
  const PointCloud region = detail::candidate_region(cloud, boxes, crop);
  std::vector<PointCloud> out;
  out.reserve(boxes.size());
  for (const Box3D& b : boxes) out.push_back(canonicalize(sc3d::crop(region, b, crop), b));
  return out;
}

// One-pass tracking from `init_box`. `enc` may be null with the oracle scorer.
inline TrackResult track_tracklet(const Tracklet& tracklet, const Box3D& init_box, const TrackerConfig& cfg,
                                  const Encoder* enc) {
  if (tracklet.frames.empty()) throw PreconditionError("track_tracklet: empty tracklet");
  if (cfg.scorer == ScorerKind::model && !enc) throw PreconditionError("track_tracklet: model scorer needs an encoder");
  if (cfg.sampler.kind == SamplerKind::gmm && !cfg.sampler.gmm) {
    throw ConfigError("track_tracklet: gmm sampler needs a fitted mixture");
  }
  TrackResult result;
  result.scene_id = tracklet.scene_id;
  result.track_id = tracklet.track_id;
  result.frames.push_back({tracklet.frames[0].frame, init_box, 1.0, 0});
  try {
    const std::uint64_t stream = detail::tracklet_stream(cfg.seed, tracklet);
    std::optional<ModelState> model;
    if (cfg.scorer == ScorerKind::model) {
      model = init_model(canonicalize(crop(*tracklet.frames[0].cloud, init_box, cfg.crop), init_box), cfg.fusion,
                         *enc, stream);
    }
    std::optional<KalmanState> kalman;
    std::optional<ParticleSet> particles;
    std::mt19937_64 sampler_rng = detail::frame_rng(cfg.seed, tracklet, 0, 1);
    if (cfg.sampler.kind == SamplerKind::kalman) kalman = kalman_init(init_box, cfg.sampler.kalman);
    if (cfg.sampler.kind == SamplerKind::particle) {
      particles = particle_init(init_box, cfg.sampler.count, cfg.sampler.particle, sampler_rng);
    }

    Box3D previous = init_box;
    for (std::size_t t = 1; t < tracklet.frames.size(); ++t) {
      const TrackletFrame& f = tracklet.frames[t];
      std::vector<Box3D> boxes;
      switch (cfg.sampler.kind) {
        case SamplerKind::grid: {
          Box3D ref = cfg.sampler.grid_on_ground_truth ? f.box : previous;
          ref.size = init_box.size;
          for (const Candidate& c : exhaustive_grid(cfg.sampler.grid, ref)) boxes.push_back(c.box);
          break;
        }
        case SamplerKind::kalman: {
          std::optional<Box3D> measurement;
          if (t > 1) measurement = previous;
          KalmanStepResult step = kalman_step(*kalman, measurement, cfg.sampler.count, sampler_rng);
          *kalman = step.state;
          boxes = std::move(step.candidates);
          break;
        }
        case SamplerKind::particle: boxes = particles->particles; break;
        case SamplerKind::gmm:
          boxes = sample_gmm_candidates(*cfg.sampler.gmm, previous, cfg.sampler.count, sampler_rng);
          break;
      }

      std::vector<double> scores;
      std::vector<PointCloud> shapes, resampled;
      if (cfg.scorer == ScorerKind::oracle) {
        for (const Box3D& b : boxes) scores.push_back(closest_oracle_score(b, f.box));
      } else {
        shapes = candidate_shapes(*f.cloud, boxes, cfg.crop);
        std::mt19937_64 rng = detail::frame_rng(cfg.seed, tracklet, t, 2);
        resampled.reserve(shapes.size());
        for (const PointCloud& s : shapes) resampled.push_back(resample(s, enc->num_points(), rng));
        scores = score_candidates(model_latent(*model, *enc), resampled, *enc, cfg.batch_size);
      }
      const auto [index, best] = select_best(boxes, scores, previous);
      result.frames.push_back({f.frame, best, scores[index], boxes.size()});

      if (model) {
        if (model->config.mode == FusionMode::early) {
          update_model(*model, shapes[index], *enc);
        } else {
          update_model_latent(*model, encode(*enc, resampled[index]));
        }
      }
      if (particles) particles = particle_step(*particles, scores, cfg.sampler.count, sampler_rng, cfg.sampler.particle).set;
      previous = best;
    }
  } catch (const std::exception& e) {
    result.failed = true;
    result.error = e.what();
  }
  return result;
}

// Tracks every tracklet from its ground-truth first box; `jobs` threads split
// the tracklets and results keep the input order.
inline std::vector<TrackResult> track_all(const std::vector<Tracklet>& tracklets, const TrackerConfig& cfg,
                                          const Encoder* enc, std::size_t jobs = 1) {
  std::vector<TrackResult> results(tracklets.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < tracklets.size(); i += stride) {
      results[i] = track_tracklet(tracklets[i], tracklets[i].frames.front().box, cfg, enc);
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, tracklets.size()));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
    for (std::thread& th : pool) th.join();
  }
  return results;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization: one record per frame, plus one "failed" record
// per aborted tracklet.

inline nlohmann::json box_to_json(const Box3D& b) {
  return {{"x", b.center.x}, {"y", b.center.y},      {"z", b.center.z},          {"width", b.size.width},
          {"height", b.size.height}, {"length", b.size.length}, {"yaw", b.yaw}};
}

inline Box3D box_from_json(const nlohmann::json& j) {
  Box3D b;
  b.center = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>()};
  b.size = {j.at("width").get<double>(), j.at("height").get<double>(), j.at("length").get<double>()};
  b.yaw = j.at("yaw").get<double>();
  return b;
}

inline void write_track_results(std::ostream& os, const std::vector<TrackResult>& results) {
  for (const TrackResult& r : results) {
    for (const FrameResult& f : r.frames) {
      const nlohmann::json rec = {{"scene", r.scene_id},  {"track_id", r.track_id}, {"frame", f.frame},
                                  {"box", box_to_json(f.box)}, {"score", f.score},     {"candidates", f.candidates},
                                  {"status", "ok"}};
      os << rec.dump() << '\n';
    }
    if (r.failed) {
      const nlohmann::json rec = {{"scene", r.scene_id}, {"track_id", r.track_id}, {"status", "failed"},
                                  {"error", r.error}};
      os << rec.dump() << '\n';
    }
  }
}

inline std::vector<TrackResult> read_track_results(std::istream& is, const std::string& source = "results") {
  std::vector<TrackResult> out;
  std::map<std::pair<int, int>, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      const std::pair<int, int> key{j.at("scene").get<int>(), j.at("track_id").get<int>()};
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, out.size()).first;
        TrackResult r;
        r.scene_id = key.first;
        r.track_id = key.second;
        out.push_back(std::move(r));
      }
      TrackResult& r = out[it->second];
      if (j.at("status").get<std::string>() == "failed") {
        r.failed = true;
        r.error = j.value("error", std::string{});
        continue;
      }
      FrameResult f;
      f.frame = j.at("frame").get<int>();
      f.box = box_from_json(j.at("box"));
      f.score = j.at("score").get<double>();
      f.candidates = j.at("candidates").get<std::size_t>();
      r.frames.push_back(f);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace sc3d
