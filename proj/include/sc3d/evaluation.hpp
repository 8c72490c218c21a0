#pragma once

// One Pass Evaluation. Success integrates the fraction of frames whose IoU
// exceeds a threshold over [0, 1]; Precision integrates the fraction whose
// center error is within a threshold over [0, 2] m. Both use the trapezoid
// rule on a 0.01 grid and are reported in percent.

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sc3d/data_io.hpp"
#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"
#include "sc3d/network.hpp"
#include "sc3d/tracker.hpp"

namespace sc3d {

inline constexpr std::size_t kSuccessSteps = 100;    // thresholds 0.00 .. 1.00
inline constexpr std::size_t kPrecisionSteps = 200;  // thresholds 0.00 .. 2.00 m

inline double success_threshold(std::size_t i) { return static_cast<double>(i) / 100.0; }
inline double precision_threshold(std::size_t i) { return static_cast<double>(i) / 100.0; }

namespace detail {

// Trapezoid area under counts / n over unit-spaced samples, as percent of the span.
inline double trapezoid_percent(const std::vector<std::size_t>& counts, std::size_t n) {
  std::size_t twice = 0;
  for (std::size_t i = 0; i + 1 < counts.size(); ++i) twice += counts[i] + counts[i + 1];
  const double steps = static_cast<double>(counts.size() - 1);
  return 100.0 * static_cast<double>(twice) / (2.0 * static_cast<double>(n) * steps);
}

inline std::vector<std::size_t> success_counts(const std::vector<double>& overlaps) {
  std::vector<std::size_t> c(kSuccessSteps + 1, 0);
  for (std::size_t i = 0; i <= kSuccessSteps; ++i) {
    const double tau = success_threshold(i);
    for (double o : overlaps) c[i] += o > tau ? 1 : 0;
  }
  return c;
}

inline std::vector<std::size_t> precision_counts(const std::vector<double>& errors) {
  std::vector<std::size_t> c(kPrecisionSteps + 1, 0);
  for (std::size_t i = 0; i <= kPrecisionSteps; ++i) {
    const double t = precision_threshold(i);
    for (double e : errors) c[i] += e <= t ? 1 : 0;
  }
  return c;
}

inline std::vector<double> fractions(const std::vector<std::size_t>& counts, std::size_t n) {
  std::vector<double> f;
  for (std::size_t c : counts) f.push_back(static_cast<double>(c) / static_cast<double>(n));
  return f;
}

}  // namespace detail

inline std::vector<double> success_curve(const std::vector<double>& overlaps) {
  if (overlaps.empty()) throw PreconditionError("success: no frames to evaluate");
  return detail::fractions(detail::success_counts(overlaps), overlaps.size());
}

inline std::vector<double> precision_curve(const std::vector<double>& errors) {
  if (errors.empty()) throw PreconditionError("precision: no frames to evaluate");
  return detail::fractions(detail::precision_counts(errors), errors.size());
}

inline double success_auc(const std::vector<double>& overlaps) {
  if (overlaps.empty()) throw PreconditionError("success: no frames to evaluate");
  for (double o : overlaps)
    if (!(o >= 0.0 && o <= 1.0)) throw PreconditionError("success: overlaps must lie in [0, 1]");
  return detail::trapezoid_percent(detail::success_counts(overlaps), overlaps.size());
}

inline double precision_auc(const std::vector<double>& errors) {
  if (errors.empty()) throw PreconditionError("precision: no frames to evaluate");
  for (double e : errors)
    if (!(e >= 0.0)) throw PreconditionError("precision: errors must be non-negative");
  return detail::trapezoid_percent(detail::precision_counts(errors), errors.size());
}

enum class EvalMode { full3d, bev };

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "3d") return EvalMode::full3d;
  if (s == "bev") return EvalMode::bev;
  throw ConfigError("unknown evaluation mode '" + s + "' (expected 3d or bev)");
}

struct EvalOptions {
  EvalMode mode = EvalMode::full3d;
  bool group_occlusion = false;
  bool group_motion = false;
  double static_threshold = kStaticDisplacement;
};

struct GroupScore {
  double success = 0.0;
  double precision = 0.0;
  std::size_t frames = 0;
};

struct OpeReport {
  double success = 0.0;
  double precision = 0.0;
  std::vector<double> success_curve;
  std::vector<double> precision_curve;
  std::map<std::string, GroupScore> groups;
  std::size_t frames = 0;
  std::size_t runs = 1;
  std::size_t failed_tracklets = 0;
};

struct FrameScore {
  double overlap = 0.0;
  double error = std::numeric_limits<double>::infinity();
  bool occluded = false;
  double displacement = 0.0;
};

// Per-frame overlap and error for one tracklet. Frames after a failure
// score IoU 0 and infinite error.
inline std::vector<FrameScore> score_tracklet(const TrackResult& r, const Tracklet& t, EvalMode mode) {
  if (r.scene_id != t.scene_id || r.track_id != t.track_id) {
    throw DataError("evaluation: result for scene " + std::to_string(r.scene_id) + " track " +
                    std::to_string(r.track_id) + " does not match tracklet " + std::to_string(t.scene_id) + "/" +
                    std::to_string(t.track_id));
  }
  if (r.frames.size() > t.frames.size() || (!r.failed && r.frames.size() != t.frames.size())) {
    throw DataError("evaluation: scene " + std::to_string(t.scene_id) + " track " + std::to_string(t.track_id) +
                    " has " + std::to_string(r.frames.size()) + " result frames for " +
                    std::to_string(t.frames.size()) + " ground-truth frames");
  }
  std::vector<FrameScore> out;
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    FrameScore s;
    s.occluded = t.frames[i].occluded;
    // The first frame has no predecessor; it inherits its successor's motion.
    s.displacement = i == 0 ? (t.frames.size() > 1 ? t.frames[1].displacement : 0.0) : t.frames[i].displacement;
    if (i < r.frames.size()) {
      if (r.frames[i].frame != t.frames[i].frame) {
        throw DataError("evaluation: scene " + std::to_string(t.scene_id) + " track " +
                        std::to_string(t.track_id) + " frame index mismatch at position " + std::to_string(i));
      }
      const Box3D& p = r.frames[i].box;
      const Box3D& g = t.frames[i].box;
      s.overlap = mode == EvalMode::bev ? iou_bev(p, g) : iou_3d(p, g);
      s.error = center_error(p, g, mode == EvalMode::bev);
    }
    out.push_back(s);
  }
  return out;
}

// Pools every frame of every tracklet (micro-average).
inline OpeReport evaluate_run(const std::vector<TrackResult>& results, const std::vector<Tracklet>& tracklets,
                              const EvalOptions& opts = {}) {
  if (results.size() != tracklets.size()) {
    throw DataError("evaluation: " + std::to_string(results.size()) + " results for " +
                    std::to_string(tracklets.size()) + " tracklets");
  }
  std::map<std::pair<int, int>, const TrackResult*> by_key;
  for (const TrackResult& r : results) by_key[{r.scene_id, r.track_id}] = &r;
  std::vector<double> overlaps, errors;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> grouped;
  OpeReport rep;
  for (const Tracklet& t : tracklets) {
    const auto it = by_key.find({t.scene_id, t.track_id});
    if (it == by_key.end()) {
      throw DataError("evaluation: no result for scene " + std::to_string(t.scene_id) + " track " +
                      std::to_string(t.track_id));
    }
    if (it->second->failed) ++rep.failed_tracklets;
    for (const FrameScore& s : score_tracklet(*it->second, t, opts.mode)) {
      overlaps.push_back(s.overlap);
      errors.push_back(s.error);
      auto add = [&](const std::string& g) {
        grouped[g].first.push_back(s.overlap);
        grouped[g].second.push_back(s.error);
      };
      if (opts.group_occlusion) add(s.occluded ? "occluded" : "visible");
      if (opts.group_motion) add(s.displacement < opts.static_threshold ? "static" : "dynamic");
    }
  }
  rep.success = success_auc(overlaps);
  rep.precision = precision_auc(errors);
  rep.success_curve = success_curve(overlaps);
  rep.precision_curve = precision_curve(errors);
  rep.frames = overlaps.size();
  for (const auto& [name, v] : grouped) {
    rep.groups[name] = {success_auc(v.first), precision_auc(v.second), v.first.size()};
  }
  return rep;
}

// Mean of several runs' metrics, curves and groups.
inline OpeReport average_reports(const std::vector<OpeReport>& runs) {
  if (runs.empty()) throw PreconditionError("average_reports: no runs");
  OpeReport out = runs.front();
  const double n = static_cast<double>(runs.size());
  out.success = out.precision = 0.0;
  std::fill(out.success_curve.begin(), out.success_curve.end(), 0.0);
  std::fill(out.precision_curve.begin(), out.precision_curve.end(), 0.0);
  out.failed_tracklets = 0;
  for (auto& [name, g] : out.groups) g = {0.0, 0.0, g.frames};
  for (const OpeReport& r : runs) {
    out.success += r.success / n;
    out.precision += r.precision / n;
    for (std::size_t i = 0; i < out.success_curve.size(); ++i) out.success_curve[i] += r.success_curve.at(i) / n;
    for (std::size_t i = 0; i < out.precision_curve.size(); ++i) {
      out.precision_curve[i] += r.precision_curve.at(i) / n;
    }
    for (auto& [name, g] : out.groups) {
      const auto it = r.groups.find(name);
      if (it == r.groups.end()) throw DataError("average_reports: group '" + name + "' missing from a run");
      g.success += it->second.success / n;
      g.precision += it->second.precision / n;
    }
    out.failed_tracklets += r.failed_tracklets;
  }
  out.runs = runs.size();
  return out;
}

inline nlohmann::json report_to_json(const OpeReport& r) {
  nlohmann::json j = {{"success", r.success},
                      {"precision", r.precision},
                      {"frames", r.frames},
                      {"runs", r.runs},
                      {"failed_tracklets", r.failed_tracklets}};
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [name, g] : r.groups) {
    groups[name] = {{"success", g.success}, {"precision", g.precision}, {"frames", g.frames}};
  }
  j["groups"] = groups;
  return j;
}

inline void write_curve_csv(std::ostream& os, const std::vector<double>& curve, bool precision) {
  os << (precision ? "error_threshold_m" : "iou_threshold") << ",fraction\n";
  os.precision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    os << (precision ? precision_threshold(i) : success_threshold(i)) << ',' << curve[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Completion quality of auto-encoded model shapes

struct CompletionScore {
  double chamfer = 0.0;     // mean Chamfer distance
  double completion = 0.0;  // mean completion_metric
  std::size_t shapes = 0;
};

// Each tracklet's aggregated model shape, resampled to N, against
// decode(encode(shape)). Tracklets without points are skipped.
inline CompletionScore score_model_completion(const SiameseModel& m, const std::vector<Tracklet>& tracklets,
                                              const CropPolicy& crop = {}, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  CompletionScore s;
  for (const Tracklet& t : tracklets) {
    const PointCloud shape = build_model_shape(t, crop);
    if (shape.empty()) continue;
    const PointCloud x = resample(shape, m.encoder.num_points(), rng);
    const PointCloud recon = decode(m.decoder, encode(m.encoder, x));
    s.chamfer += chamfer(recon, x);
    s.completion += completion_metric(recon, x);
    ++s.shapes;
  }
  if (s.shapes == 0) throw DataError("completion: no tracklet has a non-empty model shape");
  s.chamfer /= static_cast<double>(s.shapes);
  s.completion /= static_cast<double>(s.shapes);
  return s;
}

}  // namespace sc3d
