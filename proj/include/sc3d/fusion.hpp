#pragma once

// Model representation of the tracked object. Early fusion keeps canonical
// point clouds and encodes their union; late fusion keeps latent vectors and
// aggregates them elementwise.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"
#include "sc3d/network.hpp"

namespace sc3d {

enum class FusionMode { early, late };
enum class FusionScheme { first_only, previous_only, first_and_previous, all_previous };
enum class Aggregator { mean, median, max };

struct FusionConfig {
  FusionMode mode = FusionMode::early;
  FusionScheme scheme = FusionScheme::all_previous;
  Aggregator aggregator = Aggregator::mean;
};

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "early") return FusionMode::early;
  if (s == "late") return FusionMode::late;
  throw ConfigError("unknown fusion mode '" + s + "' (expected early or late)");
}

inline FusionScheme parse_fusion_scheme(const std::string& s) {
  if (s == "first_only") return FusionScheme::first_only;
  if (s == "previous_only") return FusionScheme::previous_only;
  if (s == "first_and_previous") return FusionScheme::first_and_previous;
  if (s == "all_previous") return FusionScheme::all_previous;
  throw ConfigError("unknown fusion scheme '" + s + "'");
}

inline Aggregator parse_aggregator(const std::string& s) {
  if (s == "mean") return Aggregator::mean;
  if (s == "median") return Aggregator::median;
  if (s == "max") return Aggregator::max;
  throw ConfigError("unknown aggregator '" + s + "' (expected mean, median or max)");
}

inline std::string to_string(FusionMode m) { return m == FusionMode::early ? "early" : "late"; }

inline std::string to_string(FusionScheme s) {
  switch (s) {
    case FusionScheme::first_only: return "first_only";
    case FusionScheme::previous_only: return "previous_only";
    case FusionScheme::first_and_previous: return "first_and_previous";
    case FusionScheme::all_previous: return "all_previous";
  }
  return "?";
}

inline std::string to_string(Aggregator a) {
  return a == Aggregator::mean ? "mean" : a == Aggregator::median ? "median" : "max";
}

struct ModelState {
  FusionConfig config;
  std::vector<PointCloud> clouds;      // early store
  std::vector<LatentVector> latents;   // late store (explicit entries)
  LatentVector running;                // late all_previous with mean/max
  std::size_t count = 0;               // shapes folded into the model so far
  std::uint64_t stream = 0;            // RNG stream for early-fusion resampling

  bool uses_running_aggregate() const {
    return config.mode == FusionMode::late && config.scheme == FusionScheme::all_previous &&
           config.aggregator != Aggregator::median;
  }

  std::size_t stored_entries() const {
    if (config.mode == FusionMode::early) return clouds.size();
    return uses_running_aggregate() ? (count > 0 ? 1 : 0) : latents.size();
  }
};

namespace detail {

inline void require_initialized(const ModelState& s, const char* op) {
  if (s.count == 0) throw PreconditionError(std::string(op) + ": model state is not initialized");
}

inline void fold_latent(ModelState& s, const LatentVector& z) {
  if (s.uses_running_aggregate()) {
    if (s.count == 0) {
      s.running = z;
    } else if (z.size() != s.running.size()) {
      throw DimensionError("update_model: latent size mismatch");
    } else if (s.config.aggregator == Aggregator::max) {
      for (std::size_t i = 0; i < z.size(); ++i) s.running[i] = std::max(s.running[i], z[i]);
    } else {
      const double w = 1.0 / static_cast<double>(s.count + 1);
      for (std::size_t i = 0; i < z.size(); ++i) s.running[i] += w * (z[i] - s.running[i]);
    }
    return;
  }
  if (s.count == 0) {
    s.latents = {z};
    return;
  }
  switch (s.config.scheme) {
    case FusionScheme::first_only: break;
    case FusionScheme::previous_only: s.latents = {z}; break;
    case FusionScheme::first_and_previous: s.latents = {s.latents.front(), z}; break;
    case FusionScheme::all_previous: s.latents.push_back(z); break;
  }
}

inline void fold_cloud(ModelState& s, const PointCloud& c) {
  if (s.count == 0) {
    s.clouds = {c};
    return;
  }
  switch (s.config.scheme) {
    case FusionScheme::first_only: break;
    case FusionScheme::previous_only: s.clouds = {c}; break;
    case FusionScheme::first_and_previous: s.clouds = {s.clouds.front(), c}; break;
    case FusionScheme::all_previous: s.clouds.push_back(c); break;
  }
}

}  // namespace detail

// Elementwise aggregate; the median of an even count averages the two middle values.
inline LatentVector aggregate_latents(const std::vector<LatentVector>& zs, Aggregator agg) {
  if (zs.empty()) throw PreconditionError("aggregate_latents: no latents");
  const std::size_t k = zs.front().size();
  for (const LatentVector& z : zs)
    if (z.size() != k) throw DimensionError("aggregate_latents: latent size mismatch");
  LatentVector out(k);
  std::vector<double> column(zs.size());
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < zs.size(); ++j) column[j] = zs[j][i];
    switch (agg) {
      case Aggregator::mean: {
        double s = 0.0;
        for (double v : column) s += v;
        out[i] = s / static_cast<double>(column.size());
        break;
      }
      case Aggregator::max: out[i] = *std::max_element(column.begin(), column.end()); break;
      case Aggregator::median: {
        std::sort(column.begin(), column.end());
        const std::size_t m = column.size() / 2;
        out[i] = column.size() % 2 ? column[m] : 0.5 * (column[m - 1] + column[m]);
        break;
      }
    }
  }
  return out;
}

// Point cloud of exactly the encoder's N points for the current early-fusion model.
// The union is sorted before resampling so the result depends only on the multiset.
inline PointCloud early_model_cloud(const ModelState& s, std::size_t n) {
  detail::require_initialized(s, "early_model_cloud");
  PointCloud all;
  for (const PointCloud& c : s.clouds) all.points.insert(all.points.end(), c.points.begin(), c.points.end());
  std::sort(all.points.begin(), all.points.end(), [](const Vec3& a, const Vec3& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
  });
  std::seed_seq seq{static_cast<std::uint32_t>(s.stream), static_cast<std::uint32_t>(s.stream >> 32),
                    static_cast<std::uint32_t>(s.count)};
  std::mt19937_64 rng(seq);
  return resample(all, n, rng);
}

// `first_shape` is a canonical crop at any point count; late mode resamples it
// to N with the state's stream before encoding.
inline ModelState init_model(const PointCloud& first_shape, const FusionConfig& cfg, const Encoder& enc,
                             std::uint64_t stream = 0) {
  ModelState s;
  s.config = cfg;
  s.stream = stream;
  if (cfg.mode == FusionMode::early) {
    detail::fold_cloud(s, first_shape);
    s.count = 1;
  } else {
    s.clouds = {first_shape};
    s.count = 1;
    const PointCloud resampled = early_model_cloud(s, enc.num_points());
    s.clouds.clear();
    s.count = 0;
    detail::fold_latent(s, encode(enc, resampled));
    s.count = 1;
  }
  return s;
}

// Late mode folds in a latent the caller has already computed.
inline void update_model_latent(ModelState& s, const LatentVector& z) {
  detail::require_initialized(s, "update_model");
  if (s.config.mode != FusionMode::late) throw PreconditionError("update_model_latent: early-fusion state");
  detail::fold_latent(s, z);
  ++s.count;
}

inline void update_model(ModelState& s, const PointCloud& chosen_shape, const Encoder& enc) {
  detail::require_initialized(s, "update_model");
  if (s.config.mode == FusionMode::early) {
    detail::fold_cloud(s, chosen_shape);
    ++s.count;
    return;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(s.stream), static_cast<std::uint32_t>(s.stream >> 32),
                    static_cast<std::uint32_t>(s.count)};
  std::mt19937_64 rng(seq);
  update_model_latent(s, encode(enc, resample(chosen_shape, enc.num_points(), rng)));
}

inline LatentVector model_latent(const ModelState& s, const Encoder& enc) {
  detail::require_initialized(s, "model_latent");
  if (s.config.mode == FusionMode::early) return encode(enc, early_model_cloud(s, enc.num_points()));
  if (s.uses_running_aggregate()) return s.running;
  return aggregate_latents(s.latents, s.config.aggregator);
}

}  // namespace sc3d
