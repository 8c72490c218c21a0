#pragma once

// Siamese encoder, completion decoder, similarity and losses.
//
// Encoder: three pointwise conv blocks [64, 128, K], each conv -> ReLU -> BN,
// then a max over points. Decoder: FC K -> 1024 -> ReLU -> FC 1024 -> 3M.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"
#include "sc3d/tensor.hpp"

namespace sc3d {

using LatentVector = std::vector<double>;

struct NetworkShape {
  std::size_t latent = 128;         // K
  std::size_t points = 2048;        // N, encoder input size
  std::size_t decoded_points = 2048;  // M
  std::size_t hidden = 1024;        // decoder hidden width
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

// Packs clouds of exactly `n` points into a B x 3 x n tensor.
inline Tensor clouds_to_tensor(std::span<const PointCloud> clouds, std::size_t n) {
  Tensor t({clouds.size(), 3, n});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b].size() != n) {
      throw PreconditionError("encoder input " + std::to_string(b) + " has " +
                              std::to_string(clouds[b].size()) + " points, expected " +
                              std::to_string(n));
    }
    double* base = t.values.data() + b * 3 * n;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& p = clouds[b].points[i];
      base[i] = p.x;
      base[n + i] = p.y;
      base[2 * n + i] = p.z;
    }
  }
  return t;
}

class Encoder {
 public:
  static constexpr std::array<std::size_t, 2> kHiddenChannels{64, 128};

  struct Tape {
    std::array<Tensor, 3> conv_in;
    std::array<Tensor, 3> relu_in;
    std::array<BatchNormCache, 3> bn;
    Shape pooled_shape;
    std::vector<std::size_t> argmax;
  };

  Encoder() = default;

  Encoder(std::size_t latent_size, std::size_t num_points, std::uint64_t seed)
      : latent_(latent_size), points_(num_points) {
    std::mt19937_64 rng(seed);
    const std::array<std::size_t, 4> ch{3, kHiddenChannels[0], kHiddenChannels[1], latent_size};
    for (std::size_t i = 0; i < 3; ++i) {
      conv_[i] = LayerParams::conv1d("encoder.conv" + std::to_string(i + 1), ch[i], ch[i + 1], rng);
      bn_[i] = LayerParams::batch_norm("encoder.bn" + std::to_string(i + 1), ch[i + 1]);
    }
  }

  std::size_t latent_size() const { return latent_; }
  std::size_t num_points() const { return points_; }

  // B x 3 x N -> B x K. Train mode updates BN running statistics; a tape,
  // when given, records what backward needs.
  Tensor forward(const Tensor& input, Mode mode, Tape* tape = nullptr) {
    check_input(input);
    Tensor x = input;
    for (std::size_t i = 0; i < 3; ++i) {
      if (tape) tape->conv_in[i] = x;
      Tensor pre = pointwise_conv1d(x, conv_[i]);
      Tensor act = relu(pre);
      BatchNormCache* cache = tape ? &tape->bn[i] : nullptr;
      x = mode == Mode::train ? batch_norm_train(act, bn_[i], cache, bn_options)
                              : batch_norm_infer(act, bn_[i], cache, bn_options);
      if (tape) tape->relu_in[i] = std::move(pre);
    }
    PoolResult pooled = max_pool_points(x);
    if (tape) {
      tape->pooled_shape = x.shape;
      tape->argmax = std::move(pooled.argmax);
    }
    return std::move(pooled.output);
  }

  Tensor infer(const Tensor& input) const {
    check_input(input);
    Tensor x = input;
    for (std::size_t i = 0; i < 3; ++i) {
      x = batch_norm_infer(relu(pointwise_conv1d(x, conv_[i])), bn_[i], nullptr, bn_options);
    }
    return std::move(max_pool_points(x).output);
  }

  // Accumulates parameter gradients; returns the gradient w.r.t. the input.
  Tensor backward(const Tensor& grad_latent, const Tape& tape) {
    Tensor g = max_pool_points_backward(grad_latent, tape.argmax, tape.pooled_shape);
    for (std::size_t k = 3; k-- > 0;) {
      g = batch_norm_backward(g, tape.bn[k], bn_[k]);
      g = relu_backward(g, tape.relu_in[k]);
      g = pointwise_conv1d_backward(g, tape.conv_in[k], conv_[k]);
    }
    return g;
  }

  std::vector<LayerParams*> layers() {
    return {&conv_[0], &bn_[0], &conv_[1], &bn_[1], &conv_[2], &bn_[2]};
  }
  std::vector<const LayerParams*> layers() const {
    return {&conv_[0], &bn_[0], &conv_[1], &bn_[1], &conv_[2], &bn_[2]};
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const LayerParams* l : layers()) total += l->parameter_count();
    return total;
  }

  void zero_grad() {
    for (LayerParams* l : layers()) l->zero_grad();
  }

  BatchNormOptions bn_options;

 private:
  void check_input(const Tensor& input) const {
    if (input.rank() != 3 || input.dim(1) != 3 || input.dim(2) != points_) {
      throw PreconditionError("encoder expects B x 3 x " + std::to_string(points_) +
                              " input, got " + shape_string(input.shape));
    }
  }

  std::size_t latent_ = 0;
  std::size_t points_ = 0;
  std::array<LayerParams, 3> conv_;
  std::array<LayerParams, 3> bn_;
};

class Decoder {
 public:
  struct Tape {
    Tensor input;
    Tensor hidden_pre;
    Tensor hidden;
  };

  Decoder() = default;

  Decoder(std::size_t latent_size, std::size_t num_points, std::uint64_t seed,
          std::size_t hidden = 1024)
      : latent_(latent_size), points_(num_points) {
    std::mt19937_64 rng(seed);
    fc_[0] = LayerParams::fully_connected("decoder.fc1", latent_size, hidden, rng);
    fc_[1] = LayerParams::fully_connected("decoder.fc2", hidden, 3 * num_points, rng);
  }

  std::size_t latent_size() const { return latent_; }
  std::size_t num_points() const { return points_; }

  // B x K -> B x 3M, point m of item b at values[b*3M + 3m .. 3m+3).
  Tensor forward(const Tensor& latent, Tape* tape = nullptr) const {
    if (latent.rank() != 2 || latent.dim(1) != latent_) {
      throw PreconditionError("decoder expects B x " + std::to_string(latent_) +
                              " latent input, got " + shape_string(latent.shape));
    }
    Tensor pre = fully_connected(latent, fc_[0]);
    Tensor hid = relu(pre);
    Tensor out = fully_connected(hid, fc_[1]);
    if (tape) {
      tape->input = latent;
      tape->hidden_pre = std::move(pre);
      tape->hidden = std::move(hid);
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out, const Tape& tape) {
    Tensor g = fully_connected_backward(grad_out, tape.hidden, fc_[1]);
    g = relu_backward(g, tape.hidden_pre);
    return fully_connected_backward(g, tape.input, fc_[0]);
  }

  std::vector<LayerParams*> layers() { return {&fc_[0], &fc_[1]}; }
  std::vector<const LayerParams*> layers() const { return {&fc_[0], &fc_[1]}; }

  std::size_t parameter_count() const {
    return fc_[0].parameter_count() + fc_[1].parameter_count();
  }

  void zero_grad() {
    for (LayerParams* l : layers()) l->zero_grad();
  }

 private:
  std::size_t latent_ = 0;
  std::size_t points_ = 0;
  std::array<LayerParams, 2> fc_;
};

inline LatentVector encode(const Encoder& enc, const PointCloud& cloud) {
  const Tensor z = enc.infer(clouds_to_tensor(std::span(&cloud, 1), enc.num_points()));
  return z.values;
}

// Train-mode single-cloud encode is degenerate for N = 1 and otherwise
// mutates the running statistics; kept for completeness.
inline LatentVector encode(Encoder& enc, const PointCloud& cloud, Mode mode) {
  if (mode == Mode::infer) return encode(static_cast<const Encoder&>(enc), cloud);
  return enc.forward(clouds_to_tensor(std::span(&cloud, 1), enc.num_points()), mode).values;
}

// Row b of a B x K tensor.
inline LatentVector latent_row(const Tensor& z, std::size_t b) {
  const std::size_t k = z.dim(1);
  return LatentVector(z.values.begin() + static_cast<std::ptrdiff_t>(b * k),
                      z.values.begin() + static_cast<std::ptrdiff_t>((b + 1) * k));
}

inline PointCloud tensor_row_to_cloud(const Tensor& flat, std::size_t b) {
  const std::size_t width = flat.dim(1);
  PointCloud out;
  out.points.resize(width / 3);
  const double* v = flat.values.data() + b * width;
  for (std::size_t m = 0; m < width / 3; ++m) out.points[m] = {v[3 * m], v[3 * m + 1], v[3 * m + 2]};
  return out;
}

inline PointCloud decode(const Decoder& dec, const LatentVector& z) {
  if (z.size() != dec.latent_size()) {
    throw PreconditionError("decode: latent has " + std::to_string(z.size()) +
                            " entries, decoder expects " + std::to_string(dec.latent_size()));
  }
  return tensor_row_to_cloud(dec.forward(Tensor({1, z.size()}, z)), 0);
}

// ---------------------------------------------------------------------------

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double cosine_similarity(std::span<const double> z, std::span<const double> z_hat) {
  if (z.size() != z_hat.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(z.size()) + " and " +
                         std::to_string(z_hat.size()));
  }
  const double na = norm2(z), nb = norm2(z_hat);
  if (na == 0.0 || nb == 0.0) throw PreconditionError("cosine_similarity: undefined for a zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) dot += z[i] * z_hat[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

// Adds upstream * d cos / d z into grad_z and upstream * d cos / d z_hat into grad_z_hat.
inline void cosine_similarity_backward(std::span<const double> z, std::span<const double> z_hat,
                                       double upstream, std::span<double> grad_z,
                                       std::span<double> grad_z_hat) {
  const double na = norm2(z), nb = norm2(z_hat);
  if (na == 0.0 || nb == 0.0) throw PreconditionError("cosine_similarity: undefined for a zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) dot += z[i] * z_hat[i];
  const double s = dot / (na * nb);
  for (std::size_t i = 0; i < z.size(); ++i) {
    grad_z[i] += upstream * (z_hat[i] / (na * nb) - s * z[i] / (na * na));
    grad_z_hat[i] += upstream * (z[i] / (na * nb) - s * z_hat[i] / (nb * nb));
  }
}

// Gaussian target with mu = 0, sigma = 1 (unnormalized, rho(0) = 1).
inline double rho(double d) {
  if (d < 0.0) throw PreconditionError("rho: distance must be non-negative");
  return std::exp(-0.5 * d * d);
}

inline double tracking_loss(std::span<const double> similarities, std::span<const double> targets) {
  if (similarities.size() != targets.size() || similarities.empty()) {
    throw PreconditionError("tracking_loss: " + std::to_string(similarities.size()) +
                            " similarities vs " + std::to_string(targets.size()) + " targets");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = similarities[i] - targets[i];
    s += d * d;
  }
  return s / static_cast<double>(targets.size());
}

// d tracking_loss / d similarity_i.
inline std::vector<double> tracking_loss_grad(std::span<const double> similarities,
                                              std::span<const double> targets) {
  std::vector<double> g(targets.size());
  const double scale = 2.0 / static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) g[i] = scale * (similarities[i] - targets[i]);
  return g;
}

inline double total_loss(double l_tr, double l_comp, double lambda_comp) {
  if (lambda_comp < 0.0) throw PreconditionError("total_loss: lambda_comp must be >= 0");
  return l_tr + lambda_comp * l_comp;
}

// ---------------------------------------------------------------------------
// Chamfer distance: sum of squared nearest-neighbour distances, both ways.
// Brute force; the first nearest index wins ties.

struct ChamferResult {
  double value = 0.0;
  std::vector<Vec3> grad_a;
  std::vector<Vec3> grad_b;
};

namespace detail {

inline std::size_t nearest_index(Vec3 p, const std::vector<Vec3>& cloud, double* best_sq) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    const double d = squared_distance(p, cloud[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  *best_sq = best_d;
  return best;
}

}  // namespace detail

inline ChamferResult chamfer_with_grad(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw PreconditionError("chamfer: both clouds must be non-empty");
  ChamferResult r;
  r.grad_a.assign(a.size(), Vec3{});
  r.grad_b.assign(b.size(), Vec3{});
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d;
    const std::size_t j = detail::nearest_index(a.points[i], b.points, &d);
    r.value += d;
    const Vec3 diff = a.points[i] - b.points[j];
    r.grad_a[i] = r.grad_a[i] + 2.0 * diff;
    r.grad_b[j] = r.grad_b[j] - 2.0 * diff;
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    double d;
    const std::size_t i = detail::nearest_index(b.points[j], a.points, &d);
    r.value += d;
    const Vec3 diff = b.points[j] - a.points[i];
    r.grad_b[j] = r.grad_b[j] + 2.0 * diff;
    r.grad_a[i] = r.grad_a[i] - 2.0 * diff;
  }
  return r;
}

inline double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw PreconditionError("chamfer: both clouds must be non-empty");
  double total = 0.0, d;
  for (const Vec3& p : a.points) {
    detail::nearest_index(p, b.points, &d);
    total += d;
  }
  for (const Vec3& q : b.points) {
    detail::nearest_index(q, a.points, &d);
    total += d;
  }
  return total;
}

// Mean over target points of the distance to the nearest reconstructed point, in meters.
inline double completion_metric(const PointCloud& reconstruction, const PointCloud& target) {
  if (reconstruction.empty() || target.empty()) {
    throw PreconditionError("completion_metric: both clouds must be non-empty");
  }
  double total = 0.0, d;
  for (const Vec3& p : target.points) {
    detail::nearest_index(p, reconstruction.points, &d);
    total += std::sqrt(d);
  }
  return total / static_cast<double>(target.size());
}

inline void write_latents_csv(std::ostream& os, std::span<const LatentVector> latents) {
  if (latents.empty()) return;
  os << "index";
  for (std::size_t k = 0; k < latents.front().size(); ++k) os << ",z" << k;
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    os << i;
    for (double v : latents[i]) os << ',' << v;
    os << '\n';
  }
}

// Encoder and decoder trained together.
struct SiameseModel {
  NetworkShape shape;
  std::uint64_t seed = 0;
  Encoder encoder;
  Decoder decoder;

  SiameseModel() = default;
  SiameseModel(const NetworkShape& s, std::uint64_t init_seed)
      : shape(s),
        seed(init_seed),
        encoder(s.latent, s.points, init_seed),
        decoder(s.latent, s.decoded_points, init_seed ^ 0xD1B54A32D192ED03ULL, s.hidden) {}

  std::vector<LayerParams*> layers() {
    std::vector<LayerParams*> out = encoder.layers();
    for (LayerParams* l : decoder.layers()) out.push_back(l);
    return out;
  }
  std::vector<const LayerParams*> layers() const {
    std::vector<const LayerParams*> out = encoder.layers();
    for (const LayerParams* l : decoder.layers()) out.push_back(l);
    return out;
  }
};

}  // namespace sc3d
