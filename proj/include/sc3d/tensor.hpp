#pragma once

// Reverse-mode differentiation core: a dense tensor with a gradient slot and
// the five layers the tracking networks need, each as a forward/backward
// pair. Backward functions accumulate parameter gradients into the layer's
// grad slots and return the gradient with respect to the layer input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sc3d/errors.hpp"

namespace sc3d {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

struct Tensor {
  Shape shape;
  std::vector<double> values;  // row-major
  std::vector<double> grad;    // empty when absent, else same length as values

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), values(shape_product(shape), fill) {}

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape_product(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() { grad.assign(values.size(), 0.0); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

enum class LayerKind : std::uint8_t { conv1d = 0, fully_connected = 1, batch_norm = 2 };

enum class Mode { train, infer };

// Trainable state of one layer.
//   conv1d / fully_connected: weights [out x in], bias [out]
//   batch_norm: weights holds gamma [C], bias holds beta [C], plus running stats
struct LayerParams {
  std::string name;
  LayerKind kind = LayerKind::conv1d;
  Tensor weights;
  Tensor bias;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::vector<double> adam_m_weights, adam_v_weights;
  std::vector<double> adam_m_bias, adam_v_bias;
  std::int64_t step_count = 0;

  Tensor& gamma() { return weights; }
  const Tensor& gamma() const { return weights; }
  Tensor& beta() { return bias; }
  const Tensor& beta() const { return bias; }

  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  void zero_grad() {
    weights.zero_grad();
    bias.zero_grad();
  }

  // Uniform init in +-sqrt(1/fan_in).
  static LayerParams affine(std::string name, LayerKind kind, std::size_t in, std::size_t out,
                            std::mt19937_64& rng) {
    LayerParams p;
    p.name = std::move(name);
    p.kind = kind;
    p.weights = Tensor({out, in});
    p.bias = Tensor({out});
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : p.weights.values) w = dist(rng);
    for (double& b : p.bias.values) b = dist(rng);
    p.reset_moments();
    return p;
  }

  static LayerParams conv1d(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    return affine(std::move(name), LayerKind::conv1d, in, out, rng);
  }

  static LayerParams fully_connected(std::string name, std::size_t in, std::size_t out,
                                     std::mt19937_64& rng) {
    return affine(std::move(name), LayerKind::fully_connected, in, out, rng);
  }

  static LayerParams batch_norm(std::string name, std::size_t channels) {
    LayerParams p;
    p.name = std::move(name);
    p.kind = LayerKind::batch_norm;
    p.weights = Tensor({channels}, 1.0);
    p.bias = Tensor({channels}, 0.0);
    p.running_mean.assign(channels, 0.0);
    p.running_var.assign(channels, 1.0);
    p.reset_moments();
    return p;
  }

  void reset_moments() {
    adam_m_weights.assign(weights.size(), 0.0);
    adam_v_weights.assign(weights.size(), 0.0);
    adam_m_bias.assign(bias.size(), 0.0);
    adam_v_bias.assign(bias.size(), 0.0);
    step_count = 0;
  }
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " input, got " + shape_string(t.shape));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise (kernel width 1) convolution over B x C_in x N.

inline Tensor pointwise_conv1d(const Tensor& input, const LayerParams& p) {
  detail::require_rank(input, 3, "pointwise_conv1d");
  const std::size_t batch = input.dim(0), c_in = input.dim(1), n = input.dim(2);
  const std::size_t c_out = p.weights.dim(0);
  if (p.weights.rank() != 2 || p.weights.dim(1) != c_in) {
    throw DimensionError("pointwise_conv1d: input " + shape_string(input.shape) +
                         " incompatible with weights " + shape_string(p.weights.shape));
  }
  Tensor out({batch, c_out, n});
  detail::ConstMatrixMap w(p.weights.values.data(), c_out, c_in);
  detail::ConstVectorMap bias(p.bias.values.data(), c_out);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::ConstMatrixMap in_b(input.values.data() + b * c_in * n, c_in, n);
    detail::MatrixMap out_b(out.values.data() + b * c_out * n, c_out, n);
    out_b.noalias() = w * in_b;
    out_b.colwise() += bias;
  }
  return out;
}

inline Tensor pointwise_conv1d_backward(const Tensor& grad_out, const Tensor& input,
                                        LayerParams& p) {
  const std::size_t batch = input.dim(0), c_in = input.dim(1), n = input.dim(2);
  const std::size_t c_out = p.weights.dim(0);
  if (grad_out.shape != Shape{batch, c_out, n}) {
    throw DimensionError("pointwise_conv1d_backward: gradient " + shape_string(grad_out.shape) +
                         " does not match output [" + std::to_string(batch) + "x" +
                         std::to_string(c_out) + "x" + std::to_string(n) + "]");
  }
  p.weights.ensure_grad();
  p.bias.ensure_grad();
  Tensor grad_in(input.shape);
  detail::ConstMatrixMap w(p.weights.values.data(), c_out, c_in);
  detail::MatrixMap dw(p.weights.grad.data(), c_out, c_in);
  detail::VectorMap db(p.bias.grad.data(), c_out);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::ConstMatrixMap in_b(input.values.data() + b * c_in * n, c_in, n);
    detail::ConstMatrixMap g_b(grad_out.values.data() + b * c_out * n, c_out, n);
    detail::MatrixMap gi_b(grad_in.values.data() + b * c_in * n, c_in, n);
    dw.noalias() += g_b * in_b.transpose();
    db += g_b.rowwise().sum();
    gi_b.noalias() = w.transpose() * g_b;
  }
  return grad_in;
}

// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& input) {
  Tensor out(input.shape);
  // NaN passes through so a corrupted parameter cannot be silently masked.
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] <= 0.0 ? 0.0 : input[i];
  return out;
}

// `input` is the forward input; gradient passes where it was strictly positive.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
  if (grad_out.size() != input.size()) {
    throw DimensionError("relu_backward: gradient " + shape_string(grad_out.shape) +
                         " vs input " + shape_string(input.shape));
  }
  Tensor grad_in(input.shape);
  for (std::size_t i = 0; i < input.size(); ++i) grad_in[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return grad_in;
}

// ---------------------------------------------------------------------------
// Batch normalization over the batch and point axes of B x C x N.

struct BatchNormOptions {
  double eps = 1e-5;
  // running <- momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
};

struct BatchNormCache {
  Mode mode = Mode::infer;
  Tensor normalized;            // x_hat, same shape as the input
  std::vector<double> inv_std;  // per channel
};

namespace detail {

inline void check_batch_norm_input(const Tensor& input, const LayerParams& p) {
  require_rank(input, 3, "batch_norm");
  if (p.gamma().size() != input.dim(1)) {
    throw DimensionError("batch_norm: input " + shape_string(input.shape) + " has " +
                         std::to_string(input.dim(1)) + " channels, layer has " +
                         std::to_string(p.gamma().size()));
  }
}

// Normalizes channel c with the given statistics.
inline void normalize_channel(const Tensor& input, const LayerParams& p, std::size_t c,
                              double mean, double var, double eps, Tensor& out,
                              Tensor& normalized, std::vector<double>& inv_std) {
  const std::size_t batch = input.dim(0), channels = input.dim(1), n = input.dim(2);
  const double is = 1.0 / std::sqrt(var + eps);
  inv_std[c] = is;
  const double g = p.gamma()[c], beta = p.beta()[c];
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = (b * channels + c) * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (input[off + i] - mean) * is;
      normalized[off + i] = xh;
      out[off + i] = g * xh + beta;
    }
  }
}

}  // namespace detail

// Inference mode: running statistics, parameters untouched.
inline Tensor batch_norm_infer(const Tensor& input, const LayerParams& p,
                               BatchNormCache* cache = nullptr, const BatchNormOptions& opts = {}) {
  detail::check_batch_norm_input(input, p);
  const std::size_t channels = input.dim(1);
  Tensor out(input.shape), normalized(input.shape);
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    detail::normalize_channel(input, p, c, p.running_mean[c], p.running_var[c], opts.eps, out,
                              normalized, inv_std);
  }
  if (cache) *cache = {Mode::infer, std::move(normalized), std::move(inv_std)};
  return out;
}

// Train mode: biased batch statistics, running statistics updated.
inline Tensor batch_norm_train(const Tensor& input, LayerParams& p, BatchNormCache* cache = nullptr,
                               const BatchNormOptions& opts = {}) {
  detail::check_batch_norm_input(input, p);
  const std::size_t batch = input.dim(0), channels = input.dim(1), n = input.dim(2);
  const std::size_t count = batch * n;
  if (count < 2) {
    throw NumericalError("batch_norm: degenerate statistics, train mode needs at least 2 "
                         "samples per channel, got " + std::to_string(count));
  }
  Tensor out(input.shape), normalized(input.shape);
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* x = input.values.data() + (b * channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) mean += x[i];
    }
    mean /= static_cast<double>(count);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* x = input.values.data() + (b * channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    }
    var /= static_cast<double>(count);
    p.running_mean[c] = opts.momentum * p.running_mean[c] + (1.0 - opts.momentum) * mean;
    p.running_var[c] = opts.momentum * p.running_var[c] + (1.0 - opts.momentum) * var;
    detail::normalize_channel(input, p, c, mean, var, opts.eps, out, normalized, inv_std);
  }
  if (cache) *cache = {Mode::train, std::move(normalized), std::move(inv_std)};
  return out;
}

inline Tensor batch_norm(const Tensor& input, LayerParams& p, Mode mode,
                         BatchNormCache* cache = nullptr, const BatchNormOptions& opts = {}) {
  return mode == Mode::train ? batch_norm_train(input, p, cache, opts)
                             : batch_norm_infer(input, p, cache, opts);
}

inline Tensor batch_norm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  LayerParams& p) {
  const Tensor& xh = cache.normalized;
  if (grad_out.shape != xh.shape) {
    throw DimensionError("batch_norm_backward: gradient " + shape_string(grad_out.shape) +
                         " vs cached " + shape_string(xh.shape));
  }
  const std::size_t batch = xh.dim(0), channels = xh.dim(1), n = xh.dim(2);
  const double count = static_cast<double>(batch * n);
  p.weights.ensure_grad();
  p.bias.ensure_grad();
  Tensor grad_in(xh.shape);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xh += grad_out[off + i] * xh[off + i];
      }
    }
    p.gamma().grad[c] += sum_dy_xh;
    p.beta().grad[c] += sum_dy;
    const double scale = p.gamma()[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) {
        if (cache.mode == Mode::train) {
          grad_in[off + i] =
              scale * (grad_out[off + i] - sum_dy / count - xh[off + i] * sum_dy_xh / count);
        } else {
          grad_in[off + i] = scale * grad_out[off + i];
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Max over the point axis. Ties resolve to the first index.

struct PoolResult {
  Tensor output;                   // B x C
  std::vector<std::size_t> argmax;  // B*C point indices
};

inline PoolResult max_pool_points(const Tensor& input) {
  detail::require_rank(input, 3, "max_pool_points");
  const std::size_t batch = input.dim(0), channels = input.dim(1), n = input.dim(2);
  if (n == 0) throw PreconditionError("max_pool_points: empty point axis");
  PoolResult r{Tensor({batch, channels}), std::vector<std::size_t>(batch * channels)};
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double* x = input.values.data() + bc * n;
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (x[i] > x[best] || std::isnan(x[i])) best = i;
    r.output[bc] = x[best];
    r.argmax[bc] = best;
  }
  return r;
}

inline Tensor max_pool_points_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                                       const Shape& input_shape) {
  const std::size_t n = input_shape.at(2);
  if (grad_out.size() != argmax.size()) {
    throw DimensionError("max_pool_points_backward: gradient " + shape_string(grad_out.shape) +
                         " vs " + std::to_string(argmax.size()) + " pooled entries");
  }
  Tensor grad_in(input_shape);
  for (std::size_t bc = 0; bc < argmax.size(); ++bc) grad_in[bc * n + argmax[bc]] += grad_out[bc];
  return grad_in;
}

// ---------------------------------------------------------------------------
// Fully connected: out = input * W^T + bias over B x D_in.

inline Tensor fully_connected(const Tensor& input, const LayerParams& p) {
  detail::require_rank(input, 2, "fully_connected");
  const std::size_t batch = input.dim(0), d_in = input.dim(1);
  if (p.weights.rank() != 2 || p.weights.dim(1) != d_in) {
    throw DimensionError("fully_connected: input " + shape_string(input.shape) +
                         " incompatible with weights " + shape_string(p.weights.shape));
  }
  const std::size_t d_out = p.weights.dim(0);
  Tensor out({batch, d_out});
  detail::ConstMatrixMap in(input.values.data(), batch, d_in);
  detail::ConstMatrixMap w(p.weights.values.data(), d_out, d_in);
  detail::MatrixMap o(out.values.data(), batch, d_out);
  o.noalias() = in * w.transpose();
  o.rowwise() += detail::ConstVectorMap(p.bias.values.data(), d_out).transpose();
  return out;
}

inline Tensor fully_connected_backward(const Tensor& grad_out, const Tensor& input, LayerParams& p) {
  const std::size_t batch = input.dim(0), d_in = input.dim(1), d_out = p.weights.dim(0);
  if (grad_out.shape != Shape{batch, d_out}) {
    throw DimensionError("fully_connected_backward: gradient " + shape_string(grad_out.shape) +
                         " does not match output [" + std::to_string(batch) + "x" +
                         std::to_string(d_out) + "]");
  }
  p.weights.ensure_grad();
  p.bias.ensure_grad();
  detail::ConstMatrixMap in(input.values.data(), batch, d_in);
  detail::ConstMatrixMap g(grad_out.values.data(), batch, d_out);
  detail::ConstMatrixMap w(p.weights.values.data(), d_out, d_in);
  detail::MatrixMap(p.weights.grad.data(), d_out, d_in).noalias() += g.transpose() * in;
  detail::VectorMap(p.bias.grad.data(), d_out) += g.colwise().sum().transpose();
  Tensor grad_in(input.shape);
  detail::MatrixMap(grad_in.values.data(), batch, d_in).noalias() = g * w;
  return grad_in;
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Gradients are read from the grad slots.

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

inline void adam_update(std::vector<double>& theta, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v, double lr,
                        const AdamConfig& cfg, double bc1, double bc2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace detail

inline void adam_step(LayerParams& p, const AdamConfig& cfg) {
  p.weights.ensure_grad();
  p.bias.ensure_grad();
  auto finite = [](const std::vector<double>& g) {
    return std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(p.weights.grad) || !finite(p.bias.grad)) {
    throw NumericalError("adam_step: non-finite gradient in layer '" + p.name + "'");
  }
  if (p.adam_m_weights.size() != p.weights.size() || p.adam_m_bias.size() != p.bias.size()) {
    throw DimensionError("adam_step: moment buffers of layer '" + p.name +
                         "' do not match its parameters");
  }
  ++p.step_count;
  const double t = static_cast<double>(p.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  detail::adam_update(p.weights.values, p.weights.grad, p.adam_m_weights, p.adam_v_weights,
                      cfg.lr, cfg, bc1, bc2);
  detail::adam_update(p.bias.values, p.bias.grad, p.adam_m_bias, p.adam_v_bias, cfg.lr, cfg, bc1,
                      bc2);
}

// ---------------------------------------------------------------------------
// Reduce-on-plateau. A loss improves when strictly below the best seen so
// far; after `patience` consecutive non-improving epochs the rate is scaled
// by `ratio` and the counter restarts.

class PlateauScheduler {
 public:
  PlateauScheduler(std::size_t patience, double ratio) : patience_(patience), ratio_(ratio) {
    if (patience < 1) throw PreconditionError("plateau scheduler: patience must be >= 1");
    if (!(ratio > 0.0 && ratio < 1.0)) {
      throw PreconditionError("plateau scheduler: ratio must lie in (0, 1)");
    }
  }

  double step(double loss, double lr) {
    if (!seen_ || loss < best_) {
      best_ = loss;
      seen_ = true;
      bad_epochs_ = 0;
      return lr;
    }
    if (++bad_epochs_ >= patience_) {
      bad_epochs_ = 0;
      ++reductions_;
      return lr * ratio_;
    }
    return lr;
  }

  double best() const { return best_; }
  std::size_t reductions() const { return reductions_; }

 private:
  std::size_t patience_;
  double ratio_;
  double best_ = 0.0;
  bool seen_ = false;
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

inline double plateau_scheduler(std::span<const double> history, std::size_t patience,
                                double ratio, double lr) {
  PlateauScheduler s(patience, ratio);
  for (double loss : history) lr = s.step(loss, lr);
  return lr;
}

// ---------------------------------------------------------------------------
// Max over coordinates of |analytic - central difference| / max(1, |analytic|).

inline double grad_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> point, std::span<const double> analytic,
                         double step = 1e-5) {
  if (point.size() != analytic.size()) {
    throw DimensionError("grad_check: " + std::to_string(point.size()) + " coordinates but " +
                         std::to_string(analytic.size()) + " analytic partials");
  }
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sc3d
