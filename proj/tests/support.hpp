#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sc3d/network.hpp"
#include "sc3d/training.hpp"

namespace sc3d::testing {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("sc3d_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline PointCloud random_cloud(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({g(rng), g(rng), g(rng)});
  return c;
}

inline FrameBatch random_batch(std::size_t candidates, std::size_t n, std::mt19937_64& rng) {
  FrameBatch b;
  std::uniform_real_distribution<double> t(0.0, 1.0);
  for (std::size_t i = 0; i < candidates; ++i) {
    b.candidates.push_back(random_cloud(n, rng));
    b.boxes.push_back({});
    b.targets.push_back(t(rng));
  }
  b.model = random_cloud(n, rng);
  return b;
}

struct ParamRef {
  LayerParams* layer;
  bool bias;
  std::size_t index;

  double& value() const { return bias ? layer->bias.values[index] : layer->weights.values[index]; }
  double grad() const { return bias ? layer->bias.grad[index] : layer->weights.grad[index]; }
};

// Up to `per_tensor` coordinates from every weight and bias tensor.
inline std::vector<ParamRef> sample_params(const std::vector<LayerParams*>& layers, std::size_t per_tensor,
                                           std::mt19937_64& rng) {
  std::vector<ParamRef> out;
  for (LayerParams* l : layers) {
    for (bool bias : {false, true}) {
      const std::size_t size = bias ? l->bias.size() : l->weights.size();
      std::vector<std::size_t> idx(size);
      for (std::size_t i = 0; i < size; ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(std::min(per_tensor, size));
      for (std::size_t i : idx) out.push_back({l, bias, i});
    }
  }
  return out;
}

// Max relative error of the analytic gradient of compute_loss against central
// differences over a sample of parameters.
inline double composite_grad_error(SiameseModel& m, const FrameBatch& batch, const LossWeights& w,
                                   std::size_t per_tensor, std::mt19937_64& rng, double step = 1e-5) {
  compute_loss(batch, m, w, Mode::train, true);
  double worst = 0.0;
  for (const ParamRef& p : sample_params(m.layers(), per_tensor, rng)) {
    const double analytic = p.grad();
    const double saved = p.value();
    p.value() = saved + step;
    const double up = compute_loss(batch, m, w, Mode::train, false).l_total;
    p.value() = saved - step;
    const double down = compute_loss(batch, m, w, Mode::train, false).l_total;
    p.value() = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return worst;
}

// Discrete state of every piecewise choice in compute_loss: ReLU signs,
// max-pool winners and Chamfer nearest neighbours.
inline std::vector<std::size_t> kink_pattern(SiameseModel& m, const FrameBatch& batch) {
  std::vector<PointCloud> inputs = batch.candidates;
  inputs.push_back(batch.model);
  Encoder::Tape et;
  const Tensor z = m.encoder.forward(clouds_to_tensor(inputs, m.encoder.num_points()), Mode::train, &et);
  std::vector<std::size_t> out;
  for (const Tensor& pre : et.relu_in)
    for (double v : pre.values) out.push_back(v > 0.0);
  out.insert(out.end(), et.argmax.begin(), et.argmax.end());
  const std::size_t k = m.encoder.latent_size();
  const std::vector<double> zh(z.values.end() - static_cast<std::ptrdiff_t>(k), z.values.end());
  Decoder::Tape dt;
  const PointCloud recon = tensor_row_to_cloud(m.decoder.forward(Tensor({1, k}, zh), &dt), 0);
  for (double v : dt.hidden_pre.values) out.push_back(v > 0.0);
  double d;
  for (const Vec3& p : recon.points) out.push_back(detail::nearest_index(p, batch.model.points, &d));
  for (const Vec3& p : batch.model.points) out.push_back(detail::nearest_index(p, recon.points, &d));
  return out;
}

struct GradCheckReport {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t straddling = 0;  // skipped: a piecewise choice flips within +-step
};

// composite_grad_error that leaves out coordinates whose difference interval
// crosses a non-differentiable point.
inline GradCheckReport composite_grad_check(SiameseModel& m, const FrameBatch& batch, const LossWeights& w,
                                            std::size_t per_tensor, std::mt19937_64& rng, double step = 1e-5) {
  compute_loss(batch, m, w, Mode::train, true);
  const std::vector<std::size_t> base = kink_pattern(m, batch);
  GradCheckReport r;
  for (const ParamRef& p : sample_params(m.layers(), per_tensor, rng)) {
    const double analytic = p.grad();
    const double saved = p.value();
    p.value() = saved + step;
    const double up = compute_loss(batch, m, w, Mode::train, false).l_total;
    const bool flip_up = kink_pattern(m, batch) != base;
    p.value() = saved - step;
    const double down = compute_loss(batch, m, w, Mode::train, false).l_total;
    const bool flip_down = kink_pattern(m, batch) != base;
    p.value() = saved;
    ++r.checked;
    if (flip_up || flip_down) {
      ++r.straddling;
      continue;
    }
    const double numeric = (up - down) / (2.0 * step);
    r.worst = std::max(r.worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return r;
}

}  // namespace sc3d::testing
