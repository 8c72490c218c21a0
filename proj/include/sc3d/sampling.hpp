#pragma once

// Candidate generation: the evaluation grid, training-time Gaussian offsets,
// and three realistic search spaces (Kalman, particle, Gaussian mixture).

#include <algorithm>
#include <array>
#include <string>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/Core>

#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"

namespace sc3d {

struct Candidate {
  PoseOffset offset;  // relative to the reference box
  Box3D box;
};

inline std::vector<Candidate> candidates_from_boxes(const Box3D& reference,
                                                    const std::vector<Box3D>& boxes) {
  std::vector<Candidate> out;
  out.reserve(boxes.size());
  for (const Box3D& b : boxes) out.push_back({offset_between(reference, b), b});
  return out;
}

// ---------------------------------------------------------------------------

struct GridSpec {
  double range_t = 3.0;       // meters
  double step_t = 1.0;        // meters
  double range_alpha = 10.0;  // degrees
  double step_alpha = 10.0;   // degrees

  void validate() const {
    if (!(step_t > 0.0) || !(step_alpha > 0.0)) throw PreconditionError("grid steps must be > 0");
    if (range_t < 0.0 || range_alpha < 0.0) throw PreconditionError("grid ranges must be >= 0");
  }

  std::size_t per_axis_t() const {
    return 2 * static_cast<std::size_t>(std::floor(range_t / step_t + 1e-9)) + 1;
  }
  std::size_t per_axis_alpha() const {
    return 2 * static_cast<std::size_t>(std::floor(range_alpha / step_alpha + 1e-9)) + 1;
  }
  std::size_t size() const { return per_axis_t() * per_axis_t() * per_axis_alpha(); }
};

// Full Cartesian grid around `reference`, t_x major, then t_y, then alpha.
inline std::vector<Candidate> exhaustive_grid(const GridSpec& spec, const Box3D& reference) {
  spec.validate();
  const auto half_t = static_cast<long>(spec.per_axis_t() / 2);
  const auto half_a = static_cast<long>(spec.per_axis_alpha() / 2);
  std::vector<Candidate> out;
  out.reserve(spec.size());
  for (long ix = -half_t; ix <= half_t; ++ix) {
    for (long iy = -half_t; iy <= half_t; ++iy) {
      for (long ia = -half_a; ia <= half_a; ++ia) {
        const PoseOffset off{static_cast<double>(ix) * spec.step_t,
                             static_cast<double>(iy) * spec.step_t,
                             static_cast<double>(ia) * spec.step_alpha};
        out.push_back({off, apply_offset(reference, off)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GaussianSpec {
  double sigma_t = 1.0;      // meters, per planar axis
  double sigma_alpha = 5.0;  // degrees
  std::size_t count = 64;

  void validate() const {
    if (sigma_t < 0.0 || sigma_alpha < 0.0) throw PreconditionError("Gaussian sigmas must be >= 0");
    if (count < 1) throw PreconditionError("Gaussian sample count must be >= 1");
  }
};

// Independent draws with covariance diag(sigma_t^2, sigma_t^2, sigma_alpha^2).
template <class Rng>
std::vector<PoseOffset> sample_training_offsets(const GaussianSpec& spec, Rng& rng) {
  spec.validate();
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<PoseOffset> out(spec.count);
  for (PoseOffset& o : out) {
    o.t_x = spec.sigma_t * unit(rng);
    o.t_y = spec.sigma_t * unit(rng);
    o.alpha = normalize_degrees(spec.sigma_alpha * unit(rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constant-velocity Kalman filter on (x, y), random walk on yaw (degrees).
// State: [x, y, vx, vy, yaw_deg] in the world ground plane.

struct KalmanConfig {
  double process_t = 0.1;      // m per frame, position and velocity
  double process_alpha = 2.0;  // deg per frame
  double measurement_t = 0.2;  // m
  double measurement_alpha = 3.0;  // deg
  double initial_velocity = 1.0;   // m per frame, prior std on velocity
};

struct KalmanState {
  Eigen::Matrix<double, 5, 1> mean = Eigen::Matrix<double, 5, 1>::Zero();
  Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Identity();
  KalmanConfig config;
  Box3D shape;  // height, size and z carried over to every candidate

  Box3D mean_box() const {
    Box3D b = shape;
    b.center.x = mean(0);
    b.center.y = mean(1);
    b.yaw = normalize_angle(deg_to_rad(mean(4)));
    return b;
  }
};

inline KalmanState kalman_init(const Box3D& init_box, const KalmanConfig& cfg = {}) {
  KalmanState s;
  s.config = cfg;
  s.shape = init_box;
  s.mean << init_box.center.x, init_box.center.y, 0.0, 0.0, rad_to_deg(init_box.yaw);
  s.covariance.setZero();
  s.covariance.diagonal() << cfg.measurement_t * cfg.measurement_t,
      cfg.measurement_t * cfg.measurement_t, cfg.initial_velocity * cfg.initial_velocity,
      cfg.initial_velocity * cfg.initial_velocity, cfg.measurement_alpha * cfg.measurement_alpha;
  return s;
}

namespace detail {

template <int Dim>
void require_positive_definite(const Eigen::Matrix<double, Dim, Dim>& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite covariance");
  Eigen::LLT<Eigen::Matrix<double, Dim, Dim>> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": covariance lost positive-definiteness");
  }
}

}  // namespace detail

inline void kalman_update(KalmanState& s, const Box3D& measurement) {
  Eigen::Matrix<double, 3, 5> h = Eigen::Matrix<double, 3, 5>::Zero();
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  h(2, 4) = 1.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Zero();
  const KalmanConfig& c = s.config;
  r.diagonal() << c.measurement_t * c.measurement_t, c.measurement_t * c.measurement_t,
      c.measurement_alpha * c.measurement_alpha;
  Eigen::Vector3d innovation;
  innovation << measurement.center.x - s.mean(0), measurement.center.y - s.mean(1),
      normalize_degrees(rad_to_deg(measurement.yaw) - s.mean(4));
  const Eigen::Matrix3d sys = h * s.covariance * h.transpose() + r;
  const Eigen::Matrix<double, 5, 3> gain = s.covariance * h.transpose() * sys.inverse();
  s.mean += gain * innovation;
  s.mean(4) = normalize_degrees(s.mean(4));
  // Joseph form keeps the update symmetric positive semi-definite.
  const Eigen::Matrix<double, 5, 5> ikh = Eigen::Matrix<double, 5, 5>::Identity() - gain * h;
  s.covariance = ikh * s.covariance * ikh.transpose() + gain * r * gain.transpose();
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  detail::require_positive_definite<5>(s.covariance, "kalman update");
}

inline void kalman_predict(KalmanState& s) {
  Eigen::Matrix<double, 5, 5> f = Eigen::Matrix<double, 5, 5>::Identity();
  f(0, 2) = 1.0;
  f(1, 3) = 1.0;
  const KalmanConfig& c = s.config;
  Eigen::Matrix<double, 5, 5> q = Eigen::Matrix<double, 5, 5>::Zero();
  const double qt = c.process_t * c.process_t;
  q.diagonal() << qt, qt, qt, qt, c.process_alpha * c.process_alpha;
  s.mean = f * s.mean;
  s.covariance = f * s.covariance * f.transpose() + q;
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  detail::require_positive_definite<5>(s.covariance, "kalman predict");
}

struct KalmanStepResult {
  KalmanState state;
  std::vector<Box3D> candidates;  // [0] is the predicted mean
};

// Optional measurement update with the previously selected box, constant
// velocity prediction, then n candidates from the predicted pose Gaussian.
template <class Rng>
KalmanStepResult kalman_step(KalmanState state, const std::optional<Box3D>& measurement,
                             std::size_t n, Rng& rng) {
  if (n < 1) throw PreconditionError("kalman_step: n must be >= 1");
  if (measurement) kalman_update(state, *measurement);
  kalman_predict(state);

  Eigen::Matrix3d pose_cov;
  const int idx[3] = {0, 1, 4};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) pose_cov(i, j) = state.covariance(idx[i], idx[j]);
  Eigen::LLT<Eigen::Matrix3d> llt(pose_cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("kalman_step: predicted pose covariance is not positive-definite");
  }
  const Eigen::Matrix3d chol = llt.matrixL();

  KalmanStepResult out{state, {}};
  out.candidates.reserve(n);
  const Box3D mean_box = state.mean_box();
  out.candidates.push_back(mean_box);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 1; i < n; ++i) {
    Eigen::Vector3d u;
    u << unit(rng), unit(rng), unit(rng);
    const Eigen::Vector3d d = chol * u;
    Box3D b = mean_box;
    b.center.x += d(0);
    b.center.y += d(1);
    b.yaw = normalize_angle(mean_box.yaw + deg_to_rad(d(2)));
    out.candidates.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Particle filter over planar poses.

struct ParticleConfig {
  double diffusion_t = 0.1;      // m
  double diffusion_alpha = 2.0;  // deg
};

struct ParticleSet {
  std::vector<Box3D> particles;
  std::vector<double> weights;  // non-negative, sum to 1
};

template <class Rng>
void diffuse(Box3D& b, const ParticleConfig& cfg, Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  b.center.x += cfg.diffusion_t * unit(rng);
  b.center.y += cfg.diffusion_t * unit(rng);
  b.yaw = normalize_angle(b.yaw + deg_to_rad(cfg.diffusion_alpha * unit(rng)));
}

template <class Rng>
ParticleSet particle_init(const Box3D& init_box, std::size_t n, const ParticleConfig& cfg, Rng& rng) {
  if (n < 1) throw PreconditionError("particle_init: n must be >= 1");
  ParticleSet s;
  s.particles.assign(n, init_box);
  for (Box3D& b : s.particles) diffuse(b, cfg, rng);
  s.weights.assign(n, 1.0 / static_cast<double>(n));
  return s;
}

inline double effective_sample_size(std::span<const double> weights) {
  double sq = 0.0;
  for (double w : weights) sq += w * w;
  return sq > 0.0 ? 1.0 / sq : 0.0;
}

// Systematic resampling: n evenly spaced pointers with one uniform offset.
template <class Rng>
std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(n));
  const double start = u(rng);
  std::vector<std::size_t> out;
  out.reserve(n);
  double cumulative = weights.empty() ? 0.0 : weights[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = start + static_cast<double>(i) / static_cast<double>(n);
    while (pos > cumulative && j + 1 < weights.size()) cumulative += weights[++j];
    out.push_back(j);
  }
  return out;
}

struct ParticleStepResult {
  ParticleSet set;
  std::vector<Box3D> candidates;
  bool weights_reset = false;  // every score equal: uniform weights were used
};

// Weights from scores (shifted to be non-negative, normalized), systematic
// resampling, Gaussian diffusion; the new particles are the candidates.
template <class Rng>
ParticleStepResult particle_step(const ParticleSet& particles, std::span<const double> scores,
                                 std::size_t n, Rng& rng, const ParticleConfig& cfg = {}) {
  if (n < 1) throw PreconditionError("particle_step: n must be >= 1");
  if (scores.size() != particles.particles.size() || scores.empty()) {
    throw PreconditionError("particle_step: one score per particle required");
  }
  ParticleStepResult out;
  std::vector<double> w(scores.size());
  const double lo = *std::min_element(scores.begin(), scores.end());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    w[i] = std::isfinite(scores[i]) ? scores[i] - lo : 0.0;
    total += w[i];
  }
  if (!(total > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    out.weights_reset = true;
  } else {
    for (double& x : w) x /= total;
  }
  const std::vector<std::size_t> picks = systematic_resample(std::span<const double>(w), n, rng);
  out.set.particles.reserve(n);
  for (std::size_t idx : picks) {
    Box3D b = particles.particles[idx];
    diffuse(b, cfg, rng);
    out.set.particles.push_back(b);
  }
  out.set.weights.assign(n, 1.0 / static_cast<double>(n));
  out.candidates = out.set.particles;
  return out;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian mixture over planar motion offsets (t_x, t_y, alpha).

struct GaussianMixture {
  struct Component {
    double weight = 1.0;
    std::array<double, 3> mean{};
    std::array<double, 3> var{1.0, 1.0, 1.0};
  };
  std::vector<Component> components;
  std::vector<double> log_likelihood;  // per EM iteration
  std::size_t reseeded = 0;
};

namespace detail {

inline std::array<double, 3> as_array(const PoseOffset& o) { return {o.t_x, o.t_y, o.alpha}; }

inline double log_gaussian_diag(const std::array<double, 3>& x, const GaussianMixture::Component& c) {
  double s = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double diff = x[d] - c.mean[d];
    s += -0.5 * (std::log(2.0 * kPi * c.var[d]) + diff * diff / c.var[d]);
  }
  return s;
}

}  // namespace detail

struct GmmOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-8;
  double min_variance = 1e-4;
};

template <class Rng>
GaussianMixture fit_gmm(std::span<const PoseOffset> data, std::size_t k, Rng& rng,
                        const GmmOptions& opts = {}) {
  if (k < 1) throw PreconditionError("fit_gmm: k must be >= 1");
  if (data.empty()) throw PreconditionError("fit_gmm: no data");
  k = std::min(k, data.size());
  const std::size_t n = data.size();
  std::vector<std::array<double, 3>> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = detail::as_array(data[i]);

  std::array<double, 3> global_mean{}, global_var{};
  for (const auto& p : x)
    for (int d = 0; d < 3; ++d) global_mean[d] += p[d] / static_cast<double>(n);
  for (const auto& p : x)
    for (int d = 0; d < 3; ++d)
      global_var[d] += (p[d] - global_mean[d]) * (p[d] - global_mean[d]) / static_cast<double>(n);
  for (double& v : global_var) v = std::max(v, opts.min_variance);

  // k-means++ style seeding.
  GaussianMixture gmm;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  auto add_component = [&](std::size_t idx) {
    GaussianMixture::Component c;
    c.weight = 1.0 / static_cast<double>(k);
    c.mean = x[idx];
    c.var = global_var;
    gmm.components.push_back(c);
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (int d = 0; d < 3; ++d) d2 += (x[i][d] - x[idx][d]) * (x[i][d] - x[idx][d]) / global_var[d];
      nearest[i] = std::min(nearest[i], d2);
    }
  };
  add_component(pick(rng));
  while (gmm.components.size() < k) {
    double total = 0.0;
    for (double d : nearest) total += d;
    if (!(total > 0.0)) {
      add_component(pick(rng));
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng), acc = 0.0;
    std::size_t chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += nearest[i];
      if (acc >= target) {
        chosen = i;
        break;
      }
    }
    add_component(chosen);
  }

  std::vector<double> resp(n * k);
  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    // E-step
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        resp[i * k + c] = std::log(gmm.components[c].weight) +
                          detail::log_gaussian_diag(x[i], gmm.components[c]);
        hi = std::max(hi, resp[i * k + c]);
      }
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) sum += std::exp(resp[i * k + c] - hi);
      const double lse = hi + std::log(sum);
      ll += lse;
      for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(resp[i * k + c] - lse);
    }
    gmm.log_likelihood.push_back(ll);
    // M-step
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i) nk += resp[i * k + c];
      GaussianMixture::Component& comp = gmm.components[c];
      if (nk < 1e-10) {
        comp.mean = x[pick(rng)];
        comp.var = global_var;
        comp.weight = 1.0 / static_cast<double>(n);
        ++gmm.reseeded;
        continue;
      }
      comp.weight = nk / static_cast<double>(n);
      for (int d = 0; d < 3; ++d) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += resp[i * k + c] * x[i][d];
        comp.mean[d] = m / nk;
      }
      for (int d = 0; d < 3; ++d) {
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double diff = x[i][d] - comp.mean[d];
          v += resp[i * k + c] * diff * diff;
        }
        comp.var[d] = std::max(v / nk, opts.min_variance);
      }
    }
    double wsum = 0.0;
    for (const auto& c : gmm.components) wsum += c.weight;
    for (auto& c : gmm.components) c.weight /= wsum;
    if (std::abs(ll - previous) < opts.tolerance * std::max(1.0, std::abs(ll))) break;
    previous = ll;
  }
  return gmm;
}

template <class Rng>
PoseOffset sample_mixture(const GaussianMixture& gmm, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double target = u(rng), acc = 0.0;
  std::size_t chosen = gmm.components.size() - 1;
  for (std::size_t c = 0; c < gmm.components.size(); ++c) {
    acc += gmm.components[c].weight;
    if (target <= acc) {
      chosen = c;
      break;
    }
  }
  const auto& comp = gmm.components[chosen];
  std::normal_distribution<double> unit(0.0, 1.0);
  return {comp.mean[0] + std::sqrt(comp.var[0]) * unit(rng),
          comp.mean[1] + std::sqrt(comp.var[1]) * unit(rng),
          normalize_degrees(comp.mean[2] + std::sqrt(comp.var[2]) * unit(rng))};
}

inline PoseOffset mixture_mean(const GaussianMixture& gmm) {
  PoseOffset m;
  for (const auto& c : gmm.components) {
    m.t_x += c.weight * c.mean[0];
    m.t_y += c.weight * c.mean[1];
    m.alpha += c.weight * c.mean[2];
  }
  return m;
}

// n candidates around `previous`: [0] shifted by the mixture mean, the rest
// drawn from the mixture.
template <class Rng>
std::vector<Box3D> sample_gmm_candidates(const GaussianMixture& gmm, const Box3D& previous,
                                         std::size_t n, Rng& rng) {
  if (n < 1) throw PreconditionError("gmm sampling: n must be >= 1");
  std::vector<Box3D> out;
  out.reserve(n);
  out.push_back(apply_offset(previous, mixture_mean(gmm)));
  for (std::size_t i = 1; i < n; ++i) out.push_back(apply_offset(previous, sample_mixture(gmm, rng)));
  return out;
}

template <class Rng>
std::vector<Box3D> gmm_step(std::span<const PoseOffset> history, std::size_t k, std::size_t n,
                            const Box3D& previous, Rng& rng) {
  const GaussianMixture gmm = fit_gmm(history, k, rng);
  return sample_gmm_candidates(gmm, previous, n, rng);
}

// ---------------------------------------------------------------------------

// Higher is better; 0 when the candidate is the ground truth.
inline double closest_oracle_score(const Box3D& candidate, const Box3D& ground_truth) {
  return -pose_distance(candidate, ground_truth);
}

}  // namespace sc3d
