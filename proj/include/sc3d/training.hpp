#pragma once

// Joint optimization of the tracking loss and the shape-completion loss.
// One batch is one frame: C candidate crops plus the tracklet's model shape,
// encoded together; the model latent is also decoded and compared with the
// model shape by Chamfer distance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sc3d/data_io.hpp"
#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"
#include "sc3d/network.hpp"
#include "sc3d/sampling.hpp"
#include "sc3d/tensor.hpp"

namespace sc3d {

struct FrameBatch {
  std::vector<PointCloud> candidates;  // N points each, canonical to their own box
  std::vector<Box3D> boxes;
  std::vector<double> targets;         // rho(pose distance to ground truth)
  PointCloud model;                    // N points
};

template <class Rng>
FrameBatch build_frame_batch(const Tracklet& t, std::size_t frame, const PointCloud& model_shape,
                             const GaussianSpec& spec, std::size_t n, const CropPolicy& crop, Rng& rng) {
  if (frame >= t.frames.size()) throw PreconditionError("build_frame_batch: frame outside tracklet");
  const TrackletFrame& f = t.frames[frame];
  FrameBatch batch;
  batch.boxes.reserve(spec.count);
  for (const PoseOffset& off : sample_training_offsets(spec, rng)) batch.boxes.push_back(apply_offset(f.box, off));
  for (const Box3D& b : batch.boxes) {
    batch.candidates.push_back(resample(canonicalize(sc3d::crop(*f.cloud, b, crop), b), n, rng));
    batch.targets.push_back(rho(pose_distance(b, f.box)));
  }
  batch.model = resample(model_shape, n, rng);
  return batch;
}

template <class Rng>
FrameBatch build_frame_batch(const Tracklet& t, std::size_t frame, const GaussianSpec& spec, std::size_t n,
                             const CropPolicy& crop, Rng& rng) {
  return build_frame_batch(t, frame, build_model_shape(t, crop), spec, n, crop, rng);
}

struct LossBreakdown {
  double l_tr = 0.0;
  double l_comp = 0.0;
  double l_total = 0.0;
};

struct LossWeights {
  double lambda_comp = 1e-6;
  double tracking = 1.0;  // 0 trains completion only
};

// Forward pass over one batch. With `backward`, parameter gradients of
// tracking * l_tr + lambda * l_comp are left in the layers' grad slots
// (zeroed first). A zero lambda skips the decoder backward entirely.
inline LossBreakdown compute_loss(const FrameBatch& batch, SiameseModel& m, const LossWeights& w, Mode mode,
                                  bool backward) {
  if (batch.candidates.empty() || batch.candidates.size() != batch.targets.size()) {
    throw PreconditionError("compute_loss: malformed batch");
  }
  if (w.lambda_comp < 0.0 || w.tracking < 0.0) throw PreconditionError("compute_loss: weights must be >= 0");
  const std::size_t c = batch.candidates.size();
  const std::size_t k = m.encoder.latent_size();
  std::vector<PointCloud> inputs = batch.candidates;
  inputs.push_back(batch.model);
  const Tensor x = clouds_to_tensor(inputs, m.encoder.num_points());

  Encoder::Tape etape;
  const Tensor z = backward || mode == Mode::train ? m.encoder.forward(x, mode, backward ? &etape : nullptr)
                                                   : m.encoder.infer(x);
  const std::span<const double> zh(z.values.data() + c * k, k);
  std::vector<double> sims(c);
  for (std::size_t i = 0; i < c; ++i) sims[i] = cosine_similarity(std::span(z.values.data() + i * k, k), zh);

  LossBreakdown out;
  out.l_tr = tracking_loss(sims, batch.targets);

  Decoder::Tape dtape;
  const Tensor recon_flat = m.decoder.forward(Tensor({1, k}, std::vector<double>(zh.begin(), zh.end())), &dtape);
  const PointCloud recon = tensor_row_to_cloud(recon_flat, 0);
  const bool comp_backward = backward && w.lambda_comp > 0.0;
  ChamferResult cr;
  if (comp_backward) {
    cr = chamfer_with_grad(recon, batch.model);
  } else {
    cr.value = chamfer(recon, batch.model);
  }
  out.l_comp = cr.value;
  out.l_total = w.tracking * out.l_tr + w.lambda_comp * out.l_comp;
  if (!std::isfinite(out.l_total)) throw NumericalError("compute_loss: non-finite loss");
  if (!backward) return out;

  for (LayerParams* l : m.layers()) l->zero_grad();
  Tensor gz(z.shape);
  if (w.tracking > 0.0) {
    const std::vector<double> gs = tracking_loss_grad(sims, batch.targets);
    std::span<double> gzh(gz.values.data() + c * k, k);
    for (std::size_t i = 0; i < c; ++i) {
      cosine_similarity_backward(std::span(z.values.data() + i * k, k), zh, w.tracking * gs[i],
                                 std::span(gz.values.data() + i * k, k), gzh);
    }
  }
  if (comp_backward) {
    Tensor grecon(recon_flat.shape);
    for (std::size_t p = 0; p < cr.grad_a.size(); ++p) {
      grecon.values[3 * p] = w.lambda_comp * cr.grad_a[p].x;
      grecon.values[3 * p + 1] = w.lambda_comp * cr.grad_a[p].y;
      grecon.values[3 * p + 2] = w.lambda_comp * cr.grad_a[p].z;
    }
    const Tensor gzd = m.decoder.backward(grecon, dtape);
    for (std::size_t i = 0; i < k; ++i) gz.values[c * k + i] += gzd.values[i];
  }
  m.encoder.backward(gz, etape);
  return out;
}

// One optimizer step; parameters are untouched when any gradient is non-finite.
inline LossBreakdown train_step(const FrameBatch& batch, SiameseModel& m, const LossWeights& w,
                                const AdamConfig& adam) {
  const LossBreakdown loss = compute_loss(batch, m, w, Mode::train, true);
  std::vector<LayerParams*> params = m.encoder.layers();
  if (w.lambda_comp > 0.0)
    for (LayerParams* l : m.decoder.layers()) params.push_back(l);
  for (LayerParams* l : params) {
    for (const std::vector<double>* g : {&l->weights.grad, &l->bias.grad}) {
      if (!std::all_of(g->begin(), g->end(), [](double v) { return std::isfinite(v); })) {
        throw NumericalError("train_step: non-finite gradient in " + l->name + "; step aborted");
      }
    }
  }
  for (LayerParams* l : params) adam_step(*l, adam);
  return loss;
}

// ---------------------------------------------------------------------------

struct TrainingConfig {
  NetworkShape shape;
  std::size_t candidates = 64;
  double sigma_t = 1.0;
  double sigma_alpha = 5.0;
  LossWeights weights;
  AdamConfig adam;
  std::size_t patience = 3;
  double ratio = 0.1;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;      // network init and shuffling
  std::uint64_t val_seed = 7;  // fixed validation sampling
  CropPolicy crop;
  std::size_t max_train_frames = 0;  // per epoch, 0 = every (tracklet, frame) pair
  std::size_t max_val_frames = 0;

  GaussianSpec offsets() const { return {sigma_t, sigma_alpha, candidates}; }
};

struct EpochLog {
  std::size_t epoch = 0;  // 0 = before training
  LossBreakdown train;
  LossBreakdown val;
  double lr = 0.0;
};

struct FitResult {
  SiameseModel best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

inline void write_training_log(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,train_l_tr,train_l_comp,train_l_total,val_l_tr,val_l_comp,val_l_total,lr\n";
  os.precision(10);
  for (const EpochLog& e : log) {
    os << e.epoch << ',' << e.train.l_tr << ',' << e.train.l_comp << ',' << e.train.l_total << ',' << e.val.l_tr
       << ',' << e.val.l_comp << ',' << e.val.l_total << ',' << e.lr << '\n';
  }
}

namespace detail {

struct FramePair {
  std::size_t tracklet, frame;
};

inline std::vector<FramePair> all_frame_pairs(const std::vector<Tracklet>& ts) {
  std::vector<FramePair> out;
  for (std::size_t i = 0; i < ts.size(); ++i)
    for (std::size_t f = 0; f < ts[i].frames.size(); ++f) out.push_back({i, f});
  return out;
}

inline LossBreakdown mean_loss(const std::vector<FrameBatch>& batches, SiameseModel& m, const LossWeights& w) {
  LossBreakdown acc;
  for (const FrameBatch& b : batches) {
    const LossBreakdown l = compute_loss(b, m, w, Mode::infer, false);
    acc.l_tr += l.l_tr;
    acc.l_comp += l.l_comp;
    acc.l_total += l.l_total;
  }
  const double n = static_cast<double>(batches.size());
  return {acc.l_tr / n, acc.l_comp / n, acc.l_total / n};
}

}  // namespace detail

// Validation batches drawn once with the fixed validation seed.
inline std::vector<FrameBatch> validation_batches(const std::vector<Tracklet>& val, const TrainingConfig& cfg) {
  std::mt19937_64 rng(cfg.val_seed);
  std::vector<detail::FramePair> pairs = detail::all_frame_pairs(val);
  if (cfg.max_val_frames > 0 && pairs.size() > cfg.max_val_frames) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(cfg.max_val_frames);
  }
  std::vector<PointCloud> shapes;
  for (const Tracklet& t : val) shapes.push_back(build_model_shape(t, cfg.crop));
  std::vector<FrameBatch> out;
  for (const auto& p : pairs) {
    out.push_back(build_frame_batch(val[p.tracklet], p.frame, shapes[p.tracklet], cfg.offsets(), cfg.shape.points,
                                    cfg.crop, rng));
  }
  return out;
}

inline LossBreakdown validation_loss(const std::vector<FrameBatch>& batches, SiameseModel& m, const LossWeights& w) {
  if (batches.empty()) throw ConfigError("validation split is empty");
  return detail::mean_loss(batches, m, w);
}

// Epochs over shuffled (tracklet, frame) pairs; the validation total loss
// drives the plateau scheduler and selects the returned model.
inline FitResult fit(const std::vector<Tracklet>& train, const std::vector<Tracklet>& val, const TrainingConfig& cfg,
                     SiameseModel model, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (train.empty()) throw ConfigError("training split is empty");
  if (val.empty()) throw ConfigError("validation split is empty");
  if (model.shape != cfg.shape) throw ConfigError("fit: model shape does not match the training config");
  std::vector<PointCloud> shapes;
  for (const Tracklet& t : train) shapes.push_back(build_model_shape(t, cfg.crop));
  const std::vector<FrameBatch> val_batches = validation_batches(val, cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
  AdamConfig adam = cfg.adam;
  PlateauScheduler scheduler(cfg.patience, cfg.ratio);

  FitResult result;
  EpochLog initial;
  initial.val = validation_loss(val_batches, model, cfg.weights);
  initial.lr = adam.lr;
  result.log.push_back(initial);
  if (on_epoch) on_epoch(initial);
  result.best = model;
  double best_val = initial.val.l_total;
  scheduler.step(best_val, adam.lr);

  std::vector<detail::FramePair> pairs = detail::all_frame_pairs(train);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const std::size_t steps =
        cfg.max_train_frames > 0 ? std::min(cfg.max_train_frames, pairs.size()) : pairs.size();
    LossBreakdown acc;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto& p = pairs[s];
      const FrameBatch batch = build_frame_batch(train[p.tracklet], p.frame, shapes[p.tracklet], cfg.offsets(),
                                                 cfg.shape.points, cfg.crop, rng);
      const LossBreakdown l = train_step(batch, model, cfg.weights, adam);
      acc.l_tr += l.l_tr;
      acc.l_comp += l.l_comp;
      acc.l_total += l.l_total;
    }
    EpochLog e;
    e.epoch = epoch;
    const double n = static_cast<double>(steps);
    e.train = {acc.l_tr / n, acc.l_comp / n, acc.l_total / n};
    e.val = validation_loss(val_batches, model, cfg.weights);
    e.lr = adam.lr;
    if (e.val.l_total < best_val) {
      best_val = e.val.l_total;
      result.best = model;
      result.best_epoch = epoch;
    }
    adam.lr = scheduler.step(e.val.l_total, adam.lr);
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Completion pre-training on complete canonical shapes.

struct PretrainConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

// Mean Chamfer between decode(encode(x)) and x over a batch; with `backward`,
// gradients are left in the layers.
inline double completion_batch_loss(const std::vector<PointCloud>& clouds, SiameseModel& m, Mode mode,
                                    bool backward) {
  if (clouds.empty()) throw PreconditionError("completion_batch_loss: empty batch");
  const std::size_t b = clouds.size();
  const Tensor x = clouds_to_tensor(clouds, m.encoder.num_points());
  Encoder::Tape etape;
  const Tensor z = backward || mode == Mode::train ? m.encoder.forward(x, mode, backward ? &etape : nullptr)
                                                   : m.encoder.infer(x);
  Decoder::Tape dtape;
  const Tensor recon = m.decoder.forward(z, &dtape);
  const std::size_t width = recon.dim(1);
  Tensor grecon(recon.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const PointCloud r = tensor_row_to_cloud(recon, i);
    if (!backward) {
      total += chamfer(r, clouds[i]);
      continue;
    }
    const ChamferResult cr = chamfer_with_grad(r, clouds[i]);
    total += cr.value;
    for (std::size_t p = 0; p < cr.grad_a.size(); ++p) {
      grecon.values[i * width + 3 * p] = cr.grad_a[p].x / static_cast<double>(b);
      grecon.values[i * width + 3 * p + 1] = cr.grad_a[p].y / static_cast<double>(b);
      grecon.values[i * width + 3 * p + 2] = cr.grad_a[p].z / static_cast<double>(b);
    }
  }
  const double loss = total / static_cast<double>(b);
  if (!std::isfinite(loss)) throw NumericalError("completion loss is not finite");
  if (backward) {
    for (LayerParams* l : m.layers()) l->zero_grad();
    const Tensor gz = m.decoder.backward(grecon, dtape);
    m.encoder.backward(gz, etape);
  }
  return loss;
}

// Minimizes the completion loss alone; returns the per-step losses.
inline std::vector<double> pretrain_completion(const std::vector<PointCloud>& shapes, SiameseModel& m,
                                               const PretrainConfig& cfg) {
  if (shapes.empty()) throw ConfigError("pretraining shape set is empty");
  if (cfg.batch_size < 1) throw ConfigError("pretraining batch size must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(shapes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<double> losses;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<PointCloud> batch;
    while (batch.size() < std::min(cfg.batch_size, shapes.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(resample(shapes[order[cursor++]], m.encoder.num_points(), rng));
    }
    losses.push_back(completion_batch_loss(batch, m, Mode::train, true));
    for (LayerParams* l : m.layers()) adam_step(*l, cfg.adam);
  }
  return losses;
}

}  // namespace sc3d
