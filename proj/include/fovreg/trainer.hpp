#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fovreg/common.hpp"
#include "fovreg/dataset.hpp"
#include "fovreg/encoder.hpp"
#include "fovreg/losses.hpp"
#include "fovreg/metrics.hpp"
#include "fovreg/sampler.hpp"

namespace fovreg {

enum class LossKind { mse, cl, gcl };

inline std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::cl: return "cl";
    default: return "gcl";
  }
}

inline LossKind loss_from_name(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "cl") return LossKind::cl;
  if (name == "gcl") return LossKind::gcl;
  throw std::invalid_argument("unknown loss: " + name);
}

struct TrainConfig {
  LossKind loss = LossKind::mse;
  SgdConfig sgd;  // constant 0.1 by default; gcl conventionally uses the step schedule
  BatchSpec batch;
  std::int64_t total_iterations = 20000;
  std::int64_t snapshot_period = 10000;
  std::uint64_t init_seed = 0;
  std::uint64_t sampler_seed = 0;
  double margin = 1.0;
  double binarize_threshold = 0.5;  // cl only: psi above this counts as positive
  std::vector<int> encoder_dims;    // including input dim; empty = {d_in, 128, 64, 32}
  Activation activation = Activation::relu;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.total_iterations <= 0)
    throw std::invalid_argument("train.total_iterations must be > 0");
  if (cfg.snapshot_period <= 0) throw std::invalid_argument("train.snapshot_period must be > 0");
  if (!(cfg.margin > 0.0)) throw std::invalid_argument("train.margin must be > 0");
  if (!(cfg.binarize_threshold >= 0.0 && cfg.binarize_threshold < 1.0))
    throw std::invalid_argument("train.binarize_threshold must be in [0, 1)");
  if (!(cfg.sgd.learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be > 0");
  if (cfg.sgd.step_period <= 0) throw std::invalid_argument("train.step_period must be > 0");
  if (!cfg.encoder_dims.empty() && cfg.encoder_dims.size() < 2)
    throw std::invalid_argument("train.encoder_dims needs at least two entries");
  batch_counts(cfg.batch);  // throws on invalid batch spec
}

inline std::vector<int> effective_encoder_dims(const TrainConfig& cfg, int d_in) {
  if (cfg.encoder_dims.empty()) return {d_in, 128, 64, 32};
  if (cfg.encoder_dims.front() != d_in)
    throw std::invalid_argument("train.encoder_dims[0] = " +
                                std::to_string(cfg.encoder_dims.front()) +
                                " does not match dataset d_in = " + std::to_string(d_in));
  return cfg.encoder_dims;
}

struct TrainRun {
  EncoderModel model;  // state after the last iteration
  std::vector<std::pair<std::int64_t, EncoderModel>> snapshots;
  std::vector<double> loss_log;  // mean batch loss per iteration
};

/// Siamese training loop: one shared parameter set, both pair members pass
/// through it, per-pair gradients from both branches accumulate into a batch
/// mean, one SGD step per iteration. Snapshots are taken at iteration 0,
/// every snapshot_period steps, and after the final step.
inline TrainRun train(const Dataset& ds, const std::vector<SimilarityPair>& pairs,
                      const TrainConfig& cfg) {
  validate(cfg);
  if (ds.d_in <= 0) throw std::invalid_argument("train: dataset has no observations");
  std::unordered_map<std::uint32_t, const Eigen::VectorXd*> obs;
  for (const auto& img : ds.images) obs.emplace(img.id, &img.observation);
  for (const auto& p : pairs) {
    if (!obs.count(p.i) || !obs.count(p.j))
      throw std::invalid_argument("train: pair references unknown image id " +
                                  std::to_string(obs.count(p.i) ? p.j : p.i));
  }

  BatchSampler sampler(stratify(pairs), cfg.batch, cfg.sampler_seed);
  TrainRun run;
  run.model = init_encoder(effective_encoder_dims(cfg, ds.d_in), cfg.activation, cfg.init_seed);
  run.snapshots.emplace_back(0, run.model);
  run.loss_log.reserve(static_cast<std::size_t>(cfg.total_iterations));

  for (std::int64_t t = 0; t < cfg.total_iterations; ++t) {
    const std::vector<SimilarityPair> batch = sampler.next_batch();
    Gradients grads = zero_gradients(run.model);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double batch_loss = 0.0;
    for (const auto& p : batch) {
      ForwardCache cache_i, cache_j;
      const Eigen::VectorXd vi = encoder_forward(run.model, *obs.at(p.i), &cache_i);
      const Eigen::VectorXd vj = encoder_forward(run.model, *obs.at(p.j), &cache_j);
      LossOutput lo;
      switch (cfg.loss) {
        case LossKind::mse: lo = mse_loss(vi, vj, p.psi); break;
        case LossKind::cl:
          lo = contrastive_loss(vi, vj, binarize_psi(p.psi, cfg.binarize_threshold), cfg.margin);
          break;
        case LossKind::gcl: lo = gcl_loss(vi, vj, p.psi, cfg.margin); break;
      }
      batch_loss += lo.value * inv_b;
      encoder_backward_accumulate(run.model, cache_i, lo.grad_i, grads, inv_b);
      encoder_backward_accumulate(run.model, cache_j, lo.grad_j, grads, inv_b);
    }
    if (!std::isfinite(batch_loss)) {
      std::string ids;
      for (const auto& p : batch)
        ids += (ids.empty() ? "" : ", ") + std::to_string(p.i) + "-" + std::to_string(p.j);
      throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(t) +
                               " (batch pairs " + ids + ")");
    }
    run.loss_log.push_back(batch_loss);
    sgd_step(run.model, grads, t, cfg.sgd);
    const std::int64_t done = t + 1;
    if (done % cfg.snapshot_period == 0 && done < cfg.total_iterations)
      run.snapshots.emplace_back(done, run.model);
  }
  run.snapshots.emplace_back(cfg.total_iterations, run.model);
  return run;
}

struct CurvePoint {
  std::int64_t iteration = 0;
  EvalReport report;
};

/// One evaluation per snapshot, in iteration order.
inline std::vector<CurvePoint> evaluate_snapshots(const TrainRun& run, const Dataset& eval_ds,
                                                  const GroundTruthRelation& gt,
                                                  const EvalConfig& cfg) {
  std::vector<CurvePoint> curve;
  curve.reserve(run.snapshots.size());
  for (const auto& [iteration, model] : run.snapshots)
    curve.push_back({iteration, evaluate(model, eval_ds, gt, cfg)});
  return curve;
}

inline constexpr const char* kCurveHeader = "iteration,r_at_1,r_at_5,r_at_10,mrr5,kldiv";

inline void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << kCurveHeader << "\n";
  for (const auto& pt : curve) {
    out << pt.iteration << ',' << format_double(pt.report.r_at_1) << ','
        << format_double(pt.report.r_at_5) << ',' << format_double(pt.report.r_at_10) << ','
        << format_double(pt.report.mrr5) << ',' << format_double(pt.report.kldiv) << "\n";
  }
}

inline void write_loss_log_csv(const std::vector<double>& loss_log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "iteration,loss\n";
  for (std::size_t t = 0; t < loss_log.size(); ++t)
    out << t << ',' << format_double(loss_log[t]) << "\n";
}

}  // namespace fovreg
