#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gman/data.hpp"
#include "gman/metrics.hpp"
#include "gman/model.hpp"
#include "gman/tensor.hpp"

namespace gman {

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter>& params, AdamOptions options = {}) : params_(&params), options_(options) {
    for (const auto& p : params) {
      first_.emplace_back(p.tensor.numel(), 0.0);
      second_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step() {
    auto& params = *params_;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto g = params[k].tensor.grad();
      if (g.size() != first_[k].size()) throw ConfigError("Adam: gradient missing for " + params[k].name);
      for (double v : g)
        if (!std::isfinite(v)) throw NumericError("non-finite gradient in parameter " + params[k].name);
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(options_.beta1, t);
    const double correction2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto theta = params[k].tensor.mutable_data();
      const auto g = params[k].tensor.grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
        v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        theta[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
      }
    }
  }

  std::size_t step_count() const { return steps_; }
  const std::vector<double>& first_moment(std::size_t k) const { return first_[k]; }
  const std::vector<double>& second_moment(std::size_t k) const { return second_[k]; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Parameter>* params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t steps_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.tensor.mutable_grad()) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::size_t batch_size = 64;
  double fault_ratio = 0.0;
  std::uint64_t fault_seed = 0;
  double mape_floor = kDefaultMapeFloor;
};

/// Runs the model on the windows starting at `starts` of a normalized series
/// and reports errors after mapping predictions and targets back to original
/// units.
inline MetricReport evaluate(const GmanModel& model, const TrafficSeries& normalized,
                             const std::vector<std::size_t>& starts, const NormStats& stats,
                             const EvalOptions& opt = {}) {
  if (starts.empty()) throw InputError("evaluate: empty sample set");
  const auto& cfg = model.config();
  const std::size_t p = cfg.history, q = cfg.horizon, c = cfg.channels, n = cfg.vertices;
  if (normalized.vertices() != n || normalized.channels != c)
    throw DimensionError("evaluate: series has " + std::to_string(normalized.vertices()) + " vertices / " +
                         std::to_string(normalized.channels) + " channels, model expects " + std::to_string(n) + " / " +
                         std::to_string(c));
  NoGradGuard no_grad;
  MetricAccumulator acc(q, opt.mape_floor);
  const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);
  for (std::size_t first = 0; first < starts.size(); first += bs) {
    const std::vector<std::size_t> chunk(starts.begin() + static_cast<std::ptrdiff_t>(first),
                                         starts.begin() + static_cast<std::ptrdiff_t>(std::min(starts.size(), first + bs)));
    Batch batch = make_batch(normalized, chunk, p, q);
    Tensor inputs = opt.fault_ratio > 0.0 ? inject_faults(batch.inputs, opt.fault_ratio, opt.fault_seed, chunk)
                                          : batch.inputs;
    const Tensor pred = model.forward(inputs, batch.windows);
    const auto yp = pred.data();
    const auto yt = batch.targets.data();
    const std::size_t per_step = n * c;
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      acc.count_sample();
      for (std::size_t s = 0; s < q; ++s)
        for (std::size_t i = 0; i < per_step; ++i) {
          const std::size_t at = (b * q + s) * per_step + i;
          if (!std::isfinite(yp[at])) throw NumericError("evaluate: non-finite prediction");
          acc.add(s, stats.denormalize(yp[at], i % c), stats.denormalize(yt[at], i % c));
        }
    }
  }
  return acc.report();
}

/// Every `stride`-th element of `starts`.
inline std::vector<std::size_t> thin(const std::vector<std::size_t>& starts, std::size_t stride) {
  if (stride <= 1) return starts;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < starts.size(); i += stride) out.push_back(starts[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  AdamOptions adam;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t max_batches_per_epoch = 0;  // 0 uses every training window
  std::size_t validation_stride = 1;
  std::ostream* log = nullptr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;  // mean mini-batch loss, normalized units
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_mape = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_parameters;
};

/// Mini-batch MAE training with Adam. After each epoch the validation windows
/// are scored; the parameters with the lowest validation MAE are kept and
/// restored at the end. Training stops once `patience` consecutive epochs
/// fail to improve on the best.
inline TrainResult train(GmanModel& model, const TrafficSeries& normalized, const SplitPlan& plan,
                         const NormStats& stats, const TrainOptions& opt) {
  if (plan.train.empty()) throw InputError("train: no training windows");
  if (plan.validation.empty()) throw InputError("train: no validation windows");
  if (opt.batch_size == 0 || opt.epochs == 0) throw ConfigError("train: batch size and epochs must be positive");
  const auto& cfg = model.config();
  auto& params = model.parameters();
  Adam adam(params, opt.adam);
  TrainResult result;
  std::vector<std::size_t> order = plan.train;
  const auto validation = thin(plan.validation, opt.validation_stride);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::mt19937_64 rng(detail::mix_seed(opt.seed, 0xe90c, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = (order.size() + opt.batch_size - 1) / opt.batch_size;
    if (opt.max_batches_per_epoch) batches = std::min(batches, opt.max_batches_per_epoch);
    double loss_total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::vector<std::size_t> chunk(
          order.begin() + static_cast<std::ptrdiff_t>(b * opt.batch_size),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), (b + 1) * opt.batch_size)));
      const Batch batch = make_batch(normalized, chunk, cfg.history, cfg.horizon);
      model.registry().zero_grad();
      const Tensor loss = loss_mae(model.forward(batch.inputs, batch.windows), batch.targets);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("training diverged: loss " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b));
      backward(loss);
      if (opt.clip_norm > 0.0) clip_grad_norm(params, opt.clip_norm);
      adam.step();
      loss_total += value;
    }
    const MetricReport val = evaluate(model, normalized, validation, stats);
    EpochRecord rec{epoch, loss_total / static_cast<double>(batches), val.aggregate.mae, val.aggregate.rmse,
                    val.aggregate.mape};
    result.history.push_back(rec);
    if (opt.log)
      *opt.log << "epoch " << epoch << " train_mae " << rec.train_mae << " val_mae " << rec.val_mae << " val_rmse "
               << rec.val_rmse << '\n';
    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      result.best_parameters = model.snapshot();
      since_best = 0;
    } else if (++since_best > opt.patience) {
      break;
    }
  }
  model.restore(result.best_parameters);
  return result;
}

// ---------------------------------------------------------------------------
// Experiments

inline std::vector<double> default_fault_ratios() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

struct FaultRow {
  double eta = 0.0;
  MetricReport report;
};

/// Evaluates the model with a fraction `eta` of every input window zeroed,
/// for each requested ratio.
inline std::vector<FaultRow> run_fault_experiment(const GmanModel& model, const TrafficSeries& normalized,
                                                  const std::vector<std::size_t>& starts, const NormStats& stats,
                                                  const std::vector<double>& etas, std::uint64_t seed) {
  std::vector<FaultRow> rows;
  for (double eta : etas) {
    EvalOptions opt;
    opt.fault_ratio = eta;
    opt.fault_seed = seed;
    rows.push_back({eta, evaluate(model, normalized, starts, stats, opt)});
  }
  return rows;
}

struct AblationRun {
  ModelVariant variant = ModelVariant::full;
  std::uint64_t seed = 0;
  MetricReport test;
  TrainResult training;
};

/// Trains every requested variant for every seed under the same budget and
/// scores it on the test windows.
inline std::vector<AblationRun> run_ablation(const GmanConfig& base, const Tensor& raw_vectors,
                                             const TrafficSeries& normalized, const SplitPlan& plan,
                                             const NormStats& stats, const TrainOptions& train_opt,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::vector<ModelVariant>& variants, std::size_t test_stride = 1) {
  std::vector<AblationRun> runs;
  const auto test = thin(plan.test, test_stride);
  for (auto variant : variants)
    for (auto seed : seeds) {
      GmanConfig cfg = base;
      cfg.variant = variant;
      cfg.seed = seed;
      GmanModel model(cfg, raw_vectors);
      TrainOptions opt = train_opt;
      opt.seed = seed;
      AblationRun run;
      run.variant = variant;
      run.seed = seed;
      run.training = train(model, normalized, plan, stats, opt);
      run.test = evaluate(model, normalized, test, stats);
      runs.push_back(std::move(run));
    }
  return runs;
}

/// Per-step MAE averaged over the seeds of each variant: [variant][step].
inline std::vector<std::vector<double>> mean_step_mae(const std::vector<AblationRun>& runs,
                                                      const std::vector<ModelVariant>& variants) {
  std::vector<std::vector<double>> table;
  for (auto v : variants) {
    std::vector<double> row;
    std::size_t count = 0;
    for (const auto& r : runs) {
      if (r.variant != v) continue;
      if (row.empty()) row.assign(r.test.per_step.size(), 0.0);
      for (std::size_t s = 0; s < row.size(); ++s) row[s] += r.test.per_step[s].mae;
      ++count;
    }
    for (double& x : row) x /= static_cast<double>(std::max<std::size_t>(1, count));
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace gman
