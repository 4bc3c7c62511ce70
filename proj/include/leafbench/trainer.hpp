#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafbench/data_source.hpp"
#include "leafbench/errors.hpp"
#include "leafbench/layers.hpp"
#include "leafbench/metrics.hpp"
#include "leafbench/model.hpp"
#include "leafbench/rng.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

// ===========================================================================
// Loss
// ===========================================================================

inline constexpr double kLogClamp = 1e-7;

/// Binary cross-entropy summed over label positions. Outputs are clamped to
/// [1e-7, 1 - 1e-7] before taking logs.
template <typename T>
double bce_loss(std::span<const T> target, std::span<const T> output) {
  if (target.size() != output.size())
    throw Error(ErrorKind::ShapeMismatch, "target length " + std::to_string(target.size()) + " != output length " +
                                              std::to_string(output.size()));
  double loss = 0.0;
  for (std::size_t l = 0; l < target.size(); ++l) {
    const double o = std::clamp(static_cast<double>(output[l]), kLogClamp, 1.0 - kLogClamp);
    const double y = static_cast<double>(target[l]);
    loss -= y * std::log(o) + (1.0 - y) * std::log(1.0 - o);
  }
  return loss;
}

template <typename T>
double bce_loss(const std::vector<T>& target, const std::vector<T>& output) {
  return bce_loss(std::span<const T>(target), std::span<const T>(output));
}

/// Mean over samples of the per-sample summed loss; tensors are [n, 1, 1, dim].
template <typename T>
double bce_batch_loss(const Tensor<T>& targets, const Tensor<T>& outputs) {
  if (targets.shape() != outputs.shape()) throw Error(ErrorKind::ShapeMismatch, "target/output shapes differ");
  const std::size_t n = targets.shape().n;
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) total += bce_loss(targets.sample(s), outputs.sample(s));
  return total / static_cast<double>(n);
}

/// Gradient of the batch loss with respect to the head logits, given sigmoid
/// outputs. Cells whose output sits on the log clamp have zero gradient.
template <typename T>
Tensor<T> bce_logit_gradient(const Tensor<T>& targets, const Tensor<T>& outputs) {
  Tensor<T> g(outputs.shape());
  const T inv_n = T(1) / static_cast<T>(outputs.shape().n);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double o = static_cast<double>(outputs[i]);
    const bool clamped = o < kLogClamp || o > 1.0 - kLogClamp;
    g[i] = clamped ? T(0) : (outputs[i] - targets[i]) * inv_n;
  }
  return g;
}

// ===========================================================================
// Optimizer
// ===========================================================================

/// Adam with bias-corrected moment estimates.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 0.001, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamRef<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer parameter set changed");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& p = params[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        p.value[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ===========================================================================
// Protocol records
// ===========================================================================

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t runs = 4;
  std::uint64_t seed = 0;
  std::string monitor = "val_loss";

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::ConfigError, "learning_rate must be positive");
    if (batch_size < 1) throw Error(ErrorKind::ConfigError, "batch_size must be >= 1");
    if (max_epochs < 1) throw Error(ErrorKind::ConfigError, "max_epochs must be >= 1");
    if (patience < 1) throw Error(ErrorKind::ConfigError, "patience must be >= 1");
    if (runs < 1) throw Error(ErrorKind::ConfigError, "runs must be >= 1");
    if (monitor != "val_loss") throw Error(ErrorKind::ConfigError, "only val_loss can be monitored");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"max_epochs", max_epochs},
            {"patience", patience},           {"runs", runs},             {"seed", seed},
            {"monitor", monitor}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
      c.learning_rate = j.value("learning_rate", c.learning_rate);
      c.batch_size = j.value("batch_size", c.batch_size);
      c.max_epochs = j.value("max_epochs", c.max_epochs);
      c.patience = j.value("patience", c.patience);
      c.runs = j.value("runs", c.runs);
      c.seed = j.value("seed", c.seed);
      c.monitor = j.value("monitor", c.monitor);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, val_loss = 0, val_f1 = 0, wall_time_s = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}, {"val_f1", val_f1},
            {"wall_time_s", wall_time_s}};
  }
  static EpochRecord from_json(const nlohmann::json& j) {
    return {j.at("epoch").get<std::size_t>(), j.at("train_loss").get<double>(), j.at("val_loss").get<double>(),
            j.at("val_f1").get<double>(), j.value("wall_time_s", 0.0)};
  }
};

template <typename T>
struct RunResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::vector<std::vector<T>> best_checkpoint;  // MultiLabelNet::snapshot() at best_epoch
  bool stopped_early = false;
  std::uint64_t seed = 0;
};

/// Thrown when the training loss stops being finite; keeps the epochs that completed.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochRecord> partial)
      : Error(ErrorKind::Diverged, what), history(std::move(partial)) {}
  std::vector<EpochRecord> history;
};

// ===========================================================================
// Early stopping
// ===========================================================================

/// Index of the epoch with the lowest val_loss; the earliest wins ties because
/// only strict decreases count as improvement.
inline std::size_t best_epoch_index(std::span<const EpochRecord> history) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].val_loss < history[best].val_loss) best = i;
  return best;
}

/// True once the last `patience` epochs have all failed to strictly lower the
/// best val_loss seen before them.
inline bool early_stop_check(std::span<const EpochRecord> history, std::size_t patience) {
  if (history.empty()) return false;
  const std::size_t best = best_epoch_index(history);
  return history.size() - 1 - best >= patience;
}

inline bool early_stop_check(const std::vector<EpochRecord>& history, std::size_t patience) {
  return early_stop_check(std::span<const EpochRecord>(history), patience);
}

struct LoopOutcome {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based
  bool stopped_early = false;
};

using HaltPredicate = std::function<bool(const EpochRecord&)>;

/// Epoch driver shared by `train` and scripted tests. `run_epoch(epoch)` does
/// one epoch and returns its record; `on_best(record)` fires whenever the
/// record becomes the new best. `halt`, if set, ends the loop after any epoch
/// for which it returns true.
template <typename EpochFn, typename BestFn>
LoopOutcome run_epochs(const TrainConfig& config, EpochFn&& run_epoch, BestFn&& on_best, const HaltPredicate& halt = {}) {
  config.validate();
  LoopOutcome out;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec = run_epoch(epoch);
    rec.epoch = epoch;
    out.history.push_back(rec);
    const std::size_t best = best_epoch_index(out.history);
    if (best + 1 == out.history.size()) on_best(rec);
    out.best_epoch = out.history[best].epoch;
    if (epoch < config.max_epochs && early_stop_check(out.history, config.patience)) {
      out.stopped_early = true;
      break;
    }
    if (halt && epoch < config.max_epochs && halt(rec)) {
      out.stopped_early = true;
      break;
    }
  }
  return out;
}

// ===========================================================================
// Training
// ===========================================================================

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Val loss and micro-F1 of a model over a source, in inference mode.
template <typename T>
std::pair<double, double> validation_scores(MultiLabelNet<T>& net, const SampleSource<T>& source,
                                            std::size_t batch_size) {
  auto [probs, targets] = predict_all(net, source, batch_size);
  const double loss = bce_batch_loss(targets, probs);
  std::vector<std::vector<std::uint8_t>> p(targets.shape().n), t(targets.shape().n);
  for (std::size_t s = 0; s < p.size(); ++s) {
    p[s] = binarize(std::as_const(probs).sample(s), 0.5);
    t[s] = binarize(std::as_const(targets).sample(s), 0.5);
  }
  const auto c = confusion_counts(p, t);
  return {loss, f1_score(precision(c), recall(c))};
}

/// Minibatch Adam training with per-epoch validation and early stopping on
/// val_loss. Batches follow a per-epoch shuffle drawn from `config.seed`; the
/// final partial batch is kept. On return the model holds the best weights.
template <typename T>
RunResult<T> train(MultiLabelNet<T>& net, const SampleSource<T>& train_set, const SampleSource<T>& val_set,
                   const TrainConfig& config, const EpochCallback& on_epoch = {}, const HaltPredicate& halt = {}) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw Error(ErrorKind::EmptyDataset, "training needs non-empty train and val sets");
  if (train_set.label_dim() != net.head_dim() || val_set.label_dim() != net.head_dim())
    throw Error(ErrorKind::ConfigError, "model head width does not match the label space of the data");

  Adam<T> adam(config.learning_rate);
  std::mt19937_64 gen(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  RunResult<T> result;
  result.seed = config.seed;
  std::vector<EpochRecord> done;

  auto epoch_fn = [&](std::size_t epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    fisher_yates(std::span<std::size_t>(order), gen);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto [x, y] = gather_batch(train_set, std::span<const std::size_t>(order).subspan(start, end - start));
      net.zero_grad();
      auto out = net.forward(x, true);
      const double loss = bce_batch_loss(y, out);
      if (!std::isfinite(loss))
        throw TrainingDiverged("train loss became non-finite in epoch " + std::to_string(epoch), done);
      loss_sum += loss * static_cast<double>(end - start);
      net.backward_logits(bce_logit_gradient(y, out));
      adam.step(net.trainable_parameters());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    std::tie(rec.val_loss, rec.val_f1) = validation_scores(net, val_set, std::max<std::size_t>(config.batch_size, 1));
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    done.push_back(rec);
    if (on_epoch) on_epoch(rec);
    return rec;
  };

  auto outcome = run_epochs(config, epoch_fn, [&](const EpochRecord&) { result.best_checkpoint = net.snapshot(); }, halt);
  result.history = std::move(outcome.history);
  result.best_epoch = outcome.best_epoch;
  result.stopped_early = outcome.stopped_early;
  net.restore(result.best_checkpoint);
  return result;
}

// ===========================================================================
// Multi-run aggregation
// ===========================================================================

struct CurvePoint {
  std::size_t epoch = 0;
  double mean_val_f1 = 0;
  std::size_t contributing_runs = 0;
};

struct MetricSummary {
  double mean = 0, std = 0;  // population standard deviation
};

struct RunAggregate {
  std::vector<CurvePoint> curve;
  MetricSummary precision, recall, f1;
  std::size_t runs = 0;
};

inline MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / n);
  return s;
}

/// Per-epoch mean validation F1 over the runs still active at that epoch, plus
/// mean/std of each run's test metrics (when given, one per history).
inline RunAggregate aggregate_runs(std::span<const std::vector<EpochRecord>> histories,
                                   std::span<const MetricsReport> test_metrics = {}) {
  if (histories.empty()) throw Error(ErrorKind::ConfigError, "aggregate_runs needs at least one run");
  if (!test_metrics.empty() && test_metrics.size() != histories.size())
    throw Error(ErrorKind::ShapeMismatch, "one test report per run is required");
  RunAggregate agg;
  agg.runs = histories.size();
  std::size_t longest = 0;
  for (const auto& h : histories) longest = std::max(longest, h.size());
  for (std::size_t e = 0; e < longest; ++e) {
    CurvePoint pt;
    pt.epoch = e + 1;
    double sum = 0.0;
    for (const auto& h : histories)
      if (e < h.size()) {
        sum += h[e].val_f1;
        ++pt.contributing_runs;
      }
    pt.mean_val_f1 = sum / static_cast<double>(pt.contributing_runs);
    agg.curve.push_back(pt);
  }
  std::vector<double> p, r, f;
  for (const auto& m : test_metrics) {
    p.push_back(m.precision);
    r.push_back(m.recall);
    f.push_back(m.f1);
  }
  agg.precision = summarize(p);
  agg.recall = summarize(r);
  agg.f1 = summarize(f);
  return agg;
}

inline RunAggregate aggregate_runs(const std::vector<std::vector<EpochRecord>>& histories,
                                   const std::vector<MetricsReport>& test_metrics = {}) {
  return aggregate_runs(std::span<const std::vector<EpochRecord>>(histories),
                        std::span<const MetricsReport>(test_metrics));
}

template <typename T>
RunAggregate aggregate_runs(std::span<const RunResult<T>> results, std::span<const MetricsReport> test_metrics = {}) {
  std::vector<std::vector<EpochRecord>> h;
  for (const auto& r : results) h.push_back(r.history);
  return aggregate_runs(std::span<const std::vector<EpochRecord>>(h), test_metrics);
}

}  // namespace leafbench
