#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafbench/data_source.hpp"
#include "leafbench/errors.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// 1 where the score reaches the threshold (inclusive), else 0.
template <typename T>
std::vector<std::uint8_t> binarize(std::span<const T> pred, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorKind::ConfigError, "threshold must lie in (0,1)");
  std::vector<std::uint8_t> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = static_cast<double>(pred[i]) >= threshold ? 1 : 0;
  return out;
}

template <typename T>
std::vector<std::uint8_t> binarize(const std::vector<T>& pred, double threshold = 0.5) {
  return binarize(std::span<const T>(pred), threshold);
}

/// Micro counts over every (sample, label) cell.
inline ConfusionCounts confusion_counts(std::span<const std::vector<std::uint8_t>> preds,
                                        std::span<const std::vector<std::uint8_t>> targets) {
  if (preds.size() != targets.size())
    throw Error(ErrorKind::ShapeMismatch, "prediction and target counts differ");
  ConfusionCounts c;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].size() != targets[s].size())
      throw Error(ErrorKind::ShapeMismatch, "prediction and target widths differ at sample " + std::to_string(s));
    for (std::size_t l = 0; l < preds[s].size(); ++l) {
      const bool p = preds[s][l] != 0, t = targets[s][l] != 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

inline ConfusionCounts confusion_counts(const std::vector<std::vector<std::uint8_t>>& preds,
                                        const std::vector<std::vector<std::uint8_t>>& targets) {
  return confusion_counts(std::span<const std::vector<std::uint8_t>>(preds),
                          std::span<const std::vector<std::uint8_t>>(targets));
}

/// tp / (tp + fp), or 0 when nothing was predicted positive.
inline double precision(const ConfusionCounts& c) {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

/// tp / (tp + fn), or 0 when there are no positives.
inline double recall(const ConfusionCounts& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

struct LabelMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support = 0;  // positive targets at this position
};

struct MetricsReport {
  double precision = 0, recall = 0, f1 = 0;
  ConfusionCounts counts;
  std::vector<std::pair<std::string, LabelMetrics>> per_label;
  double plant_accuracy = 0, condition_accuracy = 0, pair_accuracy = 0;
  std::size_t samples = 0;
  double threshold = 0.5;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [name, m] : per_label)
      per[name] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
    return {{"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}}},
            {"per_label", per},
            {"plant_accuracy", plant_accuracy},
            {"condition_accuracy", condition_accuracy},
            {"pair_accuracy", pair_accuracy},
            {"samples", samples},
            {"threshold", threshold}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    const auto& c = j.at("counts");
    r.counts = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(), c.at("fn").get<std::uint64_t>(),
                c.at("tn").get<std::uint64_t>()};
    for (const auto& [name, m] : j.at("per_label").items())
      r.per_label.push_back({name, {m.at("precision").get<double>(), m.at("recall").get<double>(),
                                    m.at("f1").get<double>(), m.at("support").get<std::uint64_t>()}});
    r.plant_accuracy = j.at("plant_accuracy").get<double>();
    r.condition_accuracy = j.at("condition_accuracy").get<double>();
    r.pair_accuracy = j.at("pair_accuracy").get<double>();
    r.samples = j.value("samples", std::size_t{0});
    r.threshold = j.value("threshold", 0.5);
    return r;
  }

  static std::string csv_header() {
    return "model,precision,recall,f1,tp,fp,fn,tn,plant_accuracy,condition_accuracy,pair_accuracy,samples";
  }

  /// One CSV row for report assembly.
  std::string csv_row(const std::string& model) const {
    const auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    return csv::join_row({model, num(precision), num(recall), num(f1), std::to_string(counts.tp),
                          std::to_string(counts.fp), std::to_string(counts.fn), std::to_string(counts.tn),
                          num(plant_accuracy), num(condition_accuracy), num(pair_accuracy), std::to_string(samples)});
  }
};

/// Metrics from probability rows and binary target rows (both [n, 1, 1, dim]).
template <typename T>
MetricsReport evaluate_predictions(const Tensor<T>& probs, const Tensor<T>& targets, const LabelSpace& space,
                                   double threshold = 0.5) {
  if (probs.shape() != targets.shape()) throw Error(ErrorKind::ShapeMismatch, "prediction/target shapes differ");
  const std::size_t n = probs.shape().n, dim = probs.shape().per_sample();
  if (dim != space.dim()) throw Error(ErrorKind::ShapeMismatch, "prediction width does not match label space");
  if (n == 0) throw Error(ErrorKind::EmptyDataset, "no samples to evaluate");

  std::vector<std::vector<std::uint8_t>> pred_bits(n), target_bits(n);
  for (std::size_t s = 0; s < n; ++s) {
    pred_bits[s] = binarize(probs.sample(s), threshold);
    target_bits[s] = binarize(targets.sample(s), 0.5);
  }

  MetricsReport r;
  r.threshold = threshold;
  r.samples = n;
  r.counts = confusion_counts(pred_bits, target_bits);
  r.precision = precision(r.counts);
  r.recall = recall(r.counts);
  r.f1 = f1_score(r.precision, r.recall);

  const auto names = space.label_names();
  for (std::size_t l = 0; l < dim; ++l) {
    ConfusionCounts c;
    for (std::size_t s = 0; s < n; ++s) {
      const bool p = pred_bits[s][l] != 0, t = target_bits[s][l] != 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
    LabelMetrics m{precision(c), recall(c), 0.0, c.tp + c.fn};
    m.f1 = f1_score(m.precision, m.recall);
    r.per_label.emplace_back(names[l], m);
  }

  std::size_t plant_ok = 0, cond_ok = 0, pair_ok = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const auto truth = decode_prediction(targets.sample(s), space, false);
    const auto got = decode_prediction(probs.sample(s), space, true);
    const bool p = truth.plant_index == got.plant_index, c = truth.condition_index == got.condition_index;
    plant_ok += p;
    cond_ok += c;
    pair_ok += p && c;
  }
  r.plant_accuracy = static_cast<double>(plant_ok) / static_cast<double>(n);
  r.condition_accuracy = static_cast<double>(cond_ok) / static_cast<double>(n);
  r.pair_accuracy = static_cast<double>(pair_ok) / static_cast<double>(n);
  return r;
}

/// Anything that maps an image batch to sigmoid outputs [n, 1, 1, dim].
template <typename M, typename T>
concept Predictor = requires(M& m, const Tensor<T>& x) {
  { m.predict(x) } -> std::convertible_to<Tensor<T>>;
};

/// Runs inference over a source in batches and collects [n, 1, 1, dim] outputs and targets.
template <typename T, typename M>
  requires Predictor<M, T>
std::pair<Tensor<T>, Tensor<T>> predict_all(M& model, const SampleSource<T>& source, std::size_t batch_size = 64) {
  const std::size_t n = source.size(), dim = source.label_dim();
  if (n == 0) throw Error(ErrorKind::EmptyDataset, "no samples to evaluate");
  Tensor<T> probs(Shape{n, 1, 1, dim}), targets(Shape{n, 1, 1, dim});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    auto [x, y] = gather_batch(source, std::span<const std::size_t>(idx));
    auto out = model.predict(x);
    if (out.shape().per_sample() != dim) throw Error(ErrorKind::ShapeMismatch, "model output width mismatch");
    std::copy(out.values().begin(), out.values().end(), probs.data() + start * dim);
    std::copy(y.values().begin(), y.values().end(), targets.data() + start * dim);
  }
  return {std::move(probs), std::move(targets)};
}

template <typename T, typename M>
  requires Predictor<M, T>
MetricsReport evaluate_model(M& model, const SampleSource<T>& source, const LabelSpace& space, double threshold = 0.5,
                             std::size_t batch_size = 64) {
  auto [probs, targets] = predict_all(model, source, batch_size);
  return evaluate_predictions(probs, targets, space, threshold);
}

}  // namespace leafbench
