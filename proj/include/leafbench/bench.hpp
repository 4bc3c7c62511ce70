#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafbench/data_source.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/errors.hpp"
#include "leafbench/image.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/metrics.hpp"
#include "leafbench/model.hpp"
#include "leafbench/trainer.hpp"

namespace leafbench {

// ===========================================================================
// Plan and records
// ===========================================================================

struct BenchmarkPlan {
  std::vector<std::string> model_names{"MicroCNN"};
  TrainConfig train_config;
  std::filesystem::path dataset;  // split manifest CSV
  std::filesystem::path output_dir = "bench_out";
  LabelMode mode = LabelMode::paired;
  double threshold = 0.5;
  bool freeze_backbone = false;
  MicroCNNConfig micro_cnn;

  void validate() const {
    if (model_names.empty()) throw Error(ErrorKind::ConfigError, "plan lists no models");
    std::set<std::string> seen;
    for (const auto& m : model_names)
      if (!seen.insert(m).second) throw Error(ErrorKind::ConfigError, "duplicate model '" + m + "' in plan");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorKind::ConfigError, "threshold must lie in (0,1)");
    train_config.validate();
  }

  nlohmann::json to_json() const {
    return {{"model_names", model_names},
            {"train_config", train_config.to_json()},
            {"dataset", dataset.generic_string()},
            {"output_dir", output_dir.generic_string()},
            {"mode", to_string(mode)},
            {"threshold", threshold},
            {"freeze_backbone", freeze_backbone},
            {"micro_cnn_config", micro_cnn.to_json()}};
  }

  /// Relative paths in the file resolve against `base` (the plan's directory).
  static BenchmarkPlan from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    BenchmarkPlan p;
    try {
      if (j.contains("model_names")) p.model_names = j.at("model_names").get<std::vector<std::string>>();
      if (j.contains("train_config")) p.train_config = TrainConfig::from_json(j.at("train_config"));
      if (j.contains("dataset")) p.dataset = j.at("dataset").get<std::string>();
      if (j.contains("output_dir")) p.output_dir = j.at("output_dir").get<std::string>();
      if (j.contains("mode")) p.mode = parse_label_mode(j.at("mode").get<std::string>());
      p.threshold = j.value("threshold", p.threshold);
      p.freeze_backbone = j.value("freeze_backbone", p.freeze_backbone);
      if (j.contains("micro_cnn_config")) p.micro_cnn = MicroCNNConfig::from_json(j.at("micro_cnn_config"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("malformed plan: ") + e.what());
    }
    if (!base.empty()) {
      if (!p.dataset.empty() && p.dataset.is_relative()) p.dataset = base / p.dataset;
      if (p.output_dir.is_relative()) p.output_dir = base / p.output_dir;
    }
    return p;
  }
};

struct RunRecord {
  std::string model_name;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::optional<MetricsReport> test_metrics;
  std::size_t parameter_count = 0;
  nlohmann::json config;  // train config, mode, threshold, label space, backbone config

  bool ok() const { return status == "ok"; }

  nlohmann::json to_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : history) h.push_back(e.to_json());
    return {{"model_name", model_name},
            {"seed", seed},
            {"status", status},
            {"error", error},
            {"history", h},
            {"best_epoch", best_epoch},
            {"stopped_early", stopped_early},
            {"test_metrics", test_metrics ? test_metrics->to_json() : nlohmann::json(nullptr)},
            {"parameter_count", parameter_count},
            {"config", config}};
  }

  static RunRecord from_json(const nlohmann::json& j) {
    RunRecord r;
    try {
      r.model_name = j.at("model_name").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.status = j.at("status").get<std::string>();
      r.error = j.value("error", std::string());
      for (const auto& e : j.at("history")) r.history.push_back(EpochRecord::from_json(e));
      r.best_epoch = j.value("best_epoch", std::size_t{0});
      r.stopped_early = j.value("stopped_early", false);
      if (j.contains("test_metrics") && !j.at("test_metrics").is_null())
        r.test_metrics = MetricsReport::from_json(j.at("test_metrics"));
      r.parameter_count = j.value("parameter_count", std::size_t{0});
      r.config = j.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("malformed run record: ") + e.what());
    }
    return r;
  }
};

inline std::string run_stem(const std::string& model, std::uint64_t seed) {
  return model + "__seed" + std::to_string(seed);
}

inline std::filesystem::path run_record_path(const std::filesystem::path& out, const std::string& model,
                                             std::uint64_t seed) {
  return out / "runs" / (run_stem(model, seed) + ".json");
}

inline void write_run_record(const RunRecord& r, const std::filesystem::path& out) {
  detail::write_text_atomic(run_record_path(out, r.model_name, r.seed), r.to_json().dump(2) + "\n");
}

/// Every record under `<dir>/runs`, sorted by file name.
inline std::vector<RunRecord> read_run_records(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  const auto runs = dir / "runs";
  if (!std::filesystem::is_directory(runs)) return {};
  for (const auto& e : std::filesystem::directory_iterator(runs))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) out.push_back(RunRecord::from_json(detail::read_json_file(f, ErrorKind::ConfigError)));
  return out;
}

// ===========================================================================
// Benchmark runner
// ===========================================================================

using BenchLog = std::function<void(const std::string&)>;

/// Trains and tests every (model, seed) cell of the plan, one record per cell
/// under `<output_dir>/runs`. Cells that already have a successful record are
/// loaded instead of retrained. Failures are recorded and the matrix continues.
inline std::vector<RunRecord> run_benchmark(const BenchmarkPlan& plan,
                                            const BackboneRegistry<float>& registry = BackboneRegistry<float>(),
                                            const BenchLog& log = {}) {
  plan.validate();
  const auto manifest = read_manifest(plan.dataset);
  if (manifest.samples.empty()) throw Error(ErrorKind::EmptyDataset, "manifest " + plan.dataset.string() + " is empty");
  for (const auto& s : manifest.samples)
    if (!s.split) throw Error(ErrorKind::EmptyDataset, "manifest is not split: " + s.path.string() + " has no split tag");
  const auto space = build_label_space(manifest, plan.mode);
  const ManifestSource train_src(manifest.subset(Split::train), space, plan.micro_cnn.input_side);
  const ManifestSource val_src(manifest.subset(Split::val), space, plan.micro_cnn.input_side);
  const ManifestSource test_src(manifest.subset(Split::test), space, plan.micro_cnn.input_side);
  if (train_src.size() == 0 || val_src.size() == 0 || test_src.size() == 0)
    throw Error(ErrorKind::EmptyDataset, "train, val and test splits must all be non-empty");

  const auto say = [&](const std::string& m) {
    if (log) log(m);
  };

  std::vector<RunRecord> records;
  for (const auto& model : plan.model_names) {
    for (std::size_t k = 0; k < plan.train_config.runs; ++k) {
      const std::uint64_t seed = plan.train_config.seed + k;
      const auto path = run_record_path(plan.output_dir, model, seed);
      if (std::filesystem::exists(path)) {
        auto prev = RunRecord::from_json(detail::read_json_file(path, ErrorKind::ConfigError));
        if (prev.ok()) {
          say("skip " + run_stem(model, seed) + " (already complete)");
          records.push_back(std::move(prev));
          continue;
        }
      }

      RunRecord rec;
      rec.model_name = model;
      rec.seed = seed;
      auto cfg = plan.train_config;
      cfg.seed = seed;
      rec.config = {{"train_config", cfg.to_json()},
                    {"mode", to_string(plan.mode)},
                    {"threshold", plan.threshold},
                    {"freeze_backbone", plan.freeze_backbone},
                    {"label_space", space.to_json()},
                    {"dataset", plan.dataset.generic_string()}};
      try {
        BackboneRequest req;
        req.input = Shape{1, plan.micro_cnn.input_side, plan.micro_cnn.input_side, 3};
        req.micro = plan.micro_cnn;
        req.seed = seed;
        auto net = registry.build(model, req, space, plan.freeze_backbone);
        rec.parameter_count = net.parameter_count();
        rec.config["backbone"] = net.backbone().config();
        say("train " + run_stem(model, seed));
        auto result = train<float>(net, train_src, val_src, cfg, [&](const EpochRecord& e) {
          std::ostringstream os;
          os << "  epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_f1 "
             << e.val_f1;
          say(os.str());
        });
        rec.history = result.history;
        rec.best_epoch = result.best_epoch;
        rec.stopped_early = result.stopped_early;
        rec.test_metrics = evaluate_model(net, test_src, space, plan.threshold);
        save_checkpoint(net, space, plan.output_dir / "checkpoints" / run_stem(model, seed));
      } catch (const TrainingDiverged& e) {
        rec.status = "failed";
        rec.error = e.what();
        rec.history = e.history;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::BackboneUnavailable && e.kind() != ErrorKind::DegenerateBatch) throw;
        rec.status = "failed";
        rec.error = e.what();
      }
      if (!rec.ok()) say("failed " + run_stem(model, seed) + ": " + rec.error);
      write_run_record(rec, plan.output_dir);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

// ===========================================================================
// Reports
// ===========================================================================

struct ReportRow {
  std::string model;
  double parameters_million = 0;
  double precision = 0, recall = 0, f1 = 0;  // means over successful runs, in [0,1]
  std::size_t runs = 0;
  bool best = false;
};

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

/// Published models first in their published order, then the rest alphabetically.
inline std::vector<std::string> report_order(std::set<std::string> names) {
  std::vector<std::string> out;
  for (const auto& b : kPublishedBackbones)
    if (names.erase(std::string(b.name))) out.emplace_back(b.name);
  out.insert(out.end(), names.begin(), names.end());
  return out;
}

/// One row per model from its successful runs; the highest mean F1 is flagged.
inline std::vector<ReportRow> report_rows(const std::vector<RunRecord>& records) {
  std::map<std::string, std::vector<const RunRecord*>> by_model;
  for (const auto& r : records)
    if (r.ok() && r.test_metrics) by_model[r.model_name].push_back(&r);
  if (by_model.empty()) throw Error(ErrorKind::ConfigError, "no successful run records to report");

  std::set<std::string> names;
  for (const auto& [m, rs] : by_model) names.insert(m);
  std::vector<ReportRow> rows;
  for (const auto& m : report_order(names)) {
    const auto& rs = by_model[m];
    std::vector<double> p, r, f;
    for (const auto* rec : rs) {
      p.push_back(rec->test_metrics->precision);
      r.push_back(rec->test_metrics->recall);
      f.push_back(rec->test_metrics->f1);
    }
    ReportRow row;
    row.model = m;
    row.parameters_million = static_cast<double>(rs.front()->parameter_count) / 1e6;
    row.precision = summarize(p).mean;
    row.recall = summarize(r).mean;
    row.f1 = summarize(f).mean;
    row.runs = rs.size();
    rows.push_back(row);
  }
  auto best = std::max_element(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.f1 < b.f1; });
  best->best = true;
  return rows;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "Model,Parameters(million),Precision,Recall,F1,Runs,Best\n";
  for (const auto& r : rows) {
    char params[32];
    std::snprintf(params, sizeof(params), "%.2f", r.parameters_million);
    out += csv::join_row({r.model, params, percent(r.precision), percent(r.recall), percent(r.f1),
                          std::to_string(r.runs), r.best ? "1" : "0"}) +
           "\n";
  }
  return out;
}

inline std::string report_markdown(const std::vector<ReportRow>& rows) {
  std::string out = "| Model | Parameters (million) | Precision | Recall | F1-score |\n|---|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    char params[32];
    std::snprintf(params, sizeof(params), "%.2f", r.parameters_million);
    const std::string b = r.best ? "**" : "";
    out += "| " + b + r.model + b + " | " + params + " | " + b + percent(r.precision) + b + " | " + b +
           percent(r.recall) + b + " | " + b + percent(r.f1) + b + " |\n";
  }
  return out;
}

struct ReportFiles {
  std::filesystem::path csv, markdown, metrics_csv;
};

/// Writes report.csv, report.md, and metrics.csv (one row per successful run).
inline ReportFiles emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir) {
  const auto rows = report_rows(records);
  ReportFiles files{out_dir / "report.csv", out_dir / "report.md", out_dir / "metrics.csv"};
  detail::write_text_atomic(files.csv, report_csv(rows));
  detail::write_text_atomic(files.markdown, report_markdown(rows));
  std::string metrics = MetricsReport::csv_header() + ",seed\n";
  for (const auto& r : records)
    if (r.ok() && r.test_metrics) metrics += r.test_metrics->csv_row(r.model_name) + "," + std::to_string(r.seed) + "\n";
  detail::write_text_atomic(files.metrics_csv, metrics);
  return files;
}

namespace detail {

/// Line plot of one F1 curve on a fixed [0,1] vertical scale.
inline std::string curve_svg(const std::string& title, const std::vector<CurvePoint>& curve) {
  constexpr double w = 480, h = 300, left = 50, right = 20, top = 30, bottom = 40;
  const double max_epoch = curve.empty() ? 1.0 : static_cast<double>(std::max<std::size_t>(curve.back().epoch, 2));
  const auto px = [&](double e) { return left + (e - 1.0) / (max_epoch - 1.0) * (w - left - right); };
  const auto py = [&](double f) { return top + (1.0 - f) * (h - top - bottom); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
     << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << w - right << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << py(1)
     << "\" stroke=\"black\"/>\n";
  for (double f : {0.0, 0.25, 0.5, 0.75, 1.0})
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(f) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << f
       << "</text>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& p : curve) os << px(static_cast<double>(p.epoch)) << "," << py(p.mean_val_f1) << " ";
  os << "\"/>\n</svg>\n";
  return os.str();
}

}  // namespace detail

/// Per model: `<model>_f1.csv` with (epoch, mean_val_f1, contributing_runs) and
/// a matching `<model>_f1.svg`. A plot that cannot be written is skipped with a
/// warning. Returns the CSV paths.
inline std::vector<std::filesystem::path> emit_f1_curves(const std::vector<RunRecord>& records,
                                                         const std::filesystem::path& out_dir, bool render = true,
                                                         const BenchLog& warn = {}) {
  std::map<std::string, std::vector<std::vector<EpochRecord>>> by_model;
  for (const auto& r : records)
    if (r.ok() && !r.history.empty()) by_model[r.model_name].push_back(r.history);
  if (by_model.empty()) throw Error(ErrorKind::ConfigError, "no run histories to plot");
  std::vector<std::filesystem::path> files;
  for (const auto& [model, histories] : by_model) {
    const auto agg = aggregate_runs(histories);
    std::ostringstream os;
    os.precision(17);
    os << "epoch,mean_val_f1,contributing_runs\n";
    for (const auto& p : agg.curve) os << p.epoch << "," << p.mean_val_f1 << "," << p.contributing_runs << "\n";
    const auto path = out_dir / (model + "_f1.csv");
    detail::write_text_atomic(path, os.str());
    files.push_back(path);
    if (!render) continue;
    try {
      detail::write_text_atomic(out_dir / (model + "_f1.svg"), detail::curve_svg(model, agg.curve));
    } catch (const std::exception& e) {
      if (warn) warn("warning: no plot for " + model + ": " + e.what());
    }
  }
  return files;
}

// ===========================================================================
// Single-image prediction
// ===========================================================================

struct PredictionRecord {
  std::string plant, condition;
  double plant_confidence = 0, condition_confidence = 0;
  std::vector<double> full_vector;

  nlohmann::json to_json() const {
    return {{"plant", plant},
            {"condition", condition},
            {"plant_confidence", plant_confidence},
            {"condition_confidence", condition_confidence},
            {"full_vector", full_vector}};
  }
};

/// Diagnosis of one image with an already loaded model.
inline PredictionRecord predict(const std::filesystem::path& image_path, LoadedModel<float>& model, bool constrained) {
  const auto in = model.net.input_shape();
  auto x = load_normalized(image_path, in.h);
  auto out = model.net.predict(x);
  const auto d = decode_prediction(std::as_const(out).sample(0), model.space, constrained);
  PredictionRecord r;
  r.plant = d.plant;
  r.condition = d.condition;
  r.plant_confidence = out[d.plant_index];
  r.condition_confidence = out[model.space.plants().size() + d.condition_index];
  r.full_vector.assign(out.values().begin(), out.values().end());
  return r;
}

inline PredictionRecord predict(const std::filesystem::path& image_path, const std::filesystem::path& checkpoint_dir,
                                bool constrained, const BackboneRegistry<float>& registry = BackboneRegistry<float>()) {
  auto model = load_checkpoint<float>(checkpoint_dir, registry);
  return predict(image_path, model, constrained);
}

}  // namespace leafbench
