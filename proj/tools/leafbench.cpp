// leafbench command line: dataset ingestion, training, benchmarking, reports, prediction.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "leafbench/leafbench.hpp"

namespace lb = leafbench;

namespace {

enum Exit { ok = 0, internal = 1, config_error = 2, dataset_error = 3, all_failed = 4 };

struct PlanFlags {
  std::string config;
  std::string dataset, out;
  std::vector<std::string> models;
  std::optional<double> lr, threshold;
  std::optional<std::size_t> batch, epochs, patience, runs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  bool freeze = false;
  bool quiet = false;
};

void add_plan_flags(CLI::App* cmd, PlanFlags& f, bool multi_model) {
  cmd->add_option("--config", f.config, "plan JSON file");
  cmd->add_option("--dataset,--manifest", f.dataset, "split manifest CSV");
  cmd->add_option("--out", f.out, "output directory");
  if (multi_model)
    cmd->add_option("--models", f.models, "model names")->delimiter(',');
  else
    cmd->add_option("--model", f.models, "model name")->expected(1);
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--batch-size", f.batch, "minibatch size");
  cmd->add_option("--epochs", f.epochs, "maximum epochs");
  cmd->add_option("--patience", f.patience, "early-stopping patience");
  if (multi_model) cmd->add_option("--runs", f.runs, "runs per model");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--mode", f.mode, "paired or shared");
  cmd->add_option("--threshold", f.threshold, "binarization threshold");
  cmd->add_flag("--freeze", f.freeze, "freeze pretrained backbones");
  cmd->add_flag("--quiet", f.quiet, "no per-epoch log");
}

lb::BenchmarkPlan resolve_plan(const PlanFlags& f) {
  lb::BenchmarkPlan plan;
  if (!f.config.empty()) {
    const auto j = lb::detail::read_json_file(f.config, lb::ErrorKind::ConfigError);
    plan = lb::BenchmarkPlan::from_json(j, std::filesystem::absolute(f.config).parent_path());
  }
  if (!f.dataset.empty()) plan.dataset = f.dataset;
  if (!f.out.empty()) plan.output_dir = f.out;
  if (!f.models.empty()) plan.model_names = f.models;
  auto& tc = plan.train_config;
  if (f.lr) tc.learning_rate = *f.lr;
  if (f.batch) tc.batch_size = *f.batch;
  if (f.epochs) tc.max_epochs = *f.epochs;
  if (f.patience) tc.patience = *f.patience;
  if (f.runs) tc.runs = *f.runs;
  if (f.seed) tc.seed = *f.seed;
  if (f.mode) plan.mode = lb::parse_label_mode(*f.mode);
  if (f.threshold) plan.threshold = *f.threshold;
  if (f.freeze) plan.freeze_backbone = true;
  if (plan.dataset.empty()) throw lb::Error(lb::ErrorKind::ConfigError, "no dataset manifest given (--dataset or plan file)");
  plan.validate();
  return plan;
}

lb::SplitSpec parse_ratios(const std::string& text, std::uint64_t seed) {
  std::vector<double> r;
  std::size_t pos = 0;
  try {
    while (pos <= text.size()) {
      const auto comma = text.find(',', pos);
      r.push_back(std::stod(text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  } catch (const std::exception&) {
    throw lb::Error(lb::ErrorKind::ConfigError, "bad --ratios '" + text + "'");
  }
  if (r.size() != 3) throw lb::Error(lb::ErrorKind::ConfigError, "--ratios needs three values train,val,test");
  lb::SplitSpec s{r[0], r[1], r[2], seed};
  s.validate();
  return s;
}

int run_matrix(const lb::BenchmarkPlan& plan, bool quiet) {
  const auto records = lb::run_benchmark(plan, lb::BackboneRegistry<float>(), [quiet](const std::string& m) {
    if (!quiet || !m.starts_with("  ")) std::cerr << m << "\n";
  });
  std::size_t good = 0;
  for (const auto& r : records) good += r.ok();
  std::cout << good << " of " << records.size() << " runs succeeded; records in "
            << (plan.output_dir / "runs").string() << "\n";
  return good == 0 ? all_failed : ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leafbench: multi-label plant and disease classification toolkit"};
  app.require_subcommand(1);

  // scan
  std::string scan_root, scan_out, scan_mode = "paired";
  auto* scan = app.add_subcommand("scan", "index a <plant>/<condition>/<image> tree into a manifest");
  scan->add_option("root", scan_root, "dataset root")->required();
  scan->add_option("--out", scan_out, "manifest CSV to write")->required();
  scan->add_option("--mode", scan_mode, "paired or shared");

  // split
  std::string split_in, split_out, ratios = "0.5,0.25,0.25";
  std::uint64_t split_seed = 0;
  bool permissive = false;
  auto* split = app.add_subcommand("split", "stratified train/val/test split of a manifest");
  split->add_option("manifest", split_in, "manifest CSV")->required();
  split->add_option("--out", split_out, "split manifest to write")->required();
  split->add_option("--ratios", ratios, "train,val,test fractions");
  split->add_option("--seed", split_seed, "shuffle seed");
  split->add_flag("--permissive", permissive, "allow classes with fewer than 3 samples");

  // train / bench
  PlanFlags train_flags, bench_flags;
  auto* train = app.add_subcommand("train", "train and test one model once");
  add_plan_flags(train, train_flags, false);
  auto* bench = app.add_subcommand("bench", "run the models x seeds matrix (resumable)");
  add_plan_flags(bench, bench_flags, true);

  // report / curves
  std::string report_dir, curves_dir;
  bool no_plot = false;
  auto* report = app.add_subcommand("report", "table of mean test metrics per model");
  report->add_option("dir", report_dir, "benchmark output directory")->required();
  auto* curves = app.add_subcommand("curves", "mean validation F1 per epoch per model");
  curves->add_option("dir", curves_dir, "benchmark output directory")->required();
  curves->add_flag("--no-plot", no_plot, "CSV only");

  // predict
  std::string image, checkpoint;
  bool unconstrained = false;
  auto* predict = app.add_subcommand("predict", "diagnose one leaf image");
  predict->add_option("image", image, "image file")->required();
  predict->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  predict->add_flag("--unconstrained", unconstrained, "allow plant/condition combinations outside the label space");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : config_error;
  }

  try {
    if (*scan) {
      const auto space = lb::LabelSpace::full(lb::parse_label_mode(scan_mode));
      const auto m = lb::scan_dataset(scan_root, space);
      lb::write_manifest(m, scan_out);
      for (const auto& [key, n] : m.class_counts) std::cout << key.first << "," << key.second << "," << n << "\n";
      std::cout << m.samples.size() << " images\n";
    } else if (*split) {
      const auto spec = parse_ratios(ratios, split_seed);
      const auto m = lb::stratified_split(lb::read_manifest(split_in), spec, permissive);
      lb::write_manifest(m, split_out);
      for (auto s : {lb::Split::train, lb::Split::val, lb::Split::test})
        std::cout << lb::to_string(s) << " " << m.subset(s).size() << "\n";
    } else if (*train) {
      auto plan = resolve_plan(train_flags);
      if (plan.model_names.size() != 1) throw lb::Error(lb::ErrorKind::ConfigError, "train takes exactly one model");
      plan.train_config.runs = 1;
      return run_matrix(plan, train_flags.quiet);
    } else if (*bench) {
      return run_matrix(resolve_plan(bench_flags), bench_flags.quiet);
    } else if (*report) {
      const auto files = lb::emit_report(lb::read_run_records(report_dir), report_dir);
      std::ifstream md(files.markdown);
      std::cout << md.rdbuf();
    } else if (*curves) {
      const auto warn = [](const std::string& m) { std::cerr << m << "\n"; };
      for (const auto& p : lb::emit_f1_curves(lb::read_run_records(curves_dir), curves_dir, !no_plot, warn))
        std::cout << p.string() << "\n";
    } else if (*predict) {
      std::cout << lb::predict(image, checkpoint, !unconstrained).to_json().dump(2) << "\n";
    }
  } catch (const lb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lb::is_dataset_error(e.kind()) ? dataset_error : config_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return internal;
  }
  return ok;
}
