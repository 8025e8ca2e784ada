#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sspcr/checkpoint.hpp"
#include "sspcr/config.hpp"
#include "sspcr/dataset_io.hpp"
#include "sspcr/experiment.hpp"

namespace fs = std::filesystem;
using namespace sspcr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool validate = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "YAML config file");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set train.lr=0.01")->take_all();
  cmd->add_flag("--validate", c.validate, "parse and validate the config, then exit");
}

ExperimentConfig resolve(const Common& c) {
  if (c.config.empty()) {
    YAML::Node root(YAML::NodeType::Map);
    for (const auto& o : c.overrides) apply_override(root, o);
    return parse_config(root);
  }
  return load_config(c.config, c.overrides);
}

int report_valid(const ExperimentConfig& cfg) {
  std::printf("config ok, hash %s\n", config_hash(cfg).c_str());
  return kExitOk;
}

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

const std::vector<FeatureGridSample>& pick_subset(const DatasetSplit& s, const std::string& name) {
  if (name == "test") return s.test;
  if (name == "val" || name == "validation") return s.validation;
  if (name == "labeled") return s.labeled;
  if (name == "unlabeled") return s.unlabeled;
  throw ConfigError("unknown split '" + name + "' (expected test, val, labeled or unlabeled)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised point-based cell recognition on synthetic feature grids"};
  app.require_subcommand(1);

  Common gen_c;
  std::string gen_out = "dataset.bin";
  std::optional<double> gen_ratio;
  auto* gen = app.add_subcommand("generate", "generate and split a synthetic dataset");
  add_common(gen, gen_c, false);
  gen->add_option("-o,--out", gen_out, "output dataset file");
  gen->add_option("--ratio", gen_ratio, "labeling ratio (defaults to split.labeling_ratio)");

  Common train_c;
  std::string train_data, train_out = "run";
  auto* train = app.add_subcommand("train", "train one model (baseline or SSL per train.toggles)");
  add_common(train, train_c, false);
  train->add_option("-d,--data", train_data, "dataset file; generated from the config when omitted")
      ->check(CLI::ExistingFile);
  train->add_option("-o,--out-dir", train_out, "directory for checkpoint, history and metrics");

  Common eval_c;
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  std::optional<double> eval_tm, eval_min_score;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
  add_common(evaluate_cmd, eval_c, false);
  evaluate_cmd->add_option("-k,--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("-d,--data", eval_data, "dataset file")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--split", eval_split, "test, val, labeled or unlabeled");
  evaluate_cmd->add_option("--distance-threshold", eval_tm, "matching distance T_m in pixels");
  evaluate_cmd->add_option("--min-score", eval_min_score, "minimum foreground probability");
  evaluate_cmd->add_option("-o,--out", eval_out, "write metrics JSON here instead of stdout");

  Common sweep_c, ablate_c;
  std::string sweep_out, ablate_out;
  std::optional<int> sweep_jobs, ablate_jobs;
  auto* sweep = app.add_subcommand("sweep", "baseline and SSL over experiment.sweep labeling ratios");
  add_common(sweep, sweep_c, true);
  sweep->add_option("-o,--out-dir", sweep_out, "output directory (defaults to experiment.output_dir/sweep)");
  sweep->add_option("-j,--jobs", sweep_jobs, "parallel runs");
  auto* ablate = app.add_subcommand("ablate", "baseline and each experiment.ablation toggle set");
  add_common(ablate, ablate_c, true);
  ablate->add_option("-o,--out-dir", ablate_out, "output directory (defaults to experiment.output_dir/ablate)");
  ablate->add_option("-j,--jobs", ablate_jobs, "parallel runs");

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot-data", "write long-format plot files from a sweep/ablate directory");
  plot->add_option("results_dir", plot_dir, "directory containing results.json")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    if (*gen) cfg = resolve(gen_c);
    if (*train) cfg = resolve(train_c);
    if (*evaluate_cmd) cfg = resolve(eval_c);
    if (*sweep) cfg = resolve(sweep_c);
    if (*ablate) cfg = resolve(ablate_c);
    if (sweep_jobs) cfg.jobs = *sweep_jobs;
    if (ablate_jobs) cfg.jobs = *ablate_jobs;
    if (gen_ratio) cfg.split.labeling_ratio = *gen_ratio;
    cfg.validate();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const YAML::Exception& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return kExitConfig;
  }

  try {
    if (*gen) {
      if (gen_c.validate) return report_valid(cfg);
      const auto split = make_split(cfg.dataset, cfg.split);
      save_dataset(split, gen_out);
      std::printf("wrote %s: %zu labeled, %zu unlabeled, %zu val, %zu test\n", gen_out.c_str(), split.labeled.size(),
                  split.unlabeled.size(), split.validation.size(), split.test.size());
      return kExitOk;
    }

    if (*train) {
      if (train_c.validate) return report_valid(cfg);
      const auto split = train_data.empty() ? make_split(cfg.dataset, cfg.split) : load_dataset(train_data);
      if (split.config.num_classes != cfg.arch.num_classes || split.config.feature_dim != cfg.arch.feature_dim)
        throw ConfigError("dataset num_classes/feature_dim differ from the config");
      const auto hash = config_hash(cfg);
      const auto hidden = hidden_annotations(split);
      TrainingDiagnostics diag;
      diag.hidden_unlabeled = &hidden;
      const auto res = run_training(split, cfg.arch, cfg.train, diag);
      fs::create_directories(train_out);
      Checkpoint ck{cfg.arch, res.selected, {}};
      for (const auto& p : res.pairs)
        if (p.id == res.selected_pair && !res.selected_is_teacher) ck.optimizer = p.optimizer;
      save_checkpoint(ck, fs::path(train_out) / "checkpoint.bin");
      write_json(fs::path(train_out) / "history.json", history_to_json(res.history, hash));
      const auto val = evaluate_model(cfg.arch, res.selected, split.validation, cfg.train.eval_min_score,
                                      cfg.train.distance_threshold);
      const auto test = evaluate_model(cfg.arch, res.selected, split.test, cfg.train.eval_min_score,
                                       cfg.train.distance_threshold);
      write_json(fs::path(train_out) / "metrics.json",
                 json{{"config_hash", hash},
                      {"toggles", cfg.train.toggles.label()},
                      {"selected_pair", res.selected_pair},
                      {"selected_is_teacher", res.selected_is_teacher},
                      {"val", metrics_to_json(val)},
                      {"test", metrics_to_json(test)}});
      io::write_file_atomic(fs::path(train_out) / "config.resolved.yaml", canonical_yaml(cfg) + "\n");
      std::printf("%s: test det F1 %.2f, cls F1 %.2f\n", cfg.train.toggles.label().c_str(), test.detection.f1,
                  test.classification.f1);
      return kExitOk;
    }

    if (*evaluate_cmd) {
      if (eval_c.validate) return report_valid(cfg);
      const auto ck = load_checkpoint(eval_ckpt);
      const auto split = load_dataset(eval_data);
      if (split.config.num_classes != ck.arch.num_classes || split.config.feature_dim != ck.arch.feature_dim)
        throw ConfigError("checkpoint architecture does not match the dataset");
      const double tm = eval_tm.value_or(cfg.train.distance_threshold);
      const double ms = eval_min_score.value_or(cfg.train.eval_min_score);
      if (!(tm > 0.0)) throw ConfigError("--distance-threshold must be > 0");
      const auto& samples = pick_subset(split, eval_split);
      const auto m = evaluate_model(ck.arch, ck.params, samples, ms, tm);
      const json j{{"split", eval_split}, {"distance_threshold", tm}, {"min_score", ms}, {"metrics", metrics_to_json(m)}};
      if (eval_out.empty())
        std::cout << j.dump(2) << "\n";
      else
        write_json(eval_out, j);
      return kExitOk;
    }

    if (*sweep || *ablate) {
      const bool is_sweep = sweep->parsed();
      if ((is_sweep ? sweep_c : ablate_c).validate) return report_valid(cfg);
      std::string out = is_sweep ? sweep_out : ablate_out;
      if (out.empty()) out = (fs::path(cfg.output_dir) / (is_sweep ? "sweep" : "ablate")).string();
      const auto res = run_experiment(cfg, is_sweep ? ExperimentMode::sweep : ExperimentMode::ablate, out,
                                      [](const RunRecord& r, std::size_t done, std::size_t total) {
                                        if (r.ok)
                                          std::fprintf(stderr, "[%zu/%zu] %s test cls F1 %.2f\n", done, total,
                                                       r.run_id.c_str(), r.test.classification.f1);
                                        else
                                          std::fprintf(stderr, "[%zu/%zu] %s FAILED: %s\n", done, total,
                                                       r.run_id.c_str(), r.error.c_str());
                                      });
      std::fputs(summary_csv(summarize(res.records)).c_str(), stdout);
      if (res.failed > 0) {
        std::fprintf(stderr, "%zu run(s) failed; partial results in %s\n", res.failed, out.c_str());
        return kExitRuntime;
      }
      return kExitOk;
    }

    if (*plot) {
      emit_plots_data(load_records(plot_dir), plot_dir);
      std::printf("wrote %s\n", (fs::path(plot_dir) / "plots").c_str());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
