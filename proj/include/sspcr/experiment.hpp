#pragma once

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "sspcr/config.hpp"
#include "sspcr/eval.hpp"
#include "sspcr/ssl.hpp"

namespace sspcr {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct RunRecord {
  std::string run_id;
  std::string config_hash;
  double labeling_ratio = 0.0;
  Toggles toggles{false, false, false};
  int seed = 0;  // repeat index; dataset/split/train seeds are the config bases plus this
  std::uint64_t dataset_seed = 0, split_seed = 0, train_seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport validation;
  MetricsReport test;
  std::optional<double> delta_det_f1_val, delta_cls_f1_val;
  std::optional<double> delta_det_f1_test, delta_cls_f1_test;
  int selected_pair = 0;
  bool selected_is_teacher = false;
  std::string history_file;  // relative to the output directory
  std::vector<EpochRecord> history;

  bool is_baseline() const { return !toggles.tsml; }
};

inline std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string format_ratio(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", r);
  return buf;
}

inline std::string make_run_id(const std::string& hash, double ratio, const Toggles& t, int seed) {
  return hash.substr(0, 8) + "-r" + format_ratio(ratio) + "-" + t.label() + "-s" + std::to_string(seed);
}

// ---------------------------------------------------------------- JSON

inline json metrics_to_json(const MetricsReport& m) {
  json j;
  j["detection"] = {{"p", m.detection.p}, {"r", m.detection.r}, {"f1", m.detection.f1},
                    {"tp", m.det_tp},     {"fp", m.det_fp},     {"fn", m.det_fn}};
  j["classification"] = {{"p", m.classification.p}, {"r", m.classification.r}, {"f1", m.classification.f1}};
  json pc = json::array();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& k = m.per_class[c];
    pc.push_back({{"tp", k.tp},
                  {"fp", k.fp},
                  {"fn", k.fn},
                  {"p", k.prf.p},
                  {"r", k.prf.r},
                  {"f1", k.prf.f1},
                  {"predictions", m.predictions_per_class[c]}});
  }
  j["per_class"] = pc;
  return j;
}

inline MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  const auto& d = j.at("detection");
  m.detection = {d.at("p").get<double>(), d.at("r").get<double>(), d.at("f1").get<double>()};
  m.det_tp = d.at("tp").get<std::size_t>();
  m.det_fp = d.at("fp").get<std::size_t>();
  m.det_fn = d.at("fn").get<std::size_t>();
  const auto& c = j.at("classification");
  m.classification = {c.at("p").get<double>(), c.at("r").get<double>(), c.at("f1").get<double>()};
  for (const auto& k : j.at("per_class")) {
    ClassMetrics cm;
    cm.tp = k.at("tp").get<std::size_t>();
    cm.fp = k.at("fp").get<std::size_t>();
    cm.fn = k.at("fn").get<std::size_t>();
    cm.prf = {k.at("p").get<double>(), k.at("r").get<double>(), k.at("f1").get<double>()};
    m.per_class.push_back(cm);
    m.predictions_per_class.push_back(k.at("predictions").get<std::size_t>());
  }
  return m;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline json losses_to_json(const LossTerms& t) {
  return {{"ls_cls", t.ls_cls}, {"ls_reg", t.ls_reg}, {"lu_cls", t.lu_cls}, {"total", t.total}};
}

inline json history_to_json(const std::vector<EpochRecord>& history, const std::string& config_hash) {
  json epochs = json::array();
  for (const auto& e : history) {
    json je;
    je["epoch"] = e.epoch;
    je["phase"] = e.ssl_phase ? "ssl" : "burn_in";
    json losses = json::array();
    for (const auto& l : e.student_losses) losses.push_back(losses_to_json(l));
    je["student_losses"] = losses;
    json teachers = json::array();
    for (const auto& t : e.teachers) {
      json jt;
      jt["teacher"] = t.teacher_id;
      jt["thresholds"] = t.thresholds;
      jt["target_counts"] = t.target_counts;
      std::vector<bool> floor(t.floor_active.begin(), t.floor_active.end());
      std::vector<bool> disabled(t.disabled.begin(), t.disabled.end());
      jt["floor_active"] = floor;
      jt["disabled"] = disabled;
      jt["pseudo_counts"] = t.pseudo_counts;
      if (t.pseudo_imbalance)
        jt["pseudo_imbalance"] = {
            {"ratio", t.pseudo_imbalance->has_zero ? json(nullptr) : json(t.pseudo_imbalance->ratio)},
            {"nonzero_ratio", t.pseudo_imbalance->nonzero_ratio},
            {"has_zero", t.pseudo_imbalance->has_zero}};
      else
        jt["pseudo_imbalance"] = nullptr;
      jt["pseudo_precision"] = t.pseudo_precision;
      jt["pseudo_coverage"] = t.pseudo_coverage;
      teachers.push_back(jt);
    }
    je["teachers"] = teachers;
    json evals = json::array();
    for (const auto& ev : e.evals)
      evals.push_back({{"pair", ev.pair_id}, {"teacher", ev.is_teacher}, {"validation", metrics_to_json(ev.validation)}});
    je["evals"] = evals;
    epochs.push_back(je);
  }
  return {{"config_hash", config_hash}, {"epochs", epochs}};
}

inline std::vector<EpochRecord> history_from_json(const json& j) {
  std::vector<EpochRecord> out;
  for (const auto& je : j.at("epochs")) {
    EpochRecord e;
    e.epoch = je.at("epoch").get<int>();
    e.ssl_phase = je.at("phase").get<std::string>() == "ssl";
    for (const auto& l : je.at("student_losses"))
      e.student_losses.push_back({l.at("ls_cls").get<double>(), l.at("ls_reg").get<double>(),
                                  l.at("lu_cls").get<double>(), l.at("total").get<double>()});
    for (const auto& jt : je.at("teachers")) {
      TeacherEpochStats t;
      t.teacher_id = jt.at("teacher").get<int>();
      t.thresholds = jt.at("thresholds").get<std::vector<double>>();
      t.target_counts = jt.at("target_counts").get<std::vector<std::size_t>>();
      for (bool b : jt.at("floor_active").get<std::vector<bool>>()) t.floor_active.push_back(b);
      for (bool b : jt.at("disabled").get<std::vector<bool>>()) t.disabled.push_back(b);
      t.pseudo_counts = jt.at("pseudo_counts").get<std::vector<std::size_t>>();
      const auto& im = jt.at("pseudo_imbalance");
      if (!im.is_null()) {
        ImbalanceRatio r;
        r.has_zero = im.at("has_zero").get<bool>();
        r.nonzero_ratio = im.at("nonzero_ratio").get<double>();
        r.ratio = r.has_zero ? std::numeric_limits<double>::infinity() : im.at("ratio").get<double>();
        t.pseudo_imbalance = r;
      }
      t.pseudo_precision = jt.at("pseudo_precision").get<std::vector<double>>();
      t.pseudo_coverage = jt.at("pseudo_coverage").get<std::vector<double>>();
      e.teachers.push_back(std::move(t));
    }
    for (const auto& ev : je.at("evals"))
      e.evals.push_back({ev.at("pair").get<int>(), ev.at("teacher").get<bool>(),
                         metrics_from_json(ev.at("validation"))});
    out.push_back(std::move(e));
  }
  return out;
}

inline json record_to_json(const RunRecord& r) {
  json j;
  j["run_id"] = r.run_id;
  j["config_hash"] = r.config_hash;
  j["labeling_ratio"] = r.labeling_ratio;
  j["tsml"] = r.toggles.tsml;
  j["ct"] = r.toggles.co_teaching;
  j["da"] = r.toggles.dist_align;
  j["seed"] = r.seed;
  j["dataset_seed"] = r.dataset_seed;
  j["split_seed"] = r.split_seed;
  j["train_seed"] = r.train_seed;
  j["status"] = r.ok ? "ok" : "failed";
  j["error"] = r.ok ? json(nullptr) : json(r.error);
  j["selected_pair"] = r.selected_pair;
  j["selected_is_teacher"] = r.selected_is_teacher;
  if (r.ok) {
    j["val"] = metrics_to_json(r.validation);
    j["test"] = metrics_to_json(r.test);
  } else {
    j["val"] = nullptr;
    j["test"] = nullptr;
  }
  j["delta"] = {{"val", {{"det_f1", optional_json(r.delta_det_f1_val)}, {"cls_f1", optional_json(r.delta_cls_f1_val)}}},
                {"test",
                 {{"det_f1", optional_json(r.delta_det_f1_test)}, {"cls_f1", optional_json(r.delta_cls_f1_test)}}}};
  j["history"] = r.history_file.empty() ? json(nullptr) : json(r.history_file);
  return j;
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.labeling_ratio = j.at("labeling_ratio").get<double>();
  r.toggles = {j.at("tsml").get<bool>(), j.at("ct").get<bool>(), j.at("da").get<bool>()};
  r.seed = j.at("seed").get<int>();
  r.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
  r.split_seed = j.at("split_seed").get<std::uint64_t>();
  r.train_seed = j.at("train_seed").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  if (!r.ok) r.error = j.at("error").get<std::string>();
  r.selected_pair = j.at("selected_pair").get<int>();
  r.selected_is_teacher = j.at("selected_is_teacher").get<bool>();
  if (r.ok) {
    r.validation = metrics_from_json(j.at("val"));
    r.test = metrics_from_json(j.at("test"));
  }
  const auto& d = j.at("delta");
  r.delta_det_f1_val = optional_from_json(d.at("val").at("det_f1"));
  r.delta_cls_f1_val = optional_from_json(d.at("val").at("cls_f1"));
  r.delta_det_f1_test = optional_from_json(d.at("test").at("det_f1"));
  r.delta_cls_f1_test = optional_from_json(d.at("test").at("cls_f1"));
  if (!j.at("history").is_null()) r.history_file = j.at("history").get<std::string>();
  return r;
}

// ---------------------------------------------------------------- CSV

inline const char* kResultsCsvHeader =
    "run_id,labeling_ratio,tsml,ct,da,seed,split,det_p,det_r,det_f1,cls_p,cls_r,cls_f1,delta_det_f1,delta_cls_f1\n";

inline std::string results_csv(const std::vector<RunRecord>& records) {
  std::string out = kResultsCsvHeader;
  auto opt = [](const std::optional<double>& v) { return v ? format_fixed(*v) : std::string(); };
  for (const auto& r : records) {
    for (int s = 0; s < 2; ++s) {
      const auto& m = s == 0 ? r.validation : r.test;
      out += r.run_id + "," + format_ratio(r.labeling_ratio) + "," + (r.toggles.tsml ? "1" : "0") + "," +
             (r.toggles.co_teaching ? "1" : "0") + "," + (r.toggles.dist_align ? "1" : "0") + "," +
             std::to_string(r.seed) + "," + (s == 0 ? "val" : "test") + ",";
      if (r.ok) {
        out += format_fixed(m.detection.p) + "," + format_fixed(m.detection.r) + "," + format_fixed(m.detection.f1) +
               "," + format_fixed(m.classification.p) + "," + format_fixed(m.classification.r) + "," +
               format_fixed(m.classification.f1) + ",";
      } else {
        out += ",,,,,,";
      }
      out += opt(s == 0 ? r.delta_det_f1_val : r.delta_det_f1_test) + "," +
             opt(s == 0 ? r.delta_cls_f1_val : r.delta_cls_f1_test) + "\n";
    }
  }
  return out;
}

struct MeanSd {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> sd;  // sample standard deviation, absent for n < 2
};

inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct SummaryRow {
  double labeling_ratio = 0.0;
  Toggles toggles;
  std::size_t runs = 0, failed = 0;
  std::map<std::string, MeanSd> stats;  // test split
};

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> names{"det_p",  "det_r",  "det_f1",       "cls_p",
                                              "cls_r",  "cls_f1", "delta_det_f1", "delta_cls_f1"};
  return names;
}

inline std::vector<std::pair<std::string, double>> test_values(const RunRecord& r) {
  std::vector<std::pair<std::string, double>> kv;
  if (!r.ok) return kv;
  kv = {{"det_p", r.test.detection.p},      {"det_r", r.test.detection.r},      {"det_f1", r.test.detection.f1},
        {"cls_p", r.test.classification.p}, {"cls_r", r.test.classification.r}, {"cls_f1", r.test.classification.f1}};
  if (r.delta_det_f1_test) kv.emplace_back("delta_det_f1", *r.delta_det_f1_test);
  if (r.delta_cls_f1_test) kv.emplace_back("delta_cls_f1", *r.delta_cls_f1_test);
  return kv;
}

// One row per (ratio, toggles) in first-appearance order.
inline std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
  std::vector<SummaryRow> rows;
  std::vector<std::map<std::string, std::vector<double>>> values;
  for (const auto& r : records) {
    std::size_t k = 0;
    for (; k < rows.size(); ++k)
      if (rows[k].labeling_ratio == r.labeling_ratio && rows[k].toggles.label() == r.toggles.label()) break;
    if (k == rows.size()) {
      rows.push_back({r.labeling_ratio, r.toggles, 0, 0, {}});
      values.emplace_back();
    }
    ++rows[k].runs;
    if (!r.ok) ++rows[k].failed;
    for (const auto& [name, v] : test_values(r)) values[k][name].push_back(v);
  }
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (const auto& name : summary_metrics()) rows[k].stats[name] = mean_sd(values[k][name]);
  return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "labeling_ratio,tsml,ct,da,runs,failed";
  for (const auto& m : summary_metrics()) out += "," + m + "," + m + "_sd";
  out += "\n";
  for (const auto& row : rows) {
    out += format_ratio(row.labeling_ratio) + "," + (row.toggles.tsml ? "1" : "0") + "," +
           (row.toggles.co_teaching ? "1" : "0") + "," + (row.toggles.dist_align ? "1" : "0") + "," +
           std::to_string(row.runs) + "," + std::to_string(row.failed);
    for (const auto& m : summary_metrics()) {
      const auto& s = row.stats.at(m);
      out += "," + (s.n ? format_fixed(s.mean) : std::string()) + "," + (s.sd ? format_fixed(*s.sd) : std::string());
    }
    out += "\n";
  }
  return out;
}

inline json summary_json(const std::vector<SummaryRow>& rows, const std::string& hash) {
  json arr = json::array();
  for (const auto& row : rows) {
    json j;
    j["labeling_ratio"] = row.labeling_ratio;
    j["tsml"] = row.toggles.tsml;
    j["ct"] = row.toggles.co_teaching;
    j["da"] = row.toggles.dist_align;
    j["runs"] = row.runs;
    j["failed"] = row.failed;
    for (const auto& m : summary_metrics()) {
      const auto& s = row.stats.at(m);
      j[m] = s.n ? json(s.mean) : json(nullptr);
      j[m + "_sd"] = s.sd ? json(*s.sd) : json(nullptr);
    }
    arr.push_back(j);
  }
  return {{"config_hash", hash}, {"rows", arr}};
}

// ---------------------------------------------------------------- plot data

// Long-format files under <dir>/plots: one metric_<name>.csv per metric, a
// summary.csv with per-cell mean and sample sd, traces.csv with per-epoch
// thresholds and pseudo counts, and manifest.json listing what was written.
inline void emit_plots_data(const std::vector<RunRecord>& records, const fs::path& dir) {
  const fs::path plots = dir / "plots";
  fs::create_directories(plots);
  json manifest;
  manifest["files"] = json::array();
  manifest["notes"] = json::array();

  std::map<std::string, std::string> per_metric;
  for (const auto& m : summary_metrics()) per_metric[m] = "labeling_ratio,toggles,seed,metric,value\n";
  for (const auto& r : records)
    for (const auto& [name, v] : test_values(r))
      per_metric[name] += format_ratio(r.labeling_ratio) + "," + r.toggles.label() + "," + std::to_string(r.seed) +
                          "," + name + "," + format_fixed(v) + "\n";
  for (const auto& m : summary_metrics()) {
    io::write_file_atomic(plots / ("metric_" + m + ".csv"), per_metric[m]);
    manifest["files"].push_back("metric_" + m + ".csv");
  }

  std::string summary = "labeling_ratio,toggles,metric,n,mean,sd\n";
  for (const auto& row : summarize(records))
    for (const auto& m : summary_metrics()) {
      const auto& s = row.stats.at(m);
      if (s.n == 0) continue;
      summary += format_ratio(row.labeling_ratio) + "," + row.toggles.label() + "," + m + "," + std::to_string(s.n) +
                 "," + format_fixed(s.mean) + "," + (s.sd ? format_fixed(*s.sd) : std::string()) + "\n";
    }
  io::write_file_atomic(plots / "summary.csv", summary);
  manifest["files"].push_back("summary.csv");

  std::string traces = "labeling_ratio,toggles,seed,epoch,teacher,class,threshold,target_count,pseudo_count,floor_active\n";
  bool any_trace = false;
  for (const auto& r : records)
    for (const auto& e : r.history)
      for (const auto& t : e.teachers)
        for (std::size_t c = 0; c < t.thresholds.size(); ++c) {
          any_trace = true;
          traces += format_ratio(r.labeling_ratio) + "," + r.toggles.label() + "," + std::to_string(r.seed) + "," +
                    std::to_string(e.epoch) + "," + std::to_string(t.teacher_id) + "," + std::to_string(c) + "," +
                    format_fixed(t.thresholds[c]) + "," +
                    (c < t.target_counts.size() ? std::to_string(t.target_counts[c]) : std::string()) + "," +
                    std::to_string(t.pseudo_counts[c]) + "," + (t.floor_active[c] ? "1" : "0") + "\n";
        }
  if (any_trace) {
    io::write_file_atomic(plots / "traces.csv", traces);
    manifest["files"].push_back("traces.csv");
  } else {
    std::error_code ec;
    fs::remove(plots / "traces.csv", ec);
    manifest["notes"].push_back("traces.csv omitted: no run has teacher threshold history");
  }
  io::write_file_atomic(plots / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------- runs

struct RunSpec {
  double labeling_ratio = 0.0;
  Toggles toggles{false, false, false};
  int seed = 0;
};

inline RunRecord execute_run(const ExperimentConfig& cfg, const RunSpec& spec, const std::string& hash) {
  RunRecord rec;
  rec.config_hash = hash;
  rec.labeling_ratio = spec.labeling_ratio;
  rec.toggles = spec.toggles;
  rec.seed = spec.seed;
  rec.run_id = make_run_id(hash, spec.labeling_ratio, spec.toggles, spec.seed);
  rec.dataset_seed = cfg.dataset.seed + static_cast<std::uint64_t>(spec.seed);
  rec.split_seed = cfg.split.seed + static_cast<std::uint64_t>(spec.seed);
  rec.train_seed = cfg.train.seed + static_cast<std::uint64_t>(spec.seed);
  try {
    DatasetConfig dc = cfg.dataset;
    dc.seed = rec.dataset_seed;
    SplitParams sp = cfg.split;
    sp.labeling_ratio = spec.labeling_ratio;
    sp.seed = rec.split_seed;
    const auto split = make_split(dc, sp);
    TrainConfig tc = cfg.train;
    tc.seed = rec.train_seed;
    tc.toggles = spec.toggles;
    const auto hidden = hidden_annotations(split);
    TrainingDiagnostics diag;
    diag.hidden_unlabeled = &hidden;
    auto res = run_training(split, cfg.arch, tc, diag);
    rec.validation =
        evaluate_model(cfg.arch, res.selected, split.validation, tc.eval_min_score, tc.distance_threshold);
    rec.test = evaluate_model(cfg.arch, res.selected, split.test, tc.eval_min_score, tc.distance_threshold);
    rec.selected_pair = res.selected_pair;
    rec.selected_is_teacher = res.selected_is_teacher;
    rec.history = std::move(res.history);
    rec.ok = true;
  } catch (const NumericalError& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

enum class ExperimentMode { sweep, ablate };

struct ExperimentResult {
  std::vector<RunRecord> records;
  std::size_t failed = 0;
};

// Baseline runs come first within each (ratio, seed) group, followed by the
// SSL runs in configured order.
inline std::vector<RunSpec> plan_runs(const ExperimentConfig& cfg, ExperimentMode mode) {
  std::vector<double> ratios = mode == ExperimentMode::sweep ? cfg.sweep : std::vector<double>{cfg.ablation_ratio};
  std::vector<Toggles> ssl = mode == ExperimentMode::sweep ? std::vector<Toggles>{cfg.train.toggles} : cfg.ablation;
  std::vector<RunSpec> plan;
  for (double r : ratios)
    for (int s = 0; s < cfg.repeats; ++s) {
      plan.push_back({r, Toggles{false, false, false}, s});
      for (const auto& t : ssl)
        if (t.tsml) plan.push_back({r, t, s});
    }
  return plan;
}

inline void attach_deltas(std::vector<RunRecord>& records) {
  for (auto& r : records) {
    if (r.is_baseline() || !r.ok) continue;
    for (const auto& b : records) {
      if (!b.is_baseline() || !b.ok || b.labeling_ratio != r.labeling_ratio || b.dataset_seed != r.dataset_seed ||
          b.split_seed != r.split_seed || b.config_hash != r.config_hash)
        continue;
      r.delta_det_f1_val = r.validation.detection.f1 - b.validation.detection.f1;
      r.delta_cls_f1_val = r.validation.classification.f1 - b.validation.classification.f1;
      r.delta_det_f1_test = r.test.detection.f1 - b.test.detection.f1;
      r.delta_cls_f1_test = r.test.classification.f1 - b.test.classification.f1;
      break;
    }
  }
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_results(const std::vector<RunRecord>& records, const ExperimentConfig& cfg, const std::string& hash,
                          const fs::path& dir) {
  fs::create_directories(dir / "histories");
  json arr = json::array();
  for (const auto& r : records) arr.push_back(record_to_json(r));
  io::write_file_atomic(dir / "results.csv", results_csv(records));
  io::write_file_atomic(dir / "results.json", json{{"config_hash", hash}, {"records", arr}}.dump(2) + "\n");
  const auto rows = summarize(records);
  io::write_file_atomic(dir / "summary.csv", summary_csv(rows));
  io::write_file_atomic(dir / "summary.json", summary_json(rows, hash).dump(2) + "\n");
  io::write_file_atomic(dir / "config.resolved.yaml", canonical_yaml(cfg) + "\n");
}

using ProgressFn = std::function<void(const RunRecord&, std::size_t done, std::size_t total)>;

// Runs every planned (ratio, toggles, seed) cell and writes results.csv,
// results.json, summary.csv, summary.json, histories/ and plots/ under dir.
// Wall-clock data goes to metadata.json only.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, ExperimentMode mode, const fs::path& dir,
                                       const ProgressFn& progress = {}) {
  cfg.validate();
  const auto hash = config_hash(cfg);
  const auto plan = plan_runs(cfg, mode);
  const auto started = std::chrono::system_clock::now();

  std::vector<RunRecord> records(plan.size());
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < plan.size(); i = next++) {
      auto rec = execute_run(cfg, plan[i], hash);
      std::lock_guard lock(mu);
      records[i] = std::move(rec);
      ++done;
      if (progress) progress(records[i], done, plan.size());
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), plan.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  attach_deltas(records);
  fs::create_directories(dir / "histories");
  ExperimentResult out;
  for (auto& r : records) {
    if (!r.ok) ++out.failed;
    if (r.history.empty()) continue;
    r.history_file = "histories/" + r.run_id + ".json";
    io::write_file_atomic(dir / r.history_file, history_to_json(r.history, hash).dump(1) + "\n");
  }
  write_results(records, cfg, hash, dir);
  emit_plots_data(records, dir);

  const auto finished = std::chrono::system_clock::now();
  json meta;
  meta["config_hash"] = hash;
  meta["mode"] = mode == ExperimentMode::sweep ? "sweep" : "ablate";
  meta["started_utc"] = utc_timestamp(started);
  meta["finished_utc"] = utc_timestamp(finished);
  meta["wall_seconds"] = std::chrono::duration<double>(finished - started).count();
  meta["jobs"] = cfg.jobs;
  meta["runs"] = records.size();
  meta["failed"] = out.failed;
  char host[256] = {0};
  if (gethostname(host, sizeof host - 1) == 0) meta["host"] = host;
  io::write_file_atomic(dir / "metadata.json", meta.dump(2) + "\n");

  out.records = std::move(records);
  return out;
}

// Reloads records and histories written by run_experiment.
inline std::vector<RunRecord> load_records(const fs::path& dir) {
  const auto bytes = io::read_file(dir / "results.json");
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("results.json: ") + e.what(), 0);
  }
  std::vector<RunRecord> out;
  try {
    for (const auto& jr : j.at("records")) {
      auto r = record_from_json(jr);
      if (!r.history_file.empty()) {
        const auto hb = io::read_file(dir / r.history_file);
        r.history = history_from_json(json::parse(hb.begin(), hb.end()));
      }
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed results: ") + e.what(), 0);
  }
  return out;
}

}  // namespace sspcr
