#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sspcr/augment.hpp"
#include "sspcr/data.hpp"
#include "sspcr/error.hpp"
#include "sspcr/eval.hpp"
#include "sspcr/loss.hpp"
#include "sspcr/match.hpp"
#include "sspcr/model.hpp"
#include "sspcr/random.hpp"

namespace sspcr {

struct Toggles {
  bool tsml = true;         // teacher-student mutual learning (pseudo labels from an EMA teacher)
  bool co_teaching = true;  // two pairs, each teacher supervises the other pair's student
  bool dist_align = true;   // per-class thresholds matched to the labeled class distribution

  std::string label() const {
    if (!tsml) return "baseline";
    std::string s = "tsml";
    if (co_teaching) s += "+ct";
    if (dist_align) s += "+da";
    return s;
  }

  friend bool operator==(const Toggles&, const Toggles&) = default;
};

struct TrainConfig {
  int n_l = 4;
  int n_u = 4;
  double alpha = 0.99;
  int burn_in_epochs = 50;
  int ssl_epochs = 150;
  AdamOptions optimizer;
  LossWeights weights;
  double t_floor = 0.05;
  double global_threshold = 0.5;  // pseudo-label threshold when dist_align is off
  double cls_cost_weight = 1.0;
  double eval_min_score = 0.5;
  double distance_threshold = 6.0;
  std::uint64_t seed = 0;
  Toggles toggles;
  AugmentationPipeline weak = AugmentationPipeline::weak();
  AugmentationPipeline strong_labeled = AugmentationPipeline::strong_labeled();
  AugmentationPipeline strong_unlabeled = AugmentationPipeline::strong_unlabeled();

  int total_epochs() const { return burn_in_epochs + ssl_epochs; }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train.alpha must be in [0, 1]");
    if (n_l < 1) throw ConfigError("train.n_l must be >= 1");
    if (n_u < 0) throw ConfigError("train.n_u must be >= 0");
    if (toggles.tsml && n_u < 1) throw ConfigError("train.n_u must be >= 1 when tsml is enabled");
    if (!toggles.tsml && (toggles.co_teaching || toggles.dist_align))
      throw ConfigError("co_teaching and dist_align require tsml");
    if (burn_in_epochs < 0 || ssl_epochs < 0) throw ConfigError("epoch counts must be >= 0");
    if (!(optimizer.lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(t_floor >= 0.0 && t_floor <= 1.0)) throw ConfigError("train.t_floor must be in [0, 1]");
    if (!(global_threshold >= 0.0 && global_threshold <= 1.0))
      throw ConfigError("train.global_threshold must be in [0, 1]");
    if (!(cls_cost_weight >= 0.0)) throw ConfigError("train.cls_cost_weight must be >= 0");
    if (!(eval_min_score >= 0.0 && eval_min_score <= 1.0))
      throw ConfigError("train.eval_min_score must be in [0, 1]");
    if (!(distance_threshold > 0.0)) throw ConfigError("train.distance_threshold must be > 0");
    weights.validate();
    weak.validate();
    strong_labeled.validate();
    strong_unlabeled.validate();
  }
};

struct TeacherStudentPair {
  int id = 1;
  ParamVector student;
  AdamState optimizer;
  std::optional<ParamVector> teacher;  // exists from the start of the SSL phase

  const ParamVector& evaluated() const { return teacher ? *teacher : student; }
};

// teacher <- alpha * teacher + (1 - alpha) * student, element-wise.
inline void ema_update(ParamVector& teacher, const ParamVector& student, double alpha) {
  require_compatible(teacher, student, "ema_update");
  const double keep = alpha, take = 1.0 - alpha;
  for (std::size_t i = 0; i < teacher.size(); ++i)
    teacher.values[i] = keep * teacher.values[i] + take * student.values[i];
}

// Sentinel threshold above any probability: the class is never pseudo-labeled.
inline const double kDisabledThreshold = std::nextafter(1.0, 2.0);

struct ThresholdSet {
  std::vector<double> t;
  std::vector<std::size_t> target_counts;  // empty for a global threshold
  std::vector<char> floor_active;
  std::vector<char> disabled;  // class had no labeled cells

  static ThresholdSet global(int num_classes, double threshold) {
    const auto n = static_cast<std::size_t>(num_classes);
    return {std::vector<double>(n, threshold), {}, std::vector<char>(n, 0), std::vector<char>(n, 0)};
  }

  double operator[](std::size_t c) const { return t[c]; }
};

// round((n_unlabeled / n_labeled) * count), half rounded up, in exact integer
// arithmetic.
inline std::size_t aligned_target_count(std::size_t count, std::size_t n_labeled,
                                        std::size_t n_unlabeled) {
  if (n_labeled == 0) throw ContractViolation("aligned_target_count: N_l must be >= 1");
  return (2 * n_unlabeled * count + n_labeled) / (2 * n_labeled);
}

// Teacher predictions (one per anchor, decoded at min_score 0) over the
// canonical unlabeled pool.
inline std::vector<std::vector<PointPrediction>> scan_pool(const ModelArch& arch,
                                                           const ParamVector& teacher,
                                                           const UnlabeledView& pool) {
  std::vector<std::vector<PointPrediction>> out;
  out.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    out.push_back(decode(forward(arch, teacher, pool.stripped(i)), 0.0));
  return out;
}

// t_i is the target-th largest candidate score of class i, clamped to t_floor;
// t_floor when there are fewer candidates than the target; disabled when the
// class has no labeled cells.
inline ThresholdSet thresholds_from_predictions(const std::vector<std::vector<PointPrediction>>& pool,
                                                std::span<const std::size_t> labeled_counts,
                                                std::size_t n_labeled, std::size_t n_unlabeled,
                                                double t_floor) {
  const std::size_t nc = labeled_counts.size();
  std::vector<std::vector<double>> scores(nc);
  for (const auto& sample : pool)
    for (const auto& p : sample) scores.at(p.class_id).push_back(p.score);

  ThresholdSet ts;
  ts.t.assign(nc, t_floor);
  ts.target_counts.assign(nc, 0);
  ts.floor_active.assign(nc, 0);
  ts.disabled.assign(nc, 0);
  for (std::size_t c = 0; c < nc; ++c) {
    const std::size_t target = aligned_target_count(labeled_counts[c], n_labeled, n_unlabeled);
    ts.target_counts[c] = target;
    if (labeled_counts[c] == 0 || target == 0) {
      ts.t[c] = kDisabledThreshold;
      ts.disabled[c] = 1;
      continue;
    }
    auto& s = scores[c];
    if (s.size() < target) {
      ts.t[c] = t_floor;
      ts.floor_active[c] = 1;
      continue;
    }
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(target - 1), s.end(),
                     std::greater<>());
    const double kth = s[target - 1];
    if (kth < t_floor) {
      ts.t[c] = t_floor;
      ts.floor_active[c] = 1;
    } else {
      ts.t[c] = kth;
    }
  }
  return ts;
}

inline ThresholdSet compute_thresholds(const ModelArch& arch, const ParamVector& teacher,
                                       const UnlabeledView& pool,
                                       std::span<const std::size_t> labeled_counts,
                                       std::size_t n_labeled, double t_floor) {
  return thresholds_from_predictions(scan_pool(arch, teacher, pool), labeled_counts, n_labeled,
                                     pool.size(), t_floor);
}

struct PseudoLabels {
  int teacher_id = 0;
  std::vector<PointAnnotation> points;  // canonical frame
  std::vector<double> scores;
};

// Pseudo labels for a whole pool, one entry per sample.
struct PseudoLabelSet {
  int teacher_id = 0;
  std::vector<std::vector<PointAnnotation>> points;
  std::vector<std::vector<double>> scores;

  std::vector<std::size_t> class_counts(int num_classes) const {
    std::vector<std::size_t> n(static_cast<std::size_t>(num_classes), 0);
    for (const auto& s : points)
      for (const auto& p : s) ++n.at(p.class_id);
    return n;
  }
};

// Keeps candidates with score >= t_class. When distribution alignment set the
// threshold, candidates tied at exactly t_class are admitted only up to the
// class target, earliest in (sample, anchor) order first.
inline PseudoLabelSet retain_pool(const std::vector<std::vector<PointPrediction>>& pool,
                                  const ThresholdSet& ts, int teacher_id) {
  const std::size_t nc = ts.t.size();
  std::vector<std::size_t> tie_quota(nc, std::numeric_limits<std::size_t>::max());
  if (!ts.target_counts.empty()) {
    std::vector<std::size_t> above(nc, 0);
    for (const auto& sample : pool)
      for (const auto& p : sample)
        if (p.score > ts.t[p.class_id]) ++above[p.class_id];
    for (std::size_t c = 0; c < nc; ++c)
      if (!ts.floor_active[c] && !ts.disabled[c])
        tie_quota[c] = ts.target_counts[c] > above[c] ? ts.target_counts[c] - above[c] : 0;
  }
  PseudoLabelSet out;
  out.teacher_id = teacher_id;
  for (const auto& sample : pool) {
    auto& pts = out.points.emplace_back();
    auto& sc = out.scores.emplace_back();
    for (const auto& p : sample) {
      const double t = ts.t[p.class_id];
      if (p.score < t) continue;
      if (p.score == t) {
        if (tie_quota[p.class_id] == 0) continue;
        --tie_quota[p.class_id];
      }
      pts.push_back(to_annotation(p));
      sc.push_back(p.score);
    }
  }
  return out;
}

// Teacher inference on the weak view; predictions with score >= t_class are
// mapped back to the canonical frame.
inline PseudoLabels generate_pseudo_labels(const ModelArch& arch, const ParamVector& teacher,
                                           int teacher_id, const FeatureGridSample& weak_view,
                                           const GeometricRecord& weak_record,
                                           const ThresholdSet& thresholds) {
  PseudoLabels out;
  out.teacher_id = teacher_id;
  for (const auto& p : decode(forward(arch, teacher, weak_view), 0.0)) {
    if (p.score < thresholds[p.class_id]) continue;
    out.points.push_back(apply_inverse(weak_record, to_annotation(p)));
    out.scores.push_back(p.score);
  }
  return out;
}

// Observer for instrumented runs.
struct StepProbe {
  std::function<void(int student_pair_id, const GradientVector& unlabeled_grad)> on_unlabeled_gradient;
  std::function<void(int student_pair_id, const PseudoLabels& labels)> on_pseudo_labels;
};

struct StepReport {
  std::vector<LossTerms> terms;          // per pair
  std::vector<int> pseudo_source;        // generating teacher id per student, 0 when none
  std::vector<std::size_t> pseudo_points;
};

inline void add_into(GradientVector& acc, const GradientVector& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc.values[i] += g.values[i];
}

// One optimisation step for every student followed by the EMA update of every
// teacher. `thresholds[k]` belongs to pairs[k]'s teacher. The labeled and the
// unlabeled half of each student draw augmentations from separate streams.
inline StepReport train_step(const ModelArch& arch, std::vector<TeacherStudentPair>& pairs,
                             std::span<const FeatureGridSample* const> labeled,
                             std::span<const FeatureGridSample> unlabeled,
                             const std::vector<ThresholdSet>& thresholds, const TrainConfig& cfg,
                             std::uint64_t step_seed, const StepProbe* probe = nullptr) {
  if (labeled.empty()) throw ContractViolation("train_step: empty labeled batch");
  const bool use_unlabeled = !unlabeled.empty() && cfg.weights.beta > 0.0;
  if (use_unlabeled && thresholds.size() != pairs.size())
    throw ContractViolation("train_step: one ThresholdSet per teacher is required");
  StepReport rep;
  const double n_lab = static_cast<double>(labeled.size());
  const double n_unl = static_cast<double>(unlabeled.size());

  for (std::size_t k = 0; k < pairs.size(); ++k) {
    auto& pair = pairs[k];
    Rng lab_rng(derive_seed(step_seed, k, 1));
    Rng unl_rng(derive_seed(step_seed, k, 2));
    GradientVector grad = ParamVector::zeros(arch);
    double ls_cls = 0.0, ls_reg = 0.0, lu_cls = 0.0;

    for (const FeatureGridSample* s : labeled) {
      const auto aug = apply(cfg.strong_labeled, *s, lab_rng);
      const auto fp = forward_pass(arch, pair.student, aug.sample);
      const auto targets = build_train_targets(fp.raw, aug.sample.annotations, cfg.cls_cost_weight);
      const auto r = backward(arch, pair.student, fp, targets, 1.0 / n_lab, cfg.weights.lambda / n_lab);
      add_into(grad, r.grad);
      ls_cls += r.cls / n_lab;
      ls_reg += r.reg / n_lab;
    }

    int source_id = 0;
    std::size_t pseudo_total = 0;
    if (use_unlabeled) {
      const std::size_t src = cfg.toggles.co_teaching && pairs.size() == 2 ? 1 - k : k;
      const auto& teacher_pair = pairs[src];
      if (!teacher_pair.teacher) throw ContractViolation("train_step: unlabeled batch before SSL start");
      source_id = teacher_pair.id;
      GradientVector ugrad = ParamVector::zeros(arch);
      bool contributed = false;
      for (const auto& u : unlabeled) {
        const auto weak = apply(cfg.weak, u, unl_rng);
        const auto strong = apply(cfg.strong_unlabeled, u, unl_rng);
        auto pseudo = generate_pseudo_labels(arch, *teacher_pair.teacher, teacher_pair.id, weak.sample,
                                             weak.record, thresholds[src]);
        if (probe && probe->on_pseudo_labels) probe->on_pseudo_labels(pair.id, pseudo);
        if (pseudo.points.empty()) continue;
        pseudo_total += pseudo.points.size();
        const auto pts = transfer_points(pseudo.points, GeometricRecord{u.dims(), {}}, strong.record, u.dims());
        const auto fp = forward_pass(arch, pair.student, strong.sample);
        // Pseudo locations are noisy: classification targets only.
        const auto targets = build_train_targets(fp.raw, pts, cfg.cls_cost_weight, /*regress=*/false);
        const auto r = backward(arch, pair.student, fp, targets, cfg.weights.beta / n_unl, 0.0);
        add_into(ugrad, r.grad);
        lu_cls += r.cls / n_unl;
        contributed = true;
      }
      if (probe && probe->on_unlabeled_gradient) probe->on_unlabeled_gradient(pair.id, ugrad);
      if (contributed) add_into(grad, ugrad);
    }

    const auto terms = make_terms(ls_cls, ls_reg, lu_cls, cfg.weights);
    if (!std::isfinite(terms.total))
      throw NumericalError("non-finite loss for student " + std::to_string(pair.id) +
                           " (ls_cls=" + std::to_string(ls_cls) + ", ls_reg=" + std::to_string(ls_reg) +
                           ", lu_cls=" + std::to_string(lu_cls) + ")");
    optimizer_step(pair.optimizer, pair.student, grad, cfg.optimizer);
    rep.terms.push_back(terms);
    rep.pseudo_source.push_back(source_id);
    rep.pseudo_points.push_back(pseudo_total);
  }

  for (auto& pair : pairs)
    if (pair.teacher) ema_update(*pair.teacher, pair.student, cfg.alpha);
  return rep;
}

inline std::vector<std::vector<PointPrediction>> predict(const ModelArch& arch, const ParamVector& params,
                                                         std::span<const FeatureGridSample> samples,
                                                         double min_score) {
  std::vector<std::vector<PointPrediction>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(decode(forward(arch, params, s), min_score));
  return out;
}

inline MetricsReport evaluate_model(const ModelArch& arch, const ParamVector& params,
                                    std::span<const FeatureGridSample> samples, double min_score,
                                    double distance_threshold) {
  std::vector<std::vector<PointAnnotation>> gts;
  gts.reserve(samples.size());
  for (const auto& s : samples) gts.push_back(s.annotations);
  return evaluate(predict(arch, params, samples, min_score), gts, distance_threshold, arch.num_classes);
}

struct TeacherEpochStats {
  int teacher_id = 0;
  std::vector<double> thresholds;
  std::vector<std::size_t> target_counts;
  std::vector<char> floor_active;
  std::vector<char> disabled;
  std::vector<std::size_t> pseudo_counts;  // retained over the canonical pool
  std::optional<ImbalanceRatio> pseudo_imbalance;
  std::vector<double> pseudo_precision;  // diagnostics only; empty without hidden labels
  std::vector<double> pseudo_coverage;
};

struct ModelEval {
  int pair_id = 0;
  bool is_teacher = false;
  MetricsReport validation;
};

struct EpochRecord {
  int epoch = 0;
  bool ssl_phase = false;
  std::vector<LossTerms> student_losses;  // mean over the epoch's steps
  std::vector<TeacherEpochStats> teachers;
  std::vector<ModelEval> evals;
};

struct TrainingResult {
  std::vector<TeacherStudentPair> pairs;
  std::vector<EpochRecord> history;
  int selected_pair = 1;
  bool selected_is_teacher = false;
  ParamVector selected;
};

// Hidden ground truth of the unlabeled pool, used only to score pseudo labels.
struct TrainingDiagnostics {
  const std::vector<std::vector<PointAnnotation>>* hidden_unlabeled = nullptr;
};

inline std::size_t steps_per_epoch(std::size_t n_labeled, std::size_t n_unlabeled, const TrainConfig& cfg) {
  if (cfg.n_u > 0 && n_unlabeled > 0)
    return (n_unlabeled + static_cast<std::size_t>(cfg.n_u) - 1) / static_cast<std::size_t>(cfg.n_u);
  return (n_labeled + static_cast<std::size_t>(cfg.n_l) - 1) / static_cast<std::size_t>(cfg.n_l);
}

// Burn-in on labeled data, then (with tsml) teacher-student training on
// labeled + unlabeled batches. Every epoch has the same number of steps, set
// by one pass over the unlabeled pool, so a supervised baseline and an SSL run
// on the same split take the same number of optimiser steps.
inline TrainingResult run_training(const DatasetSplit& split, const ModelArch& arch, const TrainConfig& cfg,
                                   const TrainingDiagnostics& diag = {}) {
  cfg.validate();
  arch.validate();
  if (split.labeled.empty()) throw ConfigError("run_training: the labeled set is empty");
  if (arch.num_classes != split.config.num_classes || arch.feature_dim != split.config.feature_dim)
    throw ConfigError("arch num_classes/feature_dim do not match the dataset");

  const auto pool = split.unlabeled_view();
  const std::size_t n_lab = split.labeled.size(), n_unl = pool.size();
  const bool ssl = cfg.toggles.tsml;
  const std::size_t n_pairs = ssl && cfg.toggles.co_teaching ? 2 : 1;
  const auto labeled_counts = class_counts(split.labeled, arch.num_classes);
  const std::size_t steps = steps_per_epoch(n_lab, n_unl, cfg);

  TrainingResult res;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    TeacherStudentPair p;
    p.id = static_cast<int>(k) + 1;
    p.student = init_params(arch, cfg.seed + k);
    p.optimizer = AdamState::zeros(p.student.size());
    res.pairs.push_back(std::move(p));
  }

  std::vector<const FeatureGridSample*> lab_batch;
  std::vector<FeatureGridSample> unl_batch;
  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const bool ssl_phase = epoch >= cfg.burn_in_epochs;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.ssl_phase = ssl_phase;

    std::vector<ThresholdSet> thresholds;
    if (ssl && ssl_phase) {
      for (auto& p : res.pairs)
        if (!p.teacher) p.teacher = p.student;
      for (const auto& p : res.pairs) {
        const auto scan = scan_pool(arch, *p.teacher, pool);
        auto ts = cfg.toggles.dist_align
                      ? thresholds_from_predictions(scan, labeled_counts, n_lab, n_unl, cfg.t_floor)
                      : ThresholdSet::global(arch.num_classes, cfg.global_threshold);
        const auto kept = retain_pool(scan, ts, p.id);
        TeacherEpochStats st;
        st.teacher_id = p.id;
        st.thresholds = ts.t;
        st.target_counts = ts.target_counts;
        st.floor_active = ts.floor_active;
        st.disabled = ts.disabled;
        st.pseudo_counts = kept.class_counts(arch.num_classes);
        if (std::any_of(st.pseudo_counts.begin(), st.pseudo_counts.end(), [](auto c) { return c > 0; }))
          st.pseudo_imbalance = imbalance_ratio(st.pseudo_counts);
        if (diag.hidden_unlabeled) {
          const auto q = pseudo_label_quality(kept.points, *diag.hidden_unlabeled, cfg.distance_threshold,
                                              arch.num_classes);
          st.pseudo_precision = q.precision;
          st.pseudo_coverage = q.coverage;
        }
        rec.teachers.push_back(std::move(st));
        thresholds.push_back(std::move(ts));
      }
    }

    std::vector<std::size_t> order(n_unl);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(cfg.seed, 0x0DE5, epoch));
    order_rng.shuffle(order);

    std::vector<LossTerms> sums(n_pairs);
    for (std::size_t step = 0; step < steps; ++step) {
      Rng batch_rng(derive_seed(cfg.seed, 0xBA7C, epoch, step));
      lab_batch.clear();
      for (int i = 0; i < cfg.n_l; ++i) lab_batch.push_back(&split.labeled[batch_rng.index(n_lab)]);
      unl_batch.clear();
      if (ssl && ssl_phase) {
        const std::size_t begin = step * static_cast<std::size_t>(cfg.n_u);
        for (std::size_t i = begin; i < std::min(n_unl, begin + static_cast<std::size_t>(cfg.n_u)); ++i)
          unl_batch.push_back(pool.stripped(order[i]));
      }
      StepReport sr;
      try {
        sr = train_step(arch, res.pairs, lab_batch, unl_batch, thresholds, cfg,
                        derive_seed(cfg.seed, 0x57E9, epoch, step));
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ": " +
                             e.what());
      }
      for (std::size_t k = 0; k < n_pairs; ++k) {
        sums[k].ls_cls += sr.terms[k].ls_cls;
        sums[k].ls_reg += sr.terms[k].ls_reg;
        sums[k].lu_cls += sr.terms[k].lu_cls;
        sums[k].total += sr.terms[k].total;
      }
    }
    for (auto& s : sums) {
      const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(steps, 1));
      s.ls_cls *= inv;
      s.ls_reg *= inv;
      s.lu_cls *= inv;
      s.total *= inv;
    }
    rec.student_losses = std::move(sums);

    for (const auto& p : res.pairs)
      rec.evals.push_back({p.id, p.teacher.has_value(),
                           evaluate_model(arch, p.evaluated(), split.validation, cfg.eval_min_score,
                                          cfg.distance_threshold)});
    res.history.push_back(std::move(rec));
  }

  // Highest final-epoch validation classification F1; ties go to pair 1.
  std::size_t best = 0;
  if (!res.history.empty()) {
    const auto& evals = res.history.back().evals;
    for (std::size_t k = 1; k < evals.size(); ++k)
      if (evals[k].validation.classification.f1 > evals[best].validation.classification.f1) best = k;
  }
  res.selected_pair = res.pairs[best].id;
  res.selected_is_teacher = res.pairs[best].teacher.has_value();
  res.selected = res.pairs[best].evaluated();
  return res;
}

}  // namespace sspcr
