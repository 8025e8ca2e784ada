#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sspcr/data.hpp"
#include "sspcr/match.hpp"
#include "sspcr/model.hpp"

namespace sspcr {

// Precision, recall and F1 in percent.
struct PRF {
  double p = 0.0;
  double r = 0.0;
  double f1 = 0.0;
};

// 0/0 is taken as 0 for both precision and recall.
inline PRF prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF m;
  m.p = tp + fp > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.r = tp + fn > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.p + m.r > 0.0 ? 2.0 * m.p * m.r / (m.p + m.r) : 0.0;
  return m;
}

struct ClassMetrics {
  std::size_t tp = 0, fp = 0, fn = 0;
  PRF prf;
};

struct MetricsReport {
  PRF detection;
  PRF classification;  // macro over classes that have ground truth or predictions
  std::size_t det_tp = 0, det_fp = 0, det_fn = 0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::size_t> predictions_per_class;

  // Flat key/value view for CSV and JSON export.
  std::vector<std::pair<std::string, double>> flatten() const {
    std::vector<std::pair<std::string, double>> kv{
        {"det_p", detection.p},        {"det_r", detection.r},        {"det_f1", detection.f1},
        {"cls_p", classification.p},   {"cls_r", classification.r},   {"cls_f1", classification.f1},
        {"det_tp", double(det_tp)},    {"det_fp", double(det_fp)},    {"det_fn", double(det_fn)}};
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      const auto k = "class" + std::to_string(c) + "_";
      const auto& m = per_class[c];
      kv.emplace_back(k + "tp", double(m.tp));
      kv.emplace_back(k + "fp", double(m.fp));
      kv.emplace_back(k + "fn", double(m.fn));
      kv.emplace_back(k + "p", m.prf.p);
      kv.emplace_back(k + "r", m.prf.r);
      kv.emplace_back(k + "f1", m.prf.f1);
      kv.emplace_back(k + "predictions", double(predictions_per_class[c]));
    }
    return kv;
  }
};

// Counts are pooled over the whole set before computing P/R/F1; per-image
// averaging is not used.
inline MetricsReport evaluate(const std::vector<std::vector<PointPrediction>>& preds,
                              const std::vector<std::vector<PointAnnotation>>& gts,
                              double distance_threshold, int num_classes) {
  if (preds.size() != gts.size()) throw ContractViolation("evaluate: prediction/ground-truth sample count mismatch");
  MetricsReport rep;
  rep.per_class.resize(static_cast<std::size_t>(num_classes));
  rep.predictions_per_class.assign(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto& ps = preds[s];
    const auto& gs = gts[s];
    const auto det = eval_match(ps, gs, distance_threshold, false);
    rep.det_tp += det.matched.size();
    rep.det_fp += det.unmatched_preds.size();
    rep.det_fn += det.unmatched_gts.size();

    const auto cls = eval_match(ps, gs, distance_threshold, true);
    for (const auto& p : ps) ++rep.predictions_per_class.at(p.class_id);
    for (const auto& [i, j] : cls.matched) ++rep.per_class[gs[j].class_id].tp;
    for (auto i : cls.unmatched_preds) ++rep.per_class[ps[i].class_id].fp;
    for (auto j : cls.unmatched_gts) ++rep.per_class.at(gs[j].class_id).fn;
  }
  rep.detection = prf_from_counts(rep.det_tp, rep.det_fp, rep.det_fn);
  std::size_t eligible = 0;
  for (auto& m : rep.per_class) {
    m.prf = prf_from_counts(m.tp, m.fp, m.fn);
    if (m.tp + m.fp + m.fn == 0) continue;
    ++eligible;
    rep.classification.p += m.prf.p;
    rep.classification.r += m.prf.r;
    rep.classification.f1 += m.prf.f1;
  }
  if (eligible > 0) {
    rep.classification.p /= static_cast<double>(eligible);
    rep.classification.r /= static_cast<double>(eligible);
    rep.classification.f1 /= static_cast<double>(eligible);
  }
  return rep;
}

struct ImbalanceRatio {
  double ratio = 1.0;          // +inf when some class has zero count
  double nonzero_ratio = 1.0;  // max over min nonzero count
  bool has_zero = false;
};

inline ImbalanceRatio imbalance_ratio(std::span<const std::size_t> counts) {
  std::size_t hi = 0, lo_nonzero = std::numeric_limits<std::size_t>::max();
  bool zero = false;
  for (auto c : counts) {
    hi = std::max(hi, c);
    if (c == 0)
      zero = true;
    else
      lo_nonzero = std::min(lo_nonzero, c);
  }
  if (hi == 0) throw ContractViolation("imbalance_ratio: all class counts are zero");
  ImbalanceRatio r;
  r.has_zero = zero;
  r.nonzero_ratio = static_cast<double>(hi) / static_cast<double>(lo_nonzero);
  r.ratio = zero ? std::numeric_limits<double>::infinity() : r.nonzero_ratio;
  return r;
}

inline ImbalanceRatio imbalance_ratio(const std::vector<std::size_t>& counts) {
  return imbalance_ratio(std::span<const std::size_t>(counts));
}

struct PseudoLabelQuality {
  std::vector<double> precision;  // percent per class; 0 when the class has no pseudo points
  std::vector<double> coverage;   // percent of hidden points matched per class
  std::vector<std::size_t> counts;
  std::optional<ImbalanceRatio> imbalance;  // absent when the pseudo set is empty
};

inline PseudoLabelQuality pseudo_label_quality(const std::vector<std::vector<PointAnnotation>>& pseudo,
                                               const std::vector<std::vector<PointAnnotation>>& hidden,
                                               double distance_threshold, int num_classes) {
  if (pseudo.size() != hidden.size()) throw ContractViolation("pseudo_label_quality: sample count mismatch");
  const auto nc = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> tp(nc, 0), n_pseudo(nc, 0), n_hidden(nc, 0), covered(nc, 0);
  for (std::size_t s = 0; s < pseudo.size(); ++s) {
    const auto m = eval_match(pseudo[s], hidden[s], distance_threshold, true);
    for (const auto& p : pseudo[s]) ++n_pseudo.at(p.class_id);
    for (const auto& h : hidden[s]) ++n_hidden.at(h.class_id);
    for (const auto& [i, j] : m.matched) {
      ++tp[pseudo[s][i].class_id];
      ++covered[hidden[s][j].class_id];
    }
  }
  PseudoLabelQuality q;
  q.counts = n_pseudo;
  for (std::size_t c = 0; c < nc; ++c) {
    q.precision.push_back(n_pseudo[c] ? 100.0 * double(tp[c]) / double(n_pseudo[c]) : 0.0);
    q.coverage.push_back(n_hidden[c] ? 100.0 * double(covered[c]) / double(n_hidden[c]) : 0.0);
  }
  if (std::any_of(n_pseudo.begin(), n_pseudo.end(), [](auto c) { return c > 0; }))
    q.imbalance = imbalance_ratio(n_pseudo);
  return q;
}

}  // namespace sspcr
