#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sspcr/error.hpp"

namespace sspcr {

// Weights of the composite objective
//   total = ls_cls + lambda * ls_reg + beta * lu_cls.
struct LossWeights {
  double lambda = 2e-3;
  double beta = 1.0;

  void validate() const {
    if (!(lambda >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }
};

struct LossTerms {
  double ls_cls = 0.0;
  double ls_reg = 0.0;
  double lu_cls = 0.0;
  double total = 0.0;
};

inline double total_loss(const LossTerms& t, const LossWeights& w) {
  return t.ls_cls + w.lambda * t.ls_reg + w.beta * t.lu_cls;
}

inline LossTerms make_terms(double ls_cls, double ls_reg, double lu_cls, const LossWeights& w) {
  LossTerms t{ls_cls, ls_reg, lu_cls, 0.0};
  t.total = total_loss(t, w);
  return t;
}

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // same shape as the prediction input
};

// Softmax cross-entropy averaged over anchors. `logits` is row-major
// [anchor][class] with `num_outputs` columns.
inline LossValue cls_loss(std::span<const double> logits, std::span<const int> targets,
                          int num_outputs) {
  const std::size_t n = targets.size();
  if (logits.size() != n * static_cast<std::size_t>(num_outputs))
    throw ContractViolation("cls_loss: logits/targets size mismatch");
  LossValue out{0.0, std::vector<double>(logits.size(), 0.0)};
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < n; ++a) {
    const int t = targets[a];
    if (t < 0 || t >= num_outputs) throw ContractViolation("cls_loss: target class out of range");
    const double* z = logits.data() + a * num_outputs;
    double zmax = z[0];
    for (int k = 1; k < num_outputs; ++k) zmax = std::max(zmax, z[k]);
    double denom = 0.0;
    for (int k = 0; k < num_outputs; ++k) denom += std::exp(z[k] - zmax);
    const double log_denom = std::log(denom);
    out.value += (log_denom - (z[t] - zmax)) * inv_n;
    double* g = out.grad.data() + a * num_outputs;
    for (int k = 0; k < num_outputs; ++k) {
      const double p = std::exp(z[k] - zmax - log_denom);
      g[k] = (p - (k == t ? 1.0 : 0.0)) * inv_n;
    }
  }
  return out;
}

// Squared euclidean offset error per point, averaged over points. Inputs are
// interleaved (dx, dy) pairs.
inline LossValue reg_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.size() % 2 != 0)
    throw ContractViolation("reg_loss: offsets must be matching (dx, dy) pairs");
  LossValue out{0.0, std::vector<double>(pred.size(), 0.0)};
  const std::size_t count = pred.size() / 2;
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.value += d * d * inv;
    out.grad[i] = 2.0 * d * inv;
  }
  return out;
}

}  // namespace sspcr
