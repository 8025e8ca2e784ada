#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "sspcr/data.hpp"
#include "sspcr/error.hpp"
#include "sspcr/model.hpp"

namespace sspcr {

struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  CostMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows = init.size();
    cols = rows ? init.begin()->size() : 0;
    for (const auto& row : init) {
      if (row.size() != cols) throw ContractViolation("CostMatrix: ragged initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double total_cost = 0.0;
};

namespace detail {

// Shortest augmenting path Hungarian method with potentials, O(n^2 m) for
// n <= m. Rows are inserted in index order and columns scanned in index order,
// so equal-cost optima are resolved the same way on every run.
inline std::vector<std::size_t> hungarian_rows_le_cols(const CostMatrix& c) {
  const std::size_t n = c.rows, m = c.cols;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<double> minv(m + 1);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Minimum-cost assignment covering min(rows, cols) pairs.
inline Assignment hungarian(const CostMatrix& cost) {
  if (cost.data.size() != cost.rows * cost.cols) throw ContractViolation("hungarian: malformed cost matrix");
  for (double v : cost.data)
    if (!std::isfinite(v)) throw ContractViolation("hungarian: non-finite cost entry");
  Assignment out;
  if (cost.rows == 0 || cost.cols == 0) return out;
  if (cost.rows <= cost.cols) {
    const auto r2c = detail::hungarian_rows_le_cols(cost);
    for (std::size_t r = 0; r < r2c.size(); ++r) out.pairs.emplace_back(r, r2c[r]);
  } else {
    CostMatrix t(cost.cols, cost.rows);
    for (std::size_t r = 0; r < cost.rows; ++r)
      for (std::size_t c = 0; c < cost.cols; ++c) t(c, r) = cost(r, c);
    const auto c2r = detail::hungarian_rows_le_cols(t);
    for (std::size_t c = 0; c < c2r.size(); ++c) out.pairs.emplace_back(c2r[c], c);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (const auto& [r, c] : out.pairs) out.total_cost += cost(r, c);
  return out;
}

// Assigns every point to one anchor. Cost of (anchor, point) is the distance
// from the anchor's predicted point to the point plus cls_cost_weight times
// (1 - the anchor's probability for the point's class). Assigned anchors get the
// point's class and an offset target of point - anchor base.
inline AnchorTargets build_train_targets(const RawPredictions& raw,
                                         std::span<const PointAnnotation> points,
                                         double cls_cost_weight, bool regress = true) {
  const std::size_t n = raw.num_anchors();
  auto targets = AnchorTargets::background(n, raw.background());
  if (points.empty()) return targets;
  if (points.size() > n)
    throw ConfigError("more points (" + std::to_string(points.size()) + ") than anchors (" +
                      std::to_string(n) + "); the anchor grid is too coarse");
  CostMatrix cost(points.size(), n);
  std::vector<std::vector<double>> probs;
  probs.reserve(n);
  for (std::size_t a = 0; a < n; ++a) probs.push_back(raw.probabilities(a));
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (points[p].class_id >= raw.background())
      throw ContractViolation("build_train_targets: point class out of range");
    for (std::size_t a = 0; a < n; ++a) {
      const double dx = raw.point_x(a) - points[p].x, dy = raw.point_y(a) - points[p].y;
      cost(p, a) = std::sqrt(dx * dx + dy * dy) + cls_cost_weight * (1.0 - probs[a][points[p].class_id]);
    }
  }
  for (const auto& [p, a] : hungarian(cost).pairs) {
    targets.cls[a] = points[p].class_id;
    targets.offsets[2 * a] = points[p].x - raw.anchor_x[a];
    targets.offsets[2 * a + 1] = points[p].y - raw.anchor_y[a];
    targets.regress[a] = regress ? 1 : 0;
  }
  return targets;
}

struct EvalMatch {
  std::vector<std::pair<std::size_t, std::size_t>> matched;  // (pred, gt)
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;
};

// One-to-one matching that maximises the number of pairs within distance
// threshold (inclusive) and, among those, minimises total distance.
template <typename Pred>
EvalMatch eval_match(std::span<const Pred> preds, std::span<const PointAnnotation> gts,
                     double threshold, bool class_aware) {
  if (!(threshold > 0.0)) throw ContractViolation("eval_match: distance threshold must be > 0");
  EvalMatch out;
  const std::size_t n = preds.size(), m = gts.size();
  std::vector<char> pred_used(n, 0), gt_used(m, 0);
  auto feasible = [&](std::size_t i, std::size_t j, double& d) {
    const double dx = static_cast<double>(preds[i].x) - gts[j].x;
    const double dy = static_cast<double>(preds[i].y) - gts[j].y;
    d = std::sqrt(dx * dx + dy * dy);
    if (class_aware && preds[i].class_id != gts[j].class_id) return false;
    return d <= threshold;
  };
  if (n > 0 && m > 0) {
    // Forbidden pairs cost more than any complete set of feasible ones.
    const double forbidden = threshold * static_cast<double>(std::min(n, m) + 1) + 1.0;
    CostMatrix cost(n, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double d;
        cost(i, j) = feasible(i, j, d) ? d : forbidden;
      }
    for (const auto& [i, j] : hungarian(cost).pairs) {
      double d;
      if (!feasible(i, j, d)) continue;
      out.matched.emplace_back(i, j);
      pred_used[i] = gt_used[j] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!pred_used[i]) out.unmatched_preds.push_back(i);
  for (std::size_t j = 0; j < m; ++j)
    if (!gt_used[j]) out.unmatched_gts.push_back(j);
  return out;
}

template <typename Pred>
EvalMatch eval_match(const std::vector<Pred>& preds, const std::vector<PointAnnotation>& gts,
                     double threshold, bool class_aware) {
  return eval_match(std::span<const Pred>(preds), std::span<const PointAnnotation>(gts), threshold,
                    class_aware);
}

}  // namespace sspcr
