#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sspcr/binary_io.hpp"
#include "sspcr/data.hpp"
#include "sspcr/error.hpp"
#include "sspcr/loss.hpp"
#include "sspcr/random.hpp"

namespace sspcr {

// Per-anchor point-proposal recognizer. Each anchor owns a stride x stride
// cell of the grid; its receptive window is that cell widened by patch_radius
// pixels on every side (zero padded at the borders). The window is flattened
// into a tanh hidden layer feeding two linear heads: num_classes + 1 logits
// (the last one is background) and a (dx, dy) offset in pixels.
struct ModelArch {
  int anchor_stride = 2;
  int patch_radius = 1;
  int hidden_width = 16;
  int num_classes = 3;
  int feature_dim = 4;

  int window() const { return anchor_stride + 2 * patch_radius; }
  int num_outputs() const { return num_classes + 1; }
  int background() const { return num_classes; }
  std::size_t input_size() const {
    return static_cast<std::size_t>(window()) * window() * feature_dim;
  }

  void validate() const {
    if (anchor_stride < 1) throw ConfigError("arch.anchor_stride must be >= 1");
    if (patch_radius < 0) throw ConfigError("arch.patch_radius must be >= 0");
    if (hidden_width < 1) throw ConfigError("arch.hidden_width must be >= 1");
    if (num_classes < 1) throw ConfigError("arch.num_classes must be >= 1");
    if (feature_dim < 1) throw ConfigError("arch.feature_dim must be >= 1");
  }

  friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

// Offsets of each parameter block inside the flat vector.
struct ParamLayout {
  std::size_t w_hidden = 0, b_hidden = 0, w_cls = 0, b_cls = 0, w_off = 0, b_off = 0, total = 0;

  explicit ParamLayout(const ModelArch& a) {
    const std::size_t in = a.input_size(), h = static_cast<std::size_t>(a.hidden_width);
    const std::size_t k = static_cast<std::size_t>(a.num_outputs());
    w_hidden = 0;
    b_hidden = w_hidden + h * in;
    w_cls = b_hidden + h;
    b_cls = w_cls + k * h;
    w_off = b_cls + k;
    b_off = w_off + 2 * h;
    total = b_off + 2;
  }

  // [w_off, total): the block only the regression loss reaches.
  std::size_t regression_begin() const { return w_off; }
  std::size_t regression_end() const { return total; }
};

inline std::uint64_t layout_hash(const ModelArch& a) {
  const std::string key = "patch-mlp/1:" + std::to_string(a.input_size()) + ":" +
                          std::to_string(a.hidden_width) + ":" + std::to_string(a.num_outputs());
  return io::fnv1a(key);
}

// Flat parameter (or gradient) vector tagged with the layout it was built for.
struct ParamVector {
  std::uint64_t layout = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  bool compatible(const ParamVector& o) const {
    return layout == o.layout && values.size() == o.values.size();
  }

  static ParamVector zeros(const ModelArch& a) {
    return {layout_hash(a), std::vector<double>(ParamLayout(a).total, 0.0)};
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

using GradientVector = ParamVector;

inline void require_compatible(const ParamVector& a, const ParamVector& b, const char* where) {
  if (!a.compatible(b)) throw ContractViolation(std::string(where) + ": parameter layout mismatch");
}

inline void require_finite(const ParamVector& p, const char* what) {
  for (std::size_t i = 0; i < p.values.size(); ++i)
    if (!std::isfinite(p.values[i]))
      throw NumericalError(std::string(what) + " has a non-finite entry at index " + std::to_string(i));
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline ParamVector init_params(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  const ParamLayout L(arch);
  ParamVector p = ParamVector::zeros(arch);
  Rng rng(derive_seed(seed, 0x1417));
  auto fill = [&](std::size_t begin, std::size_t end, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = begin; i < end; ++i) p.values[i] = rng.uniform(-bound, bound);
  };
  fill(L.w_hidden, L.b_hidden, arch.input_size());
  fill(L.w_cls, L.b_cls, static_cast<std::size_t>(arch.hidden_width));
  fill(L.w_off, L.b_off, static_cast<std::size_t>(arch.hidden_width));
  return p;
}

struct AnchorGrid {
  int rows = 0;
  int cols = 0;
  int stride = 1;
  GridDims dims;

  AnchorGrid(GridDims d, int s)
      : rows((d.height + s - 1) / s), cols((d.width + s - 1) / s), stride(s), dims(d) {}

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }

  // Centre of the anchor's cell, kept on the grid.
  double base_x(std::size_t a) const {
    const int col = static_cast<int>(a % static_cast<std::size_t>(cols));
    return std::min(col * stride + (stride - 1) / 2.0, dims.width - 1.0);
  }
  double base_y(std::size_t a) const {
    const int row = static_cast<int>(a / static_cast<std::size_t>(cols));
    return std::min(row * stride + (stride - 1) / 2.0, dims.height - 1.0);
  }
};

struct RawPredictions {
  GridDims dims;
  int num_outputs = 0;
  std::vector<double> logits;   // [anchor][num_outputs]
  std::vector<double> offsets;  // [anchor][dx, dy]
  std::vector<double> anchor_x;
  std::vector<double> anchor_y;

  std::size_t num_anchors() const { return anchor_x.size(); }
  int background() const { return num_outputs - 1; }

  std::vector<double> probabilities(std::size_t a) const {
    std::vector<double> p(static_cast<std::size_t>(num_outputs));
    const double* z = logits.data() + a * num_outputs;
    const double zmax = *std::max_element(z, z + num_outputs);
    double sum = 0.0;
    for (int k = 0; k < num_outputs; ++k) sum += (p[k] = std::exp(z[k] - zmax));
    for (auto& v : p) v /= sum;
    return p;
  }

  double point_x(std::size_t a) const { return anchor_x[a] + offsets[2 * a]; }
  double point_y(std::size_t a) const { return anchor_y[a] + offsets[2 * a + 1]; }
};

// Forward activations kept for the backward pass.
struct ForwardPass {
  RawPredictions raw;
  std::vector<double> patches;  // [anchor][input_size]
  std::vector<double> hidden;   // [anchor][hidden_width], post-tanh
};

inline void require_dims(const ModelArch& arch, const FeatureGridSample& s) {
  if (s.channels != arch.feature_dim)
    throw ContractViolation("model: sample feature_dim " + std::to_string(s.channels) +
                            " does not match arch feature_dim " + std::to_string(arch.feature_dim));
  if (s.features.size() != static_cast<std::size_t>(s.height) * s.width * s.channels)
    throw ContractViolation("model: feature buffer size does not match sample dims");
}

inline ForwardPass forward_pass(const ModelArch& arch, const ParamVector& params,
                                const FeatureGridSample& sample) {
  require_dims(arch, sample);
  const ParamLayout L(arch);
  if (params.layout != layout_hash(arch) || params.values.size() != L.total)
    throw ContractViolation("forward: parameter vector does not match arch");
  const AnchorGrid grid(sample.dims(), arch.anchor_stride);
  const std::size_t n = grid.size(), in = arch.input_size();
  const int hw = arch.hidden_width, k_out = arch.num_outputs(), win = arch.window();
  const int ch = sample.channels;

  ForwardPass f;
  f.raw.dims = sample.dims();
  f.raw.num_outputs = k_out;
  f.raw.logits.assign(n * k_out, 0.0);
  f.raw.offsets.assign(n * 2, 0.0);
  f.raw.anchor_x.resize(n);
  f.raw.anchor_y.resize(n);
  f.patches.assign(n * in, 0.0);
  f.hidden.assign(n * hw, 0.0);

  const double* w = params.values.data();
  for (std::size_t a = 0; a < n; ++a) {
    f.raw.anchor_x[a] = grid.base_x(a);
    f.raw.anchor_y[a] = grid.base_y(a);
    const int row = static_cast<int>(a / grid.cols), col = static_cast<int>(a % grid.cols);
    const int y0 = row * arch.anchor_stride - arch.patch_radius;
    const int x0 = col * arch.anchor_stride - arch.patch_radius;
    double* x = f.patches.data() + a * in;
    for (int dy = 0; dy < win; ++dy) {
      const int y = y0 + dy;
      if (y < 0 || y >= sample.height) continue;
      for (int dx = 0; dx < win; ++dx) {
        const int xx = x0 + dx;
        if (xx < 0 || xx >= sample.width) continue;
        const float* src = sample.features.data() + sample.index(y, xx, 0);
        double* dst = x + (static_cast<std::size_t>(dy) * win + dx) * ch;
        for (int c = 0; c < ch; ++c) dst[c] = src[c];
      }
    }
    double* h = f.hidden.data() + a * hw;
    for (int j = 0; j < hw; ++j) {
      const double* row_w = w + L.w_hidden + static_cast<std::size_t>(j) * in;
      double acc = w[L.b_hidden + j];
      for (std::size_t i = 0; i < in; ++i) acc += row_w[i] * x[i];
      h[j] = std::tanh(acc);
    }
    double* z = f.raw.logits.data() + a * k_out;
    for (int k = 0; k < k_out; ++k) {
      const double* row_w = w + L.w_cls + static_cast<std::size_t>(k) * hw;
      double acc = w[L.b_cls + k];
      for (int j = 0; j < hw; ++j) acc += row_w[j] * h[j];
      z[k] = acc;
    }
    for (int k = 0; k < 2; ++k) {
      const double* row_w = w + L.w_off + static_cast<std::size_t>(k) * hw;
      double acc = w[L.b_off + k];
      for (int j = 0; j < hw; ++j) acc += row_w[j] * h[j];
      f.raw.offsets[a * 2 + k] = acc;
    }
  }
  return f;
}

inline RawPredictions forward(const ModelArch& arch, const ParamVector& params,
                              const FeatureGridSample& sample) {
  return forward_pass(arch, params, sample).raw;
}

// Per-anchor training targets. `cls` indexes [0, num_classes] with
// num_classes meaning background; offsets are only used where `regress` is set.
struct AnchorTargets {
  std::vector<int> cls;
  std::vector<double> offsets;  // [anchor][dx, dy]
  std::vector<char> regress;

  static AnchorTargets background(std::size_t n, int background_class) {
    return {std::vector<int>(n, background_class), std::vector<double>(2 * n, 0.0),
            std::vector<char>(n, 0)};
  }
  std::size_t size() const { return cls.size(); }
};

struct ForwardBackwardResult {
  double cls = 0.0;
  double reg = 0.0;
  GradientVector grad;
};

// Gradient of cls_weight * cls_loss + reg_weight * reg_loss. The regression
// loss only sees anchors with regress set and a foreground class.
inline ForwardBackwardResult backward(const ModelArch& arch, const ParamVector& params,
                                      const ForwardPass& f, const AnchorTargets& targets,
                                      double cls_weight, double reg_weight) {
  const std::size_t n = f.raw.num_anchors();
  if (targets.size() != n || targets.offsets.size() != 2 * n || targets.regress.size() != n)
    throw ContractViolation("forward_backward: targets do not match the anchor grid");
  const ParamLayout L(arch);
  const std::size_t in = arch.input_size();
  const int hw = arch.hidden_width, k_out = arch.num_outputs();

  ForwardBackwardResult r;
  r.grad = ParamVector::zeros(arch);
  auto cls = cls_loss(f.raw.logits, targets.cls, k_out);
  r.cls = cls.value;
  if (!std::isfinite(r.cls)) throw NumericalError("non-finite classification loss");

  std::vector<std::size_t> fg;
  std::vector<double> pred_off, tgt_off;
  for (std::size_t a = 0; a < n; ++a) {
    if (targets.regress[a] && targets.cls[a] != arch.background()) {
      fg.push_back(a);
      pred_off.insert(pred_off.end(), {f.raw.offsets[2 * a], f.raw.offsets[2 * a + 1]});
      tgt_off.insert(tgt_off.end(), {targets.offsets[2 * a], targets.offsets[2 * a + 1]});
    }
  }
  auto reg = reg_loss(pred_off, tgt_off);
  r.reg = reg.value;
  if (!std::isfinite(r.reg)) throw NumericalError("non-finite regression loss");

  std::vector<double> d_off(2 * n, 0.0);
  if (reg_weight != 0.0)
    for (std::size_t i = 0; i < fg.size(); ++i) {
      d_off[2 * fg[i]] = reg_weight * reg.grad[2 * i];
      d_off[2 * fg[i] + 1] = reg_weight * reg.grad[2 * i + 1];
    }

  const double* w = params.values.data();
  double* g = r.grad.values.data();
  std::vector<double> dh(static_cast<std::size_t>(hw));
  for (std::size_t a = 0; a < n; ++a) {
    const double* h = f.hidden.data() + a * hw;
    const double* dz = cls.grad.data() + a * k_out;
    std::fill(dh.begin(), dh.end(), 0.0);
    if (cls_weight != 0.0) {
      for (int k = 0; k < k_out; ++k) {
        const double gk = cls_weight * dz[k];
        if (gk == 0.0) continue;
        g[L.b_cls + k] += gk;
        double* gw = g + L.w_cls + static_cast<std::size_t>(k) * hw;
        const double* ww = w + L.w_cls + static_cast<std::size_t>(k) * hw;
        for (int j = 0; j < hw; ++j) {
          gw[j] += gk * h[j];
          dh[j] += gk * ww[j];
        }
      }
    }
    for (int k = 0; k < 2; ++k) {
      const double gk = d_off[2 * a + k];
      if (gk == 0.0) continue;
      g[L.b_off + k] += gk;
      double* gw = g + L.w_off + static_cast<std::size_t>(k) * hw;
      const double* ww = w + L.w_off + static_cast<std::size_t>(k) * hw;
      for (int j = 0; j < hw; ++j) {
        gw[j] += gk * h[j];
        dh[j] += gk * ww[j];
      }
    }
    const double* x = f.patches.data() + a * in;
    for (int j = 0; j < hw; ++j) {
      const double dpre = dh[j] * (1.0 - h[j] * h[j]);
      if (dpre == 0.0) continue;
      g[L.b_hidden + j] += dpre;
      double* gw = g + L.w_hidden + static_cast<std::size_t>(j) * in;
      for (std::size_t i = 0; i < in; ++i) gw[i] += dpre * x[i];
    }
  }
  return r;
}

inline ForwardBackwardResult forward_backward(const ModelArch& arch, const ParamVector& params,
                                              const FeatureGridSample& sample,
                                              const AnchorTargets& targets, double cls_weight,
                                              double reg_weight) {
  return backward(arch, params, forward_pass(arch, params, sample), targets, cls_weight, reg_weight);
}

// AdamW with bias correction and decoupled weight decay.
struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-2;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamState zeros(std::size_t n) { return {0, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline void optimizer_step(AdamState& state, ParamVector& params, const GradientVector& grads,
                           const AdamOptions& opt) {
  require_compatible(params, grads, "optimizer_step");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractViolation("optimizer_step: optimizer state does not match parameters");
  require_finite(grads, "gradient");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  const double decay = 1.0 - opt.lr * opt.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads.values[i];
    double& p = params.values[i];
    p *= decay;
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    p -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
  }
}

struct PointPrediction {
  double x = 0.0;
  double y = 0.0;
  std::uint16_t class_id = 0;
  double score = 0.0;
};

inline PointAnnotation to_annotation(const PointPrediction& p) {
  return {static_cast<float>(p.x), static_cast<float>(p.y), p.class_id};
}

// Foreground argmax per anchor, kept if its probability exceeds min_score.
// Points are clamped to the grid and snapped to the coordinate lattice.
inline std::vector<PointPrediction> decode(const RawPredictions& raw, double min_score) {
  std::vector<PointPrediction> out;
  const int classes = raw.num_outputs - 1;
  for (std::size_t a = 0; a < raw.num_anchors(); ++a) {
    const auto p = raw.probabilities(a);
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (p[c] > p[best]) best = c;
    if (!(p[best] > min_score)) continue;
    PointPrediction pp;
    pp.x = quantize_coordinate(std::clamp(raw.point_x(a), 0.0, raw.dims.width - 1.0));
    pp.y = quantize_coordinate(std::clamp(raw.point_y(a), 0.0, raw.dims.height - 1.0));
    pp.class_id = static_cast<std::uint16_t>(best);
    pp.score = p[best];
    out.push_back(pp);
  }
  return out;
}

}  // namespace sspcr
