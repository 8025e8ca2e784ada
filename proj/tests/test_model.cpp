#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "sspcr/checkpoint.hpp"
#include "sspcr/data.hpp"
#include "sspcr/match.hpp"
#include "sspcr/model.hpp"

using namespace sspcr;

namespace {

ModelArch small_arch(int classes = 2, int dim = 4, int hidden = 5) {
  ModelArch a;
  a.anchor_stride = 2;
  a.patch_radius = 1;
  a.hidden_width = hidden;
  a.num_classes = classes;
  a.feature_dim = dim;
  return a;
}

FeatureGridSample random_sample(int h, int w, int d, std::uint64_t seed) {
  Rng rng(seed);
  FeatureGridSample s{seed, h, w, d, std::vector<float>(static_cast<std::size_t>(h * w * d)), {}};
  for (auto& f : s.features) f = static_cast<float>(rng.normal());
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(Init, DeterministicAndSeedSensitive) {
  const auto arch = small_arch();
  const auto a = init_params(arch, 1), b = init_params(arch, 1), c = init_params(arch, 2);
  EXPECT_EQ(a, b);
  const ParamLayout L(arch);
  std::size_t weights = 0, differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool bias = (i >= L.b_hidden && i < L.w_cls) || (i >= L.b_cls && i < L.w_off) || i >= L.b_off;
    if (bias) {
      EXPECT_EQ(a.values[i], 0.0);
      continue;
    }
    ++weights;
    differ += a.values[i] != c.values[i];
  }
  EXPECT_GE(static_cast<double>(differ), 0.99 * static_cast<double>(weights));
}

TEST(Forward, ZeroParamsGiveUniformSoftmaxAndAnchorPoints) {
  const auto arch = small_arch(2);
  const auto raw = forward(arch, ParamVector::zeros(arch), random_sample(7, 9, 4, 3));
  const AnchorGrid grid({7, 9}, 2);
  ASSERT_EQ(raw.num_anchors(), 4u * 5u);
  ASSERT_EQ(raw.num_anchors(), grid.size());
  for (std::size_t a = 0; a < raw.num_anchors(); ++a) {
    for (double p : raw.probabilities(a)) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
    EXPECT_EQ(raw.point_x(a), raw.anchor_x[a]);
    EXPECT_EQ(raw.point_y(a), raw.anchor_y[a]);
    EXPECT_GE(raw.anchor_x[a], 0.0);
    EXPECT_LE(raw.anchor_x[a], 8.0);
    EXPECT_LE(raw.anchor_y[a], 6.0);
  }
}

TEST(Forward, SoftmaxSumsToOneAndIsDeterministic) {
  const auto arch = small_arch(3, 3, 7);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = init_params(arch, seed);
    for (auto& v : p.values) v *= 4.0;
    const auto s = random_sample(8, 8, 3, seed + 100);
    const auto r1 = forward(arch, p, s), r2 = forward(arch, p, s);
    EXPECT_EQ(r1.logits, r2.logits);
    EXPECT_EQ(r1.offsets, r2.offsets);
    for (std::size_t a = 0; a < r1.num_anchors(); ++a) {
      double sum = 0.0;
      for (double q : r1.probabilities(a)) sum += q;
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Forward, DimMismatchIsContractViolation) {
  const auto arch = small_arch(2, 4);
  EXPECT_THROW(forward(arch, ParamVector::zeros(arch), random_sample(8, 8, 3, 1)), ContractViolation);
  EXPECT_THROW(forward(arch, ParamVector::zeros(small_arch(2, 4, 6)), random_sample(8, 8, 4, 1)),
               ContractViolation);
}

TEST(Forward, TranslationShiftsBestAnchor) {
  // Hidden unit 0 sums channel 0 over the window; class 0 reads it.
  ModelArch arch = small_arch(2, 1, 1);
  const ParamLayout L(arch);
  auto p = ParamVector::zeros(arch);
  for (std::size_t i = 0; i < arch.input_size(); ++i) p.values[L.w_hidden + i] = 0.3;
  p.values[L.w_cls + 0] = 5.0;
  auto best_anchor = [&](int y, int x) {
    FeatureGridSample s{0, 12, 12, 1, std::vector<float>(144, 0.0f), {}};
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) s.at(y + dy, x + dx, 0) = 1.0f;
    const auto raw = forward(arch, p, s);
    std::size_t best = 0;
    for (std::size_t a = 1; a < raw.num_anchors(); ++a)
      if (raw.probabilities(a)[0] > raw.probabilities(best)[0]) best = a;
    return best;
  };
  const auto a0 = best_anchor(4, 4);
  EXPECT_EQ(a0, 2u * 6u + 2u);
  EXPECT_EQ(best_anchor(4, 6), a0 + 1);
  EXPECT_EQ(best_anchor(6, 4), a0 + 6);
}

TEST(Decode, UniformLogitsBelowMinScore) {
  const auto arch = small_arch(2);
  const auto raw = forward(arch, ParamVector::zeros(arch), random_sample(6, 6, 4, 1));
  EXPECT_TRUE(decode(raw, 0.5).empty());
  EXPECT_EQ(decode(raw, 0.0).size(), raw.num_anchors());
}

TEST(Decode, HandBuiltLogits) {
  RawPredictions raw;
  raw.dims = {4, 4};
  raw.num_outputs = 3;
  raw.anchor_x = {0.5, 2.5};
  raw.anchor_y = {0.5, 0.5};
  raw.logits = {0.0, 0.0, 5.0, -3.0, 6.0, 0.0};
  raw.offsets = {0.0, 0.0, 0.25, 1.0};
  const auto out = decode(raw, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].class_id, 1);
  EXPECT_DOUBLE_EQ(out[0].x, 2.75);
  EXPECT_DOUBLE_EQ(out[0].y, 1.5);
  EXPECT_NEAR(out[0].score, std::exp(6.0) / (std::exp(-3.0) + std::exp(6.0) + 1.0), 1e-12);
  raw.offsets = {0.0, 0.0, 10.0, -7.0};
  const auto clamped = decode(raw, 0.5);
  EXPECT_EQ(clamped[0].x, 3.0);
  EXPECT_EQ(clamped[0].y, 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  const auto arch = small_arch(2, 4, 5);
  const auto s = random_sample(8, 8, 4, 9);
  auto params = init_params(arch, 4);
  const std::vector<PointAnnotation> pts{{1.5f, 2.25f, 0}, {6.0f, 5.5f, 1}, {3.0f, 7.0f, 1}};
  const auto targets = build_train_targets(forward(arch, params, s), pts, 1.0);
  const double cw = 1.0, rw = 0.7;
  const auto res = forward_backward(arch, params, s, targets, cw, rw);
  auto loss_at = [&](const ParamVector& p) {
    const auto r = forward_backward(arch, p, s, targets, cw, rw);
    return cw * r.cls + rw * r.reg;
  };
  const double eps = 1e-4;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto hi = params, lo = params;
    hi.values[i] += eps;
    lo.values[i] -= eps;
    const double fd = (loss_at(hi) - loss_at(lo)) / (2 * eps);
    worst = std::max(worst, rel_err(res.grad.values[i], fd));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Backward, BackgroundWithZeroClsWeightIsZeroGradient) {
  const auto arch = small_arch();
  const auto s = random_sample(6, 6, 4, 2);
  const auto p = init_params(arch, 1);
  const auto raw = forward(arch, p, s);
  const auto t = AnchorTargets::background(raw.num_anchors(), arch.background());
  const auto r = forward_backward(arch, p, s, t, 0.0, 1.0);
  for (double g : r.grad.values) EXPECT_EQ(g, 0.0);
}

TEST(Backward, DoublingWeightDoublesGradient) {
  const auto arch = small_arch();
  const auto s = random_sample(6, 6, 4, 2);
  const auto p = init_params(arch, 1);
  const std::vector<PointAnnotation> pts{{2.0f, 2.0f, 1}};
  auto t = build_train_targets(forward(arch, p, s), pts, 1.0, false);
  const auto one = forward_backward(arch, p, s, t, 0.75, 0.0);
  const auto two = forward_backward(arch, p, s, t, 1.5, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(two.grad.values[i], 2.0 * one.grad.values[i]);
}

TEST(Backward, NoRegressionTargetsLeaveOffsetBlockZero) {
  const auto arch = small_arch();
  const auto s = random_sample(6, 6, 4, 5);
  const auto p = init_params(arch, 3);
  const std::vector<PointAnnotation> pts{{2.0f, 2.0f, 1}, {4.5f, 1.0f, 0}};
  const auto t = build_train_targets(forward(arch, p, s), pts, 1.0, false);
  const auto r = forward_backward(arch, p, s, t, 1.0, 1.0);
  const ParamLayout L(arch);
  for (std::size_t i = L.regression_begin(); i < L.regression_end(); ++i) EXPECT_EQ(r.grad.values[i], 0.0);
  EXPECT_EQ(r.reg, 0.0);
}

TEST(Adam, ZeroGradZeroDecayLeavesParams) {
  const auto arch = small_arch();
  auto p = init_params(arch, 1);
  const auto before = p;
  auto st = AdamState::zeros(p.size());
  AdamOptions o;
  o.weight_decay = 0.0;
  optimizer_step(st, p, ParamVector::zeros(arch), o);
  EXPECT_EQ(p, before);
}

TEST(Adam, DecoupledDecayScalesParams) {
  const auto arch = small_arch();
  auto p = init_params(arch, 1);
  const auto before = p;
  auto st = AdamState::zeros(p.size());
  AdamOptions o;
  o.lr = 1e-3;
  o.weight_decay = 0.5;
  optimizer_step(st, p, ParamVector::zeros(arch), o);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p.values[i], before.values[i] * (1.0 - 1e-3 * 0.5));
}

TEST(Adam, HandComputedTwoStepTrace) {
  ParamVector p{7, {1.0, -2.0, 0.5}};
  ParamVector g1{7, {0.5, -2.0, 0.0}};
  ParamVector g2{7, {-1.0, 1.0, 3.0}};
  AdamState st = AdamState::zeros(3);
  AdamOptions o{0.1, 0.9, 0.999, 1e-8, 0.0};
  optimizer_step(st, p, g1, o);
  // Step 1: m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps).
  EXPECT_NEAR(p.values[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.values[1], -2.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.values[2], 0.5);
  optimizer_step(st, p, g2, o);
  // Step 2 for entry 0: m = 0.9*0.05 + 0.1*(-1) = -0.055, v = 0.999*0.00025 + 0.001*1 = 0.00124975,
  // m_hat = -0.055/0.19 = -0.289473684..., v_hat = 0.00124975/0.001999 = 0.625187593...
  const double m_hat = -0.055 / 0.19, v_hat = 0.00124975 / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.values[0], (1.0 - 0.1 * 0.5 / (0.5 + 1e-8)) - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8), 1e-12);
  EXPECT_NEAR(m_hat, -0.2894736842105263, 1e-12);
  EXPECT_NEAR(v_hat, 0.6251875937968984, 1e-12);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, NonFiniteGradientIsNumericalError) {
  ParamVector p{7, {1.0}};
  ParamVector g{7, {std::nan("")}};
  AdamState st = AdamState::zeros(1);
  EXPECT_THROW(optimizer_step(st, p, g, AdamOptions{}), NumericalError);
  ParamVector other{8, {0.0}};
  EXPECT_THROW(optimizer_step(st, p, other, AdamOptions{}), ContractViolation);
}

TEST(Model, SupervisedTrainingHalvesLoss) {
  DatasetConfig dc;
  dc.num_classes = 2;
  dc.class_frequencies = {0.5, 0.5};
  dc.height = dc.width = 12;
  dc.num_images = 8;
  dc.cells_per_image = 5;
  dc.signature_noise_sigma = 0.05;
  dc.background_noise_sigma = 0.05;
  dc.seed = 3;
  const auto samples = generate_dataset(dc);
  ModelArch arch = small_arch(2, dc.feature_dim, 16);
  auto p = init_params(arch, 5);
  auto st = AdamState::zeros(p.size());
  AdamOptions o;
  o.lr = 1e-2;
  const double lambda = 2e-3;
  auto epoch_loss = [&](bool step) {
    double total = 0.0;
    auto grad = ParamVector::zeros(arch);
    for (const auto& s : samples) {
      const auto f = forward_pass(arch, p, s);
      const auto t = build_train_targets(f.raw, s.annotations, 1.0);
      const auto r = backward(arch, p, f, t, 1.0, lambda);
      total += r.cls + lambda * r.reg;
      for (std::size_t i = 0; i < grad.size(); ++i) grad.values[i] += r.grad.values[i] / samples.size();
    }
    if (step) optimizer_step(st, p, grad, o);
    return total / static_cast<double>(samples.size());
  };
  const double initial = epoch_loss(false);
  for (int i = 0; i < 200; ++i) epoch_loss(true);
  EXPECT_LT(epoch_loss(false), 0.5 * initial);
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto arch = small_arch(3, 2, 4);
  Checkpoint ck{arch, init_params(arch, 1), AdamState::zeros(ParamLayout(arch).total)};
  ck.optimizer.step = 12;
  ck.optimizer.m[3] = 0.125;
  const auto bytes = serialize_checkpoint(ck);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.arch, arch);
  EXPECT_EQ(back.params.layout, ck.params.layout);
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    EXPECT_EQ(back.params.values[i], static_cast<double>(static_cast<float>(ck.params.values[i])));
  EXPECT_EQ(back.optimizer.step, 12u);
  EXPECT_EQ(back.optimizer.m[3], 0.125);

  for (std::size_t cut = 1; cut <= bytes.size(); cut += 7) {
    std::vector<char> t(bytes.begin(), bytes.end() - static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_checkpoint(t), FormatError) << cut;
  }
  auto v = bytes;
  v[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(v), VersionError);

  const auto path = std::filesystem::temp_directory_path() / "sspcr_test_ck.bin";
  save_checkpoint(ck, path);
  EXPECT_EQ(load_checkpoint(path).params, back.params);
  std::filesystem::remove(path);
}
