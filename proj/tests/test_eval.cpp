#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sspcr/eval.hpp"
#include "sspcr/random.hpp"

using namespace sspcr;

namespace {

std::vector<PointPrediction> as_preds(const std::vector<PointAnnotation>& a) {
  std::vector<PointPrediction> out;
  for (const auto& p : a) out.push_back({p.x, p.y, p.class_id, 1.0});
  return out;
}

}  // namespace

TEST(Evaluate, PerfectPredictions) {
  const std::vector<std::vector<PointAnnotation>> g{{{1, 1, 0}, {8, 8, 1}}, {{4, 4, 1}}};
  std::vector<std::vector<PointPrediction>> p;
  for (const auto& s : g) p.push_back(as_preds(s));
  const auto m = evaluate(p, g, 3.0, 2);
  EXPECT_EQ(m.detection.f1, 100.0);
  EXPECT_EQ(m.classification.p, 100.0);
  EXPECT_EQ(m.classification.r, 100.0);
  EXPECT_EQ(m.classification.f1, 100.0);
}

TEST(Evaluate, NoPredictions) {
  const std::vector<std::vector<PointAnnotation>> g{{{1, 1, 0}}};
  const auto m = evaluate({{}}, g, 3.0, 2);
  EXPECT_EQ(m.detection.p, 0.0);
  EXPECT_EQ(m.detection.r, 0.0);
  EXPECT_EQ(m.detection.f1, 0.0);
}

TEST(Evaluate, MacroAverageHandCase) {
  const std::vector<std::vector<PointAnnotation>> g{{{0, 0, 0}, {20, 0, 1}, {40, 0, 1}}};
  const std::vector<std::vector<PointPrediction>> p{{{0, 0, 0, 1}, {60, 0, 0, 1}, {20, 0, 1, 1}}};
  const auto m = evaluate(p, g, 3.0, 2);
  EXPECT_NEAR(m.per_class[0].prf.p, 50.0, 1e-12);
  EXPECT_NEAR(m.per_class[0].prf.r, 100.0, 1e-12);
  EXPECT_NEAR(m.per_class[1].prf.p, 100.0, 1e-12);
  EXPECT_NEAR(m.per_class[1].prf.r, 50.0, 1e-12);
  EXPECT_NEAR(m.classification.p, 75.0, 1e-12);
  EXPECT_NEAR(m.classification.r, 75.0, 1e-12);
}

TEST(Evaluate, AbsentClassesExcludedFromMacro) {
  const std::vector<std::vector<PointAnnotation>> g{{{0, 0, 0}}};
  const std::vector<std::vector<PointPrediction>> p{{{0, 0, 0, 1}}};
  EXPECT_EQ(evaluate(p, g, 3.0, 5).classification.f1, 100.0);
}

TEST(Evaluate, F1IsHarmonicMean) {
  const auto m = prf_from_counts(3, 1, 2);
  EXPECT_NEAR(m.f1, 2 * m.p * m.r / (m.p + m.r), 1e-12);
  EXPECT_EQ(prf_from_counts(0, 0, 0).f1, 0.0);
}

TEST(Evaluate, MatchesBruteForceReference) {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t samples = 1 + rng.index(3);
    std::vector<std::vector<PointPrediction>> p(samples);
    std::vector<std::vector<PointAnnotation>> g(samples);
    for (std::size_t s = 0; s < samples; ++s) {
      for (std::size_t i = rng.index(6); i > 0; --i)
        p[s].push_back({std::round(rng.uniform(0, 15)), std::round(rng.uniform(0, 15)),
                        static_cast<std::uint16_t>(rng.index(3)), 1.0});
      for (std::size_t i = rng.index(6); i > 0; --i)
        g[s].push_back({static_cast<float>(std::round(rng.uniform(0, 15))),
                        static_cast<float>(std::round(rng.uniform(0, 15))), static_cast<std::uint16_t>(rng.index(3))});
    }
    const auto m = evaluate(p, g, 4.0, 3);
    const auto ref = oracle::evaluate(p, g, 4.0, 3);
    EXPECT_NEAR(m.detection.f1, ref.detection.f1, 1e-9);
    EXPECT_NEAR(m.detection.p, ref.detection.p, 1e-9);
    EXPECT_NEAR(m.classification.f1, ref.classification.f1, 1e-9);
    EXPECT_NEAR(m.classification.r, ref.classification.r, 1e-9);
  }
}

TEST(Evaluate, InvariantToPredictionOrder) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PointPrediction> p;
    std::vector<PointAnnotation> g;
    for (int i = 0; i < 6; ++i) {
      p.push_back({rng.uniform(0, 20), rng.uniform(0, 20), static_cast<std::uint16_t>(rng.index(2)), 1.0});
      g.push_back({static_cast<float>(rng.uniform(0, 20)), static_cast<float>(rng.uniform(0, 20)),
                   static_cast<std::uint16_t>(rng.index(2))});
    }
    const auto a = evaluate({p}, {g}, 5.0, 2);
    rng.shuffle(p);
    const auto b = evaluate({p}, {g}, 5.0, 2);
    EXPECT_EQ(a.det_tp, b.det_tp);
    EXPECT_NEAR(a.classification.f1, b.classification.f1, 1e-12);
  }
}

TEST(Evaluate, AddingAnExactHitNeverLowersRecall) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PointPrediction> p;
    std::vector<PointAnnotation> g;
    for (int i = 0; i < 5; ++i) {
      p.push_back({rng.uniform(0, 20), rng.uniform(0, 20), 0, 1.0});
      g.push_back({static_cast<float>(rng.uniform(0, 20)), static_cast<float>(rng.uniform(0, 20)), 0});
    }
    const auto before = evaluate({p}, {g}, 3.0, 1);
    p.push_back({g[0].x, g[0].y, 0, 1.0});
    const auto after = evaluate({p}, {g}, 3.0, 1);
    EXPECT_GE(after.detection.r, before.detection.r);
  }
}

TEST(Imbalance, Examples) {
  EXPECT_DOUBLE_EQ(imbalance_ratio(std::vector<std::size_t>{730, 10}).ratio, 73.0);
  EXPECT_DOUBLE_EQ(imbalance_ratio(std::vector<std::size_t>{5, 5, 5}).ratio, 1.0);
  const auto z = imbalance_ratio(std::vector<std::size_t>{190, 0, 1});
  EXPECT_TRUE(std::isinf(z.ratio));
  EXPECT_TRUE(z.has_zero);
  EXPECT_DOUBLE_EQ(z.nonzero_ratio, 190.0);
  EXPECT_THROW(imbalance_ratio(std::vector<std::size_t>{0, 0}), ContractViolation);
}

TEST(PseudoQuality, Examples) {
  const std::vector<std::vector<PointAnnotation>> hidden{{{1, 1, 0}, {10, 10, 1}}};
  auto q = pseudo_label_quality(hidden, hidden, 3.0, 2);
  EXPECT_EQ(q.precision, (std::vector<double>{100.0, 100.0}));
  EXPECT_EQ(q.coverage, (std::vector<double>{100.0, 100.0}));
  q = pseudo_label_quality({{}}, hidden, 3.0, 2);
  EXPECT_EQ(q.precision, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(q.coverage, (std::vector<double>{0.0, 0.0}));
  EXPECT_FALSE(q.imbalance.has_value());
  q = pseudo_label_quality({{{1, 1, 0}, {20, 20, 0}}}, hidden, 3.0, 2);
  EXPECT_DOUBLE_EQ(q.precision[0], 50.0);
}
