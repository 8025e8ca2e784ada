#include <gtest/gtest.h>

#include <cmath>

#include "sspcr/loss.hpp"
#include "sspcr/random.hpp"

using namespace sspcr;

TEST(Loss, CompositeArithmetic) {
  const LossWeights w{2e-3, 1.0};
  EXPECT_NEAR(make_terms(1.0, 10.0, 0.5, w).total, 1.52, 1e-12);
  EXPECT_EQ(make_terms(1.0, 10.0, 0.5, {2e-3, 0.0}).total, 1.0 + 2e-3 * 10.0);
  EXPECT_THROW((LossWeights{-1.0, 1.0}.validate()), ConfigError);
}

TEST(Loss, UniformLogitsGiveLogK) {
  const std::vector<double> z(12, 0.0);
  const std::vector<int> t{0, 1, 2, 2};
  EXPECT_NEAR(cls_loss(z, t, 3).value, std::log(3.0), 1e-12);
}

TEST(Loss, RegressionExample) {
  const std::vector<double> pred{1.0, 0.0, 2.0, 2.0}, target{0.0, 0.0, 2.0, 2.0};
  const auto r = reg_loss(pred, target);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  const auto one = reg_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(one.value, 1.0);
  EXPECT_EQ(reg_loss(std::vector<double>{}, std::vector<double>{}).value, 0.0);
}

TEST(Loss, ContractErrors) {
  const std::vector<double> z(6, 0.0);
  EXPECT_THROW(cls_loss(z, std::vector<int>{0}, 3), ContractViolation);
  EXPECT_THROW(cls_loss(z, std::vector<int>{0, 3}, 3), ContractViolation);
  EXPECT_THROW(reg_loss(std::vector<double>{1.0}, std::vector<double>{1.0}), ContractViolation);
}

TEST(Loss, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  const double eps = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(4));
    const std::size_t n = 1 + rng.index(5);
    std::vector<double> z(n * k);
    for (auto& v : z) v = rng.normal(0.0, 3.0);
    std::vector<int> t(n);
    for (auto& v : t) v = static_cast<int>(rng.index(k));
    const auto g = cls_loss(z, t, k).grad;
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      zp[i] += eps;
      zm[i] -= eps;
      const double fd = (cls_loss(zp, t, k).value - cls_loss(zm, t, k).value) / (2 * eps);
      EXPECT_LT(std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-8}), 1e-5);
    }
    std::vector<double> p(2 * n), q(2 * n);
    for (auto& v : p) v = rng.normal(0.0, 2.0);
    for (auto& v : q) v = rng.normal(0.0, 2.0);
    const auto rg = reg_loss(p, q).grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto pp = p, pm = p;
      pp[i] += eps;
      pm[i] -= eps;
      const double fd = (reg_loss(pp, q).value - reg_loss(pm, q).value) / (2 * eps);
      EXPECT_LT(std::abs(fd - rg[i]) / std::max({std::abs(fd), std::abs(rg[i]), 1e-8}), 1e-5);
    }
  }
}

TEST(Loss, ClsLossIsStableForLargeLogits) {
  const std::vector<double> z{1000.0, 0.0, -1000.0};
  const auto r = cls_loss(z, std::vector<int>{1}, 3);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, 1000.0, 1e-9);
}
