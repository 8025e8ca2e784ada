#include <gtest/gtest.h>

#include "sspcr/augment.hpp"
#include "sspcr/data.hpp"

using namespace sspcr;

namespace {

FeatureGridSample sample(int h = 6, int w = 100, int d = 2) {
  FeatureGridSample s{1, h, w, d, std::vector<float>(static_cast<std::size_t>(h * w * d)), {}};
  for (std::size_t i = 0; i < s.features.size(); ++i) s.features[i] = static_cast<float>(i % 17) * 0.25f;
  s.annotations = {{10.0f, 2.0f, 1}, {45.5f, 0.25f, 0}, {99.0f, 5.0f, 2}};
  return s;
}

GeometricRecord rec(GridDims dims, std::vector<AugmentType> ops) { return {dims, std::move(ops)}; }

}  // namespace

TEST(Augment, HflipConvention) {
  const GridDims dims{6, 100};
  const auto p = apply_forward(rec(dims, {AugmentType::hflip}), {10.0f, 3.0f, 1});
  EXPECT_EQ(p.x, 89.0f);
  EXPECT_EQ(p.y, 3.0f);
  EXPECT_EQ(p.class_id, 1);
  const auto q = apply_forward(rec(dims, {AugmentType::vflip}), {10.0f, 1.0f, 0});
  EXPECT_EQ(q.y, 4.0f);
}

TEST(Augment, ZeroProbabilityIsIdentity) {
  AugmentationPipeline p = AugmentationPipeline::strong_labeled();
  for (auto& op : p.ops) op.probability = 0.0;
  Rng rng(1);
  const auto in = sample();
  const auto out = apply(p, in, rng);
  EXPECT_EQ(out.sample, in);
  EXPECT_TRUE(out.record.identity());
}

TEST(Augment, FeatureOpsNeverMovePoints) {
  const auto in = sample();
  for (auto type : {AugmentType::gaussian_noise, AugmentType::channel_scale, AugmentType::box_blur}) {
    AugmentationPipeline p{PipelineKind::strong_labeled, {{type, 1.0, type == AugmentType::box_blur ? 1.0 : 0.1}}};
    Rng rng(2);
    const auto out = apply(p, in, rng);
    EXPECT_EQ(out.sample.annotations, in.annotations);
    EXPECT_NE(out.sample.features, in.features);
    EXPECT_TRUE(out.record.identity());
  }
}

TEST(Augment, FlipMovesFeaturesWithPoints) {
  auto in = sample(4, 5, 1);
  in.at(1, 1, 0) = 100.0f;
  in.annotations = {{1.0f, 1.0f, 0}};
  AugmentationPipeline p{PipelineKind::strong_labeled, {{AugmentType::hflip, 1.0, 0}, {AugmentType::vflip, 1.0, 0}}};
  Rng rng(3);
  const auto out = apply(p, in, rng);
  const auto& a = out.sample.annotations[0];
  EXPECT_EQ(a.x, 3.0f);
  EXPECT_EQ(a.y, 2.0f);
  EXPECT_EQ(out.sample.at(2, 3, 0), 100.0f);
  EXPECT_EQ(out.record.ops.size(), 2u);
}

TEST(Augment, LabelCountAndClassesPreserved) {
  const auto in = sample();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto out = apply(AugmentationPipeline::strong_unlabeled(), in, rng);
    ASSERT_EQ(out.sample.annotations.size(), in.annotations.size());
    for (std::size_t i = 0; i < in.annotations.size(); ++i) {
      EXPECT_EQ(out.sample.annotations[i].class_id, in.annotations[i].class_id);
      EXPECT_EQ(apply_inverse(out.record, out.sample.annotations[i]), in.annotations[i]);
    }
  }
}

TEST(Augment, RoundTripExactOnLattice) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const GridDims dims{static_cast<int>(1 + rng.index(300)), static_cast<int>(1 + rng.index(300))};
    std::vector<AugmentType> ops;
    for (std::size_t k = rng.index(4); k > 0; --k)
      ops.push_back(rng.bernoulli(0.5) ? AugmentType::hflip : AugmentType::vflip);
    const auto g = rec(dims, ops);
    PointAnnotation p{static_cast<float>(quantize_coordinate(rng.uniform(0, dims.width - 1))),
                      static_cast<float>(quantize_coordinate(rng.uniform(0, dims.height - 1))), 0};
    ASSERT_EQ(apply_inverse(g, apply_forward(g, p)), p);
    ASSERT_EQ(apply_forward(g, apply_inverse(g, p)), p);
  }
}

TEST(Augment, TransferPoints) {
  const GridDims dims{6, 100};
  const std::vector<PointAnnotation> pts{{10.0f, 2.0f, 1}};
  const auto h = rec(dims, {AugmentType::hflip});
  const auto id = rec(dims, {});
  EXPECT_EQ(transfer_points(pts, h, h, dims), pts);
  EXPECT_EQ(transfer_points(pts, id, h, dims)[0].x, 89.0f);
  const auto hv = rec(dims, {AugmentType::vflip, AugmentType::hflip});
  const auto there = transfer_points(pts, h, hv, dims);
  EXPECT_EQ(transfer_points(there, hv, h, dims), pts);
  EXPECT_THROW(transfer_points(pts, h, rec({6, 99}, {}), dims), ContractViolation);
}

TEST(Augment, WeakPipelineOnlyHflip) {
  EXPECT_NO_THROW(AugmentationPipeline::weak().validate());
  AugmentationPipeline bad{PipelineKind::weak, {{AugmentType::vflip, 0.5, 0}}};
  EXPECT_THROW(bad.validate(), ConfigError);
  for (const auto& op : AugmentationPipeline::weak().ops) {
    EXPECT_TRUE(is_geometric(op.type));
    bool in_strong = false;
    for (const auto& s : AugmentationPipeline::strong_unlabeled().ops) in_strong |= s.type == op.type;
    EXPECT_TRUE(in_strong);
  }
}

TEST(Augment, OpNamesRoundTrip) {
  for (auto t : {AugmentType::hflip, AugmentType::vflip, AugmentType::gaussian_noise, AugmentType::channel_scale,
                 AugmentType::box_blur})
    EXPECT_EQ(augment_type_from_string(to_string(t)), t);
  EXPECT_THROW(augment_type_from_string("grid_shuffle"), ConfigError);
}

TEST(Augment, DeterministicGivenRng) {
  const auto in = sample();
  Rng a(5), b(5);
  const auto x = apply(AugmentationPipeline::strong_labeled(), in, a);
  const auto y = apply(AugmentationPipeline::strong_labeled(), in, b);
  EXPECT_EQ(x.sample, y.sample);
  EXPECT_EQ(x.record.ops, y.record.ops);
}
