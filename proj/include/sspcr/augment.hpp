#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sspcr/data.hpp"
#include "sspcr/error.hpp"
#include "sspcr/random.hpp"

namespace sspcr {

enum class PipelineKind { weak, strong_labeled, strong_unlabeled };

enum class AugmentType { hflip, vflip, gaussian_noise, channel_scale, box_blur };

inline bool is_geometric(AugmentType t) { return t == AugmentType::hflip || t == AugmentType::vflip; }

inline std::string_view to_string(AugmentType t) {
  switch (t) {
    case AugmentType::hflip: return "hflip";
    case AugmentType::vflip: return "vflip";
    case AugmentType::gaussian_noise: return "gaussian_noise";
    case AugmentType::channel_scale: return "channel_scale";
    case AugmentType::box_blur: return "box_blur";
  }
  return "?";
}

inline AugmentType augment_type_from_string(std::string_view s) {
  for (auto t : {AugmentType::hflip, AugmentType::vflip, AugmentType::gaussian_noise,
                 AugmentType::channel_scale, AugmentType::box_blur})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown augmentation op '" + std::string(s) + "'");
}

// `magnitude` is the noise sigma, the channel-scale jitter half-width, or the
// box-blur radius in pixels; flips ignore it.
struct AugmentOp {
  AugmentType type = AugmentType::hflip;
  double probability = 0.5;
  double magnitude = 0.0;

  friend bool operator==(const AugmentOp&, const AugmentOp&) = default;
};

struct AugmentationPipeline {
  PipelineKind kind = PipelineKind::weak;
  std::vector<AugmentOp> ops;

  void validate() const {
    for (const auto& op : ops) {
      if (!(op.probability >= 0.0 && op.probability <= 1.0))
        throw ConfigError("augmentation probability must be in [0, 1]");
      if (!(op.magnitude >= 0.0)) throw ConfigError("augmentation magnitude must be >= 0");
      if (kind == PipelineKind::weak && op.type != AugmentType::hflip)
        throw ConfigError("the weak pipeline may only contain hflip");
    }
  }

  static AugmentationPipeline weak() { return {PipelineKind::weak, {{AugmentType::hflip, 0.5, 0.0}}}; }

  static AugmentationPipeline strong_labeled() {
    return {PipelineKind::strong_labeled,
            {{AugmentType::hflip, 0.5, 0.0},
             {AugmentType::vflip, 0.5, 0.0},
             {AugmentType::gaussian_noise, 0.8, 0.1},
             {AugmentType::channel_scale, 0.8, 0.2}}};
  }

  static AugmentationPipeline strong_unlabeled() {
    return {PipelineKind::strong_unlabeled,
            {{AugmentType::hflip, 0.5, 0.0},
             {AugmentType::vflip, 0.5, 0.0},
             {AugmentType::channel_scale, 0.8, 0.2},
             {AugmentType::box_blur, 0.5, 1.0}}};
  }

  friend bool operator==(const AugmentationPipeline&, const AugmentationPipeline&) = default;
};

// The geometric ops that were applied to one sample, in order.
struct GeometricRecord {
  GridDims dims;
  std::vector<AugmentType> ops;

  bool identity() const { return ops.empty(); }
};

namespace detail {

inline PointAnnotation flip_point(PointAnnotation p, AugmentType op, GridDims dims) {
  // Lattice coordinates make both subtractions exact.
  if (op == AugmentType::hflip) p.x = static_cast<float>((dims.width - 1) - static_cast<double>(p.x));
  if (op == AugmentType::vflip) p.y = static_cast<float>((dims.height - 1) - static_cast<double>(p.y));
  return p;
}

inline void flip_features(FeatureGridSample& s, AugmentType op) {
  const int h = s.height, w = s.width, ch = s.channels;
  if (op == AugmentType::hflip) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x)
        for (int c = 0; c < ch; ++c) std::swap(s.at(y, x, c), s.at(y, w - 1 - x, c));
  } else {
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < ch; ++c) std::swap(s.at(y, x, c), s.at(h - 1 - y, x, c));
  }
}

inline void box_blur(FeatureGridSample& s, int radius) {
  if (radius <= 0) return;
  const auto src = s.features;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const int y0 = std::max(0, y - radius), y1 = std::min(s.height - 1, y + radius);
      const int x0 = std::max(0, x - radius), x1 = std::min(s.width - 1, x + radius);
      const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
      for (int c = 0; c < s.channels; ++c) {
        double acc = 0.0;
        for (int yy = y0; yy <= y1; ++yy)
          for (int xx = x0; xx <= x1; ++xx) acc += src[s.index(yy, xx, c)];
        s.at(y, x, c) = static_cast<float>(acc * inv);
      }
    }
  }
}

}  // namespace detail

inline PointAnnotation apply_forward(const GeometricRecord& rec, PointAnnotation p) {
  for (auto op : rec.ops) p = detail::flip_point(p, op, rec.dims);
  return p;
}

inline PointAnnotation apply_inverse(const GeometricRecord& rec, PointAnnotation p) {
  for (auto it = rec.ops.rbegin(); it != rec.ops.rend(); ++it) p = detail::flip_point(p, *it, rec.dims);
  return p;
}

struct AugmentedSample {
  FeatureGridSample sample;
  GeometricRecord record;
};

inline AugmentedSample apply(const AugmentationPipeline& pipeline, const FeatureGridSample& input,
                             Rng& rng) {
  AugmentedSample out{input, GeometricRecord{input.dims(), {}}};
  auto& s = out.sample;
  for (const auto& op : pipeline.ops) {
    const bool fire = rng.bernoulli(op.probability);
    switch (op.type) {
      case AugmentType::hflip:
      case AugmentType::vflip:
        if (fire) {
          detail::flip_features(s, op.type);
          for (auto& a : s.annotations) a = detail::flip_point(a, op.type, s.dims());
          out.record.ops.push_back(op.type);
        }
        break;
      case AugmentType::gaussian_noise:
        if (fire && op.magnitude > 0.0)
          for (auto& f : s.features) f += static_cast<float>(op.magnitude * rng.normal());
        break;
      case AugmentType::channel_scale: {
        std::vector<double> scale(static_cast<std::size_t>(s.channels));
        for (auto& k : scale) k = rng.uniform(1.0 - op.magnitude, 1.0 + op.magnitude);
        if (fire)
          for (std::size_t i = 0; i < s.features.size(); ++i)
            s.features[i] = static_cast<float>(s.features[i] * scale[i % s.channels]);
        break;
      }
      case AugmentType::box_blur:
        if (fire) detail::box_blur(s, static_cast<int>(op.magnitude));
        break;
    }
  }
  return out;
}

// Maps points from the frame described by `from` back to the canonical frame
// and then forward into the frame described by `to`.
inline std::vector<PointAnnotation> transfer_points(std::span<const PointAnnotation> points,
                                                    const GeometricRecord& from,
                                                    const GeometricRecord& to, GridDims dims) {
  if (from.dims != dims || to.dims != dims)
    throw ContractViolation("transfer_points: geometric records refer to different grid dims");
  std::vector<PointAnnotation> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(apply_forward(to, apply_inverse(from, p)));
  return out;
}

}  // namespace sspcr
