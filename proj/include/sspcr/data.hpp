#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sspcr/error.hpp"
#include "sspcr/random.hpp"

namespace sspcr {

// Point coordinates live on a 1/1024-pixel lattice. For grids narrower than
// 2^13 pixels every lattice value is an exact float and (W-1)-x is exact, so
// geometric flips round-trip without error.
inline constexpr double kCoordinateScale = 1024.0;

inline double quantize_coordinate(double v) {
  return std::round(v * kCoordinateScale) / kCoordinateScale;
}

struct PointAnnotation {
  float x = 0.0f;
  float y = 0.0f;
  std::uint16_t class_id = 0;

  friend bool operator==(const PointAnnotation&, const PointAnnotation&) = default;
};

struct GridDims {
  int height = 0;
  int width = 0;

  friend bool operator==(const GridDims&, const GridDims&) = default;
};

// One synthetic image: a height x width grid of `channels`-dimensional feature
// vectors stored row-major as [y][x][channel].
struct FeatureGridSample {
  std::uint64_t id = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> features;
  std::vector<PointAnnotation> annotations;

  GridDims dims() const { return {height, width}; }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float at(int y, int x, int c) const { return features[index(y, x, c)]; }
  float& at(int y, int x, int c) { return features[index(y, x, c)]; }

  friend bool operator==(const FeatureGridSample&, const FeatureGridSample&) = default;
};

struct DatasetConfig {
  int num_classes = 3;
  int height = 16;
  int width = 16;
  int feature_dim = 4;
  int num_images = 100;
  double cells_per_image = 8.0;
  std::vector<double> class_frequencies{0.6, 0.3, 0.1};
  double signature_noise_sigma = 0.3;
  double background_noise_sigma = 0.1;
  double blob_radius = 1.0;
  // Cosine between two class signatures is 1 - separation^2 (when feature_dim > num_classes).
  double class_separation = 1.0;
  double min_cell_separation = 3.0;
  int placement_retries = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
    if (num_classes > 65535) throw ConfigError("dataset.num_classes must fit in 16 bits");
    if (height < 1 || width < 1) throw ConfigError("dataset grid height/width must be >= 1");
    if (height > 8192 || width > 8192) throw ConfigError("dataset grid must be at most 8192 pixels wide");
    if (feature_dim < 1) throw ConfigError("dataset.feature_dim must be >= 1");
    if (num_images < 1) throw ConfigError("dataset.num_images must be >= 1");
    if (!(cells_per_image >= 0.0) || !std::isfinite(cells_per_image))
      throw ConfigError("dataset.cells_per_image must be finite and >= 0");
    if (class_frequencies.size() != static_cast<std::size_t>(num_classes))
      throw ConfigError("dataset.class_frequencies must have num_classes entries");
    double sum = 0.0;
    for (double f : class_frequencies) {
      if (!(f > 0.0)) throw ConfigError("dataset.class_frequencies entries must be > 0");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset.class_frequencies must sum to 1");
    if (!(signature_noise_sigma >= 0.0)) throw ConfigError("dataset.signature_noise_sigma must be >= 0");
    if (!(background_noise_sigma >= 0.0)) throw ConfigError("dataset.background_noise_sigma must be >= 0");
    if (!(blob_radius > 0.0)) throw ConfigError("dataset.blob_radius must be > 0");
    if (!(class_separation > 0.0 && class_separation <= 1.0))
      throw ConfigError("dataset.class_separation must be in (0, 1]");
    if (!(min_cell_separation >= 0.0)) throw ConfigError("dataset.min_cell_separation must be >= 0");
    if (placement_retries < 1) throw ConfigError("dataset.placement_retries must be >= 1");
  }

  double designed_imbalance_ratio() const {
    auto [lo, hi] = std::minmax_element(class_frequencies.begin(), class_frequencies.end());
    return *hi / *lo;
  }

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct SplitParams {
  double labeling_ratio = 0.1;
  double val_frac = 0.2;
  double test_frac = 0.2;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitParams&, const SplitParams&) = default;
};

// Annotation-free access to the unlabeled pool. The trainer only ever sees
// this view; hidden ground truth stays reachable through hidden_annotations()
// for diagnostics.
class UnlabeledView {
 public:
  UnlabeledView() = default;
  explicit UnlabeledView(std::span<const FeatureGridSample> samples) : samples_(samples) {}

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  // Copy of sample i with its annotations removed.
  FeatureGridSample stripped(std::size_t i) const {
    const auto& s = samples_[i];
    return FeatureGridSample{s.id, s.height, s.width, s.channels, s.features, {}};
  }

  std::uint64_t id(std::size_t i) const { return samples_[i].id; }

 private:
  std::span<const FeatureGridSample> samples_;
};

struct DatasetSplit {
  DatasetConfig config;
  SplitParams params;
  std::vector<FeatureGridSample> labeled;
  std::vector<FeatureGridSample> unlabeled;  // annotations retained for diagnostics only
  std::vector<FeatureGridSample> validation;
  std::vector<FeatureGridSample> test;

  UnlabeledView unlabeled_view() const { return UnlabeledView(unlabeled); }

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

inline std::vector<std::vector<PointAnnotation>> hidden_annotations(const DatasetSplit& split) {
  std::vector<std::vector<PointAnnotation>> out;
  out.reserve(split.unlabeled.size());
  for (const auto& s : split.unlabeled) out.push_back(s.annotations);
  return out;
}

// Unit-norm signature per class. With enough feature dimensions the signatures
// are built from an orthonormal basis {u0, u1..uC} as
// sqrt(1 - sep^2) * u0 + sep * u_c; otherwise they are random unit vectors.
inline std::vector<std::vector<double>> class_signatures(const DatasetConfig& cfg) {
  const int dim = cfg.feature_dim;
  const int classes = cfg.num_classes;
  Rng rng(derive_seed(cfg.seed, 0x5167));
  auto random_unit = [&] {
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    while (norm < 1e-6) {
      norm = 0.0;
      for (auto& e : v) {
        e = rng.normal();
        norm += e * e;
      }
      norm = std::sqrt(norm);
    }
    for (auto& e : v) e /= norm;
    return v;
  };

  std::vector<std::vector<double>> sig;
  if (dim < classes + 1) {
    for (int c = 0; c < classes; ++c) sig.push_back(random_unit());
    return sig;
  }

  // Gram-Schmidt over random draws.
  std::vector<std::vector<double>> basis;
  while (static_cast<int>(basis.size()) < classes + 1) {
    auto v = random_unit();
    for (const auto& b : basis) {
      double dot = 0.0;
      for (int d = 0; d < dim; ++d) dot += v[d] * b[d];
      for (int d = 0; d < dim; ++d) v[d] -= dot * b[d];
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-3) continue;
    for (auto& e : v) e /= norm;
    basis.push_back(std::move(v));
  }
  const double sep = cfg.class_separation;
  const double common = std::sqrt(std::max(0.0, 1.0 - sep * sep));
  for (int c = 0; c < classes; ++c) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) v[d] = common * basis[0][d] + sep * basis[c + 1][d];
    sig.push_back(std::move(v));
  }
  return sig;
}

namespace detail {

inline FeatureGridSample generate_sample(const DatasetConfig& cfg,
                                         const std::vector<std::vector<double>>& signatures,
                                         std::uint64_t index) {
  Rng rng(derive_seed(cfg.seed, 0xDA7A, index));
  FeatureGridSample s;
  s.id = index;
  s.height = cfg.height;
  s.width = cfg.width;
  s.channels = cfg.feature_dim;
  s.features.assign(static_cast<std::size_t>(cfg.height) * cfg.width * cfg.feature_dim, 0.0f);

  std::vector<double> cumulative(cfg.class_frequencies.size());
  std::partial_sum(cfg.class_frequencies.begin(), cfg.class_frequencies.end(), cumulative.begin());

  const std::uint32_t n_cells = rng.poisson(cfg.cells_per_image);
  const double min_d2 = cfg.min_cell_separation * cfg.min_cell_separation;
  for (std::uint32_t k = 0; k < n_cells; ++k) {
    const double u = rng.uniform() * cumulative.back();
    std::uint16_t cls = 0;
    while (cls + 1u < cumulative.size() && u >= cumulative[cls]) ++cls;

    for (int attempt = 0; attempt < cfg.placement_retries; ++attempt) {
      const double x = quantize_coordinate(rng.uniform(0.0, cfg.width - 1.0));
      const double y = quantize_coordinate(rng.uniform(0.0, cfg.height - 1.0));
      bool clear = true;
      for (const auto& a : s.annotations) {
        const double dx = a.x - x, dy = a.y - y;
        if (dx * dx + dy * dy < min_d2) {
          clear = false;
          break;
        }
      }
      if (clear) {
        s.annotations.push_back({static_cast<float>(x), static_cast<float>(y), cls});
        break;
      }
    }
  }

  // Blobs: per-cell noisy copy of the class signature under an isotropic
  // Gaussian spatial profile.
  const int reach = static_cast<int>(std::ceil(3.0 * cfg.blob_radius));
  const double inv_two_r2 = 1.0 / (2.0 * cfg.blob_radius * cfg.blob_radius);
  std::vector<double> vec(static_cast<std::size_t>(cfg.feature_dim));
  for (const auto& a : s.annotations) {
    for (int d = 0; d < cfg.feature_dim; ++d)
      vec[d] = signatures[a.class_id][d] + cfg.signature_noise_sigma * rng.normal();
    const int cx = static_cast<int>(std::lround(a.x));
    const int cy = static_cast<int>(std::lround(a.y));
    for (int y = std::max(0, cy - reach); y <= std::min(cfg.height - 1, cy + reach); ++y) {
      for (int x = std::max(0, cx - reach); x <= std::min(cfg.width - 1, cx + reach); ++x) {
        const double dx = x - a.x, dy = y - a.y;
        const double w = std::exp(-(dx * dx + dy * dy) * inv_two_r2);
        for (int d = 0; d < cfg.feature_dim; ++d)
          s.at(y, x, d) += static_cast<float>(w * vec[d]);
      }
    }
  }
  if (cfg.background_noise_sigma > 0.0) {
    for (auto& f : s.features) f += static_cast<float>(cfg.background_noise_sigma * rng.normal());
  }
  return s;
}

}  // namespace detail

// Deterministic in cfg (including cfg.seed). Each sample draws from its own
// stream, so samples can be generated independently.
inline std::vector<FeatureGridSample> generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const auto signatures = class_signatures(cfg);
  std::vector<FeatureGridSample> out;
  out.reserve(static_cast<std::size_t>(cfg.num_images));
  for (int i = 0; i < cfg.num_images; ++i)
    out.push_back(detail::generate_sample(cfg, signatures, static_cast<std::uint64_t>(i)));
  return out;
}

struct SplitSizes {
  std::size_t train = 0, validation = 0, test = 0, labeled = 0;
};

inline SplitSizes split_sizes(std::size_t n, const SplitParams& p) {
  if (!(p.labeling_ratio > 0.0 && p.labeling_ratio <= 1.0))
    throw ConfigError("labeling_ratio must be in (0, 1]");
  if (!(p.val_frac >= 0.0 && p.test_frac >= 0.0 && p.val_frac + p.test_frac < 1.0))
    throw ConfigError("val_frac and test_frac must be >= 0 and leave a nonempty train fraction");
  SplitSizes s;
  s.validation = static_cast<std::size_t>(std::llround(p.val_frac * static_cast<double>(n)));
  s.test = static_cast<std::size_t>(std::llround(p.test_frac * static_cast<double>(n)));
  if (s.validation + s.test > n) throw ConfigError("split fractions exceed the dataset size");
  s.train = n - s.validation - s.test;
  // The epsilon keeps 0.1 * 60 from rounding up to 7.
  s.labeled = static_cast<std::size_t>(
      std::ceil(p.labeling_ratio * static_cast<double>(s.train) - 1e-9));
  s.labeled = std::min(s.labeled, s.train);
  if (s.labeled == 0) throw ConfigError("labeling ratio yields zero labeled samples");
  return s;
}

inline DatasetSplit split_dataset(std::vector<FeatureGridSample> samples, const DatasetConfig& cfg,
                                  const SplitParams& params) {
  const SplitSizes sizes = split_sizes(samples.size(), params);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(params.seed, 0x5B117));
  rng.shuffle(order);

  DatasetSplit split;
  split.config = cfg;
  split.params = params;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& s = samples[order[k]];
    if (k < sizes.labeled)
      split.labeled.push_back(std::move(s));
    else if (k < sizes.train)
      split.unlabeled.push_back(std::move(s));
    else if (k < sizes.train + sizes.validation)
      split.validation.push_back(std::move(s));
    else
      split.test.push_back(std::move(s));
  }
  return split;
}

inline DatasetSplit make_split(const DatasetConfig& cfg, const SplitParams& params) {
  return split_dataset(generate_dataset(cfg), cfg, params);
}

inline std::vector<std::size_t> class_counts(std::span<const FeatureGridSample> samples,
                                             int num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples)
    for (const auto& a : s.annotations) ++counts.at(a.class_id);
  return counts;
}

}  // namespace sspcr
