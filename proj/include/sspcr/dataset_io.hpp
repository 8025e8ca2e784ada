#pragma once

#include <filesystem>
#include <vector>

#include "sspcr/binary_io.hpp"
#include "sspcr/data.hpp"

namespace sspcr {

// Dataset container, all integers and floats little-endian:
//
//   magic        8 bytes  "SSPCRDS\0"
//   version      u32      kDatasetFormatVersion
//   config       u32 num_classes, u32 height, u32 width, u32 feature_dim,
//                u32 num_images, f64 cells_per_image, f64[num_classes] class_frequencies,
//                f64 signature_noise_sigma, f64 background_noise_sigma, f64 blob_radius,
//                f64 class_separation, f64 min_cell_separation, u32 placement_retries,
//                u64 seed
//   split        f64 labeling_ratio, f64 val_frac, f64 test_frac, u64 seed
//   4 subsets    labeled, unlabeled, validation, test; each:
//                  u32 sample_count, then per sample:
//                    u64 id, u32 annotation_count,
//                    annotation_count x (f32 x, f32 y, u16 class_id),
//                    height*width*feature_dim x f32 features ([y][x][channel])
//
// Unlabeled samples keep their hidden annotations.
inline constexpr char kDatasetMagic[8] = {'S', 'S', 'P', 'C', 'R', 'D', 'S', '\0'};
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

namespace detail {

inline void write_samples(io::ByteWriter& w, const std::vector<FeatureGridSample>& samples) {
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    w.u64(s.id);
    w.u32(static_cast<std::uint32_t>(s.annotations.size()));
    for (const auto& a : s.annotations) {
      w.f32(a.x);
      w.f32(a.y);
      w.u16(a.class_id);
    }
    for (float f : s.features) w.f32(f);
  }
}

inline std::vector<FeatureGridSample> read_samples(io::ByteReader& r, const DatasetConfig& cfg) {
  const std::uint32_t count = r.u32("sample count");
  const std::size_t feature_count =
      static_cast<std::size_t>(cfg.height) * cfg.width * cfg.feature_dim;
  std::vector<FeatureGridSample> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureGridSample s;
    s.id = r.u64("sample id");
    s.height = cfg.height;
    s.width = cfg.width;
    s.channels = cfg.feature_dim;
    const std::uint32_t n_ann = r.u32("annotation count");
    r.need(static_cast<std::size_t>(n_ann) * 10, "annotations");
    s.annotations.reserve(n_ann);
    for (std::uint32_t k = 0; k < n_ann; ++k) {
      PointAnnotation a;
      a.x = r.f32("annotation x");
      a.y = r.f32("annotation y");
      const std::size_t at = r.offset();
      a.class_id = r.u16("annotation class");
      if (a.class_id >= cfg.num_classes) throw FormatError("annotation class out of range", at);
      s.annotations.push_back(a);
    }
    r.need(feature_count * 4, "features");
    s.features.resize(feature_count);
    for (auto& f : s.features) f = r.f32("feature");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline std::vector<char> serialize_dataset(const DatasetSplit& split) {
  io::ByteWriter w;
  w.bytes(std::string_view(kDatasetMagic, 8));
  w.u32(kDatasetFormatVersion);
  const auto& c = split.config;
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(c.height));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.u32(static_cast<std::uint32_t>(c.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.num_images));
  w.f64(c.cells_per_image);
  for (double f : c.class_frequencies) w.f64(f);
  w.f64(c.signature_noise_sigma);
  w.f64(c.background_noise_sigma);
  w.f64(c.blob_radius);
  w.f64(c.class_separation);
  w.f64(c.min_cell_separation);
  w.u32(static_cast<std::uint32_t>(c.placement_retries));
  w.u64(c.seed);
  const auto& p = split.params;
  w.f64(p.labeling_ratio);
  w.f64(p.val_frac);
  w.f64(p.test_frac);
  w.u64(p.seed);
  detail::write_samples(w, split.labeled);
  detail::write_samples(w, split.unlabeled);
  detail::write_samples(w, split.validation);
  detail::write_samples(w, split.test);
  return w.release();
}

inline DatasetSplit deserialize_dataset(const std::vector<char>& bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(8, "magic") != std::string_view(kDatasetMagic, 8))
    throw FormatError("not a dataset container (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetFormatVersion) throw VersionError(version, kDatasetFormatVersion);

  DatasetSplit split;
  auto& c = split.config;
  const std::size_t cfg_at = r.offset();
  c.num_classes = static_cast<int>(r.u32("num_classes"));
  c.height = static_cast<int>(r.u32("height"));
  c.width = static_cast<int>(r.u32("width"));
  c.feature_dim = static_cast<int>(r.u32("feature_dim"));
  c.num_images = static_cast<int>(r.u32("num_images"));
  c.cells_per_image = r.f64("cells_per_image");
  if (c.num_classes < 0 || c.num_classes > 65535)
    throw FormatError("num_classes out of range", cfg_at);
  r.need(static_cast<std::size_t>(c.num_classes) * 8, "class_frequencies");
  c.class_frequencies.resize(static_cast<std::size_t>(c.num_classes));
  for (auto& f : c.class_frequencies) f = r.f64("class frequency");
  c.signature_noise_sigma = r.f64("signature_noise_sigma");
  c.background_noise_sigma = r.f64("background_noise_sigma");
  c.blob_radius = r.f64("blob_radius");
  c.class_separation = r.f64("class_separation");
  c.min_cell_separation = r.f64("min_cell_separation");
  c.placement_retries = static_cast<int>(r.u32("placement_retries"));
  c.seed = r.u64("seed");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(), cfg_at);
  }
  auto& p = split.params;
  p.labeling_ratio = r.f64("labeling_ratio");
  p.val_frac = r.f64("val_frac");
  p.test_frac = r.f64("test_frac");
  p.seed = r.u64("split seed");
  split.labeled = detail::read_samples(r, c);
  split.unlabeled = detail::read_samples(r, c);
  split.validation = detail::read_samples(r, c);
  split.test = detail::read_samples(r, c);
  r.expect_end();
  return split;
}

inline void save_dataset(const DatasetSplit& split, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_dataset(split));
}

inline DatasetSplit load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(io::read_file(path));
}

}  // namespace sspcr
