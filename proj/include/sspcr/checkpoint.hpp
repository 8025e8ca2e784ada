#pragma once

#include <filesystem>

#include "sspcr/binary_io.hpp"
#include "sspcr/model.hpp"

namespace sspcr {

// Model checkpoint, little-endian:
//
//   magic      8 bytes "SSPCRCK\0"
//   version    u32     kCheckpointFormatVersion
//   arch       u32 anchor_stride, u32 patch_radius, u32 hidden_width,
//              u32 num_classes, u32 feature_dim
//   layout     u64 layout hash
//   params     u64 count, count x f32
//   optimizer  u64 step, u64 count (0 when absent), count x f32 m, count x f32 v
//
// Values are narrowed to 32-bit floats on save.
inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'P', 'C', 'R', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelArch arch;
  ParamVector params;
  AdamState optimizer;
};

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointFormatVersion);
  w.u32(static_cast<std::uint32_t>(ck.arch.anchor_stride));
  w.u32(static_cast<std::uint32_t>(ck.arch.patch_radius));
  w.u32(static_cast<std::uint32_t>(ck.arch.hidden_width));
  w.u32(static_cast<std::uint32_t>(ck.arch.num_classes));
  w.u32(static_cast<std::uint32_t>(ck.arch.feature_dim));
  w.u64(ck.params.layout);
  w.u64(ck.params.values.size());
  for (double v : ck.params.values) w.f32(static_cast<float>(v));
  w.u64(ck.optimizer.step);
  w.u64(ck.optimizer.m.size());
  for (double v : ck.optimizer.m) w.f32(static_cast<float>(v));
  for (double v : ck.optimizer.v) w.f32(static_cast<float>(v));
  return w.release();
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(8, "magic") != std::string_view(kCheckpointMagic, 8))
    throw FormatError("not a checkpoint (bad magic)", 0);
  const auto version = r.u32("version");
  if (version != kCheckpointFormatVersion) throw VersionError(version, kCheckpointFormatVersion);
  Checkpoint ck;
  const std::size_t arch_at = r.offset();
  ck.arch.anchor_stride = static_cast<int>(r.u32("anchor_stride"));
  ck.arch.patch_radius = static_cast<int>(r.u32("patch_radius"));
  ck.arch.hidden_width = static_cast<int>(r.u32("hidden_width"));
  ck.arch.num_classes = static_cast<int>(r.u32("num_classes"));
  ck.arch.feature_dim = static_cast<int>(r.u32("feature_dim"));
  try {
    ck.arch.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid arch block: ") + e.what(), arch_at);
  }
  const std::size_t layout_at = r.offset();
  ck.params.layout = r.u64("layout hash");
  if (ck.params.layout != layout_hash(ck.arch))
    throw FormatError("layout hash does not match arch", layout_at);
  const std::size_t count_at = r.offset();
  const auto count = r.u64("parameter count");
  if (count != ParamLayout(ck.arch).total) throw FormatError("parameter count does not match arch", count_at);
  r.need(count * 4, "parameters");
  ck.params.values.resize(count);
  for (auto& v : ck.params.values) v = r.f32("parameter");
  ck.optimizer.step = r.u64("optimizer step");
  const std::size_t opt_at = r.offset();
  const auto opt_count = r.u64("optimizer count");
  if (opt_count != 0 && opt_count != count)
    throw FormatError("optimizer state size does not match parameters", opt_at);
  r.need(opt_count * 8, "optimizer state");
  ck.optimizer.m.resize(opt_count);
  ck.optimizer.v.resize(opt_count);
  for (auto& v : ck.optimizer.m) v = r.f32("optimizer m");
  for (auto& v : ck.optimizer.v) v = r.f32("optimizer v");
  r.expect_end();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace sspcr
