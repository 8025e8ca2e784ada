#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sspcr {

// Invalid user-facing configuration (dataset, split, arch, training, CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a precondition (mismatched dims, layouts, indices).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite loss, gradient or parameter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or truncated binary container.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class VersionError : public std::runtime_error {
 public:
  VersionError(std::uint32_t found, std::uint32_t expected)
      : std::runtime_error("unsupported container version " + std::to_string(found) +
                           " (expected " + std::to_string(expected) + ")"),
        found_(found) {}

  std::uint32_t found() const noexcept { return found_; }

 private:
  std::uint32_t found_;
};

}  // namespace sspcr
