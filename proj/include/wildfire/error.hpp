#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wildfire {

/// Raised when tensor extents are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward computation produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the recording tape (non-scalar loss, consumed tape, ...).
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed binary container or checkpoint. Carries the byte offset at
/// which decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A metric that is not defined for the given input (single class, zero
/// variance, ...).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace wildfire
