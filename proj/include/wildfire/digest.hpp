#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace wildfire {

/// Incremental 64-bit FNV-1a digest. Used for content addressing of
/// containers, splits and configs (not for security).
class Digest {
 public:
  Digest& update(std::span<const std::byte> bytes) noexcept {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint8_t>(b);
      state_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  Digest& update(std::string_view text) noexcept {
    return update(std::as_bytes(std::span(text.data(), text.size())));
  }
  template <typename T>
  Digest& update_pod(const T& value) noexcept {
    return update(std::as_bytes(std::span(&value, 1)));
  }
  template <typename T>
  Digest& update_span(std::span<const T> values) noexcept {
    return update(std::as_bytes(values));
  }

  std::uint64_t value() const noexcept { return state_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string digest_hex(std::string_view text) { return Digest{}.update(text).hex(); }

}  // namespace wildfire
