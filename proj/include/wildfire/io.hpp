#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "wildfire/error.hpp"

namespace wildfire {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// Little-endian encoder for the binary formats.
class ByteWriter {
 public:
  void bytes(std::string_view raw) { out_.append(raw); }
  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out_.append(b, 4);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
    } else {
      for (float v : values) f32(v);
    }
  }
  const std::string& str() const noexcept { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

/// Little-endian decoder; every failure reports the offending offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  void f32s(std::span<float> out, const char* what) {
    need(out.size() * sizeof(float), what);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), data_.data() + pos_, out.size() * sizeof(float));
      pos_ += out.size() * sizeof(float);
    } else {
      for (float& v : out) v = f32(what);
    }
  }
  [[noreturn]] void fail(const std::string& why) const { throw FormatError(why, pos_); }
  [[noreturn]] void fail_at(const std::string& why, std::size_t at) const { throw FormatError(why, at); }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                            " bytes, " + std::to_string(remaining()) + " left",
                        pos_);
    }
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it into place, so readers
/// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace wildfire
