#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "xmodal/error.hpp"

// Little-endian encoding helpers shared by the dataset and checkpoint
// formats. Readers name the field they failed on.

namespace xmodal::io {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits, 4);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits, 8);
  }
  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n, const char* field) {
    need(n, field);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16(const char* field) { return static_cast<std::uint16_t>(le(2, field)); }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(le(4, field)); }
  float f32(const char* field) {
    const auto bits = static_cast<std::uint32_t>(le(4, field));
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64(const char* field) {
    const std::uint64_t bits = le(8, field);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated input while reading ") + field);
  }
  std::uint64_t le(int n, const char* field) {
    need(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

// 64-bit FNV-1a, used to fingerprint artifacts in run manifests.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

}  // namespace xmodal::io
