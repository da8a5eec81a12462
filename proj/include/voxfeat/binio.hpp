#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voxfeat/error.hpp"

namespace voxfeat {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <class T>
  void array(std::span<const T> s) {
    bytes(s.data(), s.size_bytes());
  }

  const std::vector<char>& buffer() const { return buf_; }
  std::vector<char> take() { return std::move(buf_); }

 private:
  std::vector<char> buf_;
};

/// Reads what ByteWriter wrote; running off the end raises a Truncated error.
class ByteReader {
 public:
  explicit ByteReader(std::span<const char> data, std::string what = "file") : data_(data), what_(std::move(what)) {}

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string str(std::size_t maxLen = 1 << 20) {
    const auto n = get<std::uint32_t>();
    require(n <= maxLen, ErrorKind::Format, what_ + ": string field too long");
    const char* p = take(n);
    return {p, n};
  }
  template <class T>
  void array(std::span<T> out) {
    std::memcpy(out.data(), take(out.size_bytes()), out.size_bytes());
  }
  const char* take(std::size_t n) {
    require(n <= remaining(), ErrorKind::Truncated,
            what_ + " is truncated (needed " + std::to_string(n) + " more bytes, " + std::to_string(remaining()) +
                " left)");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::span<const char> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace voxfeat
