#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "voxfeat/error.hpp"

namespace voxfeat {

/// Incremental SHA-256, used for cache keys and payload integrity.
class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    require(ctx_ && EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) == 1, ErrorKind::Io,
            "cannot initialise SHA-256");
  }

  Digest& update(const void* data, std::size_t size) {
    EVP_DigestUpdate(ctx_.get(), data, size);
    return *this;
  }
  template <class T>
  Digest& update(std::span<const T> s) {
    return update(s.data(), s.size_bytes());
  }
  Digest& update(std::string_view s) {
    const std::uint64_t n = s.size();
    update(&n, sizeof n);  // length prefix keeps concatenations unambiguous
    return update(s.data(), s.size());
  }
  template <class T>
  Digest& value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return update(&v, sizeof v);
  }

  std::string hex() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
      s.push_back(kHex[out[i] >> 4]);
      s.push_back(kHex[out[i] & 15]);
    }
    return s;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(const void* data, std::size_t size) { return Digest().update(data, size).hex(); }

}  // namespace voxfeat
