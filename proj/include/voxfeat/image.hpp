#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "voxfeat/error.hpp"
#include "voxfeat/volume_io.hpp"

namespace voxfeat {

/// 8-bit RGBA raster, row-major from the top-left corner.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgba;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgba(static_cast<std::size_t>(w) * h * 4, 0) {
    require(w > 0 && h > 0 && w <= 16384 && h <= 16384, ErrorKind::InvalidArgument, "image size out of range");
  }

  std::uint8_t* px(int x, int y) { return rgba.data() + (static_cast<std::size_t>(y) * width + x) * 4; }
  const std::uint8_t* px(int x, int y) const { return rgba.data() + (static_cast<std::size_t>(y) * width + x) * 4; }
  std::array<std::uint8_t, 4> at(int x, int y) const {
    const auto* p = px(x, y);
    return {p[0], p[1], p[2], p[3]};
  }
  friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::uint8_t* data, std::size_t n) {
  put_be32(out, static_cast<std::uint32_t>(n));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data, data + n);
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(n + 4));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

inline constexpr std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline int paeth(int a, int b, int c) {
  const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace detail

/// Lossless 8-bit RGBA PNG, no row filtering.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> out(detail::kPngSignature, detail::kPngSignature + 8);
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 6, 0, 0, 0});  // depth 8, RGBA, deflate, filter 0, no interlace
  detail::png_chunk(out, "IHDR", ihdr.data(), ihdr.size());

  const std::size_t stride = static_cast<std::size_t>(img.width) * 4;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.px(0, y), img.px(0, y) + stride);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  require(compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK, ErrorKind::Io,
          "deflate failed");
  detail::png_chunk(out, "IDAT", z.data(), zlen);
  detail::png_chunk(out, "IEND", nullptr, 0);
  return out;
}

/// Reads 8-bit RGBA, non-interlaced PNGs (what encode_png writes, with any
/// row filter).
inline Image decode_png(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 8 && std::memcmp(bytes.data(), detail::kPngSignature, 8) == 0, ErrorKind::Format,
          "not a PNG file");
  std::size_t pos = 8;
  int w = 0, h = 0;
  std::vector<std::uint8_t> idat;
  bool end = false;
  while (!end) {
    require(pos + 12 <= bytes.size(), ErrorKind::Truncated, "PNG chunk header truncated");
    const std::uint32_t len = detail::get_be32(bytes.data() + pos);
    require(pos + 12 + std::size_t{len} <= bytes.size(), ErrorKind::Truncated, "PNG chunk truncated");
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    const uLong crc = crc32(0L, bytes.data() + pos + 4, len + 4);
    require(crc == detail::get_be32(data + len), ErrorKind::Format, "PNG chunk CRC mismatch");
    if (type == "IHDR") {
      require(len == 13, ErrorKind::Format, "bad IHDR");
      w = static_cast<int>(detail::get_be32(data));
      h = static_cast<int>(detail::get_be32(data + 4));
      require(data[8] == 8 && data[9] == 6 && data[12] == 0, ErrorKind::Format, "only 8-bit RGBA non-interlaced PNG");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      end = true;
    }
    pos += 12 + len;
  }
  Image img(w, h);
  const std::size_t stride = static_cast<std::size_t>(w) * 4;
  std::vector<std::uint8_t> raw((stride + 1) * h);
  uLongf rawLen = static_cast<uLongf>(raw.size());
  require(uncompress(raw.data(), &rawLen, idat.data(), static_cast<uLong>(idat.size())) == Z_OK &&
              rawLen == raw.size(),
          ErrorKind::Format, "PNG image data is corrupt");
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = raw.data() + y * (stride + 1);
    std::uint8_t* dst = img.px(0, y);
    const std::uint8_t* up = y > 0 ? img.px(0, y - 1) : nullptr;
    const int filter = src[0];
    require(filter <= 4, ErrorKind::Format, "unknown PNG row filter");
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= 4 ? dst[i - 4] : 0, b = up ? up[i] : 0, c = (up && i >= 4) ? up[i - 4] : 0;
      int pred = 0;
      switch (filter) {
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = detail::paeth(a, b, c); break;
        default: break;
      }
      dst[i] = static_cast<std::uint8_t>(src[1 + i] + pred);
    }
  }
  return img;
}

inline void save_png(const Image& img, const fs::path& path) {
  const auto b = encode_png(img);
  write_file_bytes(path, b.data(), b.size());
}

inline Image load_png(const fs::path& path) {
  const auto b = read_file_bytes(path);
  return decode_png({reinterpret_cast<const std::uint8_t*>(b.data()), b.size()});
}

}  // namespace voxfeat
