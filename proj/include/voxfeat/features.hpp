#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "voxfeat/binio.hpp"
#include "voxfeat/digest.hpp"
#include "voxfeat/trainer.hpp"
#include "voxfeat/volume_io.hpp"

namespace voxfeat {

/// Dense per-voxel feature vectors, voxel-major (width floats per voxel).
struct FeatureVolume {
  Dims dims{};
  int width = 0;
  std::vector<float> data;
  std::string sourceHash;

  std::int64_t voxels() const { return dims.count(); }
  std::span<const float> row(std::int64_t voxel) const {
    return {data.data() + static_cast<std::size_t>(voxel) * width, static_cast<std::size_t>(width)};
  }

  friend bool operator==(const FeatureVolume&, const FeatureVolume&) = default;
};

inline constexpr std::int64_t kMaxFeatureFloats = std::int64_t{1} << 34;

/// Runs the network over every voxel in chunks and keeps the last hidden
/// layer's activations.
inline FeatureVolume extract_features(const InrModel<float>& model, const ScalarVolume& vol,
                                      std::string sourceHash = {}, std::int64_t chunk = 8192) {
  const ModelConfig& cfg = model.config();
  const std::int64_t n = vol.size();
  require(n <= kMaxFeatureFloats / cfg.hiddenWidth, ErrorKind::InvalidArgument,
          "feature buffer would overflow for dims " + to_string(vol.dims()), "dims");
  FeatureVolume fv{vol.dims(), cfg.hiddenWidth, {}, std::move(sourceHash)};
  fv.data.resize(static_cast<std::size_t>(n) * cfg.hiddenWidth);
  // Derived fields are only targets; extraction needs the inputs alone.
  DerivedFields none;
  none.dims = vol.dims();
  Batch<float> batch;
  ForwardCache<float> cache;
  std::vector<std::int64_t> ids;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t end = std::min(n, start + chunk);
    ids.resize(static_cast<std::size_t>(end - start));
    std::iota(ids.begin(), ids.end(), start);
    assemble_batch<float>(vol, none, cfg, ids, batch, nullptr);
    forward(model, batch, cache);
    const auto& h = cache.hidden();  // width x B, column-major: one column per voxel
    std::memcpy(fv.data.data() + static_cast<std::size_t>(start) * cfg.hiddenWidth, h.data(),
                sizeof(float) * static_cast<std::size_t>(h.size()));
  }
  return fv;
}

// IEEE binary16 conversion (round to nearest even) for the optional compact cache.
inline std::uint16_t float_to_half(float f) {
  std::uint32_t x;
  std::memcpy(&x, &f, 4);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t mant = x & 0x7fffffu;
  const int exp = static_cast<int>((x >> 23) & 0xff);
  if (exp == 255) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  int e = exp - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1), half = 1u << (shift - 1);
    if (rem > half || (rem == half && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }
  std::uint32_t h = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return static_cast<std::uint16_t>(sign | h);
}

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (std::uint32_t(h) & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1f, mant = h & 0x3ffu;
  std::uint32_t x;
  if (exp == 0) {
    if (mant == 0) {
      x = sign;
    } else {
      int e = -1;
      std::uint32_t m = mant;
      do { ++e; m <<= 1; } while ((m & 0x400u) == 0);
      x = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
    }
  } else if (exp == 31) {
    x = sign | 0x7f800000u | (mant << 13);
  } else {
    x = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &x, 4);
  return f;
}

enum class FeatureStorage : std::uint8_t { Float32 = 0, Float16 = 1 };

inline constexpr char kFeatureMagic[8] = {'V', 'X', 'F', 'F', 'E', 'A', 'T', '\0'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Feature-cache file: magic, version, dims, width, dtype, sourceHash,
/// payload SHA-256, then the little-endian payload.
inline std::vector<char> encode_features(const FeatureVolume& fv, FeatureStorage storage = FeatureStorage::Float32) {
  ByteWriter payload;
  if (storage == FeatureStorage::Float32) {
    payload.array(std::span<const float>(fv.data));
  } else {
    for (float v : fv.data) payload.put(float_to_half(v));
  }
  ByteWriter w;
  w.bytes(kFeatureMagic, sizeof kFeatureMagic);
  w.put(kFeatureVersion);
  w.put(fv.dims.nx);
  w.put(fv.dims.ny);
  w.put(fv.dims.nz);
  w.put<std::int32_t>(fv.width);
  w.put(static_cast<std::uint8_t>(storage));
  w.str(fv.sourceHash);
  w.str(sha256_hex(payload.buffer().data(), payload.buffer().size()));
  w.put<std::uint64_t>(payload.buffer().size());
  w.bytes(payload.buffer().data(), payload.buffer().size());
  return w.take();
}

inline FeatureVolume decode_features(std::span<const char> bytes) {
  ByteReader r(bytes, "feature cache");
  require(std::memcmp(r.take(sizeof kFeatureMagic), kFeatureMagic, sizeof kFeatureMagic) == 0, ErrorKind::Format,
          "feature cache has bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  require(version == kFeatureVersion, ErrorKind::Format,
          "feature cache version " + std::to_string(version) + " is not supported");
  FeatureVolume fv;
  fv.dims = {r.get<std::int64_t>(), r.get<std::int64_t>(), r.get<std::int64_t>()};
  fv.width = r.get<std::int32_t>();
  const auto storage = static_cast<FeatureStorage>(r.get<std::uint8_t>());
  require(storage == FeatureStorage::Float32 || storage == FeatureStorage::Float16, ErrorKind::Format,
          "unknown feature dtype");
  fv.sourceHash = r.str();
  const std::string digest = r.str();
  const auto payloadSize = r.get<std::uint64_t>();
  require(fv.dims.nx > 0 && fv.dims.ny > 0 && fv.dims.nz > 0 && fv.width > 0 &&
              fv.dims.count() <= kMaxFeatureFloats / fv.width,
          ErrorKind::Format, "feature cache header has invalid dims");
  const std::uint64_t elem = storage == FeatureStorage::Float32 ? 4 : 2;
  const auto count = static_cast<std::uint64_t>(fv.dims.count()) * static_cast<std::uint64_t>(fv.width);
  require(payloadSize == count * elem, ErrorKind::ShapeMismatch, "feature payload size does not match header");
  const char* payload = r.take(payloadSize);
  require(sha256_hex(payload, payloadSize) == digest, ErrorKind::Format, "feature payload digest mismatch");
  fv.data.resize(count);
  if (storage == FeatureStorage::Float32) {
    std::memcpy(fv.data.data(), payload, payloadSize);
  } else {
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint16_t h;
      std::memcpy(&h, payload + i * 2, 2);
      fv.data[i] = half_to_float(h);
    }
  }
  return fv;
}

inline void save_features(const FeatureVolume& fv, const fs::path& path,
                          FeatureStorage storage = FeatureStorage::Float32) {
  const auto bytes = encode_features(fv, storage);
  write_file_bytes(path, bytes.data(), bytes.size());
}

inline FeatureVolume load_features(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_features(bytes);
}

/// The 5-wide explicit baseline: intensity, gradient magnitude, normalized x/y/z.
inline FeatureVolume local_features(const ScalarVolume& vol, const DerivedFields& fields) {
  FeatureVolume fv{vol.dims(), 5, {}, {}};
  fv.data.resize(static_cast<std::size_t>(vol.size()) * 5);
  for (std::int64_t i = 0; i < vol.size(); ++i) {
    const auto c = vol.normalized_coord(i);
    float* row = fv.data.data() + static_cast<std::size_t>(i) * 5;
    row[0] = vol[i];
    row[1] = fields.gradient_magnitude(i);
    row[2] = static_cast<float>(c[0]);
    row[3] = static_cast<float>(c[1]);
    row[4] = static_cast<float>(c[2]);
  }
  return fv;
}

}  // namespace voxfeat
