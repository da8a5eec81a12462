#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxfeat/error.hpp"
#include "voxfeat/volume.hpp"

namespace voxfeat {

namespace fs = std::filesystem;

// Raw payload `name.raw` sits next to a JSON sidecar `name.raw.json`:
//   {"dims":[nx,ny,nz], "dtype":"uint8|uint16|float32", "spacing":[sx,sy,sz], "endianness":"little"}
struct VolumeMetadata {
  Dims dims{};
  std::string dtype = "float32";
  Vec3 spacing{1, 1, 1};
  std::string endianness = "little";
};

inline fs::path metadata_path(const fs::path& payload) { return fs::path(payload.string() + ".json"); }

inline fs::path payload_path(const fs::path& path) {
  if (path.extension() == ".json") return path.parent_path() / path.stem();
  return path;
}

inline std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path.string());
}

inline VolumeMetadata parse_metadata(const nlohmann::json& j) {
  VolumeMetadata m;
  try {
    const auto& d = j.at("dims");
    require(d.is_array() && d.size() == 3, ErrorKind::Format, "dims must be a 3-array", "dims");
    m.dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    m.dtype = j.at("dtype").get<std::string>();
    if (j.contains("spacing")) {
      const auto& s = j["spacing"];
      require(s.is_array() && s.size() == 3, ErrorKind::Format, "spacing must be a 3-array", "spacing");
      m.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    }
    if (j.contains("endianness")) m.endianness = j["endianness"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("bad volume metadata: ") + e.what());
  }
  require(m.dims.nx > 0 && m.dims.ny > 0 && m.dims.nz > 0, ErrorKind::Format, "dims must be positive", "dims");
  require(m.endianness == "little" || m.endianness == "big", ErrorKind::Format,
          "endianness must be little or big", "endianness");
  return m;
}

inline nlohmann::json metadata_json(const VolumeMetadata& m) {
  return {{"dims", {m.dims.nx, m.dims.ny, m.dims.nz}},
          {"dtype", m.dtype},
          {"spacing", {m.spacing.x, m.spacing.y, m.spacing.z}},
          {"endianness", m.endianness}};
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "uint8") return 1;
  if (dtype == "uint16") return 2;
  if (dtype == "float32") return 4;
  fail(ErrorKind::Format, "unsupported element type '" + dtype + "'", "dtype");
}

/// Decodes a raw payload to doubles and min-max normalizes into [0,1].
/// A constant payload maps to all zeros.
inline ScalarVolume decode_volume(const VolumeMetadata& meta, std::span<const char> payload) {
  const std::size_t elem = dtype_size(meta.dtype);
  const auto count = static_cast<std::size_t>(meta.dims.count());
  require(payload.size() == count * elem, ErrorKind::ShapeMismatch,
          "payload has " + std::to_string(payload.size()) + " bytes, metadata implies " +
              std::to_string(count * elem));
  const bool swap = (meta.endianness == "big") != (std::endian::native == std::endian::big);

  std::vector<double> raw(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char b[4];
    std::memcpy(b, payload.data() + i * elem, elem);
    if (swap) std::reverse(b, b + elem);
    if (meta.dtype == "uint8") {
      raw[i] = b[0];
    } else if (meta.dtype == "uint16") {
      std::uint16_t v;
      std::memcpy(&v, b, 2);
      raw[i] = v;
    } else {
      float v;
      std::memcpy(&v, b, 4);
      if (!std::isfinite(v)) fail(ErrorKind::Format, "non-finite value at voxel " + std::to_string(i), "data");
      raw[i] = v;
    }
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : raw) { lo = std::min(lo, v); hi = std::max(hi, v); }
  std::vector<float> data(count, 0.0f);
  if (hi > lo)
    for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<float>((raw[i] - lo) / (hi - lo));
  return ScalarVolume(meta.dims, std::move(data), meta.spacing);
}

inline VolumeMetadata read_metadata(const fs::path& payload) {
  const auto bytes = read_file_bytes(metadata_path(payload));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("metadata is not valid JSON: ") + e.what());
  }
  return parse_metadata(j);
}

inline ScalarVolume load_volume(const fs::path& path) {
  const fs::path payload = payload_path(path);
  const VolumeMetadata meta = read_metadata(payload);
  const auto bytes = read_file_bytes(payload);
  return decode_volume(meta, bytes);
}

/// Writes a volume as float32 little-endian plus sidecar.
inline void save_volume(const ScalarVolume& vol, const fs::path& payload) {
  static_assert(std::endian::native == std::endian::little, "payload writer assumes a little-endian host");
  write_file_bytes(payload, vol.data().data(), vol.data().size_bytes());
  const std::string meta = metadata_json({vol.dims(), "float32", vol.spacing(), "little"}).dump(2);
  write_file_bytes(metadata_path(payload), meta.data(), meta.size());
}

inline void save_labels(const LabelVolume& labels, const fs::path& payload) {
  write_file_bytes(payload, labels.labels().data(), labels.labels().size());
  const std::string meta = metadata_json({labels.dims(), "uint8", {1, 1, 1}, "little"}).dump(2);
  write_file_bytes(metadata_path(payload), meta.data(), meta.size());
}

inline LabelVolume load_labels(const fs::path& path) {
  const fs::path payload = payload_path(path);
  const VolumeMetadata meta = read_metadata(payload);
  require(meta.dtype == "uint8", ErrorKind::Format, "label payload must be uint8", "dtype");
  const auto bytes = read_file_bytes(payload);
  require(static_cast<std::int64_t>(bytes.size()) == meta.dims.count(), ErrorKind::ShapeMismatch,
          "label payload size does not match dims");
  return LabelVolume(meta.dims, std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

}  // namespace voxfeat
