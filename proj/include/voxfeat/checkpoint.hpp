#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "voxfeat/binio.hpp"
#include "voxfeat/inr_model.hpp"
#include "voxfeat/volume_io.hpp"

namespace voxfeat {

inline constexpr char kCheckpointMagic[8] = {'V', 'X', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_model_config(ByteWriter& w, const ModelConfig& c) {
  w.put<std::int32_t>(c.grid.levels);
  w.put<std::int32_t>(c.grid.featuresPerLevel);
  w.put<std::int32_t>(c.grid.log2TableSize);
  w.put<std::int32_t>(c.grid.baseResolution);
  w.put<double>(c.grid.perLevelScale);
  w.put<std::int32_t>(c.patchSide);
  w.put<std::int32_t>(c.structWidth);
  w.put<std::int32_t>(c.hiddenWidth);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.fusion));
}

inline ModelConfig read_model_config(ByteReader& r) {
  ModelConfig c;
  c.grid.levels = r.get<std::int32_t>();
  c.grid.featuresPerLevel = r.get<std::int32_t>();
  c.grid.log2TableSize = r.get<std::int32_t>();
  c.grid.baseResolution = r.get<std::int32_t>();
  c.grid.perLevelScale = r.get<double>();
  c.patchSide = r.get<std::int32_t>();
  c.structWidth = r.get<std::int32_t>();
  c.hiddenWidth = r.get<std::int32_t>();
  c.fusion = static_cast<Fusion>(r.get<std::uint8_t>());
  return c;
}

/// Layout: magic, version, config block, parameter count (u64), float32 payload.
inline std::vector<char> encode_checkpoint(const InrModel<float>& model) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put(kCheckpointVersion);
  write_model_config(w, model.config());
  w.put<std::uint64_t>(model.params().size());
  w.array(model.params());
  return w.take();
}

inline InrModel<float> decode_checkpoint(std::span<const char> bytes) {
  ByteReader r(bytes, "checkpoint");
  require(std::memcmp(r.take(sizeof kCheckpointMagic), kCheckpointMagic, sizeof kCheckpointMagic) == 0,
          ErrorKind::Format, "checkpoint has bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Format,
          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const ModelConfig cfg = read_model_config(r);
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::ShapeMismatch, std::string("checkpoint config block is invalid: ") + e.what());
  }
  const auto stored = r.get<std::uint64_t>();
  const ParamLayout layout(cfg);
  require(stored == static_cast<std::uint64_t>(layout.total), ErrorKind::ShapeMismatch,
          "checkpoint holds " + std::to_string(stored) + " parameters but its config implies " +
              std::to_string(layout.total));
  InrModel<float> model(cfg);
  r.array(model.params());
  require(r.remaining() == 0, ErrorKind::Format, "checkpoint has trailing bytes");
  return model;
}

inline void save_checkpoint(const InrModel<float>& model, const fs::path& path) {
  const auto bytes = encode_checkpoint(model);
  write_file_bytes(path, bytes.data(), bytes.size());
}

inline InrModel<float> load_checkpoint(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint(bytes);
}

}  // namespace voxfeat
