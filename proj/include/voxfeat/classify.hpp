#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "voxfeat/binio.hpp"
#include "voxfeat/features.hpp"
#include "voxfeat/random_forest.hpp"
#include "voxfeat/scribbles.hpp"
#include "voxfeat/volume_io.hpp"

namespace voxfeat {

/// Per-voxel class probabilities, index 0 = background, 1..N = ROI classes.
struct ProbabilityVolume {
  Dims dims{};
  int numClasses = 0;  // including background
  std::vector<float> probs;

  int foreground_classes() const { return numClasses - 1; }
  std::span<const float> at(std::int64_t voxel) const {
    return {probs.data() + static_cast<std::size_t>(voxel) * numClasses, static_cast<std::size_t>(numClasses)};
  }
  friend bool operator==(const ProbabilityVolume&, const ProbabilityVolume&) = default;
};

inline TrainingSet training_set(const FeatureVolume& features, const ScribbleSet& scribbles) {
  require(!scribbles.empty(), ErrorKind::Precondition, "no scribbles to train on", "scribbles");
  require(scribbles.dims() == features.dims, ErrorKind::ShapeMismatch,
          "scribbles and features refer to different volumes");
  TrainingSet t;
  t.width = features.width;
  t.numClasses = scribbles.max_class() + 1;
  t.x.reserve(scribbles.size() * static_cast<std::size_t>(features.width));
  for (const auto& e : scribbles.entries()) {
    const auto row = features.row(e.voxel);
    t.x.insert(t.x.end(), row.begin(), row.end());
    t.y.push_back(e.classId);
  }
  return t;
}

/// Fits a forest on the scribbled voxels' features.
inline RandomForest fit(const FeatureVolume& features, const ScribbleSet& scribbles, const ForestConfig& cfg) {
  // Background (class 0) always takes part so foreground ids stay aligned.
  TrainingSet t = training_set(features, scribbles);
  t.numClasses = std::max(t.numClasses, 2);
  return RandomForest::fit(t, cfg);
}

inline ProbabilityVolume predict_proba(const RandomForest& forest, const FeatureVolume& features) {
  require(forest.width() == features.width, ErrorKind::ShapeMismatch,
          "feature width " + std::to_string(features.width) + " does not match forest width " +
              std::to_string(forest.width()));
  ProbabilityVolume pv{features.dims, forest.num_classes(), {}};
  const std::int64_t n = features.voxels();
  pv.probs.resize(static_cast<std::size_t>(n) * pv.numClasses);
  constexpr std::int64_t kChunk = 4096;
  std::vector<double> p(static_cast<std::size_t>(kChunk * pv.numClasses));
  for (std::int64_t v = 0; v < n; v += kChunk) {
    const std::int64_t m = std::min(kChunk, n - v);
    forest.predict_rows(features.data.data() + v * features.width, m, p.data());
    std::transform(p.begin(), p.begin() + m * pv.numClasses, pv.probs.begin() + v * pv.numClasses,
                   [](double x) { return static_cast<float>(x); });
  }
  return pv;
}

/// Foreground argmax when it reaches tau, background otherwise. Ties go to
/// the lowest class id.
inline int background_rule(std::span<const float> p, double tau = 0.5) {
  int best = 0;
  float bestP = -1;
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] > bestP) {
      bestP = p[c];
      best = static_cast<int>(c);
    }
  return (best > 0 && double(bestP) >= tau) ? best : 0;
}

inline LabelVolume apply_background_rule(const ProbabilityVolume& pv, double tau = 0.5) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(pv.dims.count()));
  for (std::int64_t v = 0; v < pv.dims.count(); ++v)
    labels[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(background_rule(pv.at(v), tau));
  return LabelVolume(pv.dims, std::move(labels));
}

/// Fraction of each class's scribbled voxels whose argmax class matches.
inline std::map<int, double> scribble_accuracy(const ScribbleSet& scribbles, const ProbabilityVolume& pv) {
  std::map<int, std::pair<std::int64_t, std::int64_t>> hits;
  for (const auto& e : scribbles.entries()) {
    const auto p = pv.at(e.voxel);
    const auto arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    auto& h = hits[e.classId];
    h.first += arg == e.classId;
    ++h.second;
  }
  std::map<int, double> acc;
  for (const auto& [c, h] : hits) acc[c] = double(h.first) / double(h.second);
  return acc;
}

inline constexpr char kProbabilityMagic[8] = {'V', 'X', 'F', 'P', 'R', 'O', 'B', '\0'};

inline std::vector<char> encode_probabilities(const ProbabilityVolume& pv) {
  ByteWriter w;
  w.bytes(kProbabilityMagic, sizeof kProbabilityMagic);
  w.put<std::uint32_t>(1);
  w.put(pv.dims.nx);
  w.put(pv.dims.ny);
  w.put(pv.dims.nz);
  w.put<std::int32_t>(pv.numClasses);
  w.array(std::span<const float>(pv.probs));
  return w.take();
}

inline ProbabilityVolume decode_probabilities(std::span<const char> bytes) {
  ByteReader r(bytes, "probability volume");
  require(std::memcmp(r.take(sizeof kProbabilityMagic), kProbabilityMagic, sizeof kProbabilityMagic) == 0,
          ErrorKind::Format, "probability file has bad magic bytes");
  require(r.get<std::uint32_t>() == 1, ErrorKind::Format, "unsupported probability file version");
  ProbabilityVolume pv;
  pv.dims = {r.get<std::int64_t>(), r.get<std::int64_t>(), r.get<std::int64_t>()};
  pv.numClasses = r.get<std::int32_t>();
  require(pv.dims.nx > 0 && pv.dims.ny > 0 && pv.dims.nz > 0 && pv.numClasses >= 2 && pv.numClasses <= 256 &&
              pv.dims.count() < (std::int64_t{1} << 34),
          ErrorKind::Format, "probability header invalid");
  pv.probs.resize(static_cast<std::size_t>(pv.dims.count() * pv.numClasses));
  r.array(std::span<float>(pv.probs));
  return pv;
}

inline void save_probabilities(const ProbabilityVolume& pv, const fs::path& path) {
  const auto b = encode_probabilities(pv);
  write_file_bytes(path, b.data(), b.size());
}

inline ProbabilityVolume load_probabilities(const fs::path& path) {
  const auto b = read_file_bytes(path);
  return decode_probabilities(b);
}

inline void save_forest(const RandomForest& f, const fs::path& path) {
  const auto b = f.encode();
  write_file_bytes(path, b.data(), b.size());
}

inline RandomForest load_forest(const fs::path& path) {
  const auto b = read_file_bytes(path);
  return RandomForest::decode(b);
}

}  // namespace voxfeat
