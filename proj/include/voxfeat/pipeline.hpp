#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxfeat/checkpoint.hpp"
#include "voxfeat/digest.hpp"
#include "voxfeat/features.hpp"
#include "voxfeat/random_forest.hpp"
#include "voxfeat/trainer.hpp"
#include "voxfeat/volume_io.hpp"

namespace voxfeat {

/// Content digest of a volume: dims, spacing and normalized values.
inline std::string volume_digest(const ScalarVolume& vol) {
  Digest d;
  d.update(std::string_view("voxfeat-volume-v1"));
  const Dims dims = vol.dims();
  d.value(dims.nx).value(dims.ny).value(dims.nz);
  const Vec3 s = vol.spacing();
  d.value(s.x).value(s.y).value(s.z);
  d.update(vol.data());
  return d.hex();
}

inline void digest_model_config(Digest& d, const ModelConfig& m) {
  d.value(m.grid.levels).value(m.grid.featuresPerLevel).value(m.grid.log2TableSize).value(m.grid.baseResolution);
  d.value(m.grid.perLevelScale).value(m.patchSide).value(m.structWidth).value(m.hiddenWidth);
  d.value(static_cast<std::uint8_t>(m.fusion));
}

inline void digest_train_config(Digest& d, const TrainConfig& t) {
  d.value(t.learningRate).value(t.epochs).value(t.batchSize).value(t.seed);
  d.value(t.loss.gradient).value(t.loss.stats).value(static_cast<std::uint8_t>(t.loss.gradientMagnitudeOnly));
  d.value(t.beta1).value(t.beta2).value(t.epsilon);
}

/// Key binding trained features to (volume, model config, train config, seed).
inline std::string cache_key(const std::string& volumeDigest, const ModelConfig& m, const TrainConfig& t) {
  Digest d;
  d.update(std::string_view("voxfeat-features-v1"));
  d.update(std::string_view(volumeDigest));
  digest_model_config(d, m);
  digest_train_config(d, t);
  return d.hex();
}

// ---- config documents -------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"levels", m.grid.levels},
          {"featuresPerLevel", m.grid.featuresPerLevel},
          {"log2TableSize", m.grid.log2TableSize},
          {"baseResolution", m.grid.baseResolution},
          {"perLevelScale", m.grid.perLevelScale},
          {"patchSide", m.patchSide},
          {"structWidth", m.structWidth},
          {"hiddenWidth", m.hiddenWidth},
          {"fusion", to_string(m.fusion)}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"learningRate", t.learningRate},
          {"epochs", t.epochs},
          {"batchSize", t.batchSize},
          {"lambdaGrad", t.loss.gradient},
          {"lambdaStat", t.loss.stats},
          {"gradientTarget", t.loss.gradientMagnitudeOnly ? "magnitude" : "vector"},
          {"seed", t.seed},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon}};
}

inline nlohmann::json to_json(const ForestConfig& f) {
  return {{"trees", f.trees},
          {"minSamplesSplit", f.minSamplesSplit},
          {"maxFeatures", f.maxFeatures},
          {"maxDepth", f.maxDepth},
          {"seed", f.seed}};
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  const auto& v = j[key];
  const std::string path = prefix.empty() ? key : prefix + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    require(v.is_boolean(), ErrorKind::InvalidArgument, path + " must be a boolean", path);
  } else if constexpr (std::is_integral_v<T>) {
    require(v.is_number_integer(), ErrorKind::InvalidArgument, path + " must be an integer", path);
  } else {
    require(v.is_number(), ErrorKind::InvalidArgument, path + " must be a number", path);
  }
  out = v.get<T>();
}

}  // namespace detail

inline Fusion parse_fusion(const std::string& s) {
  if (s == "none") return Fusion::None;
  if (s == "concat") return Fusion::Concat;
  if (s == "film") return Fusion::Film;
  fail(ErrorKind::InvalidArgument, "fusion must be none|concat|film", "fusion");
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& prefix = "model") {
  require(j.is_object(), ErrorKind::InvalidArgument, prefix + " must be an object", prefix);
  ModelConfig m;
  detail::read_field(j, "levels", m.grid.levels, prefix);
  detail::read_field(j, "featuresPerLevel", m.grid.featuresPerLevel, prefix);
  detail::read_field(j, "log2TableSize", m.grid.log2TableSize, prefix);
  detail::read_field(j, "baseResolution", m.grid.baseResolution, prefix);
  detail::read_field(j, "perLevelScale", m.grid.perLevelScale, prefix);
  detail::read_field(j, "patchSide", m.patchSide, prefix);
  detail::read_field(j, "structWidth", m.structWidth, prefix);
  detail::read_field(j, "hiddenWidth", m.hiddenWidth, prefix);
  if (j.contains("fusion")) {
    require(j["fusion"].is_string(), ErrorKind::InvalidArgument, prefix + ".fusion must be a string",
            prefix + ".fusion");
    m.fusion = parse_fusion(j["fusion"].get<std::string>());
  }
  m.validate();
  return m;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& prefix = "train") {
  require(j.is_object(), ErrorKind::InvalidArgument, prefix + " must be an object", prefix);
  TrainConfig t;
  detail::read_field(j, "learningRate", t.learningRate, prefix);
  detail::read_field(j, "epochs", t.epochs, prefix);
  detail::read_field(j, "batchSize", t.batchSize, prefix);
  detail::read_field(j, "lambdaGrad", t.loss.gradient, prefix);
  detail::read_field(j, "lambdaStat", t.loss.stats, prefix);
  detail::read_field(j, "seed", t.seed, prefix);
  detail::read_field(j, "beta1", t.beta1, prefix);
  detail::read_field(j, "beta2", t.beta2, prefix);
  detail::read_field(j, "epsilon", t.epsilon, prefix);
  if (j.contains("gradientTarget")) {
    const auto& g = j["gradientTarget"];
    require(g.is_string() && (g == "vector" || g == "magnitude"), ErrorKind::InvalidArgument,
            prefix + ".gradientTarget must be vector|magnitude", prefix + ".gradientTarget");
    t.loss.gradientMagnitudeOnly = g == "magnitude";
  }
  t.validate();
  return t;
}

inline ForestConfig forest_config_from_json(const nlohmann::json& j, const std::string& prefix = "forest") {
  require(j.is_object(), ErrorKind::InvalidArgument, prefix + " must be an object", prefix);
  ForestConfig f;
  detail::read_field(j, "trees", f.trees, prefix);
  detail::read_field(j, "minSamplesSplit", f.minSamplesSplit, prefix);
  detail::read_field(j, "maxFeatures", f.maxFeatures, prefix);
  detail::read_field(j, "maxDepth", f.maxDepth, prefix);
  detail::read_field(j, "seed", f.seed, prefix);
  f.validate();
  return f;
}

// ---- feature cache ----------------------------------------------------------

/// Content-addressed store: {root}/{key}/checkpoint, features, meta.
class FeatureCache {
 public:
  explicit FeatureCache(fs::path root) : root_(std::move(root)) {}

  struct Entry {
    std::string key;
    InrModel<float> model;
    FeatureVolume features;
    nlohmann::json meta;
  };

  struct Result {
    Entry entry;
    bool hit = false;
    std::vector<std::string> warnings;
  };

  fs::path dir(const std::string& key) const { return root_ / key; }
  fs::path checkpoint_path(const std::string& key) const { return dir(key) / "checkpoint"; }
  fs::path features_path(const std::string& key) const { return dir(key) / "features"; }
  fs::path meta_path(const std::string& key) const { return dir(key) / "meta"; }

  /// A present but unreadable or inconsistent entry counts as a miss; the
  /// reason is appended to `warnings`.
  std::optional<Entry> lookup(const std::string& key, std::vector<std::string>* warnings = nullptr) const {
    if (!fs::exists(meta_path(key)) && !fs::exists(features_path(key)) && !fs::exists(checkpoint_path(key)))
      return std::nullopt;
    try {
      Entry e;
      e.key = key;
      const auto metaBytes = read_file_bytes(meta_path(key));
      e.meta = nlohmann::json::parse(metaBytes.begin(), metaBytes.end());
      require(e.meta.value("key", "") == key, ErrorKind::Format, "cache meta names a different key");
      e.model = load_checkpoint(checkpoint_path(key));
      e.features = load_features(features_path(key));
      require(e.features.sourceHash == key, ErrorKind::StaleFeatures, "cached features carry a different source hash");
      return e;
    } catch (const std::exception& ex) {
      if (warnings) warnings->push_back("cache entry " + key + " ignored: " + ex.what());
      return std::nullopt;
    }
  }

  void store(const Entry& e, FeatureStorage storage = FeatureStorage::Float32) const {
    fs::create_directories(dir(e.key));
    save_checkpoint(e.model, checkpoint_path(e.key));
    save_features(e.features, features_path(e.key), storage);
    const std::string m = e.meta.dump(2);
    write_file_bytes(meta_path(e.key), m.data(), m.size());
  }

  /// Loads features for (vol, configs) or trains, extracts and stores them.
  Result get_or_train(const ScalarVolume& vol, const ModelConfig& mc, const TrainConfig& tc,
                      const EpochCallback& onEpoch = {}, FeatureStorage storage = FeatureStorage::Float32) const {
    Result r;
    const std::string vd = volume_digest(vol);
    const std::string key = cache_key(vd, mc, tc);
    if (auto e = lookup(key, &r.warnings)) {
      r.entry = std::move(*e);
      r.hit = true;
      return r;
    }
    const DerivedFields fields = compute_derived_fields(vol, mc.patchSide);
    TrainResult tr = train(vol, fields, mc, tc, onEpoch);
    require(!tr.cancelled, ErrorKind::Precondition, "training was cancelled");
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : tr.history)
      history.push_back(
          {{"total", h.total}, {"intensity", h.intensity}, {"gradient", h.gradient}, {"mean", h.mean}, {"std", h.stddev}});
    r.entry.key = key;
    r.entry.features = extract_features(tr.model, vol, key);
    r.entry.model = std::move(tr.model);
    r.entry.meta = {{"key", key},
                    {"volumeDigest", vd},
                    {"dims", {vol.dims().nx, vol.dims().ny, vol.dims().nz}},
                    {"model", to_json(mc)},
                    {"train", to_json(tc)},
                    {"featureStorage", storage == FeatureStorage::Float16 ? "float16" : "float32"},
                    {"lossHistory", history}};
    store(r.entry, storage);
    if (storage == FeatureStorage::Float16) r.entry.features = load_features(features_path(key));
    return r;
  }

 private:
  fs::path root_;
};

}  // namespace voxfeat
