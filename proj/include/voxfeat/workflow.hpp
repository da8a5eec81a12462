#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "voxfeat/classify.hpp"
#include "voxfeat/evaluation.hpp"
#include "voxfeat/image.hpp"
#include "voxfeat/pipeline.hpp"
#include "voxfeat/render.hpp"
#include "voxfeat/viewpoints.hpp"

namespace voxfeat {

/// Process exit status per error family; 0 is success, 1 anything unexpected.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return 2;
    case ErrorKind::Io: return 3;
    case ErrorKind::Format: return 4;
    case ErrorKind::Truncated: return 5;
    case ErrorKind::ShapeMismatch: return 6;
    case ErrorKind::Precondition: return 7;
    case ErrorKind::NonFinite: return 8;
    case ErrorKind::MissingFeatures: return 10;
    case ErrorKind::StaleFeatures: return 11;
    case ErrorKind::NotFound: return 12;
    case ErrorKind::Conflict: return 13;
  }
  return 1;
}
inline constexpr int kUsageExitCode = 64;

/// Artifact layout of a batch output directory.
struct Workdir {
  fs::path root;

  fs::path checkpoint() const { return root / "checkpoint"; }
  fs::path features() const { return root / "features"; }
  fs::path meta() const { return root / "meta.json"; }
  fs::path loss_log() const { return root / "loss.csv"; }
  fs::path scribbles() const { return root / "scribbles.json"; }
  fs::path forest() const { return root / "forest"; }
  fs::path probabilities() const { return root / "probabilities"; }
  fs::path classify_report() const { return root / "classify.json"; }
  fs::path tf() const { return root / "tf.json"; }
  fs::path render_image(const std::string& name = "render") const { return root / (name + ".png"); }
  fs::path viewpoint_report() const { return root / "viewpoints.json"; }
  fs::path thumbnail(int rank) const { return root / ("viewpoint_" + std::to_string(rank) + ".png"); }
  fs::path eval_report() const { return root / "eval.json"; }
  fs::path cache() const { return root / "cache"; }
};

inline nlohmann::json read_json_file(const fs::path& p, const char* field) {
  if (!fs::exists(p)) fail(ErrorKind::Io, "missing file " + p.string(), field);
  const auto bytes = read_file_bytes(p);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, p.string() + ": " + e.what(), field);
  }
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_bytes(p, s.data(), s.size());
}

struct TrainOutcome {
  bool cacheHit = false;
  std::vector<std::string> warnings;
  std::string key;
};

/// Trains (or reuses a cached result) and materializes checkpoint, features,
/// meta and the loss log in the workdir.
inline TrainOutcome train_into(const Workdir& wd, const ScalarVolume& vol, const ModelConfig& mc, const TrainConfig& tc,
                               const fs::path& cacheRoot, const EpochCallback& onEpoch = {},
                               FeatureStorage storage = FeatureStorage::Float32) {
  fs::create_directories(wd.root);
  FeatureCache cache(cacheRoot.empty() ? wd.cache() : cacheRoot);
  auto r = cache.get_or_train(vol, mc, tc, onEpoch, storage);
  save_checkpoint(r.entry.model, wd.checkpoint());
  save_features(r.entry.features, wd.features(), storage);
  write_text(wd.meta(), r.entry.meta.dump(2));
  std::ostringstream log;
  log << "epoch,total,intensity,gradient,mean,std\n";
  log.precision(9);
  int e = 0;
  for (const auto& h : r.entry.meta["lossHistory"])
    log << ++e << ',' << h["total"].get<double>() << ',' << h["intensity"].get<double>() << ','
        << h["gradient"].get<double>() << ',' << h["mean"].get<double>() << ',' << h["std"].get<double>() << '\n';
  write_text(wd.loss_log(), log.str());
  return {r.hit, std::move(r.warnings), r.entry.key};
}

/// Recomputes features from the workdir checkpoint.
inline FeatureVolume extract_into(const Workdir& wd, const ScalarVolume& vol,
                                  FeatureStorage storage = FeatureStorage::Float32) {
  if (!fs::exists(wd.checkpoint()))
    fail(ErrorKind::MissingFeatures, "no checkpoint in " + wd.root.string() + "; run train first", "checkpoint");
  const InrModel<float> model = load_checkpoint(wd.checkpoint());
  const nlohmann::json meta = read_json_file(wd.meta(), "meta");
  const std::string key = cache_key(volume_digest(vol), model_config_from_json(meta.at("model")),
                                    train_config_from_json(meta.at("train")));
  require(meta.value("key", "") == key, ErrorKind::StaleFeatures, "checkpoint was trained on a different volume",
          "volume");
  FeatureVolume fv = extract_features(model, vol, key);
  save_features(fv, wd.features(), storage);
  return storage == FeatureStorage::Float32 ? fv : load_features(wd.features());
}

/// Features of the workdir, checked against `vol`: a missing file is
/// MissingFeatures, a source hash not matching the volume is StaleFeatures.
inline FeatureVolume load_checked_features(const Workdir& wd, const ScalarVolume& vol) {
  if (!fs::exists(wd.features()))
    fail(ErrorKind::MissingFeatures, "no feature cache in " + wd.root.string() + "; run train first", "features");
  FeatureVolume fv = load_features(wd.features());
  if (!fs::exists(wd.meta())) fail(ErrorKind::StaleFeatures, "feature cache has no meta document", "meta");
  const nlohmann::json meta = read_json_file(wd.meta(), "meta");
  const std::string key = cache_key(volume_digest(vol), model_config_from_json(meta.at("model")),
                                    train_config_from_json(meta.at("train")));
  require(fv.sourceHash == key, ErrorKind::StaleFeatures,
          "feature cache was computed for a different volume or configuration (sourceHash mismatch)", "features");
  require(fv.dims == vol.dims(), ErrorKind::StaleFeatures, "feature dims differ from the volume", "features");
  return fv;
}

/// Model and train configs recorded with the workdir's features.
inline std::pair<ModelConfig, TrainConfig> recorded_configs(const Workdir& wd) {
  const nlohmann::json meta = read_json_file(wd.meta(), "meta");
  return {model_config_from_json(meta.at("model")), train_config_from_json(meta.at("train"))};
}

struct ClassifyOutcome {
  RandomForest forest;
  ProbabilityVolume probabilities;
  std::map<int, double> accuracy;
};

inline nlohmann::json accuracy_json(const std::map<int, double>& acc) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, a] : acc) j[std::to_string(c)] = a;
  return j;
}

inline nlohmann::json tallies_json(const ScribbleSet& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, n] : s.class_tallies()) j[std::to_string(c)] = n;
  return j;
}

inline ClassifyOutcome classify_into(const Workdir& wd, const FeatureVolume& fv, const ScribbleSet& scribbles,
                                     const ForestConfig& fc) {
  ClassifyOutcome o{fit(fv, scribbles, fc), {}, {}};
  o.probabilities = predict_proba(o.forest, fv);
  o.accuracy = scribble_accuracy(scribbles, o.probabilities);
  save_forest(o.forest, wd.forest());
  save_probabilities(o.probabilities, wd.probabilities());
  write_text(wd.scribbles(), nlohmann::json{{"scribbles", scribbles_to_json(scribbles)}}.dump());
  write_text(wd.classify_report(), nlohmann::json{{"classes", o.probabilities.numClasses},
                                                  {"scribbles", scribbles.size()},
                                                  {"tallies", tallies_json(scribbles)},
                                                  {"forest", to_json(fc)},
                                                  {"accuracy", accuracy_json(o.accuracy)}}
                                       .dump(2));
  return o;
}

/// TFs from the workdir (or `explicitPath`), else defaults for `fg` classes.
inline TfSet resolve_tfs(const Workdir& wd, const fs::path& explicitPath, int fg) {
  const fs::path p = explicitPath.empty() ? wd.tf() : explicitPath;
  if (!explicitPath.empty() || fs::exists(p)) {
    TfSet tfs = tf_from_json(read_json_file(p, "tf"));
    require(static_cast<int>(tfs.size()) == fg, ErrorKind::InvalidArgument,
            "transfer function document has " + std::to_string(tfs.size()) + " classes, probabilities have " +
                std::to_string(fg),
            "classes");
    return tfs;
  }
  return default_tfs(fg);
}

inline std::string dims_string(Dims d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

}  // namespace voxfeat
