#include <gtest/gtest.h>

#include <set>

#include "support.hpp"
#include "voxfeat/workflow.hpp"

using namespace voxfeat;
using namespace voxfeat::testing;

namespace {

TrainConfig quick_train(std::uint64_t seed = 0) {
  TrainConfig t;
  t.epochs = 2;
  t.batchSize = 128;
  t.learningRate = 1e-3;
  t.seed = seed;
  return t;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Format;
}

}  // namespace

TEST(CacheKey, SensitiveToVolumeConfigAndSeed) {
  const ScalarVolume a = random_volume({6, 6, 6}, 1), b = random_volume({6, 6, 6}, 2);
  const ModelConfig mc = tiny_model();
  const TrainConfig tc = quick_train();
  const std::string k = cache_key(volume_digest(a), mc, tc);
  EXPECT_EQ(k, cache_key(volume_digest(random_volume({6, 6, 6}, 1)), mc, tc));
  EXPECT_NE(k, cache_key(volume_digest(b), mc, tc));
  EXPECT_NE(k, cache_key(volume_digest(a), tiny_model(Fusion::Concat), tc));
  EXPECT_NE(k, cache_key(volume_digest(a), mc, quick_train(1)));
  TrainConfig more = tc;
  more.epochs = 3;
  EXPECT_NE(k, cache_key(volume_digest(a), mc, more));
  // same values at a different spacing are a different volume
  const ScalarVolume spaced(a.dims(), std::vector<float>(a.data().begin(), a.data().end()), {1, 1, 2});
  EXPECT_NE(volume_digest(a), volume_digest(spaced));
}

TEST(ConfigJson, RoundTripsAndNamesBadFields) {
  ModelConfig m = tiny_model(Fusion::Concat);
  m.patchSide = 3;
  const ModelConfig m2 = model_config_from_json(to_json(m));
  EXPECT_EQ(to_json(m2), to_json(m));
  TrainConfig t = quick_train(9);
  t.loss.gradientMagnitudeOnly = true;
  EXPECT_EQ(to_json(train_config_from_json(to_json(t))), to_json(t));
  ForestConfig f;
  f.trees = 7;
  EXPECT_EQ(to_json(forest_config_from_json(to_json(f))), to_json(f));

  auto field = [](auto&& fn) -> std::string {
    try {
      fn();
    } catch (const Error& e) {
      return e.field();
    }
    return "<none>";
  };
  using nlohmann::json;
  EXPECT_EQ(field([] { model_config_from_json(json{{"levels", "8"}}); }), "model.levels");
  EXPECT_EQ(field([] { model_config_from_json(json{{"fusion", "mix"}}); }), "fusion");
  EXPECT_EQ(field([] { train_config_from_json(json{{"epochs", 1.5}}); }), "train.epochs");
  EXPECT_EQ(field([] { train_config_from_json(json{{"gradientTarget", "x"}}); }), "train.gradientTarget");
  EXPECT_EQ(field([] { forest_config_from_json(json{{"trees", true}}); }), "forest.trees");
  EXPECT_EQ(field([] { train_config_from_json(json::array()); }), "train");
}

TEST(FeatureCache, SecondLookupIsAHitWithoutTraining) {
  TempDir tmp;
  const ScalarVolume vol = random_volume({8, 8, 8}, 3);
  FeatureCache cache(tmp.path());
  int epochs = 0;
  auto count = [&](const EpochReport&) {
    ++epochs;
    return true;
  };
  const auto first = cache.get_or_train(vol, tiny_model(), quick_train(), count);
  EXPECT_FALSE(first.hit);
  EXPECT_EQ(epochs, 2);
  const auto second = cache.get_or_train(vol, tiny_model(), quick_train(), count);
  EXPECT_TRUE(second.hit);
  EXPECT_EQ(epochs, 2);
  EXPECT_EQ(second.entry.features.data, first.entry.features.data);
  EXPECT_EQ(second.entry.features.sourceHash, first.entry.key);
  EXPECT_EQ(second.entry.meta["lossHistory"].size(), 2u);
}

TEST(FeatureCache, TamperedEntryIsAMissWithWarning) {
  TempDir tmp;
  const ScalarVolume vol = random_volume({8, 8, 8}, 4);
  FeatureCache cache(tmp.path());
  const auto first = cache.get_or_train(vol, tiny_model(), quick_train());
  // chop the feature payload
  const auto bytes = read_file_bytes(cache.features_path(first.entry.key));
  write_file_bytes(cache.features_path(first.entry.key), bytes.data(), bytes.size() / 2);
  std::vector<std::string> warnings;
  EXPECT_FALSE(cache.lookup(first.entry.key, &warnings).has_value());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("ignored"), std::string::npos);

  const auto again = cache.get_or_train(vol, tiny_model(), quick_train());
  EXPECT_FALSE(again.hit);
  EXPECT_EQ(again.warnings.size(), 1u);
  EXPECT_EQ(again.entry.features.data, first.entry.features.data);  // retrained identically
  EXPECT_TRUE(cache.lookup(first.entry.key).has_value());
  EXPECT_FALSE(cache.lookup("0000").has_value());
}

TEST(FeatureCache, HalfStorageRoundsFeatures) {
  TempDir tmp;
  const ScalarVolume vol = random_volume({6, 6, 6}, 5);
  FeatureCache cache(tmp.path());
  const auto r = cache.get_or_train(vol, tiny_model(), quick_train(), {}, FeatureStorage::Float16);
  const auto hit = cache.get_or_train(vol, tiny_model(), quick_train(), {}, FeatureStorage::Float16);
  EXPECT_TRUE(hit.hit);
  EXPECT_EQ(hit.entry.features.data, r.entry.features.data);
  for (float f : r.entry.features.data) EXPECT_EQ(f, half_to_float(float_to_half(f)));
}

TEST(Workflow, TrainClassifyAndStaleChecks) {
  TempDir tmp;
  const Workdir wd{tmp / "out"};
  const Phantom ph = generate_phantom({PhantomKind::NestedSpheres, {16, 16, 16}, 0, 0.0});
  EXPECT_EQ(kind_of([&] { load_checked_features(wd, ph.volume); }), ErrorKind::MissingFeatures);
  EXPECT_EQ(kind_of([&] { extract_into(wd, ph.volume); }), ErrorKind::MissingFeatures);

  const auto t = train_into(wd, ph.volume, tiny_model(), quick_train(), {});
  EXPECT_FALSE(t.cacheHit);
  EXPECT_TRUE(fs::exists(wd.checkpoint()));
  EXPECT_TRUE(fs::exists(wd.cache() / t.key));
  const auto logBytes = read_file_bytes(wd.loss_log());
  const std::string log(logBytes.begin(), logBytes.end());
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_TRUE(train_into(wd, ph.volume, tiny_model(), quick_train(), {}).cacheHit);

  const FeatureVolume fv = load_checked_features(wd, ph.volume);
  EXPECT_EQ(fv.sourceHash, t.key);
  EXPECT_EQ(extract_into(wd, ph.volume).data, fv.data);
  const auto [mc, tc] = recorded_configs(wd);
  EXPECT_EQ(to_json(mc), to_json(tiny_model()));
  EXPECT_EQ(tc.epochs, 2);

  const ScalarVolume other = random_volume({16, 16, 16}, 1);
  EXPECT_EQ(kind_of([&] { load_checked_features(wd, other); }), ErrorKind::StaleFeatures);
  EXPECT_EQ(kind_of([&] { extract_into(wd, other); }), ErrorKind::StaleFeatures);

  const ScribbleSet s = simulate_scribbles(ph.labels, ScribbleLevel::S4, 0);
  ForestConfig fc;
  fc.trees = 10;
  const ClassifyOutcome o = classify_into(wd, fv, s, fc);
  EXPECT_EQ(o.probabilities.numClasses, 4);
  EXPECT_TRUE(fs::exists(wd.forest()));
  EXPECT_EQ(load_probabilities(wd.probabilities()).probs, o.probabilities.probs);
  EXPECT_EQ(scribbles_from_json(read_json_file(wd.scribbles(), "scribbles"), ph.volume.dims()), s);
  EXPECT_EQ(read_json_file(wd.classify_report(), "report")["classes"], 4);
  for (const auto& [c, a] : o.accuracy) EXPECT_GT(a, 0.5) << "class " << c;
}

TEST(Workflow, TransferFunctionResolution) {
  TempDir tmp;
  const Workdir wd{tmp.path()};
  EXPECT_EQ(resolve_tfs(wd, {}, 3).size(), 3u);
  write_text(wd.tf(), tf_to_json(default_tfs(2)).dump());
  EXPECT_EQ(resolve_tfs(wd, {}, 2).size(), 2u);
  EXPECT_EQ(kind_of([&] { resolve_tfs(wd, {}, 3); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { resolve_tfs(wd, tmp / "nope.json", 2); }), ErrorKind::Io);
  write_text(tmp / "bad.json", "{");
  EXPECT_EQ(kind_of([&] { resolve_tfs(wd, tmp / "bad.json", 2); }), ErrorKind::Format);
}

TEST(Workflow, ExitCodesAreDistinct) {
  std::set<int> seen;
  for (auto k : {ErrorKind::InvalidArgument, ErrorKind::Io, ErrorKind::Format, ErrorKind::Truncated,
                 ErrorKind::ShapeMismatch, ErrorKind::Precondition, ErrorKind::NonFinite, ErrorKind::MissingFeatures,
                 ErrorKind::StaleFeatures, ErrorKind::NotFound, ErrorKind::Conflict})
    EXPECT_TRUE(seen.insert(exit_code(k)).second);
  EXPECT_EQ(exit_code(ErrorKind::MissingFeatures), 10);
  EXPECT_EQ(exit_code(ErrorKind::StaleFeatures), 11);
  EXPECT_FALSE(seen.count(kUsageExitCode));
}
