#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "voxfeat/classify.hpp"

using namespace voxfeat;
using voxfeat::testing::TempDir;

namespace {

// Two Gaussian blobs per class in 4-D, well separated along feature 0.
TrainingSet blobs(int perClass, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 0.2f);
  TrainingSet t;
  t.width = 4;
  t.numClasses = classes;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < perClass; ++i) {
      t.x.push_back(float(c) * 2.f + n(rng));
      for (int k = 1; k < 4; ++k) t.x.push_back(n(rng));
      t.y.push_back(c);
    }
  return t;
}

ForestConfig small_forest(int trees = 25) {
  ForestConfig f;
  f.trees = trees;
  f.seed = 9;
  return f;
}

}  // namespace

TEST(Forest, SeparatesBlobs) {
  const TrainingSet t = blobs(40, 3, 1);
  const RandomForest f = RandomForest::fit(t, small_forest());
  const TrainingSet test = blobs(20, 3, 2);
  int correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto p = f.predict({test.x.data() + i * 4, 4});
    correct += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == test.y[i];
  }
  EXPECT_GE(correct, 58);
}

TEST(Forest, ProbabilitiesSumToOne) {
  const RandomForest f = RandomForest::fit(blobs(30, 3, 1), small_forest());
  std::mt19937 rng(0);
  std::uniform_real_distribution<float> u(-2, 6);
  for (int i = 0; i < 50; ++i) {
    const std::vector<float> row{u(rng), u(rng), u(rng), u(rng)};
    const auto p = f.predict(row);
    double s = 0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forest, PureTrainingLeavesReproduceLabels) {
  // no bootstrap and unlimited depth: every training point lands in a pure leaf
  const TrainingSet t = blobs(20, 2, 3);
  ForestConfig cfg = small_forest(5);
  cfg.minSamplesSplit = 2;
  const RandomForest f = RandomForest::fit(t, cfg);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto p = f.predict({t.x.data() + i * 4, 4});
    EXPECT_DOUBLE_EQ(p[static_cast<std::size_t>(t.y[i])], 1.0);
  }
}

TEST(Forest, BatchedPredictionMatchesRowByRow) {
  const TrainingSet t = blobs(30, 3, 4);
  const RandomForest f = RandomForest::fit(t, small_forest());
  const TrainingSet q = blobs(100, 3, 5);  // 300 rows spans two blocks
  std::vector<double> batched(q.size() * 3);
  f.predict_rows(q.x.data(), static_cast<std::int64_t>(q.size()), batched.data());
  std::vector<double> one(3);
  for (std::size_t i = 0; i < q.size(); ++i) {
    f.predict_into({q.x.data() + i * 4, 4}, one);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(batched[i * 3 + c], one[static_cast<std::size_t>(c)]);
  }
}

TEST(Forest, DeterministicAndSeedSensitive) {
  const TrainingSet t = blobs(30, 3, 4);
  const RandomForest a = RandomForest::fit(t, small_forest());
  EXPECT_EQ(a.encode(), RandomForest::fit(t, small_forest()).encode());
  ForestConfig other = small_forest();
  other.seed = 10;
  EXPECT_NE(a.encode(), RandomForest::fit(t, other).encode());
}

TEST(Forest, MaxDepthIsHonoured) {
  ForestConfig cfg = small_forest(4);
  cfg.maxDepth = 2;
  cfg.minSamplesSplit = 2;
  const RandomForest f = RandomForest::fit(blobs(30, 3, 6), cfg);
  for (const auto& tree : f.trees()) EXPECT_LE(tree.depth(), 2);
}

TEST(Forest, CodecRoundTripAndErrors) {
  TempDir tmp;
  const RandomForest f = RandomForest::fit(blobs(20, 3, 1), small_forest(7));
  save_forest(f, tmp / "forest");
  EXPECT_EQ(load_forest(tmp / "forest"), f);
  auto bytes = f.encode();
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(RandomForest::decode(bytes), Error);
  bytes = f.encode();
  bytes[1] = '?';
  EXPECT_THROW(RandomForest::decode(bytes), Error);
}

TEST(Forest, RejectsDegenerateTraining) {
  TrainingSet one = blobs(10, 1, 1);
  one.numClasses = 2;
  try {
    RandomForest::fit(one, small_forest());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Precondition);
  }
  TrainingSet bad = blobs(10, 2, 1);
  bad.y[0] = 7;
  EXPECT_THROW(RandomForest::fit(bad, small_forest()), Error);
  ForestConfig cfg;
  cfg.trees = 0;
  EXPECT_THROW(RandomForest::fit(blobs(10, 2, 1), cfg), Error);
  const RandomForest f = RandomForest::fit(blobs(10, 2, 1), small_forest(2));
  const std::vector<float> narrow(3, 0.f);
  EXPECT_THROW(f.predict(narrow), Error);
}

TEST(Forest, DefaultFeatureSubsetIsSqrtWidth) {
  const ForestConfig cfg;
  EXPECT_EQ(cfg.features_per_split(64), 8);
  EXPECT_EQ(cfg.features_per_split(5), 2);
  EXPECT_EQ(cfg.features_per_split(1), 1);
}

TEST(Classify, BackgroundRule) {
  const std::vector<float> fg{0.2f, 0.7f, 0.1f};
  EXPECT_EQ(background_rule(fg), 1);
  const std::vector<float> weak{0.55f, 0.45f, 0.0f};
  EXPECT_EQ(background_rule(weak), 0);
  const std::vector<float> tie{0.0f, 0.5f, 0.5f};
  EXPECT_EQ(background_rule(tie), 1);
  EXPECT_EQ(background_rule(weak, 0.4), 1);
}

TEST(Classify, FitsFeatureVolumeFromScribbles) {
  // width-1 features: voxel x coordinate; class = left/right half
  const Dims d{6, 2, 2};
  FeatureVolume fv{d, 1, {}, "k"};
  for (std::int64_t i = 0; i < d.count(); ++i) fv.data.push_back(float(d.unravel(i).x));
  ScribbleSet s(d);
  s.add(Index3{0, 0, 0}, 0);
  s.add(Index3{1, 1, 1}, 0);
  s.add(Index3{4, 0, 1}, 1);
  s.add(Index3{5, 1, 0}, 1);
  ForestConfig cfg = small_forest(5);
  cfg.minSamplesSplit = 2;
  const RandomForest f = fit(fv, s, cfg);
  const ProbabilityVolume pv = predict_proba(f, fv);
  EXPECT_EQ(pv.numClasses, 2);
  for (std::int64_t i = 0; i < d.count(); ++i) {
    const std::int64_t x = d.unravel(i).x;
    if (x <= 1) EXPECT_FLOAT_EQ(pv.at(i)[0], 1.f);
    if (x >= 4) EXPECT_FLOAT_EQ(pv.at(i)[1], 1.f);
  }
  const auto acc = scribble_accuracy(s, pv);
  EXPECT_DOUBLE_EQ(acc.at(0), 1.0);
  EXPECT_DOUBLE_EQ(acc.at(1), 1.0);
  const LabelVolume lab = apply_background_rule(pv);
  EXPECT_EQ(lab.at({5, 0, 0}), 1);
  EXPECT_EQ(lab.at({0, 1, 0}), 0);
}

TEST(Classify, ForegroundOnlyScribblesStillIncludeBackgroundColumn) {
  const Dims d{4, 2, 2};
  FeatureVolume fv{d, 1, {}, ""};
  for (std::int64_t i = 0; i < d.count(); ++i) fv.data.push_back(float(d.unravel(i).x));
  ScribbleSet s(d);
  s.add(Index3{0, 0, 0}, 1);
  s.add(Index3{3, 0, 0}, 2);
  const RandomForest f = fit(fv, s, small_forest(3));
  EXPECT_EQ(f.num_classes(), 3);
  const ProbabilityVolume pv = predict_proba(f, fv);
  EXPECT_FLOAT_EQ(pv.at(0)[0], 0.f);
}

TEST(Classify, ErrorsOnEmptyOrMismatchedScribbles) {
  const Dims d{4, 2, 2};
  FeatureVolume fv{d, 1, std::vector<float>(16, 0.f), ""};
  EXPECT_THROW(fit(fv, ScribbleSet(d), small_forest()), Error);
  ScribbleSet other(Dims{2, 2, 2});
  other.add(0, 1);
  EXPECT_THROW(fit(fv, other, small_forest()), Error);
}

TEST(Classify, ProbabilityFileRoundTrip) {
  TempDir tmp;
  ProbabilityVolume pv{{2, 2, 2}, 3, {}};
  for (int i = 0; i < 24; ++i) pv.probs.push_back(float(i % 3) / 3.f);
  save_probabilities(pv, tmp / "p");
  EXPECT_EQ(load_probabilities(tmp / "p"), pv);
  auto b = encode_probabilities(pv);
  b.resize(b.size() - 1);
  EXPECT_THROW(decode_probabilities(b), Error);
}
