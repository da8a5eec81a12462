#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace voxfeat;
using namespace voxfeat::testing;

namespace {

// Three tight blobs in 2-D.
std::vector<float> blob_rows(int perBlob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 0.05f);
  const float centers[3][2] = {{0, 0}, {5, 0}, {0, 5}};
  std::vector<float> x;
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < perBlob; ++i) {
      x.push_back(centers[b][0] + n(rng));
      x.push_back(centers[b][1] + n(rng));
    }
  return x;
}

}  // namespace

TEST(ViewpointOracle, Entropy) {
  const auto r = entropy_oracle();
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(ViewpointOracle, GreedyWithinBoundOfOptimum) {
  const auto r = greedy_bound_oracle(20);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(Entropy, WeightsBySizeAndMatchesScalarLoop) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution bit(0.5);
  std::uniform_int_distribution<int> sz(1, 50);
  VisibilityMatrix vm(6, 5);
  std::vector<std::int64_t> sizes;
  for (int k = 0; k < 5; ++k) sizes.push_back(sz(rng));
  for (int m = 0; m < 6; ++m)
    for (int k = 0; k < 5; ++k) vm.set(m, k, bit(rng));
  const auto h = entropy_scores(vm, sizes);
  for (int m = 0; m < 6; ++m) {
    double total = 0;
    for (int k = 0; k < 5; ++k)
      if (vm(m, k)) total += double(sizes[static_cast<std::size_t>(k)]);
    double want = 0;
    for (int k = 0; k < 5; ++k)
      if (vm(m, k)) {
        const double p = double(sizes[static_cast<std::size_t>(k)]) / total;
        want -= p * std::log(p);
      }
    EXPECT_NEAR(h[static_cast<std::size_t>(m)], want, 1e-12);
  }
  EXPECT_THROW(entropy_scores(vm, {1, 2}), Error);
  EXPECT_THROW(entropy_scores(vm, {1, 2, 3, 4, 0}), Error);
}

TEST(Greedy, PicksHighestEntropyAndStopsAtTarget) {
  // view 0 sees {0}, view 1 sees {0,1,2,3}, view 2 sees {4}
  VisibilityMatrix vm(3, 5);
  vm.set(0, 0, true);
  for (int k = 0; k < 4; ++k) vm.set(1, k, true);
  vm.set(2, 4, true);
  const std::vector<std::int64_t> sizes(5, 1);
  const auto all = greedy_select(vm, sizes, {1.0, 8});
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].index, 1);
  EXPECT_NEAR(all[0].entropy, std::log(4.0), 1e-12);
  EXPECT_EQ(all[0].newlyCovered, 4);
  EXPECT_EQ(all[1].index, 2);  // view 0 adds nothing and is never taken
  EXPECT_DOUBLE_EQ(all[1].coverage, 1.0);
  EXPECT_EQ(greedy_select(vm, sizes, {0.8, 8}).size(), 1u);
  EXPECT_EQ(greedy_select(vm, sizes, {1.0, 1}).size(), 1u);
}

TEST(Greedy, TiesPreferMoreNewClustersThenLowerIndex) {
  // entropy 0 everywhere (single clusters) -> tie on entropy
  VisibilityMatrix vm(3, 3);
  vm.set(0, 0, true);
  vm.set(1, 1, true);
  vm.set(2, 2, true);
  const auto s = greedy_select(vm, {1, 1, 1}, {1.0, 8});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].index, 0);
  EXPECT_EQ(s[1].index, 1);
  // a view with ln 2 entropy beats a single-cluster view regardless of index
  VisibilityMatrix v2(2, 3);
  v2.set(0, 0, true);
  v2.set(1, 1, true);
  v2.set(1, 2, true);
  EXPECT_EQ(greedy_select(v2, {5, 1, 1}, {1.0, 8})[0].index, 1);
}

TEST(Fibonacci, UnitDirectionsSpreadOverTheSphere) {
  const auto dirs = fibonacci_directions(200);
  ASSERT_EQ(dirs.size(), 200u);
  Vec3 mean{};
  for (const auto& d : dirs) {
    EXPECT_NEAR(norm(d), 1.0, 1e-12);
    mean += d;
  }
  EXPECT_LT(norm(mean / 200.0), 0.02);
  // no two directions coincide
  double minDot = -2;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j) minDot = std::max(minDot, dot(dirs[i], dirs[j]));
  EXPECT_LT(minDot, 0.999);
  EXPECT_THROW(fibonacci_directions(0), Error);
}

TEST(KMeans, RecoversBlobsAndObjectiveIsMonotone) {
  const auto x = blob_rows(40, 1);
  KMeansConfig cfg;
  cfg.k = 3;
  cfg.seed = 2;
  const KMeansResult r = kmeans(x.data(), 120, 2, cfg);
  EXPECT_TRUE(r.converged);
  for (int b = 0; b < 3; ++b)
    for (int i = 1; i < 40; ++i) EXPECT_EQ(r.assign[static_cast<std::size_t>(b * 40 + i)], r.assign[b * 40]);
  EXPECT_NE(r.assign[0], r.assign[40]);
  EXPECT_NE(r.assign[40], r.assign[80]);
  for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LE(r.objective[i], r.objective[i - 1] + 1e-9);
}

TEST(KMeans, DeterministicForASeed) {
  const auto x = blob_rows(30, 3);
  KMeansConfig cfg;
  cfg.k = 4;
  cfg.seed = 5;
  const auto a = kmeans(x.data(), 90, 2, cfg), b = kmeans(x.data(), 90, 2, cfg);
  EXPECT_EQ(a.assign, b.assign);
  EXPECT_EQ(a.centroids, b.centroids);
}

TEST(KMeans, ErrorsOnTooFewDistinctPoints) {
  const std::vector<float> same(20, 1.0f);
  KMeansConfig cfg;
  cfg.k = 2;
  EXPECT_THROW(kmeans(same.data(), 10, 2, cfg), Error);
  cfg.k = 11;
  EXPECT_THROW(kmeans(same.data(), 10, 2, cfg), Error);
  cfg.k = 0;
  EXPECT_THROW(kmeans(same.data(), 10, 2, cfg), Error);
}

TEST(Clusters, NormalPointsFromBrightToDark) {
  // bright half at x < 4: the gradient points to -x, the normal to +x
  const Dims d{8, 4, 4};
  std::vector<float> v(128);
  for (std::int64_t i = 0; i < 128; ++i) v[static_cast<std::size_t>(i)] = d.unravel(i).x < 4 ? 1.f : 0.f;
  const ScalarVolume vol(d, v);
  const DerivedFields f = compute_derived_fields(vol);
  FeatureVolume fv{d, 1, std::vector<float>(128, 0.f), ""};
  for (std::int64_t i = 0; i < 128; ++i) fv.data[static_cast<std::size_t>(i)] = float(d.unravel(i).x);
  KMeansConfig cfg;
  cfg.k = 8;  // one cluster per x column
  const ClusterModel m = kmeans_fit(fv, f, cfg);
  int boundary = 0;
  for (const auto& c : m.clusters) {
    EXPECT_EQ(c.size, 16);
    if (!c.degenerate) {
      ++boundary;
      EXPECT_NEAR(c.normal.x, 1.0, 1e-9);
    }
  }
  EXPECT_EQ(boundary, 2);  // columns 3 and 4 straddle the step
}

TEST(Visibility, MatchesPerPairOracle) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Cluster> clusters(7);
  for (auto& c : clusters) {
    c.size = 1;
    c.centroid = {5 + 3 * u(rng), 5 + 3 * u(rng), 5 + 3 * u(rng)};
    c.normal = normalized(Vec3{u(rng), u(rng), u(rng)});
  }
  clusters[3].degenerate = true;
  clusters[3].normal = {};
  const ViewpointSet views = make_viewpoints({11, 11, 11}, 40);
  const VisibilityMatrix vm = visibility_matrix(clusters, views, 70.0);
  for (int m = 0; m < 40; ++m)
    for (int k = 0; k < 7; ++k) {
      const auto& c = clusters[static_cast<std::size_t>(k)];
      const Vec3 toEye = normalized(views.eye(static_cast<std::size_t>(m)) - c.centroid);
      const bool want = c.degenerate || dot(toEye, c.normal) > std::cos(70.0 * std::numbers::pi / 180.0);
      EXPECT_EQ(vm(m, k), want);
    }
}

TEST(Viewpoints, EndToEndOnLocalFeatures) {
  const Phantom ph = generate_phantom({PhantomKind::EngravedCube, {24, 24, 24}, 0, 0.0});
  const DerivedFields f = compute_derived_fields(ph.volume);
  const FeatureVolume fv = local_features(ph.volume, f);
  ViewpointOptions opt;
  opt.kmeans.k = 12;
  opt.candidates = 100;
  const ViewpointReport r = recommend_viewpoints(fv, f, opt);
  EXPECT_EQ(r.k, 12);
  EXPECT_EQ(r.m, 100);
  ASSERT_FALSE(r.selected.empty());
  EXPECT_LE(r.selected.size(), 8u);
  for (std::size_t i = 1; i < r.selected.size(); ++i) EXPECT_GT(r.selected[i].coverage, r.selected[i - 1].coverage);
  const auto j = r.to_json(false);
  EXPECT_EQ(j["viewpoints"].size(), 100u);
  EXPECT_FALSE(j.contains("clusters"));
  EXPECT_EQ(r.to_json()["clusters"].size(), 12u);

  const Image thumb = viewpoint_thumbnail(ph.volume, r.views, r.selected[0].index, 32);
  EXPECT_EQ(thumb.width, 32);
  EXPECT_THROW(viewpoint_thumbnail(ph.volume, r.views, 100), Error);
}
