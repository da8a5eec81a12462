#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "voxfeat/binio.hpp"
#include "voxfeat/error.hpp"

namespace voxfeat {

struct ForestConfig {
  int trees = 1000;
  int minSamplesSplit = 8;
  int maxFeatures = 0;  // 0: floor(sqrt(width))
  int maxDepth = 0;     // 0: unlimited
  std::uint64_t seed = 0;

  int features_per_split(int width) const {
    const int k = maxFeatures > 0 ? maxFeatures : static_cast<int>(std::floor(std::sqrt(double(width))));
    return std::clamp(k, 1, width);
  }
  void validate() const {
    require(trees >= 1, ErrorKind::InvalidArgument, "forest needs at least one tree", "trees");
    require(minSamplesSplit >= 2, ErrorKind::InvalidArgument, "minSamplesSplit must be >= 2", "minSamplesSplit");
    require(maxFeatures >= 0 && maxDepth >= 0, ErrorKind::InvalidArgument, "maxFeatures/maxDepth must be >= 0");
  }
};

/// Row-major samples with integer class labels in [0, numClasses).
struct TrainingSet {
  int width = 0;
  int numClasses = 0;
  std::vector<float> x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  float at(std::size_t sample, int feature) const { return x[sample * static_cast<std::size_t>(width) + feature]; }
};

/// Binary CART tree in pre-order: an internal node's left child is the next
/// node; `right` indexes the right child. Leaves hold class frequencies.
class DecisionTree {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0;       // go left when x[feature] <= threshold
    std::int32_t right = -1;
    std::int32_t leaf = -1;  // offset into leafProbs
  };

  static DecisionTree fit(const TrainingSet& data, const ForestConfig& cfg, std::uint64_t seed) {
    DecisionTree t;
    t.numClasses_ = data.numClasses;
    std::vector<std::int32_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    Builder b{data, cfg, t, rng, cfg.features_per_split(data.width)};
    b.grow(idx, 0);
    return t;
  }

  std::span<const double> predict(std::span<const float> row) const {
    std::size_t n = 0;
    while (nodes_[n].feature >= 0) {
      const Node& node = nodes_[n];
      n = double(row[static_cast<std::size_t>(node.feature)]) <= node.threshold ? n + 1
                                                                                 : static_cast<std::size_t>(node.right);
    }
    return {leafProbs_.data() + nodes_[n].leaf, static_cast<std::size_t>(numClasses_)};
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::span<const double> leaf(const Node& n) const {
    return {leafProbs_.data() + n.leaf, static_cast<std::size_t>(numClasses_)};
  }
  int depth() const { return depth_; }

  void write(ByteWriter& w) const {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nodes_.size()));
    for (const Node& n : nodes_) {
      w.put<std::uint8_t>(n.feature < 0 ? 1 : 0);
      if (n.feature < 0) {
        for (double p : leaf(n)) w.put(p);
      } else {
        w.put<std::int32_t>(n.feature);
        w.put<double>(n.threshold);
      }
    }
  }

  static DecisionTree read(ByteReader& r, int numClasses, int width) {
    DecisionTree t;
    t.numClasses_ = numClasses;
    const auto count = r.get<std::uint32_t>();
    require(count >= 1 && count <= (1u << 26), ErrorKind::Format, "tree node count out of range");
    t.nodes_.reserve(count);
    // Pre-order rebuild: each open internal node counts the children seen so
    // far; its second child is the right one.
    std::vector<std::pair<std::int32_t, int>> open;
    for (std::uint32_t i = 0; i < count; ++i) {
      if (!open.empty() && ++open.back().second == 2) {
        t.nodes_[static_cast<std::size_t>(open.back().first)].right = static_cast<std::int32_t>(i);
        open.pop_back();
      }
      Node n;
      if (r.get<std::uint8_t>() == 1) {
        n.leaf = static_cast<std::int32_t>(t.leafProbs_.size());
        for (int c = 0; c < numClasses; ++c) t.leafProbs_.push_back(r.get<double>());
      } else {
        n.feature = r.get<std::int32_t>();
        n.threshold = r.get<double>();
        require(n.feature >= 0 && n.feature < width, ErrorKind::Format, "tree split feature out of range");
        open.push_back({static_cast<std::int32_t>(i), 0});
      }
      t.nodes_.push_back(n);
    }
    require(open.empty(), ErrorKind::Format, "tree is not a complete pre-order");
    return t;
  }

  friend bool operator==(const DecisionTree& a, const DecisionTree& b) {
    if (a.nodes_.size() != b.nodes_.size() || a.leafProbs_ != b.leafProbs_) return false;
    for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
      const Node &x = a.nodes_[i], &y = b.nodes_[i];
      if (x.feature != y.feature || x.threshold != y.threshold || x.right != y.right || x.leaf != y.leaf) return false;
    }
    return true;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0;
    double impurity = 0;  // weighted child Gini, lower is better
  };

  struct Builder {
    const TrainingSet& data;
    const ForestConfig& cfg;
    DecisionTree& tree;
    std::mt19937_64& rng;
    int featuresPerSplit;
    std::vector<std::pair<float, int>> scratch{};

    static double weighted_gini(const std::vector<std::int64_t>& counts, std::int64_t n) {
      if (n == 0) return 0;
      double sq = 0;
      for (auto c : counts) sq += double(c) * double(c);
      return double(n) - sq / double(n);  // n * gini
    }

    // Best threshold on one feature: midpoints between consecutive distinct values.
    bool best_on_feature(const std::vector<std::int32_t>& idx, int f, const std::vector<std::int64_t>& total,
                         Split& best) {
      scratch.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        scratch[i] = {data.at(static_cast<std::size_t>(idx[i]), f), data.y[static_cast<std::size_t>(idx[i])]};
      std::sort(scratch.begin(), scratch.end());
      if (scratch.front().first == scratch.back().first) return false;
      std::vector<std::int64_t> left(total.size(), 0), right = total;
      const auto n = static_cast<std::int64_t>(idx.size());
      bool found = false;
      for (std::size_t i = 0; i + 1 < scratch.size(); ++i) {
        ++left[static_cast<std::size_t>(scratch[i].second)];
        --right[static_cast<std::size_t>(scratch[i].second)];
        if (scratch[i].first == scratch[i + 1].first) continue;
        const auto nl = static_cast<std::int64_t>(i + 1);
        const double imp = (weighted_gini(left, nl) + weighted_gini(right, n - nl)) / double(n);
        if (best.feature < 0 || imp < best.impurity) {
          best = {f, 0.5 * (double(scratch[i].first) + double(scratch[i + 1].first)), imp};
          found = true;
        }
      }
      return found;
    }

    void make_leaf(const std::vector<std::int64_t>& counts, std::int64_t n) {
      Node leaf;
      leaf.leaf = static_cast<std::int32_t>(tree.leafProbs_.size());
      for (auto c : counts) tree.leafProbs_.push_back(double(c) / double(n));
      tree.nodes_.push_back(leaf);
    }

    void grow(std::vector<std::int32_t>& idx, int depth) {
      tree.depth_ = std::max(tree.depth_, depth);
      std::vector<std::int64_t> counts(static_cast<std::size_t>(data.numClasses), 0);
      for (auto i : idx) ++counts[static_cast<std::size_t>(data.y[static_cast<std::size_t>(i)])];
      const auto n = static_cast<std::int64_t>(idx.size());
      const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
      if (pure || n < cfg.minSamplesSplit || (cfg.maxDepth > 0 && depth >= cfg.maxDepth)) {
        make_leaf(counts, n);
        return;
      }
      // Random feature order; the first k are the candidates, examined in
      // ascending index so ties resolve to the lowest (feature, threshold).
      std::vector<int> order(static_cast<std::size_t>(data.width));
      std::iota(order.begin(), order.end(), 0);
      for (int i = 0; i < data.width - 1; ++i) {
        std::uniform_int_distribution<int> pick(i, data.width - 1);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
      }
      std::vector<int> candidates(order.begin(), order.begin() + featuresPerSplit);
      std::sort(candidates.begin(), candidates.end());
      Split best;
      for (int f : candidates) best_on_feature(idx, f, counts, best);
      // No valid split among the candidates: keep drawing until one is found.
      for (std::size_t k = static_cast<std::size_t>(featuresPerSplit); best.feature < 0 && k < order.size(); ++k)
        best_on_feature(idx, order[k], counts, best);
      if (best.feature < 0) {
        make_leaf(counts, n);
        return;
      }
      std::vector<std::int32_t> left, right;
      for (auto i : idx)
        (double(data.at(static_cast<std::size_t>(i), best.feature)) <= best.threshold ? left : right).push_back(i);
      idx.clear();
      idx.shrink_to_fit();
      const auto self = tree.nodes_.size();
      tree.nodes_.push_back({best.feature, best.threshold, -1, -1});
      grow(left, depth + 1);
      tree.nodes_[self].right = static_cast<std::int32_t>(tree.nodes_.size());
      grow(right, depth + 1);
    }
  };

  int numClasses_ = 0;
  int depth_ = 0;
  std::vector<Node> nodes_;
  std::vector<double> leafProbs_;
};

/// Random forest without bootstrapping: every tree sees every sample and
/// diversity comes only from the seeded per-split feature subsets.
class RandomForest {
 public:
  static RandomForest fit(const TrainingSet& data, const ForestConfig& cfg) {
    cfg.validate();
    require(data.size() > 0, ErrorKind::Precondition, "cannot fit a forest on an empty training set", "scribbles");
    require(data.width > 0 && data.x.size() == data.size() * static_cast<std::size_t>(data.width),
            ErrorKind::ShapeMismatch, "training matrix shape is inconsistent");
    std::vector<bool> seen(static_cast<std::size_t>(data.numClasses), false);
    for (int c : data.y) {
      require(c >= 0 && c < data.numClasses, ErrorKind::InvalidArgument, "class label out of range", "class");
      seen[static_cast<std::size_t>(c)] = true;
    }
    require(std::count(seen.begin(), seen.end(), true) >= 2, ErrorKind::Precondition,
            "training data must contain at least two distinct classes", "scribbles");
    RandomForest f;
    f.width_ = data.width;
    f.numClasses_ = data.numClasses;
    f.trees_.reserve(static_cast<std::size_t>(cfg.trees));
    for (int t = 0; t < cfg.trees; ++t) f.trees_.push_back(DecisionTree::fit(data, cfg, cfg.seed + std::uint64_t(t)));
    return f;
  }

  int width() const { return width_; }
  int num_classes() const { return numClasses_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  /// Mean of the leaf frequency vectors over all trees.
  void predict_into(std::span<const float> row, std::span<double> out) const {
    if (static_cast<int>(row.size()) != width_ || static_cast<int>(out.size()) != numClasses_)
      fail(ErrorKind::ShapeMismatch,
           "feature width " + std::to_string(row.size()) + " does not match forest width " + std::to_string(width_));
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : trees_) {
      const auto p = t.predict(row);
      for (int c = 0; c < numClasses_; ++c) out[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)];
    }
    const double inv = 1.0 / double(trees_.size());
    for (double& v : out) v *= inv;
  }

  /// Same result as predict_into for `count` consecutive rows, visiting the
  /// trees block by block so each tree stays cache-resident.
  void predict_rows(const float* rows, std::int64_t count, double* out) const {
    constexpr std::int64_t kBlock = 256;
    const double inv = 1.0 / double(trees_.size());
    std::fill(out, out + count * numClasses_, 0.0);
    for (std::int64_t b = 0; b < count; b += kBlock) {
      const std::int64_t e = std::min(count, b + kBlock);
      for (const auto& t : trees_)
        for (std::int64_t i = b; i < e; ++i) {
          const auto p = t.predict({rows + i * width_, static_cast<std::size_t>(width_)});
          double* o = out + i * numClasses_;
          for (int c = 0; c < numClasses_; ++c) o[c] += p[static_cast<std::size_t>(c)];
        }
      for (std::int64_t i = b * numClasses_; i < e * numClasses_; ++i) out[i] *= inv;
    }
  }

  std::vector<double> predict(std::span<const float> row) const {
    std::vector<double> out(static_cast<std::size_t>(numClasses_));
    predict_into(row, out);
    return out;
  }

  std::vector<char> encode() const {
    ByteWriter w;
    w.bytes(kMagic, sizeof kMagic);
    w.put(kVersion);
    w.put<std::int32_t>(width_);
    w.put<std::int32_t>(numClasses_);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(trees_.size()));
    for (const auto& t : trees_) t.write(w);
    return w.take();
  }

  static RandomForest decode(std::span<const char> bytes) {
    ByteReader r(bytes, "forest");
    require(std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) == 0, ErrorKind::Format,
            "forest file has bad magic bytes");
    const auto version = r.get<std::uint32_t>();
    require(version == kVersion, ErrorKind::Format, "forest version " + std::to_string(version) + " is not supported");
    RandomForest f;
    f.width_ = r.get<std::int32_t>();
    f.numClasses_ = r.get<std::int32_t>();
    require(f.width_ > 0 && f.numClasses_ >= 2 && f.numClasses_ <= 256, ErrorKind::Format, "forest header invalid");
    const auto n = r.get<std::uint32_t>();
    require(n >= 1, ErrorKind::Format, "forest has no trees");
    for (std::uint32_t i = 0; i < n; ++i) f.trees_.push_back(DecisionTree::read(r, f.numClasses_, f.width_));
    require(r.remaining() == 0, ErrorKind::Format, "forest file has trailing bytes");
    return f;
  }

  friend bool operator==(const RandomForest&, const RandomForest&) = default;

 private:
  static constexpr char kMagic[8] = {'V', 'X', 'F', 'F', 'R', 'S', 'T', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  int width_ = 0;
  int numClasses_ = 0;
  std::vector<DecisionTree> trees_;
};

}  // namespace voxfeat
