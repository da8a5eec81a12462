#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "voxfeat/classify.hpp"
#include "voxfeat/features.hpp"
#include "voxfeat/phantom.hpp"
#include "voxfeat/scribbles.hpp"
#include "voxfeat/trainer.hpp"

namespace voxfeat {

// Scribble point counts of the four supervision levels relative to a
// 1,558,802-voxel reference volume.
inline constexpr std::int64_t kReferenceVoxels = 1558802;
inline constexpr std::array<std::int64_t, 4> kReferenceBudget = {756, 1912, 9434, 29529};

enum class ScribbleLevel { S1 = 1, S2 = 2, S3 = 3, S4 = 4 };

inline ScribbleLevel parse_scribble_level(const std::string& s) {
  if (s == "S1" || s == "s1" || s == "1") return ScribbleLevel::S1;
  if (s == "S2" || s == "s2" || s == "2") return ScribbleLevel::S2;
  if (s == "S3" || s == "s3" || s == "3") return ScribbleLevel::S3;
  if (s == "S4" || s == "s4" || s == "4") return ScribbleLevel::S4;
  fail(ErrorKind::InvalidArgument, "unknown scribble level '" + s + "'", "budget");
}

inline std::string to_string(ScribbleLevel l) { return "S" + std::to_string(static_cast<int>(l)); }

/// Target scribble count for a volume of `voxels` voxels.
inline std::int64_t budget_points(ScribbleLevel level, std::int64_t voxels) {
  const auto ref = kReferenceBudget[static_cast<std::size_t>(level) - 1];
  return std::max<std::int64_t>(1, std::llround(double(ref) * double(voxels) / double(kReferenceVoxels)));
}

/// z-slices a level draws from. S1 is the single mid-slice; each level keeps
/// the previous slices and adds more, symmetric around the middle.
inline std::vector<std::int64_t> budget_slices(ScribbleLevel level, std::int64_t nz) {
  // offsets in units of nz/32
  static const std::vector<std::vector<int>> added = {{0}, {-2, 2}, {-1, 1, -3, 3, -4, 4}, {-5, 5, -6, 6, -7, 7, -8, 8}};
  const std::int64_t mid = nz / 2;
  std::vector<std::int64_t> out;
  for (int l = 0; l < static_cast<int>(level); ++l)
    for (int o : added[static_cast<std::size_t>(l)]) {
      const auto z = std::clamp<std::int64_t>(mid + std::llround(o * double(nz) / 32.0), 0, nz - 1);
      if (std::find(out.begin(), out.end(), z) == out.end()) out.push_back(z);
    }
  return out;
}

namespace detail {

// Pixels of `cls` on slice z whose 8 in-slice neighbors share the class.
inline std::vector<std::int64_t> class_pixels(const LabelVolume& labels, int cls, std::int64_t z, bool eroded) {
  const Dims d = labels.dims();
  std::vector<std::int64_t> out;
  for (std::int64_t y = 0; y < d.ny; ++y)
    for (std::int64_t x = 0; x < d.nx; ++x) {
      if (labels.at({x, y, z}) != cls) continue;
      bool inside = true;
      if (eroded)
        for (int dy = -1; dy <= 1 && inside; ++dy)
          for (int dx = -1; dx <= 1 && inside; ++dx) {
            const std::int64_t xx = x + dx, yy = y + dy;
            inside = xx >= 0 && yy >= 0 && xx < d.nx && yy < d.ny && labels.at({xx, yy, z}) == cls;
          }
      if (inside) out.push_back(d.linear({x, y, z}));
    }
  return out;
}

}  // namespace detail

/// Simulated user strokes. Each class (background included) gets an equal
/// share of the budget; strokes are random walks inside the class region of
/// the level's slices, kept one pixel away from class boundaries when the
/// eroded region is large enough. Levels are built incrementally from S1 so
/// that S1 is a subset of S2, and so on.
inline ScribbleSet simulate_scribbles(const LabelVolume& labels, ScribbleLevel level, std::uint64_t seed,
                                      int strokeLength = 24) {
  const Dims d = labels.dims();
  const int classes = labels.max_label() + 1;
  require(classes >= 2, ErrorKind::Precondition, "label volume has no foreground classes");
  std::mt19937_64 rng(seed ^ 0x5c0ffee5ull);
  ScribbleSet set(d);
  int stroke = 0;
  std::vector<std::int64_t> prevShare(static_cast<std::size_t>(classes), 0);
  for (int l = 1; l <= static_cast<int>(level); ++l) {
    const auto lv = static_cast<ScribbleLevel>(l);
    const std::int64_t total = budget_points(lv, d.count());
    const auto slices = budget_slices(lv, d.nz);
    for (int c = 0; c < classes; ++c) {
      const std::int64_t share = total / classes + (c < total % classes ? 1 : 0);
      const std::int64_t need = share - prevShare[static_cast<std::size_t>(c)];
      prevShare[static_cast<std::size_t>(c)] = share;
      if (need <= 0) continue;

      auto pool_for = [&](bool eroded) {
        std::vector<std::int64_t> pool;
        for (auto z : slices)
          for (auto v : detail::class_pixels(labels, c, z, eroded))
            if (!set.contains(v)) pool.push_back(v);
        return pool;
      };
      std::vector<std::int64_t> pool = pool_for(true);
      if (std::int64_t(pool.size()) < need) pool = pool_for(false);
      require(!pool.empty() || need == 0, ErrorKind::Precondition,
              "class " + std::to_string(c) + " is absent from the " + to_string(lv) + " scribble slices", "budget");
      require(std::int64_t(pool.size()) >= need, ErrorKind::Precondition,
              to_string(lv) + " budget needs " + std::to_string(need) + " points of class " + std::to_string(c) +
                  " but its slices only hold " + std::to_string(pool.size()),
              "budget");
      std::set<std::int64_t> free(pool.begin(), pool.end());

      std::int64_t placed = 0;
      while (placed < need) {
        // start a stroke at a random free pixel and walk to free 8-neighbors
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        std::int64_t cur;
        do cur = pool[pick(rng)];
        while (!free.count(cur));
        Index3 p = d.unravel(cur);
        set.set_stroke_slice(stroke, {2, p.z});
        for (int step = 0; step < strokeLength && placed < need; ++step) {
          set.add(cur, c, stroke);
          free.erase(cur);
          ++placed;
          std::vector<std::int64_t> next;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const Index3 q{p.x + dx, p.y + dy, p.z};
              if ((dx || dy) && d.contains(q) && free.count(d.linear(q))) next.push_back(d.linear(q));
            }
          if (next.empty()) break;
          cur = next[std::uniform_int_distribution<std::size_t>(0, next.size() - 1)(rng)];
          p = d.unravel(cur);
        }
        ++stroke;
      }
    }
  }
  return set;
}

struct F1Report {
  std::vector<double> perClass;  // index 0 is class 1
  double mean = 0;
  double stddev = 0;  // population convention over classes
};

/// Per-foreground-class F1; predicted background counts as a negative for
/// every class. `numClasses` foreground classes (0: take it from gt).
inline F1Report f1_scores(const LabelVolume& pred, const LabelVolume& gt, int numClasses = 0) {
  require(pred.dims() == gt.dims(), ErrorKind::ShapeMismatch, "prediction and ground truth dims differ");
  if (numClasses <= 0) numClasses = gt.max_label();
  require(numClasses >= 1, ErrorKind::Precondition, "ground truth has no foreground classes");
  std::vector<std::int64_t> tp(static_cast<std::size_t>(numClasses) + 1), fp(tp.size()), fn(tp.size());
  for (std::int64_t v = 0; v < gt.dims().count(); ++v) {
    const int p = pred[v], g = gt[v];
    if (p == g) {
      if (p > 0 && p <= numClasses) ++tp[static_cast<std::size_t>(p)];
      continue;
    }
    if (p > 0 && p <= numClasses) ++fp[static_cast<std::size_t>(p)];
    if (g > 0 && g <= numClasses) ++fn[static_cast<std::size_t>(g)];
  }
  F1Report r;
  for (int c = 1; c <= numClasses; ++c) {
    const double t = double(tp[static_cast<std::size_t>(c)]);
    const double denom = 2 * t + double(fp[static_cast<std::size_t>(c)]) + double(fn[static_cast<std::size_t>(c)]);
    // 2PR/(P+R) == 2TP/(2TP+FP+FN); undefined cases score 0
    r.perClass.push_back(t > 0 ? 2 * t / denom : 0.0);
  }
  for (double f : r.perClass) r.mean += f;
  r.mean /= double(r.perClass.size());
  for (double f : r.perClass) r.stddev += (f - r.mean) * (f - r.mean);
  r.stddev = std::sqrt(r.stddev / double(r.perClass.size()));
  return r;
}

/// Forest on per-voxel features + simulated scribbles, scored against gt.
inline F1Report classify_and_score(const FeatureVolume& features, const Phantom& ph, const ScribbleSet& scribbles,
                                   const ForestConfig& forestCfg, double tau = 0.5) {
  const RandomForest forest = fit(features, scribbles, forestCfg);
  const ProbabilityVolume pv = predict_proba(forest, features);
  return f1_scores(apply_background_rule(pv, tau), ph.labels, ph.numClasses);
}

// ---- ablation -------------------------------------------------------------

struct AblationConfig {
  std::string name;
  bool localBaseline = false;  // 5-D hand-crafted features instead of a network
  Fusion fusion = Fusion::Film;
  bool multiTask = true;  // false: intensity loss only
};

/// base INR, +structural (concat), +FiLM, +multi-task, and the local baseline.
inline std::vector<AblationConfig> default_ablation_configs() {
  return {{"base_inr", false, Fusion::None, false},
          {"struct_concat", false, Fusion::Concat, false},
          {"film", false, Fusion::Film, false},
          {"full", false, Fusion::Film, true},
          {"local_5d", true, Fusion::None, false}};
}

struct AblationCell {
  std::string config;
  std::uint64_t seed = 0;
  F1Report f1;
};

struct AblationTable {
  std::vector<AblationCell> cells;

  double mean_f1(const std::string& config) const {
    double s = 0;
    int n = 0;
    for (const auto& c : cells)
      if (c.config == config) {
        s += c.f1.mean;
        ++n;
      }
    require(n > 0, ErrorKind::NotFound, "no ablation cells for '" + config + "'");
    return s / n;
  }

  void write_csv(std::ostream& os) const {
    os << "config,seed,mean_f1,std_f1";
    const std::size_t nc = cells.empty() ? 0 : cells.front().f1.perClass.size();
    for (std::size_t c = 0; c < nc; ++c) os << ",f1_class" << c + 1;
    os << '\n';
    os.precision(6);
    for (const auto& cell : cells) {
      os << cell.config << ',' << cell.seed << ',' << std::fixed << cell.f1.mean << ',' << cell.f1.stddev;
      for (double f : cell.f1.perClass) os << ',' << f;
      os << '\n';
    }
  }

  std::string summary() const {
    std::vector<std::string> order;
    for (const auto& c : cells)
      if (std::find(order.begin(), order.end(), c.config) == order.end()) order.push_back(c.config);
    std::ostringstream os;
    os.precision(4);
    for (const auto& name : order) {
      std::vector<double> m;
      for (const auto& c : cells)
        if (c.config == name) m.push_back(c.f1.mean);
      double mu = 0, sd = 0;
      for (double v : m) mu += v;
      mu /= double(m.size());
      for (double v : m) sd += (v - mu) * (v - mu);
      sd = std::sqrt(sd / double(m.size()));
      os << name << ": mean F1 " << std::fixed << mu << " +- " << sd << " over " << m.size() << " seed(s)\n";
    }
    return os.str();
  }
};

struct AblationOptions {
  ScribbleLevel budget = ScribbleLevel::S1;
  std::vector<std::uint64_t> seeds{0};
  std::vector<AblationConfig> configs = default_ablation_configs();
  ModelConfig model;  // fusion is overridden per configuration
  TrainConfig train;  // seed and loss weights overridden per cell
  ForestConfig forest;
};

/// Features for one ablation configuration.
inline FeatureVolume ablation_features(const Phantom& ph, const DerivedFields& fields, const AblationConfig& cfg,
                                       const ModelConfig& model, TrainConfig train, std::uint64_t seed) {
  if (cfg.localBaseline) return local_features(ph.volume, fields);
  ModelConfig m = model;
  m.fusion = cfg.fusion;
  train.seed = seed;
  if (!cfg.multiTask) {
    train.loss.gradient = 0;
    train.loss.stats = 0;
  }
  const TrainResult r = voxfeat::train(ph.volume, fields, m, train);
  return extract_features(r.model, ph.volume);
}

/// Every (configuration, seed) cell: train, extract, classify, score. The
/// same scribbles and forest seed are shared by all configurations of a seed.
using AblationProgress = std::function<void(const AblationCell&)>;

inline AblationTable run_ablation(const Phantom& ph, const AblationOptions& opt, const AblationProgress& onCell = {}) {
  require(!opt.seeds.empty(), ErrorKind::InvalidArgument, "ablation needs at least one seed", "seeds");
  require(!opt.configs.empty(), ErrorKind::InvalidArgument, "ablation needs at least one configuration", "configs");
  const DerivedFields fields = compute_derived_fields(ph.volume, opt.model.patchSide);
  AblationTable table;
  for (const auto seed : opt.seeds) {
    const ScribbleSet scribbles = simulate_scribbles(ph.labels, opt.budget, seed);
    ForestConfig fc = opt.forest;
    fc.seed = seed;
    for (const auto& cfg : opt.configs) {
      const FeatureVolume fv = ablation_features(ph, fields, cfg, opt.model, opt.train, seed);
      table.cells.push_back({cfg.name, seed, classify_and_score(fv, ph, scribbles, fc)});
      if (onCell) onCell(table.cells.back());
    }
  }
  return table;
}

}  // namespace voxfeat
