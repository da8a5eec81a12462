#pragma once

// Shared fixtures and oracles for the unit and acceptance suites.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "voxfeat/phantom.hpp"
#include "voxfeat/trainer.hpp"

namespace voxfeat::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "voxfeat") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++) + "-" + std::to_string(::getpid()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline ScalarVolume random_volume(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> v(static_cast<std::size_t>(d.count()));
  for (auto& x : v) x = u(rng);
  return ScalarVolume(d, std::move(v));
}

/// The 2-level, 2-feature, 2^8-entry network used for gradient checks.
inline ModelConfig tiny_model(Fusion fusion = Fusion::Film) {
  ModelConfig m;
  m.grid.levels = 2;
  m.grid.featuresPerLevel = 2;
  m.grid.log2TableSize = 8;
  m.fusion = fusion;
  return m;
}

struct GroupCheck {
  std::string name;
  double relError = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double maxAbsError = 0;
  std::int64_t checked = 0;
  std::int64_t kinks = 0;  // entries skipped because a ReLU switched inside the stencil
  double analyticNorm = 0;
};

namespace detail {

inline std::vector<bool> relu_pattern(const ForwardCache<double>& c) {
  std::vector<bool> p;
  auto add = [&](const Mat<double>& z) {
    for (Eigen::Index i = 0; i < z.size(); ++i) p.push_back(z.data()[i] > 0);
  };
  add(c.encZ1);
  add(c.encZ2);
  for (const auto& z : c.z) add(z);
  return p;
}

}  // namespace detail

/// Central finite differences of L_total against backward() for every
/// parameter of a double-precision model on a whole small volume. Entries
/// whose +-h stencil flips a ReLU are not differentiable there and are
/// skipped (and counted).
inline std::vector<GroupCheck> gradient_check(const ScalarVolume& vol, const ModelConfig& cfg, const LossWeights& w,
                                              std::uint64_t seed, double h = 1e-6) {
  InrModel<double> model = InrModel<double>::initialized(cfg, seed);
  // Move away from the initialization's special points: larger table
  // entries and a non-zero FiLM layer exercise every path.
  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const auto& L = model.layout();
  for (std::int64_t i = 0; i < L.tableCount; ++i) model.params()[L.tables + i] = u(rng);
  if (L.film.present())
    for (std::int64_t i = 0; i < L.film.count(); ++i) model.params()[L.film.offset + i] = 0.3 * u(rng);

  const DerivedFields fields = compute_derived_fields(vol, cfg.patchSide);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(vol.size()));
  std::iota(ids.begin(), ids.end(), 0);
  Batch<double> batch;
  Mat<double> targets, dOut;
  assemble_batch(vol, fields, cfg, ids, batch, &targets);
  apply_gradient_target(targets, w);

  ForwardCache<double> cache;
  forward(model, batch, cache);
  loss_total(cache.out, targets, w, &dOut);
  std::vector<double> grad(model.params().size(), 0.0);
  backward(model, batch, cache, dOut, std::span<double>(grad));

  std::vector<GroupCheck> out;
  for (const auto& g : L.groups()) {
    GroupCheck gc;
    gc.name = g.name;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::int64_t k = 0; k < g.count; ++k) {
      const auto i = static_cast<std::size_t>(g.offset + k);
      const double orig = model.params()[i];
      model.params()[i] = orig + h;
      forward(model, batch, cache);
      const double lp = loss_total(cache.out, targets, w).total;
      const auto pp = detail::relu_pattern(cache);
      model.params()[i] = orig - h;
      forward(model, batch, cache);
      const double lm = loss_total(cache.out, targets, w).total;
      const auto pm = detail::relu_pattern(cache);
      model.params()[i] = orig;
      if (pp != pm) {
        ++gc.kinks;
        continue;
      }
      const double num = (lp - lm) / (2 * h);
      const double ana = grad[i];
      diff2 += (num - ana) * (num - ana);
      a2 += ana * ana;
      n2 += num * num;
      gc.maxAbsError = std::max(gc.maxAbsError, std::abs(num - ana));
      ++gc.checked;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    gc.relError = denom > 0 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
    gc.analyticNorm = std::sqrt(a2);
    out.push_back(gc);
  }
  return out;
}

}  // namespace voxfeat::testing
