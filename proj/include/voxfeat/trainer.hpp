#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "voxfeat/adam.hpp"
#include "voxfeat/network.hpp"
#include "voxfeat/volume.hpp"

namespace voxfeat {

struct TrainConfig {
  double learningRate = 1e-4;
  int epochs = 100;
  std::int64_t batchSize = 4096;
  LossWeights loss;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    require(learningRate >= 0 && std::isfinite(learningRate), ErrorKind::InvalidArgument,
            "learning rate must be finite and non-negative", "learningRate");
    require(epochs >= 0, ErrorKind::InvalidArgument, "epochs must be >= 0", "epochs");
    require(batchSize >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1", "batchSize");
    require(loss.gradient >= 0 && loss.stats >= 0, ErrorKind::InvalidArgument, "loss weights must be >= 0",
            "lambda");
    require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1 && epsilon > 0, ErrorKind::InvalidArgument,
            "invalid Adam constants");
  }
};

/// Fills inputs and the six regression targets for a list of voxels.
template <class Real>
void assemble_batch(const ScalarVolume& vol, const DerivedFields& fields, const ModelConfig& cfg,
                    std::span<const std::int64_t> voxels, Batch<Real>& batch, Mat<Real>* targets) {
  const auto n = static_cast<Eigen::Index>(voxels.size());
  batch.coords.resize(voxels.size());
  const bool patches = cfg.has_structural_path();
  if (patches) batch.patches.resize(cfg.patch_size(), n);
  if (targets) targets->resize(ModelConfig::kHeadWidth, n);
  std::vector<float> buf(static_cast<std::size_t>(cfg.patch_size()));
  for (Eigen::Index s = 0; s < n; ++s) {
    const std::int64_t idx = voxels[s];
    batch.coords[s] = vol.normalized_coord(idx);
    if (patches) {
      extract_patch_into(vol, vol.dims().unravel(idx), cfg.patchSide, buf);
      for (int k = 0; k < cfg.patch_size(); ++k) batch.patches(k, s) = Real(buf[k]);
    }
    if (targets) {
      const auto i = static_cast<std::size_t>(idx);
      (*targets)(0, s) = Real(vol[idx]);
      for (int a = 0; a < 3; ++a) (*targets)(1 + a, s) = Real(fields.gradient[i * 3 + a]);
      (*targets)(4, s) = Real(fields.localMean[i]);
      (*targets)(5, s) = Real(fields.localStd[i]);
    }
  }
}

// In magnitude mode the first gradient row regresses |grad|.
template <class Real>
void apply_gradient_target(Mat<Real>& targets, const LossWeights& w) {
  if (!w.gradientMagnitudeOnly) return;
  for (Eigen::Index s = 0; s < targets.cols(); ++s) {
    const double m = std::sqrt(double(targets(1, s)) * targets(1, s) + double(targets(2, s)) * targets(2, s) +
                               double(targets(3, s)) * targets(3, s));
    targets(1, s) = Real(m);
    targets(2, s) = targets(3, s) = Real(0);
  }
}

struct EpochReport {
  int epoch = 0;  // 1-based
  int epochs = 0;
  LossBreakdown meanLoss;
};

/// Return false to cancel training after the reported epoch.
using EpochCallback = std::function<bool(const EpochReport&)>;

struct TrainResult {
  InrModel<float> model;
  std::vector<LossBreakdown> history;  // per-epoch mean over steps
  bool cancelled = false;
};

/// Trains from a seeded initialization. Each epoch visits every voxel once in
/// a seeded random order, one Adam step per batch.
inline TrainResult train(const ScalarVolume& vol, const DerivedFields& fields, const ModelConfig& modelCfg,
                         const TrainConfig& cfg, const EpochCallback& onEpoch = {}) {
  cfg.validate();
  require(fields.dims == vol.dims(), ErrorKind::ShapeMismatch, "derived fields do not match the volume");
  TrainResult result{InrModel<float>::initialized(modelCfg, cfg.seed), {}, false};
  InrModel<float>& model = result.model;

  Adam<float> adam(model.params().size(), {cfg.learningRate, cfg.beta1, cfg.beta2, cfg.epsilon});
  std::vector<std::int64_t> order(static_cast<std::size_t>(vol.size()));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  AlignedBuffer<float> grad(model.params().size());
  Batch<float> batch;
  ForwardCache<float> cache;
  Mat<float> targets, dOut;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    std::int64_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batchSize)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batchSize));
      const std::span<const std::int64_t> ids(order.data() + start, end - start);
      assemble_batch(vol, fields, modelCfg, ids, batch, &targets);
      apply_gradient_target(targets, cfg.loss);
      forward(model, batch, cache);
      const LossBreakdown lb = loss_total(cache.out, targets, cfg.loss, &dOut);
      if (!std::isfinite(lb.total))
        fail(ErrorKind::NonFinite,
             "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps + 1));
      std::fill(grad.begin(), grad.end(), 0.0f);
      backward(model, batch, cache, dOut, std::span<float>(grad));
      adam.step(model.params(), grad);
      sum.total += lb.total;
      sum.intensity += lb.intensity;
      sum.gradient += lb.gradient;
      sum.mean += lb.mean;
      sum.stddev += lb.stddev;
      ++steps;
    }
    const double inv = 1.0 / double(std::max<std::int64_t>(steps, 1));
    result.history.push_back(
        {sum.total * inv, sum.intensity * inv, sum.gradient * inv, sum.mean * inv, sum.stddev * inv});
    if (onEpoch && !onEpoch({epoch, cfg.epochs, result.history.back()})) {
      result.cancelled = true;
      break;
    }
  }
  return result;
}

/// Single-sample forward: predictions (6) and the 64-wide hidden feature.
template <class Real>
std::pair<std::vector<Real>, std::vector<Real>> forward_one(const InrModel<Real>& model, std::span<const double, 3> p,
                                                            const VoxelPatch& patch) {
  check_unit_cube(p);
  const ModelConfig& cfg = model.config();
  Batch<Real> b;
  b.coords = {{p[0], p[1], p[2]}};
  if (cfg.has_structural_path()) {
    require(patch.side == cfg.patchSide && static_cast<int>(patch.values.size()) == cfg.patch_size(),
            ErrorKind::ShapeMismatch, "patch side does not match the model");
    b.patches.resize(cfg.patch_size(), 1);
    for (int k = 0; k < cfg.patch_size(); ++k) b.patches(k, 0) = Real(patch.values[k]);
  }
  ForwardCache<Real> c;
  forward(model, b, c);
  std::vector<Real> pred(c.out.data(), c.out.data() + c.out.size());
  std::vector<Real> hidden(c.hidden().data(), c.hidden().data() + c.hidden().size());
  return {std::move(pred), std::move(hidden)};
}

/// Intensity head evaluated at every voxel, in voxel order.
inline std::vector<float> predict_intensity(const InrModel<float>& model, const ScalarVolume& vol,
                                            std::int64_t chunk = 8192) {
  const ModelConfig& cfg = model.config();
  DerivedFields none;
  none.dims = vol.dims();
  std::vector<float> out(static_cast<std::size_t>(vol.size()));
  Batch<float> batch;
  ForwardCache<float> cache;
  std::vector<std::int64_t> ids;
  for (std::int64_t start = 0; start < vol.size(); start += chunk) {
    const std::int64_t end = std::min(vol.size(), start + chunk);
    ids.resize(static_cast<std::size_t>(end - start));
    std::iota(ids.begin(), ids.end(), start);
    assemble_batch<float>(vol, none, cfg, ids, batch, nullptr);
    forward(model, batch, cache);
    for (Eigen::Index s = 0; s < cache.out.cols(); ++s) out[static_cast<std::size_t>(start + s)] = cache.out(0, s);
  }
  return out;
}

/// 10 log10(peak^2 / MSE); infinite for identical inputs.
inline double psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::ShapeMismatch, "PSNR operands differ in size");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  const double mse = se / double(a.size());
  return mse == 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(peak * peak / mse);
}

}  // namespace voxfeat
