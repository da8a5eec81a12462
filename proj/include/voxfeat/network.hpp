#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "voxfeat/inr_model.hpp"

namespace voxfeat {

/// A batch of network inputs, one column per sample.
template <class Real>
struct Batch {
  std::vector<std::array<double, 3>> coords;  // normalized to [0,1]^3
  Mat<Real> patches;                          // patch_size x B (unused without a structural path)

  Eigen::Index size() const { return static_cast<Eigen::Index>(coords.size()); }
};

/// Intermediate activations kept by forward() for backward().
template <class Real>
struct ForwardCache {
  std::vector<LevelLookup> lookups;  // B * levels, sample-major
  Mat<Real> fpos;                    // D x B
  Mat<Real> encZ1, encZ2, structural;
  Mat<Real> filmOut;                 // 2D x B (gamma; beta)
  Mat<Real> input;                   // MLP input (F_mod, [F_pos;S] or F_pos)
  Mat<Real> skip;
  Mat<Real> z[ModelConfig::kHiddenLayers];
  Mat<Real> h[ModelConfig::kHiddenLayers];
  Mat<Real> out;  // 6 x B

  const Mat<Real>& hidden() const { return h[ModelConfig::kHiddenLayers - 1]; }
};

namespace detail {

template <class Real>
void relu_into(const Mat<Real>& z, Mat<Real>& h) {
  h = z.cwiseMax(Real(0));
}

template <class Real>
void dense_forward(const InrModel<Real>& m, const DenseBlock& b, const Mat<Real>& x, Mat<Real>& z) {
  z.noalias() = m.weight(b) * x;
  z.colwise() += m.bias(b);
}

template <class Real>
void relu_backward(Mat<Real>& grad, const Mat<Real>& z) {
  grad = (z.array() > Real(0)).select(grad, Real(0));
}

// Accumulates dW = dZ x^T and db = rowsum(dZ) into the gradient buffer.
template <class Real>
void dense_param_grad(const DenseBlock& b, const Mat<Real>& dz, const Mat<Real>& x, std::span<Real> grad) {
  Eigen::Map<Mat<Real>> gw(grad.data() + b.offset, b.rows, b.cols);
  Eigen::Map<Vec<Real>> gb(grad.data() + b.bias_offset(), b.rows);
  gw.noalias() += dz * x.transpose();
  gb += dz.rowwise().sum();
}

}  // namespace detail

/// Hash-grid encoding of a whole batch; records the lookups for backward.
template <class Real>
void encode_batch(const InrModel<Real>& m, const Batch<Real>& batch, ForwardCache<Real>& c) {
  const auto& g = m.config().grid;
  const Eigen::Index n = batch.size();
  const int F = g.featuresPerLevel;
  c.lookups.resize(static_cast<std::size_t>(n) * g.levels);
  c.fpos.setZero(g.output_width(), n);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (int l = 0; l < g.levels; ++l) {
      const LevelLookup lk = lookup_level(g, l, std::span<const double, 3>(batch.coords[s]));
      c.lookups[static_cast<std::size_t>(s) * g.levels + l] = lk;
      for (int corner = 0; corner < 8; ++corner) {
        const Real* row = m.table_row(l, lk.rows[corner]);
        const Real w = Real(lk.weights[corner]);
        for (int f = 0; f < F; ++f) c.fpos(l * F + f, s) += w * row[f];
      }
    }
  }
}

/// Full forward pass. Heads land in c.out (6 x B); the last hidden layer's
/// post-activation output is c.hidden() (the per-voxel feature).
template <class Real>
void forward(const InrModel<Real>& m, const Batch<Real>& batch, ForwardCache<Real>& c) {
  const ModelConfig& cfg = m.config();
  const ParamLayout& L = m.layout();
  const int D = cfg.positional_width();
  if (cfg.has_structural_path())
    require(batch.patches.rows() == cfg.patch_size() && batch.patches.cols() == batch.size(),
            ErrorKind::ShapeMismatch, "patch batch shape does not match the model");

  encode_batch(m, batch, c);

  if (cfg.has_structural_path()) {
    detail::dense_forward(m, L.enc1, batch.patches, c.encZ1);
    Mat<Real> a1;
    detail::relu_into(c.encZ1, a1);
    detail::dense_forward(m, L.enc2, a1, c.encZ2);
    detail::relu_into(c.encZ2, c.structural);
  }
  switch (cfg.fusion) {
    case Fusion::None:
      c.input = c.fpos;
      break;
    case Fusion::Concat:
      c.input.resize(D + cfg.structWidth, batch.size());
      c.input.topRows(D) = c.fpos;
      c.input.bottomRows(cfg.structWidth) = c.structural;
      break;
    case Fusion::Film:
      detail::dense_forward(m, L.film, c.structural, c.filmOut);
      c.input = c.fpos.cwiseProduct((c.filmOut.topRows(D).array() + Real(1)).matrix()) + c.filmOut.bottomRows(D);
      break;
  }

  detail::dense_forward(m, L.skip, c.input, c.skip);
  detail::dense_forward(m, L.mlp[0], c.input, c.z[0]);
  detail::relu_into(c.z[0], c.h[0]);
  detail::dense_forward(m, L.mlp[1], c.h[0], c.z[1]);
  detail::relu_into(c.z[1], c.h[1]);
  // The skip projection joins the input of hidden layer 3.
  Mat<Real> in3 = c.h[1] + c.skip;
  detail::dense_forward(m, L.mlp[2], in3, c.z[2]);
  detail::relu_into(c.z[2], c.h[2]);
  detail::dense_forward(m, L.mlp[3], c.h[2], c.z[3]);
  detail::relu_into(c.z[3], c.h[3]);
  detail::dense_forward(m, L.head, c.h[3], c.out);
}

/// Backpropagates dOut (6 x B) and accumulates into `grad` (same layout as
/// the model's parameters). Table gradients go to touched rows only.
template <class Real>
void backward(const InrModel<Real>& m, const Batch<Real>& batch, const ForwardCache<Real>& c, const Mat<Real>& dOut,
              std::span<Real> grad) {
  const ModelConfig& cfg = m.config();
  const ParamLayout& L = m.layout();
  const int D = cfg.positional_width();

  detail::dense_param_grad(L.head, dOut, c.h[3], grad);
  Mat<Real> d = m.weight(L.head).transpose() * dOut;
  detail::relu_backward(d, c.z[3]);
  detail::dense_param_grad(L.mlp[3], d, c.h[2], grad);
  Mat<Real> t = m.weight(L.mlp[3]).transpose() * d;
  detail::relu_backward(t, c.z[2]);
  Mat<Real> in3 = c.h[1] + c.skip;
  detail::dense_param_grad(L.mlp[2], t, in3, grad);
  Mat<Real> dIn3 = m.weight(L.mlp[2]).transpose() * t;

  detail::dense_param_grad(L.skip, dIn3, c.input, grad);
  Mat<Real> dInput = m.weight(L.skip).transpose() * dIn3;

  Mat<Real> d2 = dIn3;
  detail::relu_backward(d2, c.z[1]);
  detail::dense_param_grad(L.mlp[1], d2, c.h[0], grad);
  Mat<Real> d1 = m.weight(L.mlp[1]).transpose() * d2;
  detail::relu_backward(d1, c.z[0]);
  detail::dense_param_grad(L.mlp[0], d1, c.input, grad);
  dInput.noalias() += m.weight(L.mlp[0]).transpose() * d1;

  Mat<Real> dPos, dStruct;
  switch (cfg.fusion) {
    case Fusion::None:
      dPos = std::move(dInput);
      break;
    case Fusion::Concat:
      dPos = dInput.topRows(D);
      dStruct = dInput.bottomRows(cfg.structWidth);
      break;
    case Fusion::Film: {
      dPos = dInput.cwiseProduct((c.filmOut.topRows(D).array() + Real(1)).matrix());
      Mat<Real> dFilm(2 * D, batch.size());
      dFilm.topRows(D) = dInput.cwiseProduct(c.fpos);
      dFilm.bottomRows(D) = dInput;
      detail::dense_param_grad(L.film, dFilm, c.structural, grad);
      dStruct = m.weight(L.film).transpose() * dFilm;
      break;
    }
  }

  if (cfg.has_structural_path()) {
    detail::relu_backward(dStruct, c.encZ2);
    Mat<Real> a1 = c.encZ1.cwiseMax(Real(0));
    detail::dense_param_grad(L.enc2, dStruct, a1, grad);
    Mat<Real> da1 = m.weight(L.enc2).transpose() * dStruct;
    detail::relu_backward(da1, c.encZ1);
    detail::dense_param_grad(L.enc1, da1, batch.patches, grad);
  }

  const auto& g = cfg.grid;
  const int F = g.featuresPerLevel;
  for (Eigen::Index s = 0; s < batch.size(); ++s)
    for (int l = 0; l < g.levels; ++l) {
      const LevelLookup& lk = c.lookups[static_cast<std::size_t>(s) * g.levels + l];
      for (int corner = 0; corner < 8; ++corner) {
        Real* row = grad.data() + m.table_row_offset(l, lk.rows[corner]);
        const Real w = Real(lk.weights[corner]);
        for (int f = 0; f < F; ++f) row[f] += w * dPos(l * F + f, s);
      }
    }
}

struct LossWeights {
  double gradient = 1.0;  // lambda_grad
  double stats = 0.5;     // lambda_stat
  bool gradientMagnitudeOnly = false;  // regress |grad| in head row 1 only
};

struct LossBreakdown {
  double total = 0, intensity = 0, gradient = 0, mean = 0, stddev = 0;
};

/// L_total = L_inten + lambda_grad * L_grad + lambda_stat * (L_mu + L_sigma),
/// each term an MSE over its head rows. Writes dL/dOut when `dOut` is given.
template <class Real>
LossBreakdown loss_total(const Mat<Real>& pred, const Mat<Real>& target, const LossWeights& w,
                         Mat<Real>* dOut = nullptr) {
  require(pred.rows() == ModelConfig::kHeadWidth && pred.rows() == target.rows() && pred.cols() == target.cols(),
          ErrorKind::ShapeMismatch, "prediction and target batches differ in shape");
  const Eigen::Index n = pred.cols();
  require(n > 0, ErrorKind::InvalidArgument, "loss of an empty batch");
  const int gradRows = w.gradientMagnitudeOnly ? 1 : 3;
  LossBreakdown lb;
  for (Eigen::Index s = 0; s < n; ++s) {
    auto sq = [&](int r) {
      const double e = double(pred(r, s)) - double(target(r, s));
      return e * e;
    };
    lb.intensity += sq(0);
    for (int r = 1; r <= gradRows; ++r) lb.gradient += sq(r);
    lb.mean += sq(4);
    lb.stddev += sq(5);
  }
  lb.intensity /= double(n);
  lb.gradient /= double(n) * gradRows;
  lb.mean /= double(n);
  lb.stddev /= double(n);
  lb.total = lb.intensity + w.gradient * lb.gradient + w.stats * (lb.mean + lb.stddev);

  if (dOut) {
    dOut->setZero(pred.rows(), n);
    const Real cI = Real(2.0 / double(n));
    const Real cG = Real(2.0 * w.gradient / (double(n) * gradRows));
    const Real cS = Real(2.0 * w.stats / double(n));
    for (Eigen::Index s = 0; s < n; ++s) {
      (*dOut)(0, s) = cI * (pred(0, s) - target(0, s));
      for (int r = 1; r <= gradRows; ++r) (*dOut)(r, s) = cG * (pred(r, s) - target(r, s));
      (*dOut)(4, s) = cS * (pred(4, s) - target(4, s));
      (*dOut)(5, s) = cS * (pred(5, s) - target(5, s));
    }
  }
  return lb;
}

}  // namespace voxfeat
