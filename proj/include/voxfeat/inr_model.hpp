#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "voxfeat/error.hpp"
#include "voxfeat/hash_grid.hpp"

namespace voxfeat {

/// How the structural (patch) path is fused with the positional encoding.
enum class Fusion : std::uint8_t {
  None = 0,    // positional encoding only
  Concat = 1,  // [F_pos; S] fed to the main MLP
  Film = 2,    // F_pos * (gamma + 1) + beta
};

inline const char* to_string(Fusion f) {
  switch (f) {
    case Fusion::None: return "none";
    case Fusion::Concat: return "concat";
    case Fusion::Film: return "film";
  }
  return "?";
}

struct ModelConfig {
  HashGridConfig grid;
  int patchSide = 5;
  int structWidth = 32;
  int hiddenWidth = 64;
  Fusion fusion = Fusion::Film;

  static constexpr int kHeadWidth = 6;  // intensity, gradient xyz, local mean, local std
  static constexpr int kHiddenLayers = 4;

  int patch_size() const { return patchSide * patchSide * patchSide; }
  int positional_width() const { return grid.output_width(); }
  int mlp_input_width() const {
    return fusion == Fusion::Concat ? positional_width() + structWidth : positional_width();
  }
  bool has_structural_path() const { return fusion != Fusion::None; }

  void validate() const {
    grid.validate();
    require(patchSide >= 1 && patchSide <= 31 && patchSide % 2 == 1, ErrorKind::InvalidArgument, "patch side must be odd", "patchSide");
    require(structWidth >= 1 && hiddenWidth >= 1 && structWidth <= 4096 && hiddenWidth <= 4096, ErrorKind::InvalidArgument, "layer widths must be positive");
    require(fusion == Fusion::None || fusion == Fusion::Concat || fusion == Fusion::Film, ErrorKind::InvalidArgument,
            "unknown fusion mode", "fusion");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// A dense layer's weight (rows x cols, column-major) followed by its bias.
struct DenseBlock {
  std::int64_t offset = -1;  // -1: layer absent for this configuration
  int rows = 0;
  int cols = 0;
  std::int64_t weight_count() const { return std::int64_t{rows} * cols; }
  std::int64_t bias_offset() const { return offset + weight_count(); }
  std::int64_t count() const { return offset < 0 ? 0 : weight_count() + rows; }
  bool present() const { return offset >= 0; }
};

/// Offsets of every parameter tensor inside the flat parameter vector.
struct ParamLayout {
  std::int64_t tables = 0;  // levels * T * F
  std::int64_t tableCount = 0;
  DenseBlock enc1, enc2, film, skip;
  DenseBlock mlp[ModelConfig::kHiddenLayers];
  DenseBlock head;
  std::int64_t total = 0;

  explicit ParamLayout(const ModelConfig& cfg = {}) {
    std::int64_t at = 0;
    tables = at;
    tableCount = std::int64_t{cfg.grid.levels} * cfg.grid.table_size() * cfg.grid.featuresPerLevel;
    at += tableCount;
    auto place = [&](DenseBlock& b, int rows, int cols) {
      b = {at, rows, cols};
      at += b.count();
    };
    if (cfg.has_structural_path()) {
      place(enc1, cfg.structWidth, cfg.patch_size());
      place(enc2, cfg.structWidth, cfg.structWidth);
    }
    if (cfg.fusion == Fusion::Film) place(film, 2 * cfg.positional_width(), cfg.structWidth);
    place(skip, cfg.hiddenWidth, cfg.mlp_input_width());
    place(mlp[0], cfg.hiddenWidth, cfg.mlp_input_width());
    for (int l = 1; l < ModelConfig::kHiddenLayers; ++l) place(mlp[l], cfg.hiddenWidth, cfg.hiddenWidth);
    place(head, ModelConfig::kHeadWidth, cfg.hiddenWidth);
    total = at;
  }

  struct Group {
    std::string name;
    std::int64_t offset;
    std::int64_t count;
  };
  // Parameter groups in storage order, for diagnostics and gradient checks.
  std::vector<Group> groups() const {
    std::vector<Group> g{{"hash_tables", tables, tableCount}};
    auto add = [&](const char* name, const DenseBlock& b) {
      if (b.present()) g.push_back({name, b.offset, b.count()});
    };
    add("structural_1", enc1);
    add("structural_2", enc2);
    add("film", film);
    add("skip", skip);
    const char* names[] = {"mlp_1", "mlp_2", "mlp_3", "mlp_4"};
    for (int l = 0; l < ModelConfig::kHiddenLayers; ++l) add(names[l], mlp[l]);
    add("heads", head);
    return g;
  }
};

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Flat storage that Eigen maps into. A fixed base alignment keeps the
// vectorized kernels on the same code path from run to run; with plain
// malloc alignment the sums could round differently between processes.
template <class Real>
using AlignedBuffer = std::vector<Real, Eigen::aligned_allocator<Real>>;

/// All trainable parameters of the network, stored in one flat vector so the
/// optimizer, checkpointing and gradient checks share one layout.
template <class Real>
class InrModel {
 public:
  InrModel() : InrModel(ModelConfig{}) {}
  explicit InrModel(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg) {
    cfg_.validate();
    params_.assign(static_cast<std::size_t>(layout_.total), Real(0));
  }

  /// Tables uniform in [-1e-4, 1e-4]; dense layers uniform in +-1/sqrt(fan_in);
  /// the FiLM projection starts at zero so the modulation is the identity.
  static InrModel initialized(const ModelConfig& cfg, std::uint64_t seed) {
    InrModel m(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> table(-1e-4, 1e-4);
    for (std::int64_t i = 0; i < m.layout_.tableCount; ++i) m.params_[m.layout_.tables + i] = Real(table(rng));
    auto init = [&](const DenseBlock& b) {
      if (!b.present()) return;
      const double bound = 1.0 / std::sqrt(double(b.cols));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::int64_t i = 0; i < b.count(); ++i) m.params_[b.offset + i] = Real(u(rng));
    };
    init(m.layout_.enc1);
    init(m.layout_.enc2);
    init(m.layout_.skip);
    for (const auto& b : m.layout_.mlp) init(b);
    init(m.layout_.head);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<Real> params() { return params_; }
  std::span<const Real> params() const { return params_; }

  Eigen::Map<Mat<Real>> weight(const DenseBlock& b) { return {params_.data() + b.offset, b.rows, b.cols}; }
  Eigen::Map<const Mat<Real>> weight(const DenseBlock& b) const {
    return {params_.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<Vec<Real>> bias(const DenseBlock& b) { return {params_.data() + b.bias_offset(), b.rows}; }
  Eigen::Map<const Vec<Real>> bias(const DenseBlock& b) const { return {params_.data() + b.bias_offset(), b.rows}; }

  Real* table_row(int level, std::uint32_t row) {
    return params_.data() + table_row_offset(level, row);
  }
  const Real* table_row(int level, std::uint32_t row) const {
    return params_.data() + table_row_offset(level, row);
  }
  std::int64_t table_row_offset(int level, std::uint32_t row) const {
    return layout_.tables + (std::int64_t{level} * cfg_.grid.table_size() + row) * cfg_.grid.featuresPerLevel;
  }

  bool all_finite() const {
    for (Real v : params_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <class Other>
  InrModel<Other> cast() const {
    InrModel<Other> m(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) m.params()[i] = Other(params_[i]);
    return m;
  }

  friend bool operator==(const InrModel& a, const InrModel& b) {
    return a.cfg_ == b.cfg_ && a.params_ == b.params_;
  }

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  AlignedBuffer<Real> params_;
};

/// Multiresolution hash encoding of one point; output is level-major.
template <class Real>
std::vector<Real> encode_position(const InrModel<Real>& model, std::span<const double, 3> p) {
  check_unit_cube(p);
  const auto& g = model.config().grid;
  std::vector<Real> out(static_cast<std::size_t>(g.output_width()), Real(0));
  for (int l = 0; l < g.levels; ++l) {
    const LevelLookup lk = lookup_level(g, l, p);
    for (int c = 0; c < 8; ++c) {
      const Real* row = model.table_row(l, lk.rows[c]);
      for (int f = 0; f < g.featuresPerLevel; ++f) out[l * g.featuresPerLevel + f] += Real(lk.weights[c]) * row[f];
    }
  }
  return out;
}

/// F_mod = F_pos * (gamma + 1) + beta, elementwise.
template <class Real>
std::vector<Real> film_modulate(std::span<const Real> pos, std::span<const Real> gamma, std::span<const Real> beta) {
  require(pos.size() == gamma.size() && pos.size() == beta.size(), ErrorKind::ShapeMismatch,
          "FiLM operands must have equal widths");
  std::vector<Real> out(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) out[i] = pos[i] * (gamma[i] + Real(1)) + beta[i];
  return out;
}

}  // namespace voxfeat
