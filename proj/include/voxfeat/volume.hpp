#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "voxfeat/error.hpp"
#include "voxfeat/vec3.hpp"

namespace voxfeat {

struct Index3 {
  std::int64_t x = 0, y = 0, z = 0;
  friend constexpr bool operator==(Index3, Index3) = default;
};

struct Dims {
  std::int64_t nx = 0, ny = 0, nz = 0;

  constexpr std::int64_t count() const { return nx * ny * nz; }
  constexpr std::int64_t operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  // x-fastest linear order.
  constexpr std::int64_t linear(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + nx * (y + ny * z);
  }
  constexpr std::int64_t linear(Index3 i) const { return linear(i.x, i.y, i.z); }
  constexpr Index3 unravel(std::int64_t idx) const {
    return {idx % nx, (idx / nx) % ny, idx / (nx * ny)};
  }
  constexpr bool contains(Index3 i) const {
    return i.x >= 0 && i.y >= 0 && i.z >= 0 && i.x < nx && i.y < ny && i.z < nz;
  }
  friend constexpr bool operator==(Dims, Dims) = default;
};

inline std::string to_string(Dims d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

/// Normalized scalar field on a regular grid. Values are in [0,1] and stored
/// x-fastest. Construction validates every invariant, after which the volume
/// is immutable.
class ScalarVolume {
 public:
  ScalarVolume() = default;

  ScalarVolume(Dims dims, std::vector<float> data, Vec3 spacing = {1, 1, 1})
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    require(dims.nx >= 2 && dims.ny >= 2 && dims.nz >= 2, ErrorKind::InvalidArgument,
            "volume dims must be >= 2 per axis, got " + to_string(dims), "dims");
    require(static_cast<std::int64_t>(data_.size()) == dims.count(), ErrorKind::ShapeMismatch,
            "volume data length " + std::to_string(data_.size()) + " != " + std::to_string(dims.count()),
            "data");
    require(spacing.x > 0 && spacing.y > 0 && spacing.z > 0, ErrorKind::InvalidArgument,
            "spacing must be positive", "spacing");
    for (float v : data_) {
      require(std::isfinite(v) && v >= 0.0f && v <= 1.0f, ErrorKind::InvalidArgument,
              "volume values must be finite and in [0,1]", "data");
    }
  }

  Dims dims() const { return dims_; }
  Vec3 spacing() const { return spacing_; }
  std::int64_t size() const { return dims_.count(); }
  std::span<const float> data() const { return data_; }

  float operator[](std::int64_t idx) const { return data_[static_cast<std::size_t>(idx)]; }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data_[dims_.linear(x, y, z)]; }
  float at_clamped(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return at(std::clamp<std::int64_t>(x, 0, dims_.nx - 1), std::clamp<std::int64_t>(y, 0, dims_.ny - 1),
              std::clamp<std::int64_t>(z, 0, dims_.nz - 1));
  }

  // Voxel position mapped into [0,1]^3 (first voxel -> 0, last voxel -> 1).
  std::array<double, 3> normalized_coord(std::int64_t idx) const {
    const Index3 i = dims_.unravel(idx);
    return {double(i.x) / double(dims_.nx - 1), double(i.y) / double(dims_.ny - 1),
            double(i.z) / double(dims_.nz - 1)};
  }

  Vec3 world_position(Index3 i) const {
    return {double(i.x) * spacing_.x, double(i.y) * spacing_.y, double(i.z) * spacing_.z};
  }

  friend bool operator==(const ScalarVolume&, const ScalarVolume&) = default;

 private:
  Dims dims_{};
  Vec3 spacing_{1, 1, 1};
  std::vector<float> data_;
};

/// Per-voxel class ids: 0 is background, 1..N are ROI classes.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, std::vector<std::uint8_t> labels) : dims_(dims), labels_(std::move(labels)) {
    require(static_cast<std::int64_t>(labels_.size()) == dims.count(), ErrorKind::ShapeMismatch,
            "label data length does not match dims", "labels");
  }

  Dims dims() const { return dims_; }
  std::int64_t size() const { return dims_.count(); }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t operator[](std::int64_t idx) const { return labels_[static_cast<std::size_t>(idx)]; }
  std::uint8_t at(Index3 i) const { return labels_[static_cast<std::size_t>(dims_.linear(i))]; }
  int max_label() const {
    return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
  }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims dims_{};
  std::vector<std::uint8_t> labels_;
};

struct VoxelPatch {
  int side = 5;
  std::vector<float> values;  // side^3, x-fastest
};

/// Writes the clamp-to-edge n^3 neighbourhood of `center` into `out`.
inline void extract_patch_into(const ScalarVolume& vol, Index3 center, int n, std::span<float> out) {
  const int r = n / 2;
  std::size_t k = 0;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) out[k++] = vol.at_clamped(center.x + dx, center.y + dy, center.z + dz);
}

inline VoxelPatch extract_patch(const ScalarVolume& vol, Index3 center, int n = 5) {
  require(n >= 1 && n % 2 == 1, ErrorKind::InvalidArgument, "patch side must be odd, got " + std::to_string(n), "n");
  require(vol.dims().contains(center), ErrorKind::InvalidArgument, "patch center out of bounds", "idx");
  VoxelPatch p{n, std::vector<float>(static_cast<std::size_t>(n) * n * n)};
  extract_patch_into(vol, center, n, p.values);
  return p;
}

enum class GradientTarget { Vector, Magnitude };

/// Regression targets derived from a volume: normalized gradient plus local
/// mean and (population) standard deviation over clamped n^3 windows.
struct DerivedFields {
  Dims dims{};
  int window = 5;
  std::vector<float> gradient;  // 3 per voxel
  std::vector<float> localMean;
  std::vector<float> localStd;
  float maxGradientMagnitude = 0;  // before normalization

  Vec3 gradient_at(std::int64_t idx) const {
    const auto i = static_cast<std::size_t>(idx) * 3;
    return {gradient[i], gradient[i + 1], gradient[i + 2]};
  }
  float gradient_magnitude(std::int64_t idx) const { return static_cast<float>(norm(gradient_at(idx))); }
};

namespace detail {

inline double axis_difference(const ScalarVolume& v, std::int64_t x, std::int64_t y, std::int64_t z, int axis) {
  const Dims d = v.dims();
  std::int64_t c[3] = {x, y, z};
  const std::int64_t n = d[axis];
  std::int64_t lo = c[axis] - 1, hi = c[axis] + 1;
  double scale = 0.5;
  if (lo < 0) { lo = c[axis]; scale = 1.0; }
  if (hi >= n) { hi = c[axis]; scale = 1.0; }
  std::int64_t a[3] = {x, y, z}, b[3] = {x, y, z};
  a[axis] = hi;
  b[axis] = lo;
  return (double(v.at(a[0], a[1], a[2])) - double(v.at(b[0], b[1], b[2]))) * scale;
}

}  // namespace detail

inline DerivedFields compute_derived_fields(const ScalarVolume& vol, int n = 5) {
  require(n >= 1 && n % 2 == 1, ErrorKind::InvalidArgument, "window side must be odd", "n");
  const Dims d = vol.dims();
  const auto count = static_cast<std::size_t>(d.count());
  DerivedFields f;
  f.dims = d;
  f.window = n;
  f.gradient.resize(count * 3);
  f.localMean.resize(count);
  f.localStd.resize(count);

  std::vector<double> raw(count * 3);
  double maxMag = 0;
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const auto i = static_cast<std::size_t>(d.linear(x, y, z)) * 3;
        for (int a = 0; a < 3; ++a) raw[i + a] = detail::axis_difference(vol, x, y, z, a);
        maxMag = std::max(maxMag, std::sqrt(raw[i] * raw[i] + raw[i + 1] * raw[i + 1] + raw[i + 2] * raw[i + 2]));
      }
  f.maxGradientMagnitude = static_cast<float>(maxMag);
  for (std::size_t i = 0; i < raw.size(); ++i) f.gradient[i] = maxMag > 0 ? static_cast<float>(raw[i] / maxMag) : 0.0f;

  const int r = n / 2;
  const double inv = 1.0 / (double(n) * n * n);
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        double sum = 0;
        for (int dz = -r; dz <= r; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) sum += vol.at_clamped(x + dx, y + dy, z + dz);
        const double mean = sum * inv;
        double ss = 0;
        for (int dz = -r; dz <= r; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              const double e = vol.at_clamped(x + dx, y + dy, z + dz) - mean;
              ss += e * e;
            }
        const auto i = static_cast<std::size_t>(d.linear(x, y, z));
        f.localMean[i] = static_cast<float>(mean);
        f.localStd[i] = static_cast<float>(std::sqrt(ss * inv));
      }
  return f;
}

/// Trilinear sample at a continuous voxel-space position, clamped to the grid.
inline double sample_trilinear(const ScalarVolume& vol, Vec3 p) {
  const Dims d = vol.dims();
  const double px = std::clamp(p.x, 0.0, double(d.nx - 1));
  const double py = std::clamp(p.y, 0.0, double(d.ny - 1));
  const double pz = std::clamp(p.z, 0.0, double(d.nz - 1));
  const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(px), d.nx - 2);
  const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(py), d.ny - 2);
  const auto z0 = std::min<std::int64_t>(static_cast<std::int64_t>(pz), d.nz - 2);
  const double fx = px - double(x0), fy = py - double(y0), fz = pz - double(z0);
  auto v = [&](int dx, int dy, int dz) { return double(vol.at(x0 + dx, y0 + dy, z0 + dz)); };
  const double c00 = v(0, 0, 0) * (1 - fx) + v(1, 0, 0) * fx;
  const double c10 = v(0, 1, 0) * (1 - fx) + v(1, 1, 0) * fx;
  const double c01 = v(0, 0, 1) * (1 - fx) + v(1, 0, 1) * fx;
  const double c11 = v(0, 1, 1) * (1 - fx) + v(1, 1, 1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

}  // namespace voxfeat
