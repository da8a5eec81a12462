#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "voxfeat/error.hpp"
#include "voxfeat/volume.hpp"

namespace voxfeat {

enum class PhantomKind { NestedSpheres, EngravedCube, TubeTree, TornadoField };

inline const char* to_string(PhantomKind k) {
  switch (k) {
    case PhantomKind::NestedSpheres: return "nested-spheres-overlapping-intensity";
    case PhantomKind::EngravedCube: return "engraved-cube";
    case PhantomKind::TubeTree: return "tube-tree";
    case PhantomKind::TornadoField: return "tornado-field";
  }
  return "?";
}

inline PhantomKind parse_phantom_kind(const std::string& s) {
  if (s == "nested-spheres-overlapping-intensity" || s == "nested-spheres") return PhantomKind::NestedSpheres;
  if (s == "engraved-cube") return PhantomKind::EngravedCube;
  if (s == "tube-tree") return PhantomKind::TubeTree;
  if (s == "tornado-field") return PhantomKind::TornadoField;
  fail(ErrorKind::InvalidArgument, "unknown phantom kind '" + s + "'", "kind");
}

struct PhantomParams {
  PhantomKind kind = PhantomKind::NestedSpheres;
  Dims dims{64, 64, 64};
  std::uint64_t seed = 0;
  double noise = 0.02;  // Gaussian sigma before normalization
};

struct Phantom {
  ScalarVolume volume;
  LabelVolume labels;
  PhantomParams params;
  int numClasses = 0;  // foreground classes
};

namespace detail {

// Adds noise, then min-max normalizes so a float32 save/load round trip is exact.
inline ScalarVolume finish_volume(Dims dims, std::vector<double> v, double sigma, std::uint64_t seed) {
  if (sigma > 0) {
    std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dull + 17);
    std::normal_distribution<double> n(0.0, sigma);
    for (double& x : v) x += n(rng);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : v) { lo = std::min(lo, x); hi = std::max(hi, x); }
  std::vector<float> out(v.size(), 0.0f);
  if (hi > lo)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - lo) / (hi - lo));
  return ScalarVolume(dims, std::move(out));
}

// 5x7 raster "E", rows top to bottom; every set pixel is 4-connected.
inline constexpr std::array<const char*, 7> kGlyph = {"#####", "#....", "#....", "####.", "#....", "#....", "#####"};

}  // namespace detail

/// Concentric core + two shells on a dark background. Inside each class the
/// intensity ramps with radius so neighbouring classes sit only 0.02 apart:
/// noiseless data is separable by thresholds, noisy data is not.
inline Phantom nested_spheres(const PhantomParams& p) {
  const Dims d = p.dims;
  require(std::min({d.nx, d.ny, d.nz}) >= 16, ErrorKind::InvalidArgument, "nested spheres need dims >= 16", "dims");
  const double cx = (d.nx - 1) / 2.0, cy = (d.ny - 1) / 2.0, cz = (d.nz - 1) / 2.0;
  const double half = (std::min({d.nx, d.ny, d.nz}) - 1) / 2.0;
  // class k occupies radius [inner, outer) in units of `half`; intensity ramps hi (inner) -> lo (outer)
  struct Band { double inner, outer, hi, lo; std::uint8_t label; };
  const Band bands[] = {{0.0, 0.32, 0.80, 0.64, 1}, {0.32, 0.60, 0.62, 0.47, 2}, {0.60, 0.86, 0.45, 0.30, 3}};
  std::vector<double> v(static_cast<std::size_t>(d.count()));
  std::vector<std::uint8_t> lab(v.size(), 0);
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const double r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz)) / half;
        const auto i = static_cast<std::size_t>(d.linear(x, y, z));
        v[i] = 0.10;
        for (const Band& b : bands)
          if (r >= b.inner && r < b.outer) {
            const double t = (r - b.inner) / (b.outer - b.inner);
            v[i] = b.hi + (b.lo - b.hi) * t;
            lab[i] = b.label;
          }
      }
  return {detail::finish_volume(d, std::move(v), p.noise, p.seed), LabelVolume(d, std::move(lab)), p, 3};
}

/// Solid bright cube with an "E" engraved into its +z face.
/// Label 1 is the cube body, label 2 the carved-out glyph cavity.
inline Phantom engraved_cube(const PhantomParams& p) {
  const Dims d = p.dims;
  require(std::min({d.nx, d.ny, d.nz}) >= 24, ErrorKind::InvalidArgument, "engraved cube needs dims >= 24", "dims");
  const std::int64_t m = std::min({d.nx, d.ny, d.nz});
  const std::int64_t side = (m * 6) / 10;
  const std::int64_t x0 = (d.nx - side) / 2, y0 = (d.ny - side) / 2, z0 = (d.nz - side) / 2;
  const std::int64_t x1 = x0 + side, y1 = y0 + side, z1 = z0 + side;  // exclusive
  const std::int64_t depth = std::max<std::int64_t>(2, side / 10);
  // glyph scaled to ~60% of the face
  const std::int64_t cell = std::max<std::int64_t>(1, (side * 6 / 10) / 7);
  const std::int64_t gw = 5 * cell, gh = 7 * cell;
  const std::int64_t gx0 = x0 + (side - gw) / 2, gy0 = y0 + (side - gh) / 2;

  std::vector<double> v(static_cast<std::size_t>(d.count()), 0.05);
  std::vector<std::uint8_t> lab(v.size(), 0);
  for (std::int64_t z = z0; z < z1; ++z)
    for (std::int64_t y = y0; y < y1; ++y)
      for (std::int64_t x = x0; x < x1; ++x) {
        const auto i = static_cast<std::size_t>(d.linear(x, y, z));
        bool carved = false;
        if (z >= z1 - depth && x >= gx0 && x < gx0 + gw && y >= gy0 && y < gy0 + gh) {
          const std::int64_t col = (x - gx0) / cell, row = 6 - (y - gy0) / cell;
          carved = detail::kGlyph[static_cast<std::size_t>(row)][col] == '#';
        }
        if (carved) {
          lab[i] = 2;
        } else {
          v[i] = 0.85;
          lab[i] = 1;
        }
      }
  return {detail::finish_volume(d, std::move(v), p.noise, p.seed), LabelVolume(d, std::move(lab)), p, 2};
}

/// Thin branching tubes (three generations of binary splits) over a noisy
/// background. Label 1 marks tube voxels.
inline Phantom tube_tree(const PhantomParams& p) {
  const Dims d = p.dims;
  require(std::min({d.nx, d.ny, d.nz}) >= 24, ErrorKind::InvalidArgument, "tube tree needs dims >= 24", "dims");
  struct Segment { Vec3 a, b; double radius; };
  std::vector<Segment> segs;
  std::mt19937_64 rng(p.seed + 101);
  std::uniform_real_distribution<double> jitter(-0.35, 0.35);
  const double len0 = d.nz * 0.35;
  struct Tip { Vec3 pos, dir; double len, radius; int gen; };
  std::vector<Tip> stack{{{(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, d.nz * 0.08}, {0, 0, 1}, len0, 2.2, 0}};
  while (!stack.empty()) {
    Tip t = stack.back();
    stack.pop_back();
    const Vec3 end = t.pos + t.dir * t.len;
    segs.push_back({t.pos, end, t.radius});
    if (t.gen == 3) continue;
    const Vec3 side = normalized(cross(t.dir, Vec3{std::cos(t.gen * 1.3), std::sin(t.gen * 1.3), 0.1}));
    for (int s : {-1, 1}) {
      const Vec3 dir = normalized(t.dir + side * (0.75 * s + jitter(rng)) + Vec3{jitter(rng), jitter(rng), 0} * 0.3);
      stack.push_back({end, dir, t.len * 0.7, std::max(1.0, t.radius * 0.75), t.gen + 1});
    }
  }
  std::vector<double> v(static_cast<std::size_t>(d.count()), 0.2);
  std::vector<std::uint8_t> lab(v.size(), 0);
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const Vec3 q{double(x), double(y), double(z)};
        for (const Segment& s : segs) {
          const Vec3 ab = s.b - s.a;
          const double t = std::clamp(dot(q - s.a, ab) / dot(ab, ab), 0.0, 1.0);
          if (norm(q - (s.a + ab * t)) <= s.radius) {
            const auto i = static_cast<std::size_t>(d.linear(x, y, z));
            v[i] = 0.7;
            lab[i] = 1;
            break;
          }
        }
      }
  return {detail::finish_volume(d, std::move(v), p.noise, p.seed), LabelVolume(d, std::move(lab)), p, 1};
}

/// Swirling funnel: magnitude decays away from a vortex core that drifts and
/// widens with height. Labels: 1 = core band, 2 = outer band.
inline Phantom tornado_field(const PhantomParams& p) {
  const Dims d = p.dims;
  require(std::min({d.nx, d.ny, d.nz}) >= 16, ErrorKind::InvalidArgument, "tornado field needs dims >= 16", "dims");
  std::vector<double> v(static_cast<std::size_t>(d.count()));
  std::vector<std::uint8_t> lab(v.size(), 0);
  constexpr double kPi = 3.14159265358979323846;
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const double u = 2.0 * x / (d.nx - 1) - 1, w = 2.0 * y / (d.ny - 1) - 1, h = double(z) / (d.nz - 1);
        const double cx = 0.25 * std::sin(kPi * h), cy = 0.15 * std::cos(kPi * h);
        const double dx = u - cx, dy = w - cy;
        const double r = std::sqrt(dx * dx + dy * dy);
        const double width = 0.15 + 0.45 * h;
        const double theta = std::atan2(dy, dx);
        const double m = std::exp(-(r / width) * (r / width)) * (0.8 + 0.2 * std::sin(3 * theta + 6 * h));
        const auto i = static_cast<std::size_t>(d.linear(x, y, z));
        v[i] = m;
        lab[i] = m > 0.6 ? 1 : (m > 0.25 ? 2 : 0);
      }
  return {detail::finish_volume(d, std::move(v), p.noise, p.seed), LabelVolume(d, std::move(lab)), p, 2};
}

inline Phantom generate_phantom(const PhantomParams& p) {
  require(p.noise >= 0, ErrorKind::InvalidArgument, "noise must be >= 0", "noise");
  Phantom ph;
  switch (p.kind) {
    case PhantomKind::NestedSpheres: ph = nested_spheres(p); break;
    case PhantomKind::EngravedCube: ph = engraved_cube(p); break;
    case PhantomKind::TubeTree: ph = tube_tree(p); break;
    case PhantomKind::TornadoField: ph = tornado_field(p); break;
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(ph.numClasses) + 1, 0);
  for (auto l : ph.labels.labels()) ++counts[l];
  for (int c = 1; c <= ph.numClasses; ++c)
    require(counts[static_cast<std::size_t>(c)] > 0, ErrorKind::InvalidArgument,
            "dims too small: class " + std::to_string(c) + " is empty", "dims");
  return ph;
}

}  // namespace voxfeat
