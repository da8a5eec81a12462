#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "voxfeat/classify.hpp"
#include "voxfeat/image.hpp"
#include "voxfeat/scribbles.hpp"
#include "voxfeat/transfer_function.hpp"
#include "voxfeat/vec3.hpp"
#include "voxfeat/volume.hpp"

namespace voxfeat {

/// Pinhole camera in voxel coordinates (voxel centers at integer positions).
struct Camera {
  Vec3 eye{0, 0, -100};
  Vec3 target{0, 0, 0};
  Vec3 up{0, 1, 0};
  double fovY = 40.0;  // degrees
  int width = 256;
  int height = 256;

  void validate() const {
    const Vec3 f = target - eye;
    require(norm(f) > 1e-12, ErrorKind::InvalidArgument, "camera eye and target coincide", "camera.eye");
    require(norm(cross(normalized(f), normalized(up))) > 1e-9, ErrorKind::InvalidArgument,
            "camera up vector is parallel to the view direction", "camera.up");
    require(fovY > 0 && fovY < 180, ErrorKind::InvalidArgument, "fovY must be in (0,180)", "camera.fovY");
    require(width > 0 && height > 0 && width <= 8192 && height <= 8192, ErrorKind::InvalidArgument,
            "image size out of range", "camera.width");
  }

  struct Ray {
    Vec3 origin, dir;  // dir is unit length
  };

  Ray ray(double px, double py) const {
    const Vec3 f = normalized(target - eye);
    const Vec3 r = normalized(cross(f, up));
    const Vec3 u = cross(r, f);
    const double t = std::tan(fovY * std::numbers::pi / 360.0);
    const double aspect = double(width) / double(height);
    const double sx = (2.0 * (px + 0.5) / width - 1.0) * t * aspect;
    const double sy = (1.0 - 2.0 * (py + 0.5) / height) * t;
    return {eye, normalized(f + r * sx + u * sy)};
  }
};

inline Vec3 volume_center(Dims d) { return {0.5 * double(d.nx - 1), 0.5 * double(d.ny - 1), 0.5 * double(d.nz - 1)}; }
inline double volume_diagonal(Dims d) { return norm(Vec3{double(d.nx - 1), double(d.ny - 1), double(d.nz - 1)}); }

/// Camera on a sphere around the volume center looking inward along -dir.
inline Camera orbit_camera(Dims d, Vec3 dir, double radiusFactor = 1.5, int width = 256, int height = 256) {
  dir = normalized(dir);
  require(norm(dir) > 0, ErrorKind::InvalidArgument, "view direction must be non-zero", "dir");
  Camera c;
  const double radius = radiusFactor * volume_diagonal(d);
  c.target = volume_center(d);
  c.eye = c.target + dir * radius;
  c.up = std::abs(dir.z) > 0.99 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
  c.fovY = 2.0 * std::atan(0.55 * volume_diagonal(d) / radius) * 180.0 / std::numbers::pi;
  c.width = width;
  c.height = height;
  return c;
}

enum class RenderMode { Probabilistic, ProbabilityIntensity };

inline const char* to_string(RenderMode m) {
  return m == RenderMode::Probabilistic ? "probabilistic" : "probabilityIntensity";
}

inline RenderMode parse_render_mode(const std::string& s) {
  if (s == "probabilistic") return RenderMode::Probabilistic;
  if (s == "probabilityIntensity" || s == "probability-intensity" || s == "probability_intensity")
    return RenderMode::ProbabilityIntensity;
  fail(ErrorKind::InvalidArgument, "unknown render mode '" + s + "'", "mode");
}

struct RenderConfig {
  RenderMode mode = RenderMode::Probabilistic;
  double stepSize = 0.5;  // voxels
  double earlyTermination = 0.99;
  double refStep = 1.0;  // opacity correction reference, voxels
  std::array<double, 4> background{0, 0, 0, 1};

  void validate() const {
    require(stepSize > 0 && std::isfinite(stepSize), ErrorKind::InvalidArgument, "stepSize must be positive",
            "stepSize");
    require(refStep > 0, ErrorKind::InvalidArgument, "refStep must be positive", "refStep");
    require(earlyTermination > 0 && earlyTermination <= 1, ErrorKind::InvalidArgument,
            "earlyTermination must be in (0,1]", "earlyTermination");
  }
};

struct Shaded {
  Rgb c{0, 0, 0};
  double a = 0;
};

/// Probability-weighted TF sum over classes, TFs evaluated at p_n.
/// `p` holds foreground probabilities (class 1 first).
inline Shaded shade_probabilistic(std::span<const double> p, const TfSet& tfs) {
  if (p.size() != tfs.size())
    fail(ErrorKind::ShapeMismatch, std::to_string(p.size()) + " class probabilities but " +
                                       std::to_string(tfs.size()) + " transfer functions");
  Shaded s;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const Rgb c = tfs[n].c(p[n]);
    for (int k = 0; k < 3; ++k) s.c[k] += c[k] * p[n];
    s.a += tfs[n].a(p[n]) * p[n];
  }
  s.a = std::clamp(s.a, 0.0, 1.0);
  return s;
}

/// TFs evaluated at intensity, summed over classes with p_n >= tau_n and
/// normalized by their total probability; nothing passing is transparent.
inline Shaded shade_probability_intensity(std::span<const double> p, double intensity, const TfSet& tfs) {
  if (p.size() != tfs.size())
    fail(ErrorKind::ShapeMismatch, std::to_string(p.size()) + " class probabilities but " +
                                       std::to_string(tfs.size()) + " transfer functions");
  Shaded s;
  double w = 0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (p[n] < tfs[n].tau) continue;
    const Rgb c = tfs[n].c(intensity);
    for (int k = 0; k < 3; ++k) s.c[k] += c[k] * p[n];
    s.a += tfs[n].a(intensity) * p[n];
    w += p[n];
  }
  if (w <= 0) return {};
  for (double& c : s.c) c /= w;
  s.a = std::clamp(s.a / w, 0.0, 1.0);
  return s;
}

/// Opacity for a step of `step` voxels given per-reference-step opacity a.
inline double corrected_alpha(double a, double step, double refStep) {
  if (a >= 1.0) return 1.0;
  return 1.0 - std::pow(1.0 - a, step / refStep);
}

/// Front-to-back accumulator; color is premultiplied.
struct Accumulator {
  Rgb c{0, 0, 0};
  double a = 0;

  void add(const Shaded& s, double alpha) {
    const double w = (1.0 - a) * alpha;
    for (int k = 0; k < 3; ++k) c[k] += w * s.c[k];
    a += w;
  }
  std::array<double, 4> over(const std::array<double, 4>& bg) const {
    return {c[0] + (1 - a) * bg[0], c[1] + (1 - a) * bg[1], c[2] + (1 - a) * bg[2], a + (1 - a) * bg[3]};
  }
};

/// Float RGBA image used before 8-bit quantization.
struct FloatImage {
  int width = 0, height = 0;
  std::vector<std::array<double, 4>> px;

  const std::array<double, 4>& at(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }

  Image to_image() const {
    Image img(width, height);
    for (std::size_t i = 0; i < px.size(); ++i)
      for (int k = 0; k < 4; ++k) img.rgba[i * 4 + k] = to_byte(px[i][k]);
    return img;
  }
};

/// The 8 grid corners and weights around a clamped voxel-space position.
struct TrilinearCell {
  std::array<std::int64_t, 8> idx{};
  std::array<double, 8> w{};

  TrilinearCell(Dims d, Vec3 p) {
    const double px = std::clamp(p.x, 0.0, double(d.nx - 1));
    const double py = std::clamp(p.y, 0.0, double(d.ny - 1));
    const double pz = std::clamp(p.z, 0.0, double(d.nz - 1));
    const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(px), d.nx - 2);
    const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(py), d.ny - 2);
    const auto z0 = std::min<std::int64_t>(static_cast<std::int64_t>(pz), d.nz - 2);
    const double f[3] = {px - double(x0), py - double(y0), pz - double(z0)};
    for (int c = 0; c < 8; ++c) {
      const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
      idx[c] = d.linear(x0 + bx, y0 + by, z0 + bz);
      w[c] = (bx ? f[0] : 1 - f[0]) * (by ? f[1] : 1 - f[1]) * (bz ? f[2] : 1 - f[2]);
    }
  }
};

/// Ray entry/exit against the box [0, n-1]^3; false when missed.
inline bool intersect_box(Dims d, const Camera::Ray& r, double& t0, double& t1) {
  t0 = 0;
  t1 = std::numeric_limits<double>::infinity();
  const double hi[3] = {double(d.nx - 1), double(d.ny - 1), double(d.nz - 1)};
  for (int a = 0; a < 3; ++a) {
    const double o = r.origin[a], v = r.dir[a];
    if (std::abs(v) < 1e-15) {
      if (o < 0 || o > hi[a]) return false;
      continue;
    }
    double ta = (0 - o) / v, tb = (hi[a] - o) / v;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

/// Marches every pixel's ray; `shade(position)` returns the sample's color
/// and per-reference-step opacity.
template <class Shader>
FloatImage march(Dims d, const Camera& cam, const RenderConfig& cfg, Shader&& shade) {
  cam.validate();
  cfg.validate();
  FloatImage out{cam.width, cam.height, {}};
  out.px.resize(static_cast<std::size_t>(cam.width) * cam.height);
  const double alphaScale = cfg.stepSize / cfg.refStep;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Camera::Ray r = cam.ray(x, y);
      Accumulator acc;
      double t0, t1;
      if (intersect_box(d, r, t0, t1)) {
        for (double t = t0; t <= t1 + 1e-9 && acc.a < cfg.earlyTermination; t += cfg.stepSize) {
          const Shaded s = shade(r.origin + r.dir * t);
          if (s.a <= 0) continue;
          acc.add(s, s.a >= 1.0 ? 1.0 : 1.0 - std::pow(1.0 - s.a, alphaScale));
        }
      }
      out.px[static_cast<std::size_t>(y) * cam.width + x] = acc.over(cfg.background);
    }
  return out;
}

/// Class-probability volume rendering in either mode.
inline FloatImage render_rgba(const ScalarVolume& vol, const ProbabilityVolume& P, const TfSet& tfs, const Camera& cam,
                              const RenderConfig& cfg) {
  require(P.dims == vol.dims(), ErrorKind::ShapeMismatch, "probability volume and intensity volume differ in dims");
  if (static_cast<int>(tfs.size()) != P.foreground_classes())
    fail(ErrorKind::ShapeMismatch, "render needs " + std::to_string(P.foreground_classes()) +
                                       " transfer functions, got " + std::to_string(tfs.size()),
         "tf");
  const int nc = P.numClasses;
  std::vector<double> all(static_cast<std::size_t>(nc));
  const auto data = vol.data();
  return march(vol.dims(), cam, cfg, [&](Vec3 p) {
    const TrilinearCell cell(vol.dims(), p);
    std::fill(all.begin(), all.end(), 0.0);
    double intensity = 0;
    for (int c = 0; c < 8; ++c) {
      const double w = cell.w[c];
      if (w == 0) continue;
      intensity += w * data[static_cast<std::size_t>(cell.idx[c])];
      const float* pv = P.probs.data() + static_cast<std::size_t>(cell.idx[c]) * nc;
      for (int k = 0; k < nc; ++k) all[static_cast<std::size_t>(k)] += w * pv[k];
    }
    double sum = 0;
    for (double v : all) sum += v;
    if (sum > 0)
      for (double& v : all) v /= sum;
    const std::span<const double> fg(all.data() + 1, all.size() - 1);
    return cfg.mode == RenderMode::Probabilistic ? shade_probabilistic(fg, tfs)
                                                 : shade_probability_intensity(fg, intensity, tfs);
  });
}

inline Image render(const ScalarVolume& vol, const ProbabilityVolume& P, const TfSet& tfs, const Camera& cam,
                    const RenderConfig& cfg) {
  return render_rgba(vol, P, tfs, cam, cfg).to_image();
}

/// Conventional single-TF intensity rendering.
inline FloatImage render_intensity_rgba(const ScalarVolume& vol, const ClassTf& tf, const Camera& cam,
                                        const RenderConfig& cfg) {
  return march(vol.dims(), cam, cfg, [&](Vec3 p) {
    const double i = sample_trilinear(vol, p);
    return Shaded{tf.c(i), std::clamp(tf.a(i), 0.0, 1.0)};
  });
}

inline Image render_intensity(const ScalarVolume& vol, const ClassTf& tf, const Camera& cam,
                              const RenderConfig& cfg) {
  return render_intensity_rgba(vol, tf, cam, cfg).to_image();
}

// ---- slices ---------------------------------------------------------------

enum class Overlay { None, Scribbles, Probability, Label };

inline Overlay parse_overlay(const std::string& s) {
  if (s == "none") return Overlay::None;
  if (s == "scribbles") return Overlay::Scribbles;
  if (s == "probability") return Overlay::Probability;
  if (s == "label") return Overlay::Label;
  fail(ErrorKind::InvalidArgument, "overlay must be none|scribbles|probability|label", "overlay");
}

struct SliceOptions {
  Overlay overlay = Overlay::None;
  double alpha = 0.6;  // overlay opacity
  int scale = 1;       // integer zoom, nearest neighbor
  const ProbabilityVolume* probabilities = nullptr;
  const LabelVolume* labels = nullptr;
  const ScribbleSet* scribbles = nullptr;
};

/// In-slice image axes: axis z shows (x right, y down), axis y shows (x, z),
/// axis x shows (y, z).
inline std::array<int, 2> slice_axes(int axis) {
  return axis == 2 ? std::array<int, 2>{0, 1} : axis == 1 ? std::array<int, 2>{0, 2} : std::array<int, 2>{1, 2};
}

/// Voxel shown at slice pixel (u, v) before zoom.
inline Index3 slice_voxel(int axis, std::int64_t index, std::int64_t u, std::int64_t v) {
  std::int64_t c[3] = {0, 0, 0};
  const auto ax = slice_axes(axis);
  c[axis] = index;
  c[ax[0]] = u;
  c[ax[1]] = v;
  return {c[0], c[1], c[2]};
}

/// Grayscale slice with an optional class overlay blended on top.
inline Image render_slice(const ScalarVolume& vol, int axis, std::int64_t index, const SliceOptions& opt = {}) {
  const Dims d = vol.dims();
  require(axis >= 0 && axis <= 2, ErrorKind::InvalidArgument, "axis must be 0, 1 or 2", "axis");
  require(index >= 0 && index < d[axis], ErrorKind::InvalidArgument,
          "slice index " + std::to_string(index) + " out of range [0," + std::to_string(d[axis] - 1) + "]", "index");
  require(opt.scale >= 1 && opt.scale <= 16, ErrorKind::InvalidArgument, "scale must be in [1,16]", "scale");
  require(opt.alpha >= 0 && opt.alpha <= 1, ErrorKind::InvalidArgument, "overlay alpha must be in [0,1]", "alpha");
  const auto ax = slice_axes(axis);
  const int w = static_cast<int>(d[ax[0]]), h = static_cast<int>(d[ax[1]]);

  const ProbabilityVolume* P = opt.probabilities;
  switch (opt.overlay) {
    case Overlay::Probability:
      require(P && P->dims == d, ErrorKind::Precondition, "probability overlay needs a matching probability volume",
              "overlay");
      break;
    case Overlay::Label:
      require(opt.labels && opt.labels->dims() == d, ErrorKind::Precondition,
              "label overlay needs a matching label volume", "overlay");
      break;
    case Overlay::Scribbles:
      require(opt.scribbles && opt.scribbles->dims() == d, ErrorKind::Precondition,
              "scribble overlay needs a matching scribble set", "overlay");
      break;
    case Overlay::None: break;
  }
  std::vector<int> scribbleClass;
  if (opt.overlay == Overlay::Scribbles) {
    scribbleClass.assign(static_cast<std::size_t>(w) * h, -1);
    for (const auto& e : opt.scribbles->entries()) {
      const Index3 v = d.unravel(e.voxel);
      const std::int64_t c[3] = {v.x, v.y, v.z};
      if (c[axis] == index) scribbleClass[static_cast<std::size_t>(c[ax[1]] * w + c[ax[0]])] = e.classId;
    }
  }

  Image img(w * opt.scale, h * opt.scale);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const std::int64_t vox = d.linear(slice_voxel(axis, index, u, v));
      const double g = vol[vox];
      Rgb rgb{g, g, g};
      auto blend = [&](const Rgb& c, double a) {
        for (int k = 0; k < 3; ++k) rgb[k] = (1 - a) * rgb[k] + a * c[k];
      };
      switch (opt.overlay) {
        case Overlay::Probability: {
          const auto p = P->at(vox);
          Rgb mix{0, 0, 0};
          double mass = 0;
          for (int n = 1; n < P->numClasses; ++n) {
            const Rgb& c = palette_color(n);
            for (int k = 0; k < 3; ++k) mix[k] += double(p[static_cast<std::size_t>(n)]) * c[k];
            mass += p[static_cast<std::size_t>(n)];
          }
          for (int k = 0; k < 3; ++k) rgb[k] = (1 - opt.alpha * mass) * rgb[k] + opt.alpha * mix[k];
          break;
        }
        case Overlay::Label:
          if (const int l = (*opt.labels)[vox]; l > 0) blend(palette_color(l), opt.alpha);
          break;
        case Overlay::Scribbles:
          if (const int c = scribbleClass[static_cast<std::size_t>(v) * w + u]; c >= 0) blend(palette_color(c), 1.0);
          break;
        case Overlay::None: break;
      }
      const std::uint8_t px[4] = {to_byte(rgb[0]), to_byte(rgb[1]), to_byte(rgb[2]), 255};
      for (int sy = 0; sy < opt.scale; ++sy)
        for (int sx = 0; sx < opt.scale; ++sx) std::memcpy(img.px(u * opt.scale + sx, v * opt.scale + sy), px, 4);
    }
  return img;
}

}  // namespace voxfeat
