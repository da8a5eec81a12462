#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxfeat/error.hpp"

namespace voxfeat {

using Rgb = std::array<double, 3>;

/// Piecewise-linear map from [0,1] to K channels; constant outside the
/// first and last control points.
template <int K>
class PiecewiseLinear {
 public:
  struct Point {
    double x = 0;
    std::array<double, K> v{};
    friend bool operator==(const Point&, const Point&) = default;
  };

  PiecewiseLinear() : PiecewiseLinear({{0.0, {}}, {1.0, {}}}) {}
  explicit PiecewiseLinear(std::vector<Point> pts, const std::string& field = "points") : pts_(std::move(pts)) {
    require(pts_.size() >= 2, ErrorKind::InvalidArgument, "a transfer function needs at least 2 control points",
            field);
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      const auto& p = pts_[i];
      const std::string at = field + "[" + std::to_string(i) + "]";
      require(std::isfinite(p.x) && p.x >= 0 && p.x <= 1, ErrorKind::InvalidArgument, at + ".x must be in [0,1]",
              at + ".x");
      require(i == 0 || p.x > pts_[i - 1].x, ErrorKind::InvalidArgument, at + ".x must be strictly increasing",
              at + ".x");
      for (double c : p.v)
        require(std::isfinite(c) && c >= 0 && c <= 1, ErrorKind::InvalidArgument, at + " values must be in [0,1]",
                at);
    }
  }

  /// Constant map.
  static PiecewiseLinear constant(std::array<double, K> v) { return PiecewiseLinear({{0.0, v}, {1.0, v}}); }
  /// Linear ramp from `a` at 0 to `b` at 1.
  static PiecewiseLinear ramp(std::array<double, K> a, std::array<double, K> b) {
    return PiecewiseLinear({{0.0, a}, {1.0, b}});
  }

  std::array<double, K> operator()(double x) const {
    if (x <= pts_.front().x) return pts_.front().v;
    if (x >= pts_.back().x) return pts_.back().v;
    const auto it = std::upper_bound(pts_.begin(), pts_.end(), x, [](double a, const Point& p) { return a < p.x; });
    const Point& hi = *it;
    const Point& lo = *(it - 1);
    const double t = (x - lo.x) / (hi.x - lo.x);
    std::array<double, K> out;
    for (int k = 0; k < K; ++k) out[k] = lo.v[k] + t * (hi.v[k] - lo.v[k]);
    return out;
  }

  const std::vector<Point>& points() const { return pts_; }
  friend bool operator==(const PiecewiseLinear&, const PiecewiseLinear&) = default;

 private:
  std::vector<Point> pts_;
};

using ColorMap = PiecewiseLinear<3>;
using OpacityMap = PiecewiseLinear<1>;

/// Color and opacity maps of one ROI class plus its confidence threshold.
struct ClassTf {
  ColorMap color = ColorMap::constant({1, 1, 1});
  OpacityMap opacity = OpacityMap::constant({1});
  double tau = 0.5;

  Rgb c(double x) const { return color(x); }
  double a(double x) const { return opacity(x)[0]; }
  friend bool operator==(const ClassTf&, const ClassTf&) = default;
};

/// One entry per foreground class (index 0 is class 1).
using TfSet = std::vector<ClassTf>;

inline const Rgb& palette_color(int cls) {
  static const std::array<Rgb, 10> p = {{{0.0, 0.8, 0.8},
                                         {0.9, 0.2, 0.2},
                                         {0.2, 0.8, 0.2},
                                         {0.25, 0.4, 1.0},
                                         {0.95, 0.85, 0.1},
                                         {0.8, 0.3, 0.9},
                                         {1.0, 0.55, 0.1},
                                         {0.5, 0.9, 0.6},
                                         {0.6, 0.4, 0.2},
                                         {0.9, 0.6, 0.7}}};
  return p[static_cast<std::size_t>(cls) % p.size()];
}

/// Palette-colored TFs: each class opaque-ish in its palette color.
inline TfSet default_tfs(int foregroundClasses, double opacity = 0.6, double tau = 0.5) {
  TfSet out;
  for (int n = 1; n <= foregroundClasses; ++n) {
    const Rgb& c = palette_color(n);
    out.push_back({ColorMap::constant(c), OpacityMap::ramp({0.0}, {opacity}), tau});
  }
  return out;
}

/// Grayscale intensity TF used for viewpoint thumbnails.
inline ClassTf grayscale_tf() {
  return {ColorMap::ramp({0, 0, 0}, {1, 1, 1}), OpacityMap({{0.0, {0.0}}, {0.15, {0.0}}, {1.0, {0.5}}}), 0.0};
}

inline nlohmann::json tf_to_json(const TfSet& tfs) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t i = 0; i < tfs.size(); ++i) {
    nlohmann::json color = nlohmann::json::array(), opacity = nlohmann::json::array();
    for (const auto& p : tfs[i].color.points()) color.push_back({{"x", p.x}, {"r", p.v[0]}, {"g", p.v[1]}, {"b", p.v[2]}});
    for (const auto& p : tfs[i].opacity.points()) opacity.push_back({{"x", p.x}, {"a", p.v[0]}});
    classes.push_back({{"class", i + 1}, {"color", color}, {"opacity", opacity}, {"tau", tfs[i].tau}});
  }
  return {{"classes", classes}};
}

namespace detail {

inline double number_at(const nlohmann::json& j, const char* key, const std::string& path) {
  require(j.is_object() && j.contains(key) && j[key].is_number(), ErrorKind::InvalidArgument,
          path + "." + key + " must be a number", path + "." + key);
  return j[key].get<double>();
}

}  // namespace detail

/// Accepts {classes:[...]} or a bare array; entries may carry an explicit
/// 1-based "class", otherwise position decides.
inline TfSet tf_from_json(const nlohmann::json& doc) {
  const nlohmann::json& arr = doc.is_object() && doc.contains("classes") ? doc["classes"] : doc;
  require(arr.is_array() && !arr.empty(), ErrorKind::InvalidArgument, "TF document needs a non-empty class list",
          "classes");
  TfSet out(arr.size());
  std::vector<bool> seen(arr.size(), false);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "classes[" + std::to_string(i) + "]";
    const auto& e = arr[i];
    require(e.is_object(), ErrorKind::InvalidArgument, path + " must be an object", path);
    std::size_t slot = i;
    if (e.contains("class")) {
      require(e["class"].is_number_integer(), ErrorKind::InvalidArgument, path + ".class must be an integer",
              path + ".class");
      const auto c = e["class"].get<long long>();
      require(c >= 1 && c <= static_cast<long long>(arr.size()), ErrorKind::InvalidArgument,
              path + ".class must be in [1, " + std::to_string(arr.size()) + "]", path + ".class");
      slot = static_cast<std::size_t>(c - 1);
    }
    require(!seen[slot], ErrorKind::InvalidArgument, path + ".class is duplicated", path + ".class");
    seen[slot] = true;

    require(e.contains("color") && e["color"].is_array(), ErrorKind::InvalidArgument, path + ".color must be a list",
            path + ".color");
    std::vector<ColorMap::Point> cp;
    for (std::size_t k = 0; k < e["color"].size(); ++k) {
      const std::string pp = path + ".color[" + std::to_string(k) + "]";
      const auto& p = e["color"][k];
      cp.push_back({detail::number_at(p, "x", pp),
                    {detail::number_at(p, "r", pp), detail::number_at(p, "g", pp), detail::number_at(p, "b", pp)}});
    }
    require(e.contains("opacity") && e["opacity"].is_array(), ErrorKind::InvalidArgument,
            path + ".opacity must be a list", path + ".opacity");
    std::vector<OpacityMap::Point> op;
    for (std::size_t k = 0; k < e["opacity"].size(); ++k) {
      const std::string pp = path + ".opacity[" + std::to_string(k) + "]";
      const auto& p = e["opacity"][k];
      op.push_back({detail::number_at(p, "x", pp), {detail::number_at(p, "a", pp)}});
    }
    double tau = 0.5;
    if (e.contains("tau")) tau = detail::number_at(e, "tau", path);
    require(tau >= 0 && tau <= 1, ErrorKind::InvalidArgument, path + ".tau must be in [0,1]", path + ".tau");
    out[slot] = {ColorMap(std::move(cp), path + ".color"), OpacityMap(std::move(op), path + ".opacity"), tau};
  }
  return out;
}

}  // namespace voxfeat
