#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "voxfeat/features.hpp"
#include "voxfeat/render.hpp"
#include "voxfeat/vec3.hpp"
#include "voxfeat/volume.hpp"

namespace voxfeat {

struct KMeansConfig {
  int k = 50;
  std::uint64_t seed = 0;
  int maxIters = 100;
  std::int64_t maxSamples = 2'000'000;  // uniform stride subsample for fitting

  void validate() const {
    require(k >= 1, ErrorKind::InvalidArgument, "K must be >= 1", "K");
    require(maxIters >= 0, ErrorKind::InvalidArgument, "maxIters must be >= 0", "maxIters");
    require(maxSamples >= 1, ErrorKind::InvalidArgument, "maxSamples must be >= 1", "maxSamples");
  }
};

struct KMeansResult {
  int k = 0;
  int width = 0;
  std::vector<double> centroids;      // k x width, row-major
  std::vector<std::int32_t> assign;   // per row of the input
  std::vector<double> objective;      // within-cluster SS after each assignment step
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Nearest centroid for each row of `x` (n x width, row-major); ties go to the
// lower centroid index.
inline void assign_rows(const float* x, std::int64_t n, int width, const std::vector<double>& centroids, int k,
                        std::vector<std::int32_t>& out) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> C(centroids.data(), k, width);
  const Eigen::VectorXd cn = C.rowwise().squaredNorm();
  constexpr std::int64_t kChunk = 8192;
  out.resize(static_cast<std::size_t>(n));
  for (std::int64_t b = 0; b < n; b += kChunk) {
    const std::int64_t m = std::min(kChunk, n - b);
    const RowMat X = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                         x + b * width, m, width)
                         .cast<double>();
    const Eigen::MatrixXd dots = X * C.transpose();  // m x k
    for (std::int64_t i = 0; i < m; ++i) {
      int best = 0;
      double bestD = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = cn[c] - 2.0 * dots(i, c);  // |x|^2 is common to all c
        if (d < bestD) {
          bestD = d;
          best = c;
        }
      }
      out[static_cast<std::size_t>(b + i)] = best;
    }
  }
}

inline double sq_dist(const float* x, const double* c, int width) {
  double s = 0;
  for (int j = 0; j < width; ++j) {
    const double d = double(x[j]) - c[j];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations on row-major float data.
/// Empty clusters are reseeded at the point farthest from its centroid.
inline KMeansResult kmeans(const float* x, std::int64_t n, int width, const KMeansConfig& cfg) {
  cfg.validate();
  require(n >= cfg.k, ErrorKind::Precondition, "K-means needs at least K samples", "K");
  KMeansResult r;
  r.k = cfg.k;
  r.width = width;
  r.centroids.assign(static_cast<std::size_t>(cfg.k) * width, 0.0);
  std::mt19937_64 rng(cfg.seed);
  auto row = [&](std::int64_t i) { return x + i * width; };
  auto set_centroid = [&](int c, std::int64_t i) {
    for (int j = 0; j < width; ++j) r.centroids[static_cast<std::size_t>(c) * width + j] = row(i)[j];
  };

  set_centroid(0, std::uniform_int_distribution<std::int64_t>(0, n - 1)(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = detail::sq_dist(row(i), r.centroids.data(), width);
  for (int c = 1; c < cfg.k; ++c) {
    double total = 0;
    for (double v : d2) total += v;
    require(total > 0, ErrorKind::Precondition,
            "fewer distinct feature vectors than K=" + std::to_string(cfg.k), "K");
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::int64_t pick = n - 1;
    for (std::int64_t i = 0; i < n; ++i) {
      u -= d2[static_cast<std::size_t>(i)];
      if (u < 0 && d2[static_cast<std::size_t>(i)] > 0) {
        pick = i;
        break;
      }
    }
    while (d2[static_cast<std::size_t>(pick)] == 0) --pick;  // guard the rounding tail
    set_centroid(c, pick);
    const double* cc = r.centroids.data() + static_cast<std::size_t>(c) * width;
    for (std::int64_t i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], detail::sq_dist(row(i), cc, width));
  }

  std::vector<std::int32_t> prev;
  std::vector<double> sums;
  std::vector<std::int64_t> counts;
  for (int it = 0;; ++it) {
    detail::assign_rows(x, n, width, r.centroids, cfg.k, r.assign);
    double obj = 0;
    for (std::int64_t i = 0; i < n; ++i)
      obj += detail::sq_dist(row(i), r.centroids.data() + std::size_t(r.assign[std::size_t(i)]) * width, width);
    r.objective.push_back(obj);
    if (r.assign == prev) {
      r.converged = true;
      break;
    }
    if (it >= cfg.maxIters) break;
    prev = r.assign;
    r.iterations = it + 1;

    sums.assign(r.centroids.size(), 0.0);
    counts.assign(static_cast<std::size_t>(cfg.k), 0);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(r.assign[static_cast<std::size_t>(i)]);
      ++counts[c];
      for (int j = 0; j < width; ++j) sums[c * width + j] += row(i)[j];
    }
    for (int c = 0; c < cfg.k; ++c) {
      const auto cs = static_cast<std::size_t>(c);
      if (counts[cs] > 0) {
        for (int j = 0; j < width; ++j) r.centroids[cs * width + j] = sums[cs * width + j] / double(counts[cs]);
        continue;
      }
      // empty: move to the point currently worst served by its own centroid
      std::int64_t far = 0;
      double farD = -1;
      for (std::int64_t i = 0; i < n; ++i) {
        const double d =
            detail::sq_dist(row(i), r.centroids.data() + std::size_t(r.assign[std::size_t(i)]) * width, width);
        if (d > farD) {
          farD = d;
          far = i;
        }
      }
      set_centroid(c, far);
      r.assign[static_cast<std::size_t>(far)] = c;
    }
  }
  return r;
}

struct Cluster {
  std::int64_t size = 0;
  Vec3 centroid;  // mean member position, voxel coordinates
  Vec3 normal;    // unit, or zero when degenerate
  bool degenerate = false;
};

struct ClusterModel {
  int k = 0;
  int width = 0;
  std::vector<double> centroids;  // feature space, k x width
  std::vector<std::int32_t> assignments;  // per voxel
  std::vector<Cluster> clusters;
  std::vector<double> objective;

  std::vector<std::int64_t> sizes() const {
    std::vector<std::int64_t> s;
    for (const auto& c : clusters) s.push_back(c.size);
    return s;
  }
};

/// Clusters the feature volume, then attaches a spatial centroid and a
/// representative normal to each cluster. The normal is the member gradient
/// sum (magnitude-weighted mean direction) negated, so it faces from bright
/// to dark, i.e. out of bright structures.
inline ClusterModel kmeans_fit(const FeatureVolume& fv, const DerivedFields& fields, const KMeansConfig& cfg) {
  cfg.validate();
  require(fields.dims == fv.dims, ErrorKind::ShapeMismatch, "derived fields do not match the feature volume");
  const std::int64_t n = fv.voxels();
  require(n >= cfg.k, ErrorKind::Precondition, "voxel count is smaller than K", "K");
  const std::int64_t stride = (n + cfg.maxSamples - 1) / cfg.maxSamples;

  KMeansResult km;
  if (stride == 1) {
    km = kmeans(fv.data.data(), n, fv.width, cfg);
  } else {
    std::vector<float> sub;
    for (std::int64_t i = 0; i < n; i += stride) {
      const auto r = fv.row(i);
      sub.insert(sub.end(), r.begin(), r.end());
    }
    km = kmeans(sub.data(), std::int64_t(sub.size()) / fv.width, fv.width, cfg);
  }

  ClusterModel m;
  m.k = cfg.k;
  m.width = fv.width;
  m.centroids = km.centroids;
  m.objective = km.objective;
  if (stride == 1)
    m.assignments = std::move(km.assign);
  else
    detail::assign_rows(fv.data.data(), n, fv.width, m.centroids, m.k, m.assignments);

  m.clusters.assign(static_cast<std::size_t>(m.k), {});
  std::vector<Vec3> pos(static_cast<std::size_t>(m.k)), grad(static_cast<std::size_t>(m.k));
  std::vector<double> mag(static_cast<std::size_t>(m.k), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(m.assignments[static_cast<std::size_t>(i)]);
    const Index3 v = fv.dims.unravel(i);
    ++m.clusters[c].size;
    pos[c] += Vec3{double(v.x), double(v.y), double(v.z)};
    const Vec3 gv = fields.gradient_at(i);
    grad[c] += gv;
    mag[c] += norm(gv);
  }
  for (std::size_t c = 0; c < m.clusters.size(); ++c) {
    auto& cl = m.clusters[c];
    if (cl.size > 0) cl.centroid = pos[c] / double(cl.size);
    const double len = norm(grad[c]);
    cl.degenerate = !(mag[c] > 0) || len <= 1e-6 * mag[c];
    cl.normal = cl.degenerate ? Vec3{} : -grad[c] / len;
  }
  return m;
}

/// M points of a Fibonacci lattice on the unit sphere.
inline std::vector<Vec3> fibonacci_directions(int m) {
  require(m >= 1, ErrorKind::InvalidArgument, "M must be >= 1", "M");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / m;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    out.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return out;
}

struct ViewpointSet {
  std::vector<Vec3> dirs;  // unit
  Vec3 center;
  double radius = 0;

  Vec3 eye(std::size_t m) const { return center + dirs[m] * radius; }
  std::size_t size() const { return dirs.size(); }
};

/// Candidates around the volume center at 1.5x its diagonal.
inline ViewpointSet make_viewpoints(Dims d, int m, double radiusFactor = 1.5) {
  return {fibonacci_directions(m), volume_center(d), radiusFactor * volume_diagonal(d)};
}

/// M x K visibility, row-major.
struct VisibilityMatrix {
  int m = 0, k = 0;
  std::vector<std::uint8_t> v;

  bool operator()(int view, int cluster) const { return v[static_cast<std::size_t>(view) * k + cluster] != 0; }
  void set(int view, int cluster, bool on) { v[static_cast<std::size_t>(view) * k + cluster] = on ? 1 : 0; }
  VisibilityMatrix() = default;
  VisibilityMatrix(int views, int clusters)
      : m(views), k(clusters), v(static_cast<std::size_t>(views) * clusters, 0) {}
  friend bool operator==(const VisibilityMatrix&, const VisibilityMatrix&) = default;
};

/// Cluster k is visible from view m when the direction from its centroid to
/// the eye is within `angleDeg` of its normal; degenerate clusters are
/// visible from everywhere.
inline VisibilityMatrix visibility_matrix(const std::vector<Cluster>& clusters, const ViewpointSet& views,
                                          double angleDeg = 90.0) {
  const double cosT = std::cos(angleDeg * std::numbers::pi / 180.0);
  VisibilityMatrix vis(static_cast<int>(views.size()), static_cast<int>(clusters.size()));
  for (std::size_t m = 0; m < views.size(); ++m) {
    const Vec3 eye = views.eye(m);
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      const auto& c = clusters[k];
      vis.set(int(m), int(k), c.degenerate || dot(normalized(eye - c.centroid), c.normal) > cosT);
    }
  }
  return vis;
}

namespace detail {

inline double entropy_of(const VisibilityMatrix& vis, int m, const std::vector<std::int64_t>& sizes,
                         const std::vector<bool>* skip) {
  double total = 0;
  int count = 0;
  for (int k = 0; k < vis.k; ++k)
    if (vis(m, k) && !(skip && (*skip)[static_cast<std::size_t>(k)])) {
      total += double(sizes[static_cast<std::size_t>(k)]);
      ++count;
    }
  if (count <= 1) return 0.0;
  double h = 0;
  for (int k = 0; k < vis.k; ++k)
    if (vis(m, k) && !(skip && (*skip)[static_cast<std::size_t>(k)])) {
      const double p = double(sizes[static_cast<std::size_t>(k)]) / total;
      h -= p * std::log(p);
    }
  return h;
}

inline void check_sizes(const VisibilityMatrix& vis, const std::vector<std::int64_t>& sizes) {
  require(static_cast<int>(sizes.size()) == vis.k, ErrorKind::ShapeMismatch, "one size per cluster required",
          "sizes");
  for (auto s : sizes) require(s > 0, ErrorKind::InvalidArgument, "cluster sizes must be positive", "sizes");
}

}  // namespace detail

/// Shannon entropy (natural log) of the visible-cluster size distribution.
inline std::vector<double> entropy_scores(const VisibilityMatrix& vis, const std::vector<std::int64_t>& sizes) {
  detail::check_sizes(vis, sizes);
  std::vector<double> h(static_cast<std::size_t>(vis.m));
  for (int m = 0; m < vis.m; ++m) h[static_cast<std::size_t>(m)] = detail::entropy_of(vis, m, sizes, nullptr);
  return h;
}

struct GreedyConfig {
  double coverageTarget = 0.95;  // fraction of clusters
  int maxViews = 8;
};

struct GreedyStep {
  int index = 0;
  double entropy = 0;  // over clusters still uncovered when picked
  int newlyCovered = 0;
  double coverage = 0;  // fraction of clusters covered after this step
};

/// Repeatedly picks the view whose still-uncovered visible clusters have the
/// highest entropy; equal entropies prefer more newly covered clusters, then
/// the lower index. Stops at the coverage target, maxViews, or when no view
/// adds a cluster.
inline std::vector<GreedyStep> greedy_select(const VisibilityMatrix& vis, const std::vector<std::int64_t>& sizes,
                                             const GreedyConfig& cfg = {}) {
  detail::check_sizes(vis, sizes);
  require(cfg.maxViews >= 1, ErrorKind::InvalidArgument, "maxViews must be >= 1", "maxViews");
  std::vector<bool> covered(static_cast<std::size_t>(vis.k), false), used(static_cast<std::size_t>(vis.m), false);
  std::vector<GreedyStep> steps;
  int coveredCount = 0;
  while (static_cast<int>(steps.size()) < cfg.maxViews && double(coveredCount) < cfg.coverageTarget * vis.k) {
    int best = -1, bestNew = 0;
    double bestH = -1;
    for (int m = 0; m < vis.m; ++m) {
      if (used[static_cast<std::size_t>(m)]) continue;
      int fresh = 0;
      for (int k = 0; k < vis.k; ++k) fresh += vis(m, k) && !covered[static_cast<std::size_t>(k)];
      if (fresh == 0) continue;
      const double h = detail::entropy_of(vis, m, sizes, &covered);
      if (h > bestH || (h == bestH && fresh > bestNew)) {
        best = m;
        bestH = h;
        bestNew = fresh;
      }
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = true;
    for (int k = 0; k < vis.k; ++k)
      if (vis(best, k) && !covered[static_cast<std::size_t>(k)]) {
        covered[static_cast<std::size_t>(k)] = true;
        ++coveredCount;
      }
    steps.push_back({best, bestH, bestNew, double(coveredCount) / double(vis.k)});
  }
  return steps;
}

/// Number of clusters seen by at least one of the given views.
inline int coverage_count(const VisibilityMatrix& vis, const std::vector<int>& views) {
  int n = 0;
  for (int k = 0; k < vis.k; ++k)
    for (int m : views)
      if (vis(m, k)) {
        ++n;
        break;
      }
  return n;
}

struct ViewpointOptions {
  KMeansConfig kmeans;
  int candidates = 1800;
  double visibilityAngle = 90.0;
  double radiusFactor = 1.5;
  GreedyConfig greedy;
};

struct ViewpointReport {
  int k = 0, m = 0;
  ViewpointSet views;
  std::vector<double> entropy;
  std::vector<GreedyStep> selected;
  VisibilityMatrix visibility;
  ClusterModel clusters;

  nlohmann::json to_json(bool includeClusters = true) const {
    nlohmann::json vps = nlohmann::json::array();
    for (std::size_t i = 0; i < views.size(); ++i) {
      const Vec3 d = views.dirs[i];
      vps.push_back({{"dir", {d.x, d.y, d.z}}, {"entropy", entropy[i]}});
    }
    nlohmann::json sel = nlohmann::json::array();
    for (const auto& s : selected) {
      const Vec3 d = views.dirs[static_cast<std::size_t>(s.index)];
      sel.push_back({{"index", s.index},
                     {"coverage", s.coverage},
                     {"entropy", s.entropy},
                     {"newlyCovered", s.newlyCovered},
                     {"dir", {d.x, d.y, d.z}}});
    }
    nlohmann::json j{{"K", k}, {"M", m}, {"viewpoints", vps}, {"selected", sel}};
    if (includeClusters) {
      nlohmann::json cl = nlohmann::json::array();
      for (const auto& c : clusters.clusters)
        cl.push_back({{"size", c.size},
                      {"centroid", {c.centroid.x, c.centroid.y, c.centroid.z}},
                      {"normal", {c.normal.x, c.normal.y, c.normal.z}},
                      {"degenerate", c.degenerate}});
      j["clusters"] = cl;
    }
    return j;
  }
};

inline ViewpointReport recommend_viewpoints(const FeatureVolume& fv, const DerivedFields& fields,
                                            const ViewpointOptions& opt) {
  ViewpointReport r;
  r.clusters = kmeans_fit(fv, fields, opt.kmeans);
  r.k = r.clusters.k;
  r.views = make_viewpoints(fv.dims, opt.candidates, opt.radiusFactor);
  r.m = static_cast<int>(r.views.size());
  r.visibility = visibility_matrix(r.clusters.clusters, r.views, opt.visibilityAngle);
  const auto sizes = r.clusters.sizes();
  r.entropy = entropy_scores(r.visibility, sizes);
  r.selected = greedy_select(r.visibility, sizes, opt.greedy);
  return r;
}

/// Grayscale intensity thumbnail from a selected viewpoint.
inline Image viewpoint_thumbnail(const ScalarVolume& vol, const ViewpointSet& views, int index, int size = 128) {
  require(index >= 0 && index < static_cast<int>(views.size()), ErrorKind::InvalidArgument,
          "viewpoint index out of range", "index");
  const Camera cam = orbit_camera(vol.dims(), views.dirs[static_cast<std::size_t>(index)],
                                  views.radius / volume_diagonal(vol.dims()), size, size);
  RenderConfig cfg;
  cfg.stepSize = 1.0;
  return render_intensity(vol, grayscale_tf(), cam, cfg);
}

}  // namespace voxfeat
