#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "voxfeat/error.hpp"

namespace voxfeat {

struct HashGridConfig {
  int levels = 8;
  int featuresPerLevel = 2;
  int log2TableSize = 16;
  int baseResolution = 16;
  double perLevelScale = 1.5;

  std::int64_t table_size() const { return std::int64_t{1} << log2TableSize; }
  int output_width() const { return levels * featuresPerLevel; }
  int resolution(int level) const {
    const double r = std::floor(double(baseResolution) * std::pow(perLevelScale, level));
    return static_cast<int>(std::min(r, double(1 << 30)));
  }
  // A level indexes its table directly when every grid vertex gets its own row.
  bool dense(int level) const {
    const double side = double(resolution(level)) + 1.0;
    return side * side * side <= double(table_size());
  }

  void validate() const {
    require(levels >= 1 && levels <= 64, ErrorKind::InvalidArgument, "hash grid levels must be in [1, 64]", "levels");
    require(featuresPerLevel >= 1 && featuresPerLevel <= 64, ErrorKind::InvalidArgument,
            "featuresPerLevel must be in [1, 64]", "featuresPerLevel");
    require(log2TableSize >= 1 && log2TableSize <= 30, ErrorKind::InvalidArgument,
            "table size must be a power of two in [2, 2^30]", "log2TableSize");
    require(baseResolution >= 1 && baseResolution <= (1 << 20), ErrorKind::InvalidArgument, "baseResolution must be >= 1", "baseResolution");
    require(perLevelScale > 1.0, ErrorKind::InvalidArgument, "perLevelScale must be > 1", "perLevelScale");
  }

  friend bool operator==(const HashGridConfig&, const HashGridConfig&) = default;
};

inline constexpr std::uint32_t kHashPrimes[3] = {1u, 2654435761u, 805459861u};

inline std::uint32_t spatial_hash(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  return (x * kHashPrimes[0]) ^ (y * kHashPrimes[1]) ^ (z * kHashPrimes[2]);
}

/// The 8 table rows and trilinear weights one level contributes for a point.
struct LevelLookup {
  std::array<std::uint32_t, 8> rows{};
  std::array<double, 8> weights{};
};

/// Corner c uses bit 0 for x, bit 1 for y, bit 2 for z.
inline LevelLookup lookup_level(const HashGridConfig& cfg, int level, std::span<const double, 3> p) {
  const int res = cfg.resolution(level);
  const bool dense = cfg.dense(level);
  const std::uint32_t mask = static_cast<std::uint32_t>(cfg.table_size() - 1);
  const std::uint32_t side = static_cast<std::uint32_t>(res) + 1;
  std::uint32_t cell[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double pos = p[a] * res;
    const int c = std::min(static_cast<int>(std::floor(pos)), res - 1);
    cell[a] = static_cast<std::uint32_t>(c);
    frac[a] = pos - c;
  }
  LevelLookup out;
  for (int c = 0; c < 8; ++c) {
    const std::uint32_t x = cell[0] + (c & 1), y = cell[1] + ((c >> 1) & 1), z = cell[2] + ((c >> 2) & 1);
    out.rows[c] = dense ? x + side * (y + side * z) : (spatial_hash(x, y, z) & mask);
    out.weights[c] = ((c & 1) ? frac[0] : 1 - frac[0]) * (((c >> 1) & 1) ? frac[1] : 1 - frac[1]) *
                     (((c >> 2) & 1) ? frac[2] : 1 - frac[2]);
  }
  return out;
}

inline void check_unit_cube(std::span<const double, 3> p) {
  for (int a = 0; a < 3; ++a)
    require(p[a] >= 0.0 && p[a] <= 1.0, ErrorKind::InvalidArgument, "coordinate outside [0,1]^3", "p");
}

}  // namespace voxfeat
