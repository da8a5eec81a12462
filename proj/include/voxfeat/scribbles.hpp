#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxfeat/error.hpp"
#include "voxfeat/volume.hpp"

namespace voxfeat {

struct SliceRef {
  int axis = 2;  // 0 = x, 1 = y, 2 = z
  std::int64_t index = 0;
  friend bool operator==(SliceRef, SliceRef) = default;
};

struct ScribbleEntry {
  std::int64_t voxel = 0;  // linear index
  int classId = 0;
  int stroke = 0;
  friend bool operator==(const ScribbleEntry&, const ScribbleEntry&) = default;
};

/// User labels on individual voxels. A voxel labeled twice keeps the last
/// class; disagreeing re-labels are counted in `conflicts`.
class ScribbleSet {
 public:
  ScribbleSet() = default;
  explicit ScribbleSet(Dims dims) : dims_(dims) {}

  void add(std::int64_t voxel, int classId, int stroke = 0) {
    require(voxel >= 0 && voxel < dims_.count(), ErrorKind::InvalidArgument,
            "scribble voxel " + std::to_string(voxel) + " out of bounds", "voxel");
    require(classId >= 0 && classId <= 255, ErrorKind::InvalidArgument, "class id must be in [0,255]", "class");
    auto [it, inserted] = position_.try_emplace(voxel, entries_.size());
    if (inserted) {
      entries_.push_back({voxel, classId, stroke});
    } else {
      auto& e = entries_[it->second];
      if (e.classId != classId) ++conflicts_;
      e.classId = classId;
      e.stroke = stroke;
    }
  }
  void add(Index3 v, int classId, int stroke = 0) {
    require(dims_.contains(v), ErrorKind::InvalidArgument, "scribble voxel out of bounds", "voxel");
    add(dims_.linear(v), classId, stroke);
  }
  void set_stroke_slice(int stroke, SliceRef slice) { strokes_[stroke] = slice; }

  Dims dims() const { return dims_; }
  const std::vector<ScribbleEntry>& entries() const { return entries_; }
  const std::map<int, SliceRef>& strokes() const { return strokes_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int conflicts() const { return conflicts_; }

  int max_class() const {
    int m = 0;
    for (const auto& e : entries_) m = std::max(m, e.classId);
    return m;
  }
  std::map<int, std::int64_t> class_tallies() const {
    std::map<int, std::int64_t> t;
    for (const auto& e : entries_) ++t[e.classId];
    return t;
  }
  bool contains(std::int64_t voxel) const { return position_.count(voxel) > 0; }

  friend bool operator==(const ScribbleSet& a, const ScribbleSet& b) {
    return a.dims_ == b.dims_ && a.entries_ == b.entries_ && a.strokes_ == b.strokes_;
  }

 private:
  Dims dims_{};
  std::vector<ScribbleEntry> entries_;
  std::unordered_map<std::int64_t, std::size_t> position_;
  std::map<int, SliceRef> strokes_;
  int conflicts_ = 0;
};

/// [{voxel:[i,j,k], class, stroke, slice:{axis,index}}, ...]
inline nlohmann::json scribbles_to_json(const ScribbleSet& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : s.entries()) {
    const Index3 v = s.dims().unravel(e.voxel);
    nlohmann::json j{{"voxel", {v.x, v.y, v.z}}, {"class", e.classId}, {"stroke", e.stroke}};
    if (auto it = s.strokes().find(e.stroke); it != s.strokes().end())
      j["slice"] = {{"axis", it->second.axis}, {"index", it->second.index}};
    arr.push_back(std::move(j));
  }
  return arr;
}

/// Parses and validates a scribble document; errors name the offending field
/// path, e.g. "scribbles[3].voxel".
inline ScribbleSet scribbles_from_json(const nlohmann::json& doc, Dims dims) {
  const nlohmann::json& arr = doc.is_object() && doc.contains("scribbles") ? doc["scribbles"] : doc;
  require(arr.is_array(), ErrorKind::InvalidArgument, "scribble document must be an array", "scribbles");
  ScribbleSet s(dims);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "scribbles[" + std::to_string(i) + "]";
    const auto& e = arr[i];
    require(e.is_object(), ErrorKind::InvalidArgument, path + " must be an object", path);
    require(e.contains("voxel") && e["voxel"].is_array() && e["voxel"].size() == 3 &&
                std::all_of(e["voxel"].begin(), e["voxel"].end(), [](const auto& v) { return v.is_number_integer(); }),
            ErrorKind::InvalidArgument, path + ".voxel must be three integers", path + ".voxel");
    const Index3 v{e["voxel"][0].get<std::int64_t>(), e["voxel"][1].get<std::int64_t>(),
                   e["voxel"][2].get<std::int64_t>()};
    require(dims.contains(v), ErrorKind::InvalidArgument, path + ".voxel is out of bounds", path + ".voxel");
    require(e.contains("class") && e["class"].is_number_integer(), ErrorKind::InvalidArgument,
            path + ".class must be an integer", path + ".class");
    const int cls = e["class"].get<int>();
    require(cls >= 0 && cls <= 255, ErrorKind::InvalidArgument, path + ".class must be in [0,255]", path + ".class");
    int stroke = 0;
    if (e.contains("stroke")) {
      require(e["stroke"].is_number_integer(), ErrorKind::InvalidArgument, path + ".stroke must be an integer",
              path + ".stroke");
      stroke = e["stroke"].get<int>();
    }
    if (e.contains("slice")) {
      const auto& sl = e["slice"];
      require(sl.is_object() && sl.contains("axis") && sl["axis"].is_number_integer() && sl.contains("index") &&
                  sl["index"].is_number_integer(),
              ErrorKind::InvalidArgument, path + ".slice must be {axis,index}", path + ".slice");
      const SliceRef ref{sl["axis"].get<int>(), sl["index"].get<std::int64_t>()};
      require(ref.axis >= 0 && ref.axis <= 2, ErrorKind::InvalidArgument, path + ".slice.axis must be 0..2",
              path + ".slice.axis");
      s.set_stroke_slice(stroke, ref);
    }
    s.add(v, cls, stroke);
  }
  return s;
}

}  // namespace voxfeat
