#pragma once

// Multi-view detection fusion: back-project per-camera detections to
// world-frame point clouds, associate them across views with a
// radius-based point-cloud IoU, and consolidate the result into one
// (element, tray)-indexed observation vector per frame.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vimat/geometry.hpp"
#include "vimat/task.hpp"

namespace vimat {

inline constexpr double kDefaultRadius = 0.01;      // meters
inline constexpr double kDefaultIouThresh = 0.25;
inline constexpr double kDefaultAlphaUp = 0.7;
inline constexpr double kDefaultAlphaDown = 0.3;

struct EmptyCloudError : Error {
  EmptyCloudError() : Error("detection has no valid depth samples") {}
};

struct UnknownClassError : Error {
  explicit UnknownClassError(std::uint32_t id)
      : Error("class id " + std::to_string(id) + " maps to no task element") {}
};

struct DimensionMismatchError : Error {
  DimensionMismatchError(std::size_t a, std::size_t b)
      : Error("observation dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

struct CameraCalibration {
  std::string camera_id;
  double fx = 1, fy = 1;
  double cx = 0, cy = 0;
  Mat4 extrinsic;           // camera frame -> world frame
  double depth_scale = 1;   // meters per stored depth unit

  bool valid() const { return fx > 0 && fy > 0 && extrinsic.rotation_orthonormal(); }
};

struct DepthSample {
  float u = 0, v = 0;   // pixel coordinates
  float depth = 0;      // raw units; <= 0 or non-finite marks invalid

  bool operator==(const DepthSample&) const = default;
};

struct Detection2D {
  std::uint32_t class_id = 0;          // element declaration index
  float x = 0, y = 0, w = 0, h = 0;    // bbox, pixels
  float confidence = 0;
  std::vector<DepthSample> depth_samples;

  bool operator==(const Detection2D&) const = default;

  double center_u() const { return x + w / 2.0; }
  double center_v() const { return y + h / 2.0; }
};

struct Pixel {
  double u = 0, v = 0;
};

struct TrayRegion {
  std::string tray_name;
  std::string camera_id;
  std::vector<Pixel> polygon;  // convex, >= 3 vertices
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline PointCloud backproject(const Detection2D& d, const CameraCalibration& cal) {
  PointCloud cloud;
  cloud.points.reserve(d.depth_samples.size());
  for (const auto& s : d.depth_samples) {
    if (!(s.depth > 0.0f) || !std::isfinite(s.depth)) continue;
    double z = static_cast<double>(s.depth) * cal.depth_scale;
    Vec3 cam{z * (s.u - cal.cx) / cal.fx, z * (s.v - cal.cy) / cal.fy, z};
    cloud.points.push_back(cal.extrinsic.transform_point(cam));
  }
  if (cloud.empty()) throw EmptyCloudError();
  return cloud;
}

namespace detail {

// Uniform grid over P1 with cell edge r: any point within distance r of a
// query lies in one of the 27 neighboring cells.
class RadiusGrid {
 public:
  RadiusGrid(const PointCloud& cloud, double r) : r2_(r * r), inv_(1.0 / r) {
    cells_.reserve(cloud.size());
    for (const auto& p : cloud.points) cells_[key(p)].push_back(p);
  }

  bool has_neighbor(const Vec3& q) const {
    auto [i, j, k] = coords(q);
    for (long long di = -1; di <= 1; ++di)
      for (long long dj = -1; dj <= 1; ++dj)
        for (long long dk = -1; dk <= 1; ++dk) {
          auto it = cells_.find(pack(i + di, j + dj, k + dk));
          if (it == cells_.end()) continue;
          for (const auto& p : it->second)
            if (distance2(p, q) < r2_) return true;
        }
    return false;
  }

 private:
  std::tuple<long long, long long, long long> coords(const Vec3& p) const {
    return {static_cast<long long>(std::floor(p.x * inv_)),
            static_cast<long long>(std::floor(p.y * inv_)),
            static_cast<long long>(std::floor(p.z * inv_))};
  }
  static std::uint64_t pack(long long i, long long j, long long k) {
    auto h = [](long long v) { return static_cast<std::uint64_t>(v) * 0x9e3779b97f4a7c15ull; };
    std::uint64_t s = h(i);
    s = (s ^ h(j)) * 0xff51afd7ed558ccdull;
    s = (s ^ h(k)) * 0xc4ceb9fe1a85ec53ull;
    return s;
  }
  std::uint64_t key(const Vec3& p) const {
    auto [i, j, k] = coords(p);
    return pack(i, j, k);
  }

  double r2_;
  double inv_;
  std::unordered_map<std::uint64_t, std::vector<Vec3>> cells_;
};

}  // namespace detail

// |{p in p2 : min-distance(p, p1) < r}| — asymmetric in its arguments.
inline std::size_t cloud_intersection_count(const PointCloud& p1, const PointCloud& p2,
                                            double r) {
  if (r <= 0) throw ConfigError("intersection radius must be positive");
  if (p1.empty() || p2.empty()) return 0;
  detail::RadiusGrid grid(p1, r);
  std::size_t n = 0;
  for (const auto& q : p2.points)
    if (grid.has_neighbor(q)) ++n;
  return n;
}

// Symmetrized IoU: I = max of the two directed counts, union = |P1| + |P2| - I.
inline double cloud_iou(const PointCloud& p1, const PointCloud& p2, double r) {
  if (p1.empty() || p2.empty()) throw Error("cloud_iou requires nonempty clouds");
  std::size_t i12 = cloud_intersection_count(p1, p2, r);
  std::size_t i21 = cloud_intersection_count(p2, p1, r);
  double inter = static_cast<double>(std::max(i12, i21));
  return inter / (static_cast<double>(p1.size() + p2.size()) - inter);
}

// Point-in-convex-polygon with points on an edge counted as inside.
// Accepts either vertex winding.
inline bool point_in_convex_polygon(const Pixel& p, const std::vector<Pixel>& poly) {
  if (poly.size() < 3) return false;
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Pixel& a = poly[i];
    const Pixel& b = poly[(i + 1) % poly.size()];
    double cross = (b.u - a.u) * (p.v - a.v) - (b.v - a.v) * (p.u - a.u);
    if (cross > 0) pos = true;
    if (cross < 0) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

// Detections whose bbox center lies in no configured region are dropped.
inline std::map<std::string, std::vector<std::size_t>> assign_to_trays(
    const std::vector<Detection2D>& dets, const std::vector<TrayRegion>& regions,
    const std::string& camera_id) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    Pixel c{dets[i].center_u(), dets[i].center_v()};
    for (const auto& reg : regions) {
      if (reg.camera_id != camera_id) continue;
      if (point_in_convex_polygon(c, reg.polygon)) {
        out[reg.tray_name].push_back(i);
        break;  // regions are disjoint per camera; first hit wins
      }
    }
  }
  return out;
}

// One tray-assigned, back-projected detection: the unit of cross-view matching.
struct FusedDetection {
  std::string camera_id;
  std::string tray;
  std::uint32_t class_id = 0;
  double confidence = 0;
  PointCloud cloud;
};

struct Cluster {
  std::vector<std::size_t> members;  // indices into the FusedDetection list
  std::string tray;
  std::uint32_t class_id = 0;
  double confidence = 0;  // max over members
};

// Greedy agglomeration: candidate pairs (same tray, same class, different
// cameras, IoU >= threshold) merge in descending-IoU order, skipping any
// merge that would put two detections from one camera in the same cluster.
inline std::vector<Cluster> match_across_views(const std::vector<FusedDetection>& dets,
                                               double r = kDefaultRadius,
                                               double iou_thresh = kDefaultIouThresh) {
  if (!(iou_thresh > 0 && iou_thresh <= 1))
    throw ConfigError("iou_thresh must lie in (0, 1]");

  struct Pair {
    double iou;
    std::size_t a, b;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < dets.size(); ++a)
    for (std::size_t b = a + 1; b < dets.size(); ++b) {
      if (dets[a].tray != dets[b].tray) continue;
      if (dets[a].class_id != dets[b].class_id) continue;
      if (dets[a].camera_id == dets[b].camera_id) continue;
      if (dets[a].cloud.empty() || dets[b].cloud.empty()) continue;
      double iou = cloud_iou(dets[a].cloud, dets[b].cloud, r);
      if (iou >= iou_thresh) pairs.push_back({iou, a, b});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.iou != y.iou) return x.iou > y.iou;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });

  std::vector<std::size_t> parent(dets.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<std::vector<std::string>> cams(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) cams[i] = {dets[i].camera_id};

  for (const auto& pr : pairs) {
    std::size_t ra = find(pr.a), rb = find(pr.b);
    if (ra == rb) continue;
    bool clash = false;
    for (const auto& ca : cams[ra])
      for (const auto& cb : cams[rb])
        if (ca == cb) clash = true;
    if (clash) continue;
    parent[rb] = ra;
    cams[ra].insert(cams[ra].end(), cams[rb].begin(), cams[rb].end());
    cams[rb].clear();
  }

  std::map<std::size_t, Cluster> by_root;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::size_t root = find(i);
    Cluster& cl = by_root[root];
    cl.members.push_back(i);
    cl.tray = dets[i].tray;
    cl.class_id = dets[i].class_id;
    cl.confidence = std::max(cl.confidence, dets[i].confidence);
  }
  std::vector<Cluster> out;
  out.reserve(by_root.size());
  for (auto& [root, cl] : by_root) out.push_back(std::move(cl));
  return out;
}

// Fixed (element, tray) indexing shared by fusion output and the
// reasoner's expected observations: index = element_idx * n_trays + tray_idx.
struct ObservationLayout {
  std::vector<std::string> elements;  // declaration order = class id
  std::vector<std::string> trays;

  static ObservationLayout from_task(const TaskDefinition& task) {
    return {task.element_names(), task.tray_names()};
  }

  std::size_t dim() const { return elements.size() * trays.size(); }
  std::size_t index(std::size_t element, std::size_t tray) const {
    return element * trays.size() + tray;
  }
  std::optional<std::size_t> tray_index(const std::string& name) const {
    for (std::size_t i = 0; i < trays.size(); ++i)
      if (trays[i] == name) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> element_index(const std::string& name) const {
    for (std::size_t i = 0; i < elements.size(); ++i)
      if (elements[i] == name) return i;
    return std::nullopt;
  }
};

struct ObservationVector {
  std::vector<double> values;

  ObservationVector() = default;
  explicit ObservationVector(std::size_t dim) : values(dim, 0.0) {}

  std::size_t dim() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool operator==(const ObservationVector&) const = default;
};

inline ObservationVector consolidate(const std::vector<Cluster>& clusters,
                                     const ObservationLayout& layout) {
  ObservationVector y(layout.dim());
  for (const auto& cl : clusters) {
    if (cl.class_id >= layout.elements.size()) throw UnknownClassError(cl.class_id);
    auto tray = layout.tray_index(cl.tray);
    if (!tray) throw Error("cluster assigned to unknown tray '" + cl.tray + "'");
    std::size_t i = layout.index(cl.class_id, *tray);
    y[i] = std::max(y[i], std::min(1.0, std::max(0.0, cl.confidence)));
  }
  return y;
}

// Asymmetric exponential update: rising entries track the new value with
// alpha_up, falling entries with alpha_down.
inline ObservationVector smooth(const ObservationVector& prev, const ObservationVector& curr,
                                double alpha_up = kDefaultAlphaUp,
                                double alpha_down = kDefaultAlphaDown) {
  if (prev.dim() != curr.dim()) throw DimensionMismatchError(prev.dim(), curr.dim());
  if (!(0 <= alpha_down && alpha_down <= alpha_up && alpha_up <= 1))
    throw ConfigError("smoothing weights must satisfy 0 <= alpha_down <= alpha_up <= 1");
  ObservationVector out(prev.dim());
  for (std::size_t i = 0; i < prev.dim(); ++i) {
    double a = curr[i] > prev[i] ? alpha_up : alpha_down;
    out[i] = a * curr[i] + (1 - a) * prev[i];
  }
  return out;
}

}  // namespace vimat
