#pragma once

// Synthetic detection streams for desk-scale end-to-end testing.
//
// A sampled plan is executed on a virtual table: trays are axis-aligned
// rectangles on the z = 0 plane, each element is a 5 cm box whose top
// face is point-sampled once (200 canonical world points), and mounted
// elements occupy their slot in the work tray. Every frame, each present
// (element, tray) pair spawns one detection per camera by forward
// projection of the canonical points — optionally degraded by dropout,
// class confusion, confidence noise, and 3D position jitter — so the
// fusion stage sees geometry that is exactly consistent with its own
// back-projection model.

#include <functional>
#include <random>

#include "vimat/ingest.hpp"
#include "vimat/reasoner.hpp"

namespace vimat {

struct NoiseModel {
  double dropout_prob = 0.0;
  std::vector<std::vector<double>> confusion;  // row-stochastic; empty = identity
  double confidence_jitter = 0.0;              // stddev of additive noise
  double base_confidence = 1.0;
  double position_jitter = 0.0;                // meters, per-axis Gaussian
  std::uint64_t seed = 1;
};

// Builds a confusion matrix that sends `p` of each primed element's mass
// to its unprimed partner and vice versa (E4 <-> E4'); elements without a
// partner keep an identity row.
inline std::vector<std::vector<double>> similar_confusion(const std::vector<std::string>& elements,
                                                          double p) {
  std::size_t n = elements.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::string partner = elements[i].ends_with("'") ? elements[i].substr(0, elements[i].size() - 1)
                                                     : elements[i] + "'";
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && elements[j] == partner) {
        m[i][i] = 1.0 - p;
        m[i][j] = p;
      }
    }
  }
  return m;
}

struct GroundTruthEntry {
  std::size_t frame_begin = 0;  // inclusive
  std::size_t frame_end = 0;    // inclusive
  std::size_t state_index = 0;
  std::optional<std::size_t> step_id;  // step executing during this span
};

struct GroundTruthTimeline {
  std::vector<GroundTruthEntry> entries;

  std::size_t frames() const {
    return entries.empty() ? 0 : entries.back().frame_end + 1;
  }
  std::size_t state_at(std::size_t frame) const {
    for (const auto& e : entries)
      if (frame >= e.frame_begin && frame <= e.frame_end) return e.state_index;
    throw Error("frame " + std::to_string(frame) + " outside ground-truth timeline");
  }
};

struct TrayWorld {
  std::string name;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // rectangle on the z = 0 plane

  Vec3 center() const { return {(x0 + x1) / 2, (y0 + y1) / 2, 0}; }
};

// Table layout used by the bundled scenario. The work and auxiliary trays
// are slightly wider so that parallax from the raised element tops never
// pushes a bbox center across a tray boundary in the side views.
inline std::vector<TrayWorld> default_tray_layout() {
  return {
      {"T_in", -0.50, -0.20, 0.10, 0.40},
      {"T_out", 0.20, 0.50, 0.10, 0.40},
      {"T_work", -0.18, 0.18, -0.15, 0.15},
      {"T_aux", -0.18, 0.18, 0.25, 0.55},
  };
}

inline constexpr double kElementSize = 0.05;   // box edge, meters
inline constexpr double kSlotPitch = 0.10;     // 3x3 slot grid inside each tray
inline constexpr int kCloudColumns = 10;       // 10 x 20 = 200 canonical points
inline constexpr int kCloudRows = 20;

// Slot of an element inside any tray: fixed by its declaration index, so
// at most 9 elements can sit in one tray at a time without collisions.
inline Vec3 slot_center(const TrayWorld& tray, std::size_t element_idx) {
  double col = static_cast<double>(element_idx % 3) - 1.0;
  double row = static_cast<double>((element_idx / 3) % 3) - 1.0;
  Vec3 c = tray.center();
  return {c.x + col * kSlotPitch, c.y + row * kSlotPitch, 0.0};
}

// Canonical cloud: a regular grid over the element's top face.
inline PointCloud element_cloud(const TrayWorld& tray, std::size_t element_idx) {
  Vec3 c = slot_center(tray, element_idx);
  PointCloud cloud;
  cloud.points.reserve(kCloudColumns * kCloudRows);
  for (int i = 0; i < kCloudColumns; ++i)
    for (int j = 0; j < kCloudRows; ++j) {
      double fx = (i + 0.5) / kCloudColumns - 0.5;
      double fy = (j + 0.5) / kCloudRows - 0.5;
      cloud.points.push_back(
          {c.x + fx * kElementSize, c.y + fy * kElementSize, kElementSize});
    }
  return cloud;
}

struct SimCamera {
  CameraCalibration calib;
  int width = 640;
  int height = 480;
};

// Three RGB-D viewpoints: one overhead, two oblique side views, all
// framing the whole table.
inline std::vector<SimCamera> default_rig() {
  auto make = [](const std::string& id, Vec3 eye) {
    SimCamera cam;
    cam.calib.camera_id = id;
    cam.calib.fx = cam.calib.fy = 600;
    cam.calib.cx = 320;
    cam.calib.cy = 240;
    cam.calib.depth_scale = 1.0;
    cam.calib.extrinsic = look_at_camera_to_world(eye, {0, 0.2, 0});
    return cam;
  };
  return {make("cam0", {0, 0.20, 1.40}), make("cam1", {-0.9, 0.2, 1.1}),
          make("cam2", {0.9, 0.2, 1.1})};
}

// Pixel-space tray regions per camera: projected corners of each world rect.
inline std::vector<TrayRegion> project_tray_regions(const std::vector<SimCamera>& rig,
                                                    const std::vector<TrayWorld>& trays) {
  std::vector<TrayRegion> out;
  for (const auto& cam : rig) {
    Mat4 world_to_cam = cam.calib.extrinsic.inverse_rigid();
    for (const auto& t : trays) {
      TrayRegion reg;
      reg.tray_name = t.name;
      reg.camera_id = cam.calib.camera_id;
      for (auto [wx, wy] : {std::pair{t.x0, t.y0}, std::pair{t.x1, t.y0}, std::pair{t.x1, t.y1},
                            std::pair{t.x0, t.y1}}) {
        Vec3 p = world_to_cam.transform_point({wx, wy, 0});
        if (p.z <= 0) throw Error("tray corner behind camera " + cam.calib.camera_id);
        reg.polygon.push_back(
            {cam.calib.cx + cam.calib.fx * p.x / p.z, cam.calib.cy + cam.calib.fy * p.y / p.z});
      }
      out.push_back(std::move(reg));
    }
  }
  return out;
}

struct SimulationOptions {
  std::size_t frames_per_step = 90;  // ~3 s at 30 Hz
  std::size_t duration_jitter = 30;  // uniform +- frames
  std::uint64_t frame_period_us = 33333;
  std::uint64_t start_timestamp_us = 1000000;
  int depth_stride = 4;              // subsampling grid, pixels
  std::size_t min_points = 4;        // drop detections mostly out of view
};

namespace detail {

class SimRng {
 public:
  explicit SimRng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  double normal(double stddev) {
    return stddev > 0 ? std::normal_distribution<double>(0.0, stddev)(eng_) : 0.0;
  }
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
  }
  std::size_t pick_from_row(const std::vector<double>& row) {
    double u = uniform();
    double acc = 0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      acc += row[i];
      if (u < acc) return i;
    }
    return row.size() - 1;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace detail

inline std::vector<std::size_t> sample_plan(const StateGraph& g, std::mt19937_64& rng,
                                            std::size_t enumeration_cap = 10000) {
  auto plans = enumerate_plans(g, enumeration_cap);
  if (plans.empty()) throw Error("state graph admits no plan");
  if (plans.size() < enumeration_cap) {
    std::size_t i = std::uniform_int_distribution<std::size_t>(0, plans.size() - 1)(rng);
    return plans[i];
  }
  // Too many paths to enumerate: fall back to a uniform random walk.
  std::vector<std::size_t> walk;
  std::size_t node = 0;
  while (node != g.final_index) {
    const auto& out = g.out[node];
    if (out.empty()) throw Error("random walk reached a dead end");
    const auto& e = out[std::uniform_int_distribution<std::size_t>(0, out.size() - 1)(rng)];
    walk.push_back(e.step);
    node = e.to;
    if (walk.size() > 1000000) throw Error("random walk failed to reach the final state");
  }
  return walk;
}

// Runs `plan` on the virtual table. For every frame, per-camera
// DetectionMessages are handed to `sink` in rig order; the returned
// timeline records the true state per frame. Identical inputs and seed
// give a byte-identical message sequence.
inline GroundTruthTimeline simulate(
    const std::vector<std::size_t>& plan, const StateGraph& g, const TaskDefinition& task,
    const std::vector<SimCamera>& rig, const std::vector<TrayWorld>& trays,
    const NoiseModel& noise, const SimulationOptions& opts,
    const std::function<void(const DetectionMessage&)>& sink) {
  ObservationLayout layout = ObservationLayout::from_task(task);
  detail::SimRng rng(noise.seed);

  // Resolve the plan to the visited state sequence.
  std::vector<std::size_t> states{0};
  for (std::size_t step : plan) {
    bool found = false;
    for (const auto& e : g.out[states.back()]) {
      if (e.step == step) {
        states.push_back(e.to);
        found = true;
        break;
      }
    }
    if (!found) throw Error("plan step " + std::to_string(step) + " not applicable in simulation");
  }

  // Per-state durations: plan steps first, then a tail in the final state.
  GroundTruthTimeline timeline;
  std::size_t frame = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    long jitter = opts.duration_jitter
                      ? static_cast<long>(rng.uniform_index(2 * opts.duration_jitter + 1)) -
                            static_cast<long>(opts.duration_jitter)
                      : 0;
    std::size_t dur = std::max<long>(1, static_cast<long>(opts.frames_per_step) + jitter);
    GroundTruthEntry entry;
    entry.frame_begin = frame;
    entry.frame_end = frame + dur - 1;
    entry.state_index = states[i];
    if (i < plan.size()) entry.step_id = plan[i];
    timeline.entries.push_back(entry);
    frame += dur;
  }

  std::map<std::string, const TrayWorld*> tray_by_name;
  for (const auto& t : trays) tray_by_name[t.name] = &t;

  std::vector<Mat4> world_to_cam;
  for (const auto& cam : rig) world_to_cam.push_back(cam.calib.extrinsic.inverse_rigid());

  for (const auto& entry : timeline.entries) {
    const Configuration& state = g.nodes[entry.state_index];
    ObservationVector expected = expected_observation(state, layout);

    // The canonical world clouds present in this state, in layout order.
    struct Present {
      std::size_t element, tray;
      PointCloud cloud;
    };
    std::vector<Present> present;
    for (std::size_t e = 0; e < layout.elements.size(); ++e)
      for (std::size_t t = 0; t < layout.trays.size(); ++t) {
        if (expected[layout.index(e, t)] != 1.0) continue;
        auto it = tray_by_name.find(layout.trays[t]);
        if (it == tray_by_name.end())
          throw ConfigError("no world rectangle for tray " + layout.trays[t]);
        present.push_back({e, t, element_cloud(*it->second, e)});
      }

    for (std::size_t f = entry.frame_begin; f <= entry.frame_end; ++f) {
      for (std::size_t c = 0; c < rig.size(); ++c) {
        DetectionMessage msg;
        msg.camera_id = rig[c].calib.camera_id;
        msg.frame_index = f;
        msg.timestamp_us = opts.start_timestamp_us + f * opts.frame_period_us;
        for (const auto& pr : present) {
          if (noise.dropout_prob > 0 && rng.uniform() < noise.dropout_prob) continue;
          std::uint32_t cls = static_cast<std::uint32_t>(pr.element);
          if (!noise.confusion.empty())
            cls = static_cast<std::uint32_t>(rng.pick_from_row(noise.confusion[pr.element]));
          double conf = noise.base_confidence + rng.normal(noise.confidence_jitter);
          conf = std::min(1.0, std::max(0.0, conf));

          // Project the (possibly jittered) canonical points.
          struct Px {
            double u, v, z;
          };
          std::vector<Px> pix;
          pix.reserve(pr.cloud.size());
          for (const auto& wp : pr.cloud.points) {
            Vec3 p = wp;
            if (noise.position_jitter > 0)
              p = p + Vec3{rng.normal(noise.position_jitter), rng.normal(noise.position_jitter),
                           rng.normal(noise.position_jitter)};
            Vec3 camp = world_to_cam[c].transform_point(p);
            if (camp.z <= 0) continue;
            double u = rig[c].calib.cx + rig[c].calib.fx * camp.x / camp.z;
            double v = rig[c].calib.cy + rig[c].calib.fy * camp.y / camp.z;
            if (u < 0 || u >= rig[c].width || v < 0 || v >= rig[c].height) continue;
            pix.push_back({u, v, camp.z});
          }
          if (pix.size() < opts.min_points) continue;

          Detection2D det;
          det.class_id = cls;
          det.confidence = static_cast<float>(conf);

          double u0 = pix[0].u, u1 = pix[0].u, v0 = pix[0].v, v1 = pix[0].v;
          for (const auto& px : pix) {
            u0 = std::min(u0, px.u);
            u1 = std::max(u1, px.u);
            v0 = std::min(v0, px.v);
            v1 = std::max(v1, px.v);
          }
          det.x = static_cast<float>(u0);
          det.y = static_cast<float>(v0);
          det.w = static_cast<float>(u1 - u0);
          det.h = static_cast<float>(v1 - v0);

          // Depth-map style subsampling: one sample per stride-sized pixel
          // cell, keeping the nearest point (what a real depth map stores).
          std::map<std::pair<int, int>, Px> cells;
          for (const auto& px : pix) {
            std::pair<int, int> key{static_cast<int>(px.u) / opts.depth_stride,
                                    static_cast<int>(px.v) / opts.depth_stride};
            auto it = cells.find(key);
            if (it == cells.end() || px.z < it->second.z) cells[key] = px;
          }
          for (const auto& [key, px] : cells) {
            det.depth_samples.push_back({static_cast<float>(px.u), static_cast<float>(px.v),
                                         static_cast<float>(px.z / rig[c].calib.depth_scale)});
          }
          msg.detections.push_back(std::move(det));
        }
        sink(msg);
      }
    }
  }
  return timeline;
}

}  // namespace vimat
