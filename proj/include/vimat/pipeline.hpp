#pragma once

// End-to-end monitoring pipeline: synchronized frame bundles in, one
// timeline row (MAP state + belief + warning flag) out per bundle.
// Per-frame failures (a detection with no valid depth, an unknown class
// from a live producer) degrade that frame instead of stopping the run.

#include "vimat/calib_io.hpp"
#include "vimat/evaluation.hpp"
#include "vimat/ingest.hpp"
#include "vimat/reasoner.hpp"

namespace vimat {

struct PipelineConfig {
  double stay_prob = 0.8;
  double radius = kDefaultRadius;
  double iou_thresh = kDefaultIouThresh;
  double alpha_up = kDefaultAlphaUp;
  double alpha_down = kDefaultAlphaDown;
  bool smoothing = true;
  ReasonerOptions reasoner;
};

class MonitorPipeline {
 public:
  MonitorPipeline(const TaskDefinition& task, std::vector<CameraCalibration> calibrations,
                  std::vector<TrayRegion> regions, PipelineConfig cfg = {})
      : task_(task),
        layout_(ObservationLayout::from_task(task)),
        calibrations_(std::move(calibrations)),
        regions_(std::move(regions)),
        cfg_(cfg),
        graph_(build_state_graph(task)),
        tm_(transition_matrix(graph_, cfg.stay_prob)),
        expected_(expected_observations(graph_, layout_, cfg.reasoner.work_tray)),
        monitor_(cfg.reasoner) {
    for (const auto& c : calibrations_)
      if (!c.valid()) throw ConfigError("invalid calibration for camera " + c.camera_id);
  }

  const StateGraph& graph() const { return graph_; }
  const TransitionMatrix& matrix() const { return tm_; }
  const ObservationLayout& layout() const { return layout_; }

  std::vector<std::string> camera_ids() const {
    std::vector<std::string> ids;
    for (const auto& c : calibrations_) ids.push_back(c.camera_id);
    return ids;
  }

  // Fusion only: bundle -> consolidated (unsmoothed) observation vector.
  ObservationVector fuse(const FrameBundle& bundle) {
    std::vector<FusedDetection> fused;
    for (const auto& [cam_id, msg] : bundle.per_camera) {
      const CameraCalibration* cal = find_calibration(cam_id);
      if (!cal) continue;
      auto by_tray = assign_to_trays(msg.detections, regions_, cam_id);
      for (const auto& [tray, det_indices] : by_tray) {
        for (std::size_t di : det_indices) {
          const Detection2D& det = msg.detections[di];
          if (det.class_id >= layout_.elements.size()) {
            ++dropped_detections_;
            continue;
          }
          try {
            fused.push_back({cam_id, tray, det.class_id,
                             static_cast<double>(det.confidence), backproject(det, *cal)});
          } catch (const EmptyCloudError&) {
            ++dropped_detections_;
          }
        }
      }
    }
    auto clusters = match_across_views(fused, cfg_.radius, cfg_.iou_thresh);
    return consolidate(clusters, layout_);
  }

  // Full step: fuse, smooth, advance the trellis, track warnings.
  TimelineRow process(const FrameBundle& bundle) {
    ObservationVector y = fuse(bundle);
    if (cfg_.smoothing) {
      if (prev_)
        y = smooth(*prev_, y, cfg_.alpha_up, cfg_.alpha_down);
      prev_ = y;
    }

    if (!trellis_)
      trellis_ = viterbi_init(y, graph_, expected_, cfg_.reasoner);
    else
      viterbi_step(*trellis_, y, tm_, expected_, cfg_.reasoner);

    BeliefState belief = current_belief(*trellis_);
    auto warning = monitor_.update(belief, frame_);

    TimelineRow row;
    row.frame = frame_++;
    row.timestamp_us = bundle.bundle_time;
    row.state_index = belief.map_state;
    row.map_state = belief.map_state;
    row.belief = belief.probs[belief.map_state];
    row.warning = warning.has_value();
    if (warning) warnings_.push_back(*warning);
    timeline_.push_back(row);
    return row;
  }

  const std::vector<TimelineRow>& timeline() const { return timeline_; }
  const std::vector<DeviationWarning>& warnings() const { return warnings_; }
  std::size_t dropped_detections() const { return dropped_detections_; }

  std::vector<std::size_t> map_path() const {
    if (!trellis_) return {};
    return viterbi_path(*trellis_);
  }

 private:
  const CameraCalibration* find_calibration(const std::string& id) const {
    for (const auto& c : calibrations_)
      if (c.camera_id == id) return &c;
    return nullptr;
  }

  TaskDefinition task_;
  ObservationLayout layout_;
  std::vector<CameraCalibration> calibrations_;
  std::vector<TrayRegion> regions_;
  PipelineConfig cfg_;
  StateGraph graph_;
  TransitionMatrix tm_;
  std::vector<ObservationVector> expected_;
  DeviationMonitor monitor_;

  std::optional<ObservationVector> prev_;
  std::optional<Trellis> trellis_;
  std::vector<TimelineRow> timeline_;
  std::vector<DeviationWarning> warnings_;
  std::size_t frame_ = 0;
  std::size_t dropped_detections_ = 0;
};

}  // namespace vimat
