#pragma once

// Offline evaluation of a monitoring run: per-frame comparison of the
// predicted MAP state against the ground-truth timeline, yielding
// precision and recall over active states.
//
// Two tolerance knobs, applied as a union:
//   frame_tolerance    — a frame matches if the other timeline holds the
//                        same state anywhere within +-tol frames;
//   boundary_tolerance — a frame also matches if its state appears in a
//                        ground-truth segment at most B segments away
//                        (absorbs the unavoidable few-frame transition
//                        lag / anticipation around step boundaries).
// Both default to 0, which is exact per-frame equality.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vimat/simulator.hpp"

namespace vimat {

struct RangeMismatchError : ValidationError {
  RangeMismatchError(std::size_t pred, std::size_t gt)
      : ValidationError("timelines cover different ranges: " + std::to_string(pred) +
                        " predicted frames vs " + std::to_string(gt) + " ground-truth frames") {}
};

struct FrameComparison {
  std::size_t frame = 0;
  std::size_t predicted_state = 0;
  std::size_t gt_state = 0;
  bool match = false;  // counted toward precision
};

struct TimelineComparison {
  double precision = 0;
  double recall = 0;
  std::vector<FrameComparison> per_frame;
  std::size_t frame_tolerance = 0;
  std::size_t boundary_tolerance = 0;
};

inline std::vector<std::size_t> expand_per_frame(const GroundTruthTimeline& gt) {
  std::vector<std::size_t> states(gt.frames());
  for (const auto& e : gt.entries)
    for (std::size_t f = e.frame_begin; f <= e.frame_end; ++f) states[f] = e.state_index;
  return states;
}

inline TimelineComparison evaluate(const std::vector<std::size_t>& predicted,
                                   const GroundTruthTimeline& gt, std::size_t frame_tolerance = 0,
                                   std::size_t boundary_tolerance = 0) {
  std::vector<std::size_t> gt_states = expand_per_frame(gt);
  if (predicted.size() != gt_states.size())
    throw RangeMismatchError(predicted.size(), gt_states.size());
  std::size_t n = predicted.size();
  if (n == 0) throw RangeMismatchError(0, 0);

  std::vector<std::size_t> segment_of(n);
  for (std::size_t i = 0; i < gt.entries.size(); ++i)
    for (std::size_t f = gt.entries[i].frame_begin; f <= gt.entries[i].frame_end; ++f)
      segment_of[f] = i;

  auto near_segment_holds = [&](std::size_t frame, std::size_t state) {
    if (boundary_tolerance == 0) return false;
    std::size_t seg = segment_of[frame];
    std::size_t lo = seg > boundary_tolerance ? seg - boundary_tolerance : 0;
    std::size_t hi = std::min(gt.entries.size() - 1, seg + boundary_tolerance);
    for (std::size_t j = lo; j <= hi; ++j)
      if (gt.entries[j].state_index == state) return true;
    return false;
  };

  TimelineComparison cmp;
  cmp.frame_tolerance = frame_tolerance;
  cmp.boundary_tolerance = boundary_tolerance;
  cmp.per_frame.reserve(n);

  std::size_t matched_pred = 0;
  for (std::size_t f = 0; f < n; ++f) {
    bool ok = false;
    std::size_t lo = f > frame_tolerance ? f - frame_tolerance : 0;
    std::size_t hi = std::min(n - 1, f + frame_tolerance);
    for (std::size_t g = lo; g <= hi && !ok; ++g) ok = gt_states[g] == predicted[f];
    if (!ok) ok = near_segment_holds(f, predicted[f]);
    if (ok) ++matched_pred;
    cmp.per_frame.push_back({f, predicted[f], gt_states[f], ok});
  }

  std::size_t matched_gt = 0;
  for (std::size_t f = 0; f < n; ++f) {
    bool ok = false;
    std::size_t lo = f > frame_tolerance ? f - frame_tolerance : 0;
    std::size_t hi = std::min(n - 1, f + frame_tolerance);
    for (std::size_t g = lo; g <= hi && !ok; ++g) ok = predicted[g] == gt_states[f];
    if (!ok && boundary_tolerance > 0) {
      // The state was recovered if it is predicted anywhere inside the
      // frame span of segments within B hops of this frame's segment.
      std::size_t seg = segment_of[f];
      std::size_t slo = seg > boundary_tolerance ? seg - boundary_tolerance : 0;
      std::size_t shi = std::min(gt.entries.size() - 1, seg + boundary_tolerance);
      for (std::size_t g = gt.entries[slo].frame_begin;
           g <= gt.entries[shi].frame_end && !ok; ++g)
        ok = predicted[g] == gt_states[f];
    }
    if (ok) ++matched_gt;
  }

  cmp.precision = static_cast<double>(matched_pred) / static_cast<double>(n);
  cmp.recall = static_cast<double>(matched_gt) / static_cast<double>(n);
  return cmp;
}

// ---------------------------------------------------------------------------
// CSV formats (versioned by their fixed header line)

struct TimelineRow {
  std::size_t frame = 0;
  std::uint64_t timestamp_us = 0;
  std::size_t state_index = 0;  // MAP state
  double belief = 0;            // probability of the MAP state
  std::size_t map_state = 0;
  bool warning = false;
};

inline constexpr const char* kTimelineCsvHeader =
    "frame,timestamp_us,state_index,belief,map_state,warning_flag";
inline constexpr const char* kGroundTruthCsvHeader = "frame_begin,frame_end,state_index,step_id";

inline void write_timeline_csv(std::ostream& os, const std::vector<TimelineRow>& rows) {
  os << kTimelineCsvHeader << "\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9f", r.belief);
    os << r.frame << "," << r.timestamp_us << "," << r.state_index << "," << buf << ","
       << r.map_state << "," << (r.warning ? 1 : 0) << "\n";
  }
}

inline void write_timeline_csv(const std::string& path, const std::vector<TimelineRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open timeline CSV for writing: " + path);
  write_timeline_csv(out, rows);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error("bad " + what + " in CSV: '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<TimelineRow> read_timeline_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open timeline CSV: " + path);
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line)[0] != "frame")
    throw Error("not a timeline CSV (bad header): " + path);
  std::vector<TimelineRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 6) throw Error("malformed timeline CSV row: " + line);
    TimelineRow r;
    r.frame = detail::parse_u64(f[0], "frame");
    r.timestamp_us = detail::parse_u64(f[1], "timestamp");
    r.state_index = detail::parse_u64(f[2], "state_index");
    r.belief = std::stod(f[3]);
    r.map_state = detail::parse_u64(f[4], "map_state");
    r.warning = f[5] == "1";
    rows.push_back(r);
  }
  return rows;
}

inline void write_ground_truth_csv(std::ostream& os, const GroundTruthTimeline& gt) {
  os << kGroundTruthCsvHeader << "\n";
  for (const auto& e : gt.entries) {
    os << e.frame_begin << "," << e.frame_end << "," << e.state_index << ",";
    if (e.step_id)
      os << *e.step_id;
    else
      os << -1;
    os << "\n";
  }
}

inline void write_ground_truth_csv(const std::string& path, const GroundTruthTimeline& gt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open ground-truth CSV for writing: " + path);
  write_ground_truth_csv(out, gt);
}

inline GroundTruthTimeline read_ground_truth_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ground-truth CSV: " + path);
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line)[0] != "frame_begin")
    throw Error("not a ground-truth CSV (bad header): " + path);
  GroundTruthTimeline gt;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw Error("malformed ground-truth CSV row: " + line);
    GroundTruthEntry e;
    e.frame_begin = detail::parse_u64(f[0], "frame_begin");
    e.frame_end = detail::parse_u64(f[1], "frame_end");
    e.state_index = detail::parse_u64(f[2], "state_index");
    if (f[3] != "-1") e.step_id = detail::parse_u64(f[3], "step_id");
    gt.entries.push_back(e);
  }
  for (std::size_t i = 0; i < gt.entries.size(); ++i) {
    bool contiguous = i == 0 ? gt.entries[i].frame_begin == 0
                             : gt.entries[i].frame_begin == gt.entries[i - 1].frame_end + 1;
    if (!contiguous || gt.entries[i].frame_end < gt.entries[i].frame_begin)
      throw Error("ground-truth CSV ranges are not contiguous: " + path);
  }
  return gt;
}

}  // namespace vimat
