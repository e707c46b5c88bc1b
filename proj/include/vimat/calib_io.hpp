#pragma once

// Versioned text formats for camera calibration and tray regions.
//
//   vimat-calibration v1          vimat-trays v1
//   camera cam0 {                 region T_in cam0 {
//     fx 600                        vertex 103.2 88.0
//     fy 600                        vertex 530.1 88.0
//     cx 320                        vertex 520.7 240.3
//     cy 240                        vertex 110.9 240.3
//     depth_scale 1                }
//     extrinsic m00 m01 ... m33   # row-major 16
//   }

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "vimat/fusion.hpp"

namespace vimat {

inline constexpr const char* kCalibrationHeader = "vimat-calibration v1";
inline constexpr const char* kTraysHeader = "vimat-trays v1";

namespace detail {

inline std::string strip_comment(std::string line) {
  auto pos = line.find('#');
  if (pos != std::string::npos) line.erase(pos);
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
  return line;
}

}  // namespace detail

inline void write_calibration_file(const std::string& path,
                                   const std::vector<CameraCalibration>& cams) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open calibration file for writing: " + path);
  out << kCalibrationHeader << "\n";
  out.precision(17);
  for (const auto& c : cams) {
    out << "camera " << c.camera_id << " {\n";
    out << "  fx " << c.fx << "\n  fy " << c.fy << "\n";
    out << "  cx " << c.cx << "\n  cy " << c.cy << "\n";
    out << "  depth_scale " << c.depth_scale << "\n";
    out << "  extrinsic";
    for (double v : c.extrinsic.m) out << " " << v;
    out << "\n}\n";
  }
}

inline std::vector<CameraCalibration> read_calibration_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open calibration file: " + path);
  std::string line;
  if (!std::getline(in, line) || detail::strip_comment(line) != kCalibrationHeader)
    throw ConfigError("not a calibration file (expected '" + std::string(kCalibrationHeader) +
                      "'): " + path);
  std::vector<CameraCalibration> cams;
  CameraCalibration cur;
  bool open = false;
  int lineno = 1;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(path + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(detail::strip_comment(line));
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "camera") {
      if (open) fail("nested camera block");
      cur = CameraCalibration{};
      std::string brace;
      if (!(ss >> cur.camera_id >> brace) || brace != "{") fail("expected: camera <id> {");
      open = true;
    } else if (word == "}") {
      if (!open) fail("stray '}'");
      if (!cur.valid()) fail("camera " + cur.camera_id + ": invalid intrinsics or extrinsic");
      for (const auto& c : cams)
        if (c.camera_id == cur.camera_id) fail("duplicate camera id " + cur.camera_id);
      cams.push_back(cur);
      open = false;
    } else if (open && (word == "fx" || word == "fy" || word == "cx" || word == "cy" ||
                        word == "depth_scale")) {
      double v;
      if (!(ss >> v)) fail("expected a number after " + word);
      if (word == "fx") cur.fx = v;
      if (word == "fy") cur.fy = v;
      if (word == "cx") cur.cx = v;
      if (word == "cy") cur.cy = v;
      if (word == "depth_scale") cur.depth_scale = v;
    } else if (open && word == "extrinsic") {
      for (double& v : cur.extrinsic.m)
        if (!(ss >> v)) fail("extrinsic needs 16 numbers (row-major)");
    } else {
      fail("unexpected token '" + word + "'");
    }
  }
  if (open) fail("unterminated camera block");
  if (cams.empty()) throw ConfigError("calibration file declares no cameras: " + path);
  return cams;
}

inline void write_tray_regions_file(const std::string& path,
                                    const std::vector<TrayRegion>& regions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open tray-region file for writing: " + path);
  out << kTraysHeader << "\n";
  out.precision(17);
  for (const auto& r : regions) {
    out << "region " << r.tray_name << " " << r.camera_id << " {\n";
    for (const auto& v : r.polygon) out << "  vertex " << v.u << " " << v.v << "\n";
    out << "}\n";
  }
}

inline std::vector<TrayRegion> read_tray_regions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open tray-region file: " + path);
  std::string line;
  if (!std::getline(in, line) || detail::strip_comment(line) != kTraysHeader)
    throw ConfigError("not a tray-region file (expected '" + std::string(kTraysHeader) +
                      "'): " + path);
  std::vector<TrayRegion> regions;
  TrayRegion cur;
  bool open = false;
  int lineno = 1;
  std::set<std::pair<std::string, std::string>> seen;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(path + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(detail::strip_comment(line));
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "region") {
      if (open) fail("nested region block");
      cur = TrayRegion{};
      std::string brace;
      if (!(ss >> cur.tray_name >> cur.camera_id >> brace) || brace != "{")
        fail("expected: region <tray> <camera> {");
      if (!seen.insert({cur.tray_name, cur.camera_id}).second)
        fail("duplicate region for (" + cur.tray_name + ", " + cur.camera_id + ")");
      open = true;
    } else if (word == "}") {
      if (!open) fail("stray '}'");
      if (cur.polygon.size() < 3) fail("region needs at least 3 vertices");
      regions.push_back(cur);
      open = false;
    } else if (open && word == "vertex") {
      Pixel p;
      if (!(ss >> p.u >> p.v)) fail("vertex needs two coordinates");
      cur.polygon.push_back(p);
    } else {
      fail("unexpected token '" + word + "'");
    }
  }
  if (open) fail("unterminated region block");
  return regions;
}

}  // namespace vimat
