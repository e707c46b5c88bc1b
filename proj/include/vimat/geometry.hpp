#pragma once

// Minimal 3D math for the fusion pipeline: vectors, rigid transforms,
// and the pinhole camera model. Camera frame follows the usual computer
// vision convention: x right, y down, z forward (optical axis).

#include <array>
#include <cmath>

#include "vimat/errors.hpp"

namespace vimat {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const {
    double n = norm();
    if (n == 0.0) throw Error("cannot normalize a zero vector");
    return {x / n, y / n, z / n};
  }
};

inline double distance2(const Vec3& a, const Vec3& b) { return (a - b).norm2(); }

// Row-major 4x4 homogeneous transform. Only rigid transforms (orthonormal
// rotation + translation) are expected; inverse_rigid relies on that.
struct Mat4 {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  static Mat4 identity() { return {}; }

  static Mat4 translation(const Vec3& t) {
    Mat4 r;
    r.m[3] = t.x;
    r.m[7] = t.y;
    r.m[11] = t.z;
    return r;
  }

  // Rotation whose columns are the given basis vectors, plus translation.
  static Mat4 from_axes(const Vec3& ex, const Vec3& ey, const Vec3& ez, const Vec3& t) {
    Mat4 r;
    r.m = {ex.x, ey.x, ez.x, t.x,
           ex.y, ey.y, ez.y, t.y,
           ex.z, ey.z, ez.z, t.z,
           0,    0,    0,    1};
    return r;
  }

  Mat4 operator*(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += m[i * 4 + k] * o.m[k * 4 + j];
        r.m[i * 4 + j] = s;
      }
    return r;
  }

  Vec3 transform_point(const Vec3& p) const {
    return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
  }

  Vec3 transform_vector(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z};
  }

  Mat4 inverse_rigid() const {
    Mat4 r;
    // transpose the rotation block
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i * 4 + j] = m[j * 4 + i];
    Vec3 t{m[3], m[7], m[11]};
    Vec3 it = {-(r.m[0] * t.x + r.m[1] * t.y + r.m[2] * t.z),
               -(r.m[4] * t.x + r.m[5] * t.y + r.m[6] * t.z),
               -(r.m[8] * t.x + r.m[9] * t.y + r.m[10] * t.z)};
    r.m[3] = it.x;
    r.m[7] = it.y;
    r.m[11] = it.z;
    r.m[12] = r.m[13] = r.m[14] = 0;
    r.m[15] = 1;
    return r;
  }

  bool rotation_orthonormal(double tol = 1e-6) const {
    Vec3 c0{m[0], m[4], m[8]}, c1{m[1], m[5], m[9]}, c2{m[2], m[6], m[10]};
    return std::abs(c0.norm() - 1) < tol && std::abs(c1.norm() - 1) < tol &&
           std::abs(c2.norm() - 1) < tol && std::abs(c0.dot(c1)) < tol &&
           std::abs(c0.dot(c2)) < tol && std::abs(c1.dot(c2)) < tol &&
           c0.cross(c1).dot(c2) > 0;
  }
};

// Camera-to-world transform for a camera at `eye` looking at `target`.
// `up_hint` fixes the roll; it falls back to +y when (target - eye) is
// parallel to the hint (e.g. a straight-down overhead view).
inline Mat4 look_at_camera_to_world(const Vec3& eye, const Vec3& target,
                                    Vec3 up_hint = {0, 0, 1}) {
  Vec3 fwd = (target - eye).normalized();
  if (std::abs(fwd.dot(up_hint)) > 0.999 * up_hint.norm()) up_hint = {0, 1, 0};
  Vec3 right = up_hint.cross(fwd).normalized();
  Vec3 down = fwd.cross(right);  // completes a right-handed (x,y,z) triad
  return Mat4::from_axes(right, down, fwd, eye);
}

}  // namespace vimat
