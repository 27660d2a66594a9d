#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "ksi/error.hpp"
#include "ksi/rng.hpp"

// Rigid-body and pinhole-camera kernel.
//
// Pose convention: PoseSE3 maps world points into the camera frame
// (x_cam = R * x_world + t). Camera frame is right-handed with Z forward,
// X right and Y down.
namespace ksi::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kRotationTolerance = 1e-9;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

// Nearest rotation in the Frobenius sense.
inline Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

inline double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
}

// 3x3 orthonormal matrix with det +1; checked on construction.
class RotationMatrix {
 public:
  RotationMatrix() : m_(Mat3::Identity()) {}

  explicit RotationMatrix(const Mat3& m) : m_(m) {
    if (!m.allFinite()) throw ValidationError("rotation has non-finite entries", "rotation");
    if (orthonormality_error(m) > kRotationTolerance || std::abs(m.determinant() - 1.0) > kRotationTolerance)
      throw ValidationError("matrix is not a proper rotation", "rotation");
  }

  // Projects `m` onto SO(3) first; for matrices known to be close to a rotation.
  static RotationMatrix nearest(const Mat3& m) { return RotationMatrix(project_to_so3(m)); }

  static RotationMatrix from_axis_angle(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle == 0.0) return {};
    return RotationMatrix(Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix());
  }

  static RotationMatrix about_z(double radians) { return from_axis_angle(Vec3(0.0, 0.0, radians)); }

  Vec3 to_axis_angle() const {
    const Eigen::AngleAxisd aa(m_);
    return aa.axis() * aa.angle();
  }

  // Rotation angle in [0, pi].
  double angle() const {
    const double c = std::clamp((m_.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
  }

  // (w, x, y, z)
  std::array<double, 4> quaternion() const {
    Eigen::Quaterniond q(m_);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    return {q.w(), q.x(), q.y(), q.z()};
  }

  const Mat3& matrix() const { return m_; }
  RotationMatrix transposed() const {
    RotationMatrix r;
    r.m_ = m_.transpose();
    return r;
  }

  friend RotationMatrix operator*(const RotationMatrix& a, const RotationMatrix& b) {
    RotationMatrix r;
    r.m_ = a.m_ * b.m_;
    if (orthonormality_error(r.m_) > 1e-12) r.m_ = project_to_so3(r.m_);
    return r;
  }
  friend Vec3 operator*(const RotationMatrix& a, const Vec3& v) { return a.m_ * v; }
  friend bool operator==(const RotationMatrix& a, const RotationMatrix& b) { return a.m_ == b.m_; }

 private:
  Mat3 m_;
};

// Angle of a^T b, i.e. the geodesic distance between two rotations.
inline double rotation_distance(const RotationMatrix& a, const RotationMatrix& b) {
  return (a.transposed() * b).angle();
}

struct PoseSE3 {
  RotationMatrix rotation;
  Vec3 translation = Vec3::Zero();

  static PoseSE3 identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  // For a world-to-camera pose, the camera centre in world coordinates.
  Vec3 center() const { return -(rotation.transposed() * translation); }

  friend bool operator==(const PoseSE3& a, const PoseSE3& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

// x -> a(b(x))
inline PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline PoseSE3 se3_inverse(const PoseSE3& a) {
  RotationMatrix rt = a.rotation.transposed();
  return {rt, -(rt * a.translation)};
}

inline PoseSE3 operator*(const PoseSE3& a, const PoseSE3& b) { return se3_compose(a, b); }

// Relative pose taking camera-A coordinates to camera-B coordinates, given
// world-to-camera poses of both frames.
inline PoseSE3 relative_pose(const PoseSE3& world_to_a, const PoseSE3& world_to_b) {
  return se3_compose(world_to_b, se3_inverse(world_to_a));
}

// Uniformly distributed rotation axis, angle up to `max_angle`; translation in a cube.
inline PoseSE3 random_pose(Rng& rng, double max_angle = 3.14159, double max_translation = 5.0) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(0.0, max_angle);
  Vec3 t(rng.uniform(-max_translation, max_translation), rng.uniform(-max_translation, max_translation),
         rng.uniform(-max_translation, max_translation));
  return {RotationMatrix::from_axis_angle(axis * angle), t};
}

struct CameraIntrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  void validate() const {
    if (!(fx > 0.0)) throw ValidationError("must be positive", "fx");
    if (!(fy > 0.0)) throw ValidationError("must be positive", "fy");
    if (!(cx > 0.0 && cx < width)) throw ValidationError("must lie inside the image", "cx");
    if (!(cy > 0.0 && cy < height)) throw ValidationError("must lie inside the image", "cy");
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  // Pixel -> normalized image coordinates.
  Vec2 normalize(const Vec2& px) const { return {(px.x() - cx) / fx, (px.y() - cy) / fy}; }
  Vec2 denormalize(const Vec2& xy) const { return {fx * xy.x() + cx, fy * xy.y() + cy}; }

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width && px.y() < height;
  }
};

// Projection of a camera-frame point; nullopt when Z <= 0 (behind the camera).
inline std::optional<Vec2> project_camera(const CameraIntrinsics& intr, const Vec3& p_cam) {
  if (!(p_cam.z() > 0.0)) return std::nullopt;
  return Vec2(intr.fx * p_cam.x() / p_cam.z() + intr.cx, intr.fy * p_cam.y() / p_cam.z() + intr.cy);
}

inline std::optional<Vec2> project(const CameraIntrinsics& intr, const PoseSE3& world_to_cam, const Vec3& point_world) {
  return project_camera(intr, world_to_cam.apply(point_world));
}

// Camera-frame point at depth Z behind pixel `px`.
inline Vec3 backproject_camera(const CameraIntrinsics& intr, const Vec2& px, double depth) {
  const Vec2 xy = intr.normalize(px);
  return {xy.x() * depth, xy.y() * depth, depth};
}

inline Vec3 backproject(const CameraIntrinsics& intr, const PoseSE3& world_to_cam, const Vec2& px, double depth) {
  return se3_inverse(world_to_cam).apply(backproject_camera(intr, px, depth));
}

// Pose looking along `heading` (radians about world +Z, 0 = +X) from `position`,
// with the camera's Y axis pointing down (world -Z).
inline PoseSE3 look_along(const Vec3& position, double heading) {
  const Vec3 forward(std::cos(heading), std::sin(heading), 0.0);
  const Vec3 down(0.0, 0.0, -1.0);
  const Vec3 right = down.cross(forward);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  RotationMatrix rot(r);
  return {rot, -(rot * position)};
}

// JSON: {"rotation": [row-major 9], "translation": [3]}
inline void to_json(nlohmann::json& j, const PoseSE3& p) {
  const Mat3& r = p.rotation.matrix();
  j = nlohmann::json{{"rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}},
                     {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

inline void from_json(const nlohmann::json& j, PoseSE3& p) {
  const auto& r = j.at("rotation");
  const auto& t = j.at("translation");
  if (r.size() != 9) throw ValidationError("expected 9 entries", "rotation");
  if (t.size() != 3) throw ValidationError("expected 3 entries", "translation");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = r[i].get<double>();
  p.rotation = RotationMatrix(m);
  p.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
}

inline void to_json(nlohmann::json& j, const CameraIntrinsics& c) {
  j = nlohmann::json{{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

inline void from_json(const nlohmann::json& j, CameraIntrinsics& c) {
  j.at("fx").get_to(c.fx);
  j.at("fy").get_to(c.fy);
  j.at("cx").get_to(c.cx);
  j.at("cy").get_to(c.cy);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
  c.validate();
}

}  // namespace ksi::geom
