#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace evgs {

/// Pinhole intrinsics in pixel units. Pixel centers sit at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws ErrorKind::Config when an invariant is violated.
  void validate() const;

  Eigen::Vector2d to_normalized(const Eigen::Vector2d& pixel) const {
    return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy};
  }
  Eigen::Vector2d to_pixel(const Eigen::Vector2d& normalized) const {
    return {fx * normalized.x() + cx, fy * normalized.y() + cy};
  }
};

/// World-to-camera rigid transform: X_cam = R * X_world + t.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }
  /// Builds the pose of a camera whose orientation (camera-to-world) and optical center are given.
  static Pose from_camera_center(const Eigen::Quaterniond& camera_to_world, const Eigen::Vector3d& center);

  Eigen::Vector3d transform(const Eigen::Vector3d& world) const { return rotation * world + translation; }
  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
  Eigen::Vector3d camera_center() const { return -(rotation.conjugate() * translation); }
  Pose inverse() const;
  /// (a * b).transform(x) == a.transform(b.transform(x))
  Pose operator*(const Pose& other) const;
};

/// Instantaneous camera velocity expressed in the camera frame. A static world point P seen by
/// the camera moves as dP/dt = -v_c - w_c x P.
struct RigidVelocity {
  Eigen::Vector3d v_c = Eigen::Vector3d::Zero();
  Eigen::Vector3d w_c = Eigen::Vector3d::Zero();

  RigidVelocity operator+(const RigidVelocity& o) const { return {v_c + o.v_c, w_c + o.w_c}; }
  RigidVelocity operator*(double s) const { return {v_c * s, w_c * s}; }
};

struct Projection {
  Eigen::Vector2d pixel;
  Eigen::Vector2d normalized;
  double depth = 0.0;
};

Projection project(const Eigen::Vector3d& world, const Pose& pose, const CameraIntrinsics& intr);

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const Pose& pose,
                          const CameraIntrinsics& intr);

/// Constant twist carrying pose_t0 to pose_t1 over dt, expressed as a camera velocity.
RigidVelocity relative_velocity(const Pose& pose_t0, const Pose& pose_t1, double dt);

/// Applies a camera velocity for dt: the returned pose sees static points moved by the twist.
Pose advance(const Pose& pose, const RigidVelocity& vel, double dt);

/// Orientation slerp and camera-center lerp; alpha in [0, 1].
Pose interpolate(const Pose& a, const Pose& b, double alpha);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);
Eigen::Quaterniond so3_exp(const Eigen::Vector3d& phi);
Eigen::Vector3d so3_log(const Eigen::Quaterniond& q);
/// Left Jacobian of SO(3): Exp(phi + d) ~= Exp(J_l(phi) d) Exp(phi).
Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& phi);

}  // namespace evgs
