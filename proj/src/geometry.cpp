#include "evgs/geometry.hpp"

#include <cmath>
#include <string>

#include "evgs/errors.hpp"

namespace evgs {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorKind::Config, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorKind::Config, "sensor size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw Error(ErrorKind::Config, "principal point outside the sensor");
  }
}

Pose Pose::from_camera_center(const Eigen::Quaterniond& camera_to_world, const Eigen::Vector3d& center) {
  Pose p;
  p.rotation = camera_to_world.conjugate().normalized();
  p.translation = -(p.rotation * center);
  return p;
}

Pose Pose::inverse() const {
  Pose p;
  p.rotation = rotation.conjugate();
  p.translation = -(p.rotation * translation);
  return p;
}

Pose Pose::operator*(const Pose& other) const {
  Pose p;
  p.rotation = (rotation * other.rotation).normalized();
  p.translation = rotation * other.translation + translation;
  return p;
}

Projection project(const Eigen::Vector3d& world, const Pose& pose, const CameraIntrinsics& intr) {
  const Eigen::Vector3d cam = pose.transform(world);
  if (!(cam.z() > 0.0)) {
    throw Error(ErrorKind::BehindCamera, "point has non-positive camera depth " + std::to_string(cam.z()));
  }
  Projection out;
  out.depth = cam.z();
  out.normalized = {cam.x() / cam.z(), cam.y() / cam.z()};
  out.pixel = intr.to_pixel(out.normalized);
  return out;
}

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const Pose& pose,
                          const CameraIntrinsics& intr) {
  if (!(depth > 0.0)) throw Error(ErrorKind::InvalidDepth, "unproject needs a positive depth");
  const Eigen::Vector2d n = intr.to_normalized(pixel);
  const Eigen::Vector3d cam(n.x() * depth, n.y() * depth, depth);
  return pose.rotation.conjugate() * (cam - pose.translation);
}

RigidVelocity relative_velocity(const Pose& pose_t0, const Pose& pose_t1, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidInterval, "relative_velocity needs dt > 0");
  // Camera-frame transfer P1 = R_rel P0 + t_rel; a static point moves by -v dt - (w dt) x P.
  const Eigen::Quaterniond r_rel = (pose_t1.rotation * pose_t0.rotation.conjugate()).normalized();
  const Eigen::Vector3d t_rel = pose_t1.translation - r_rel * pose_t0.translation;
  RigidVelocity vel;
  vel.w_c = -so3_log(r_rel) / dt;
  vel.v_c = -t_rel / dt;
  return vel;
}

Pose advance(const Pose& pose, const RigidVelocity& vel, double dt) {
  Pose step;
  step.rotation = so3_exp(-vel.w_c * dt);
  step.translation = -vel.v_c * dt;
  return step * pose;
}

Pose interpolate(const Pose& a, const Pose& b, double alpha) {
  const Eigen::Quaterniond qa = a.rotation.conjugate();
  const Eigen::Quaterniond qb = b.rotation.conjugate();
  const Eigen::Vector3d center = (1.0 - alpha) * a.camera_center() + alpha * b.camera_center();
  return Pose::from_camera_center(qa.slerp(alpha, qb), center);
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Eigen::Quaterniond so3_exp(const Eigen::Vector3d& phi) {
  const double theta = phi.norm();
  if (theta < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
    return q.normalized();
  }
  const Eigen::Vector3d axis = phi / theta;
  return Eigen::Quaterniond(Eigen::AngleAxisd(theta, axis));
}

Eigen::Vector3d so3_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double s = v.norm();
  if (s == 0.0) return Eigen::Vector3d::Zero();
  const double theta = 2.0 * std::atan2(s, q.w());
  return v * (theta / s);
}

Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& phi) {
  const double theta = phi.norm();
  const Eigen::Matrix3d k = skew(phi);
  if (theta < 1e-6) return Eigen::Matrix3d::Identity() + 0.5 * k + k * k / 6.0;
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * k +
         (theta - std::sin(theta)) / (t2 * theta) * k * k;
}

}  // namespace evgs
