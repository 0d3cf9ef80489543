#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evgs/event_core.hpp"
#include "evgs/gaussian_scene.hpp"
#include "evgs/geometry.hpp"
#include "evgs/nn.hpp"

namespace evgs {

struct DeformationConfig {
  int position_frequencies = 10;
  int time_frequencies = 6;
  int depth = 8;
  int width = 256;
  /// Hidden layer that also receives the encoded input; -1 disables the skip.
  int skip_layer = 4;
};

inline constexpr int kDeformOutputs = 10;  // dx (3), ds (3), dq (4)

/// Time-conditioned offsets of canonical Gaussians. Canonical positions enter the network as
/// constants: gradients reach mu only through mu' = mu + dx.
class DeformationField {
 public:
  struct Trace {
    double t = 0.0;
    std::size_t count = 0;
    nn::Mlp::Trace net;
  };

  DeformationField() = default;
  DeformationField(const DeformationConfig& config, std::uint64_t seed);

  const DeformationConfig& config() const { return config_; }
  nn::Mlp& network() { return net_; }
  const nn::Mlp& network() const { return net_; }

  Eigen::MatrixXd encode(std::span<const Gaussian> canonical, double t) const;
  /// t is normalized time in [0, 1]. Rotations come out as q + dq; consumers normalize them.
  std::vector<Gaussian> deform(std::span<const Gaussian> canonical, double t, Trace* trace = nullptr) const;
  /// Accumulates network gradients and returns gradients for the canonical Gaussians.
  std::vector<GaussianGrad> backward(const Trace& trace, std::span<const Gaussian> canonical,
                                     std::span<const GaussianGrad> deformed_grads, bool network_grads = true);

 private:
  DeformationConfig config_;
  nn::Mlp net_;
};

struct PoseNetConfig {
  int frequencies = 4;
  int hidden = 64;
};

/// Maps normalized time to a camera velocity correction (v, w).
class PoseNet {
 public:
  PoseNet() = default;
  PoseNet(const PoseNetConfig& config, std::uint64_t seed);

  const PoseNetConfig& config() const { return config_; }
  nn::Mlp& network() { return net_; }
  const nn::Mlp& network() const { return net_; }
  RigidVelocity correction(double t) const;
  /// Accumulates parameter gradients for dL/d(correction at t).
  void backward(double t, const RigidVelocity& grad);

 private:
  PoseNetConfig config_;
  nn::Mlp net_;
};

struct Keyframe {
  Timestamp t = 0;
  Pose pose;
};

/// Keyframe poses with an optional learned velocity correction between them.
class CameraTrajectory {
 public:
  CameraTrajectory() = default;
  /// Keyframes must have strictly increasing timestamps.
  explicit CameraTrajectory(std::vector<Keyframe> keyframes);

  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  Timestamp start() const { return keyframes_.front().t; }
  Timestamp end() const { return keyframes_.back().t; }
  double normalize(Timestamp t) const;
  /// Index i of the segment [k_i, k_i+1] holding t.
  std::size_t segment(Timestamp t) const;

  /// Interpolated keyframe pose composed with Exp of the correction over the local interval
  /// s(t) = (t - t_l)(t_r - t) / (t_r - t_l); exact at keyframes.
  Pose pose_at(Timestamp t, const PoseNet* posenet = nullptr) const;
  /// Segment velocity from the neighboring keyframes plus the correction.
  RigidVelocity velocity_at(Timestamp t, const PoseNet* posenet = nullptr) const;

  /// Chains a left-perturbation gradient of pose_at(t) into PoseNet parameters.
  void pose_backward(Timestamp t, const PoseGrad& grad, PoseNet& posenet) const;

 private:
  double local_interval(Timestamp t) const;
  std::vector<Keyframe> keyframes_;
};

}  // namespace evgs
