#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "evgs/deformation.hpp"
#include "evgs/event_core.hpp"
#include "evgs/gaussian_scene.hpp"
#include "evgs/geometry.hpp"
#include "evgs/image.hpp"

namespace evgs {

/// Smooth intensity pattern: a base level plus isotropic blobs (x, y, sigma, amplitude).
struct BlobTexture {
  double base = 0.1;
  std::vector<Eigen::Vector4d> blobs;

  double operator()(double x, double y) const;
};

BlobTexture random_texture(int width, int height, int count, std::uint64_t seed);

/// frames + 1 single-channel images of the texture shifted by s * displacement, s in [0, 1].
std::vector<Image> translating_frames(const BlobTexture& texture, int width, int height,
                                      const Eigen::Vector2d& displacement, int frames);

/// Events of a texture translating by `displacement` pixels over [0, duration].
EventStream translating_stream(const BlobTexture& texture, int width, int height, const Eigen::Vector2d& displacement,
                               Timestamp duration, int frames = 16, double contrast_threshold = 0.1);

/// Ground-truth motion of the dynamic Gaussians: x(t) = x + amplitude * sin(2 pi t / period + phase).
struct OscillationScript {
  Eigen::Vector3d amplitude = Eigen::Vector3d::Zero();
  double period_us = 1.0;
  double phase = 0.0;
  std::vector<std::int64_t> dynamic_ids;

  Eigen::Vector3d offset(Timestamp t) const;
  bool moves(std::int64_t id) const;
};

/// A synthetic dynamic scene with a known camera path and a scripted deformation.
struct SceneSpec {
  CameraIntrinsics intr;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  std::vector<Gaussian> gaussians;  // state at t = 0
  std::vector<Keyframe> camera;     // camera path, interpolated between entries
  OscillationScript motion;
  int dense_frames = 41;
  Timestamp frame_interval_us = 10000;
  /// Every n-th dense frame becomes an RGB keyframe.
  int keyframe_stride = 5;
  /// Extra sub-frames rendered between dense frames for event simulation only.
  int event_substeps = 4;

  void validate() const;
  Timestamp time_of(int dense_index) const { return static_cast<Timestamp>(dense_index) * frame_interval_us; }
  std::vector<int> keyframe_indices() const;
  std::vector<Gaussian> gaussians_at(Timestamp t) const;
  Pose pose_at(Timestamp t) const;
};

struct SimulatedSequence {
  std::vector<Timestamp> times;  // dense frame times
  std::vector<Image> frames;     // linear RGB renders
  std::vector<int> keyframes;    // indices into frames
  EventStream events;
};

SimulatedSequence simulate_sequence(const SceneSpec& scene, const SimulatorConfig& config = {});

/// Static textured plane behind a textured cluster that oscillates sideways; the camera pans
/// slowly. Deterministic for a seed.
SceneSpec make_toy_scene(std::uint64_t seed = 0);

}  // namespace evgs
