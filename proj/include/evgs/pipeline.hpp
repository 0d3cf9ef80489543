#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evgs/flow_adapter.hpp"
#include "evgs/supervision.hpp"
#include "evgs/synthetic.hpp"

namespace evgs {

/// Random textures translating along one axis, alternating direction, with magnitudes drawn from
/// [0.4, 1] * speed pixels per window.
std::vector<FlowSample> translation_corpus(int width, int height, int count, const Eigen::Vector2d& axis, double speed,
                                           int bins, std::uint64_t seed);

/// One flow sample per consecutive keyframe window.
std::vector<FlowSample> window_samples(const EventStream& events, std::span<const Timestamp> keyframe_times, int bins);

std::vector<FlowField> predict_flows(const TiledFlowPredictor& predictor, const nn::LoraAdapter* adapter,
                                     std::span<const FlowSample> samples);

/// Mean endpoint error between two flow fields over all pixels.
double mean_epe(const FlowField& a, const FlowField& b);

/// Canonical Gaussians copied from the scene at t = 0, plus freshly seeded networks.
SceneModel init_model(const SceneSpec& scene, const DeformationConfig& deformation, const PoseNetConfig& posenet,
                      std::uint64_t seed);

/// Keyframe poses, images and events of a simulated sequence.
TrainingData make_training_data(const SceneSpec& scene, const SimulatedSequence& sequence,
                                std::vector<FlowField> window_flows);

struct HeldOutReport {
  std::vector<int> views;  // dense frame indices
  std::vector<double> view_psnr;
  std::vector<double> view_ssim;
  double psnr = 0.0;
  double ssim = 0.0;
  /// Mean over held-out consecutive frame pairs and visible Gaussians of the projected
  /// displacement error against the scripted motion.
  double flow_epe = 0.0;
  std::size_t flow_samples = 0;
};

/// Scores a trained model on the dense frames that were not used as keyframes.
HeldOutReport evaluate_held_out(const SceneModel& model, const CameraTrajectory& trajectory, const SceneSpec& scene,
                                const SimulatedSequence& sequence);

/// Renders the model at time t with the learned camera.
RenderOutput render_model(const SceneModel& model, const CameraTrajectory& trajectory, const CameraIntrinsics& intr,
                          const Eigen::Vector3d& background, Timestamp t);

}  // namespace evgs
