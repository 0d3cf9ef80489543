#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evgs/association.hpp"
#include "evgs/contrast_max.hpp"
#include "evgs/deformation.hpp"
#include "evgs/event_core.hpp"
#include "evgs/gaussian_scene.hpp"
#include "evgs/geometry.hpp"
#include "evgs/nn.hpp"

namespace evgs {

inline constexpr long kWarmupIterations = 3500;

struct LossWeights {
  double gamma1 = 1.0;
  /// gamma2(iter) = 1 - exp(-iter / gamma2_scale)
  double gamma2_scale = 4000.0;

  double gamma2(long iteration) const;
  double total(double rgb, double event, double motion, long iteration) const {
    return rgb + gamma1 * event + gamma2(iteration) * motion;
  }
};

/// Image velocity of a static point at focal-normalized xn and depth, per unit time, in
/// normalized coordinates.
Eigen::Vector2d ego_flow_normalized(const Eigen::Vector2d& xn, double depth, const RigidVelocity& vel);
/// d(ego_flow_normalized) / d(v_c, w_c).
Eigen::Matrix<double, 2, 6> ego_flow_jacobian(const Eigen::Vector2d& xn, double depth);
/// Pixel-space image velocity at a pixel.
Eigen::Vector2d ego_flow_at(const Eigen::Vector2d& pixel, double depth, const RigidVelocity& vel,
                            const CameraIntrinsics& intr);
/// Dense ego flow; pixels without valid depth hold NaN.
FlowField ego_flow(const Image& depth, const RigidVelocity& vel, const CameraIntrinsics& intr);

/// Per-Gaussian projected displacement between the deformations at t0 and t1 under a fixed
/// pose. Invalid entries (behind the camera) hold NaN.
std::vector<Eigen::Vector2d> gaussian_scene_flow(std::span<const Gaussian> at_t0, std::span<const Gaussian> at_t1,
                                                 const Pose& pose, const CameraIntrinsics& intr);

/// d(pixel) / d(world point) of the pinhole projection.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& world, const Pose& pose,
                                                const CameraIntrinsics& intr);

/// True when t_e takes the left branch: t_e <= (t0 + t2) / 2.
bool event_left_branch(Timestamp t_e, Timestamp t0, Timestamp t2);

/// Brightness-transported pseudo frame: left * exp(log_change) or right / exp(log_change), with
/// the reference frame floored at `floor`. log_change is single-channel and applied to every
/// color channel.
Image event_pseudo_image(const Image& reference, const Image& log_change, bool left_branch, double floor = 1e-3);

/// Mean absolute difference; grad receives d(loss)/d(render).
double l1_image_loss(const Image& render, const Image& target, Image* grad = nullptr);

struct MotionLoss {
  double value = 0.0;
  std::size_t count = 0;
  /// d(loss)/d(residual) per Gaussian; zero for Gaussians without bindings.
  std::vector<Eigen::Vector2d> grad;
};

/// Binding-weighted flow sampled at each Gaussian's bound event pixels; NaN when unbound.
std::vector<Eigen::Vector2d> bound_flow(const BindingTable& table, const FlowField& flow);
/// Binding-weighted mean pixel of each Gaussian's events; NaN when unbound.
std::vector<Eigen::Vector2d> bound_centroid(const BindingTable& table);

/// Mean over Gaussians with finite terms of |predicted - (ego + scene)|_1.
MotionLoss motion_loss(std::span<const Eigen::Vector2d> predicted, std::span<const Eigen::Vector2d> ego,
                       std::span<const Eigen::Vector2d> scene);

/// Canonical Gaussians plus the time-dependent networks.
struct SceneModel {
  std::vector<Gaussian> canonical;
  DeformationField deformation;
  PoseNet posenet;
};

/// One keyframe window of motion supervision with its bindings and predicted flow.
struct MotionWindow {
  const CameraTrajectory* trajectory = nullptr;
  std::size_t window = 0;  // keyframes [window, window + 1]
  const BindingTable* table = nullptr;
  const FlowField* predicted = nullptr;  // pixels per window
  const Image* depth = nullptr;          // rendered at the window start; treated as constant
  CameraIntrinsics intr;
};

/// Motion loss of one window. With canon_grads set, accumulates weight-scaled gradients into the
/// deformation network, the PoseNet and the canonical Gaussians.
MotionLoss motion_objective(SceneModel& model, std::span<const Gaussian> canonical, const MotionWindow& win,
                            double weight = 1.0, std::vector<GaussianGrad>* canon_grads = nullptr);

struct TrainConfig {
  long iterations = 7000;
  long warmup = kWarmupIterations;
  LossWeights weights;
  bool event_loss = true;
  bool motion_loss = true;
  double lr_position = 1.6e-4;
  double lr_color = 2.5e-3;
  double lr_opacity = 5e-2;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_deformation = 1.6e-4;
  double lr_posenet = 1e-4;
  long rebind_period = kRebindPeriod;
  /// Half-width of the binding event window as a fraction of the keyframe interval.
  double delta_t_fraction = 0.1;
  BindConfig bind;
  double contrast_threshold = 0.1;
  double intensity_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainingData {
  CameraIntrinsics intr;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  CameraTrajectory trajectory;
  std::vector<Image> keyframe_images;  // linear RGB, one per trajectory keyframe
  EventStream events;
  /// Predicted flow over each consecutive keyframe window, pixels per window.
  std::vector<FlowField> window_flows;
};

struct IterationLog {
  long iteration = 0;
  double rgb = 0.0;
  double event = 0.0;
  double motion = 0.0;
  double gamma2 = 0.0;
  double total = 0.0;
  bool warmup = true;
  /// Gaussians contributing to the motion term; 0 with motion enabled means an empty table.
  std::size_t bound = 0;
};

/// Two-phase optimization: RGB-only warm-up, then photometric, event and motion supervision.
class Trainer {
 public:
  Trainer(SceneModel& model, const TrainingData& data, const TrainConfig& config);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  IterationLog step();
  long iteration() const { return iteration_; }
  const BindingTable* binding(std::size_t window) const;

  /// Runs until the configured iteration count; the callback sees every iteration.
  std::vector<IterationLog> run(const std::function<void(const IterationLog&)>& on_iteration = {});

 private:
  struct GaussianParams {
    nn::Param mu, log_scale, rotation, opacity, color;
  };

  std::vector<Gaussian> canonical() const;
  void accumulate(std::span<const GaussianGrad> grads);
  double rgb_term(std::span<const Gaussian> canon, std::size_t keyframe, double weight,
                  std::vector<GaussianGrad>& canon_grads, RenderOutput* render_out = nullptr);
  double event_term(std::span<const Gaussian> canon, std::size_t window, Timestamp t_e, double weight,
                    std::vector<GaussianGrad>& canon_grads);
  MotionLoss motion_term(std::span<const Gaussian> canon, std::size_t window, const RenderOutput& at_t0,
                         double weight, std::vector<GaussianGrad>& canon_grads);

  SceneModel& model_;
  const TrainingData& data_;
  TrainConfig config_;
  GaussianParams params_;
  nn::Adam opt_mu_, opt_scale_, opt_rotation_, opt_opacity_, opt_color_, opt_deform_, opt_pose_;
  std::mt19937_64 rng_;
  long iteration_ = 0;
  std::vector<std::optional<BindingTable>> bindings_;
  std::vector<long> bound_at_;
};

}  // namespace evgs
