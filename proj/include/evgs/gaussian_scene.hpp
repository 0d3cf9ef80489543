#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evgs/geometry.hpp"
#include "evgs/image.hpp"

namespace evgs {

/// Anisotropic 3D Gaussian with degree-0 color. Scale is stored as its log and opacity as a logit.
struct Gaussian {
  std::int64_t id = 0;
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z; normalized on use
  double opacity_logit = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();

  double opacity() const;
  void set_opacity(double probability);
  Eigen::Matrix3d rotation_matrix() const;
  Eigen::Matrix3d covariance() const;
};

inline constexpr double kMinOpacityLogit = -800.0;
inline constexpr double kMaxOpacityLogit = 40.0;

/// Keeps parameters inside their valid domain after an optimizer step.
void clamp_parameters(Gaussian& g);

struct GaussianGrad {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Vector4d rotation = Eigen::Vector4d::Zero();
  double opacity_logit = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();

  GaussianGrad& operator+=(const GaussianGrad& o);
};

/// Gradient with respect to a left perturbation of a world-to-camera pose:
/// X_c -> Exp(w) X_c + v.
struct PoseGrad {
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
};

struct RenderSettings {
  double covariance_floor = 0.3;   // px^2 added to the 2D covariance diagonal
  double cull_sigma = 3.0;
  double min_transmittance = 1e-4;
  double near_plane = 1e-2;
};

/// Screen-space footprint of one Gaussian, kept for the backward pass.
struct Splat {
  bool visible = false;
  Eigen::Vector3d p_cam = Eigen::Vector3d::Zero();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix3d cov_world = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d cov_cam = Eigen::Matrix3d::Zero();
  Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();  // inverse 2D covariance
  double opacity = 0.0;
};

struct Contributor {
  std::uint32_t gaussian = 0;  // index into the rendered span
  double alpha = 0.0;
  double falloff = 0.0;        // exp(-q/2), alpha = opacity * falloff
  double transmittance = 0.0;  // before this contributor
};

struct RenderOutput {
  Image color;  // 3 channels, linear
  Image depth;  // 0 where nothing was hit
  Image alpha;  // accumulated opacity, 1 - final transmittance
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  std::vector<Splat> splats;
  /// Contributors of pixel i are records[offsets[i] .. offsets[i+1]), front to back.
  std::vector<std::size_t> offsets;
  std::vector<Contributor> records;

  bool has_records() const { return offsets.size() == color.size() / 3 + 1; }
};

RenderOutput render(std::span<const Gaussian> gaussians, const Pose& pose, const CameraIntrinsics& intr,
                    const Eigen::Vector3d& background, const RenderSettings& settings = {});

struct RenderGrads {
  std::vector<GaussianGrad> gaussians;
  PoseGrad pose;
};

/// Reverse pass of render for a loss gradient on the color image. The depth output is treated
/// as a constant.
RenderGrads render_backward(const RenderOutput& out, std::span<const Gaussian> gaussians, const Pose& pose,
                            const CameraIntrinsics& intr, const Image& grad_color);

/// [x, sin(2^l pi x), cos(2^l pi x) for l < L], grouped per frequency.
Eigen::VectorXd positional_encoding(const Eigen::VectorXd& x, int frequencies);
inline int encoded_size(int dim, int frequencies) { return dim * (2 * frequencies + 1); }

/// Column-batched encoding; each column of x is one sample.
Eigen::MatrixXd positional_encoding(const Eigen::MatrixXd& x, int frequencies);

/// Derivative of rotation_matrix() with respect to the raw (unnormalized) quaternion.
Eigen::Vector4d quaternion_backward(const Eigen::Vector4d& q, const Eigen::Matrix3d& grad_r);

}  // namespace evgs
