#include "evgs/deformation.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "evgs/errors.hpp"

namespace evgs {

DeformationField::DeformationField(const DeformationConfig& config, std::uint64_t seed) : config_(config) {
  if (config.depth < 1 || config.width < 1) throw Error(ErrorKind::Config, "deformation network needs layers");
  if (config.skip_layer >= config.depth) throw Error(ErrorKind::Config, "skip layer beyond the network depth");
  nn::MlpSpec spec;
  spec.input = encoded_size(3, config.position_frequencies) + encoded_size(1, config.time_frequencies);
  spec.hidden.assign(config.depth, config.width);
  spec.output = kDeformOutputs;
  spec.hidden_activation = nn::Activation::Relu;
  spec.output_activation = nn::Activation::Identity;
  spec.skip_layer = config.skip_layer;
  net_ = nn::Mlp(spec);
  std::mt19937_64 rng(seed);
  net_.init(rng);
  net_.zero_output_layer();
}

Eigen::MatrixXd DeformationField::encode(std::span<const Gaussian> canonical, double t) const {
  const auto n = static_cast<Eigen::Index>(canonical.size());
  Eigen::MatrixXd pos(3, n);
  for (Eigen::Index i = 0; i < n; ++i) pos.col(i) = canonical[i].mu;
  const Eigen::MatrixXd time = Eigen::MatrixXd::Constant(1, n, t);
  const Eigen::MatrixXd ep = positional_encoding(pos, config_.position_frequencies);
  const Eigen::MatrixXd et = positional_encoding(time, config_.time_frequencies);
  Eigen::MatrixXd in(ep.rows() + et.rows(), n);
  in << ep, et;
  return in;
}

std::vector<Gaussian> DeformationField::deform(std::span<const Gaussian> canonical, double t, Trace* trace) const {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorKind::Extrapolation, "deformation time must lie in [0, 1]");
  std::vector<Gaussian> out(canonical.begin(), canonical.end());
  if (canonical.empty()) return out;
  nn::Mlp::Trace net_trace = net_.forward(encode(canonical, t));
  const Eigen::MatrixXd& delta = net_trace.output;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    out[i].mu += delta.col(c).segment<3>(0);
    out[i].log_scale += delta.col(c).segment<3>(3);
    // Left unnormalized: every consumer normalizes on use, and zero offsets stay bit-exact.
    out[i].rotation += delta.col(c).segment<4>(6);
  }
  if (trace) {
    trace->t = t;
    trace->count = canonical.size();
    trace->net = std::move(net_trace);
  }
  return out;
}

std::vector<GaussianGrad> DeformationField::backward(const Trace& trace, std::span<const Gaussian> canonical,
                                                     std::span<const GaussianGrad> deformed_grads,
                                                     bool network_grads) {
  if (deformed_grads.size() != canonical.size() || trace.count != canonical.size()) {
    throw Error(ErrorKind::Shape, "deformation backward got mismatched sizes");
  }
  std::vector<GaussianGrad> out(deformed_grads.begin(), deformed_grads.end());
  Eigen::MatrixXd g_delta(kDeformOutputs, static_cast<Eigen::Index>(canonical.size()));
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const GaussianGrad& g = deformed_grads[i];
    g_delta.col(static_cast<Eigen::Index>(i)) << g.mu, g.log_scale, g.rotation;
  }
  if (network_grads && !canonical.empty()) net_.backward(trace.net, g_delta, true);
  return out;
}

namespace {

Eigen::MatrixXd encode_time(double t, int frequencies) {
  return positional_encoding(Eigen::MatrixXd(Eigen::MatrixXd::Constant(1, 1, t)), frequencies);
}

}  // namespace

PoseNet::PoseNet(const PoseNetConfig& config, std::uint64_t seed) : config_(config) {
  nn::MlpSpec spec;
  spec.input = encoded_size(1, config.frequencies);
  spec.hidden = {config.hidden};
  spec.output = 6;
  spec.hidden_activation = nn::Activation::Relu;
  spec.output_activation = nn::Activation::Identity;
  net_ = nn::Mlp(spec);
  std::mt19937_64 rng(seed);
  net_.init(rng);
  net_.zero_output_layer();
}

RigidVelocity PoseNet::correction(double t) const {
  const Eigen::MatrixXd out = net_.evaluate(encode_time(t, config_.frequencies));
  return {out.col(0).segment<3>(0), out.col(0).segment<3>(3)};
}

void PoseNet::backward(double t, const RigidVelocity& grad) {
  const auto trace = net_.forward(encode_time(t, config_.frequencies));
  Eigen::MatrixXd g(6, 1);
  g << grad.v_c, grad.w_c;
  net_.backward(trace, g, true);
}

CameraTrajectory::CameraTrajectory(std::vector<Keyframe> keyframes) : keyframes_(std::move(keyframes)) {
  if (keyframes_.size() < 2) throw Error(ErrorKind::InsufficientInput, "a trajectory needs at least two keyframes");
  for (std::size_t i = 1; i < keyframes_.size(); ++i) {
    if (keyframes_[i].t <= keyframes_[i - 1].t) {
      throw Error(ErrorKind::Ordering, "keyframe timestamps must increase strictly");
    }
  }
}

double CameraTrajectory::normalize(Timestamp t) const {
  return static_cast<double>(t - start()) / static_cast<double>(end() - start());
}

std::size_t CameraTrajectory::segment(Timestamp t) const {
  if (t < start() || t > end()) {
    throw Error(ErrorKind::Extrapolation, "time " + std::to_string(t) + " lies outside the keyframe range");
  }
  const auto it = std::upper_bound(keyframes_.begin(), keyframes_.end(), t,
                                   [](Timestamp v, const Keyframe& k) { return v < k.t; });
  const auto idx = static_cast<std::size_t>(it - keyframes_.begin());
  return std::min(idx == 0 ? 0 : idx - 1, keyframes_.size() - 2);
}

double CameraTrajectory::local_interval(Timestamp t) const {
  const std::size_t i = segment(t);
  const double tl = static_cast<double>(keyframes_[i].t), tr = static_cast<double>(keyframes_[i + 1].t);
  const double tt = static_cast<double>(t);
  return (tt - tl) * (tr - tt) / (tr - tl) * 1e-6;
}

Pose CameraTrajectory::pose_at(Timestamp t, const PoseNet* posenet) const {
  const std::size_t i = segment(t);
  const Keyframe& a = keyframes_[i];
  const Keyframe& b = keyframes_[i + 1];
  const double alpha = static_cast<double>(t - a.t) / static_cast<double>(b.t - a.t);
  Pose base = alpha == 0.0 ? a.pose : (alpha == 1.0 ? b.pose : interpolate(a.pose, b.pose, alpha));
  if (!posenet) return base;
  const double s = local_interval(t);
  if (s == 0.0) return base;
  const RigidVelocity c = posenet->correction(normalize(t));
  Pose corr;
  corr.rotation = so3_exp(-s * c.w_c);
  corr.translation = -s * c.v_c;
  return corr * base;
}

RigidVelocity CameraTrajectory::velocity_at(Timestamp t, const PoseNet* posenet) const {
  const std::size_t i = segment(t);
  const Keyframe& a = keyframes_[i];
  const Keyframe& b = keyframes_[i + 1];
  RigidVelocity v = relative_velocity(a.pose, b.pose, static_cast<double>(b.t - a.t) * 1e-6);
  if (posenet) v = v + posenet->correction(normalize(t));
  return v;
}

void CameraTrajectory::pose_backward(Timestamp t, const PoseGrad& grad, PoseNet& posenet) const {
  const double s = local_interval(t);
  if (s == 0.0) return;
  const RigidVelocity c = posenet.correction(normalize(t));
  const Eigen::Vector3d phi = -s * c.w_c;
  const Eigen::Vector3d tau = -s * c.v_c;
  const Eigen::Vector3d g_phi = so3_left_jacobian(phi).transpose() * (grad.w + grad.v.cross(tau));
  posenet.backward(normalize(t), {-s * grad.v, -s * g_phi});
}

}  // namespace evgs
