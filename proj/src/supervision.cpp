#include "evgs/supervision.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "evgs/errors.hpp"

namespace evgs {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const Eigen::Vector2d kInvalid(kNaN, kNaN);

bool finite(const Eigen::Vector2d& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double LossWeights::gamma2(long iteration) const {
  return 1.0 - std::exp(-static_cast<double>(iteration) / gamma2_scale);
}

Eigen::Matrix<double, 2, 6> ego_flow_jacobian(const Eigen::Vector2d& xn, double depth) {
  const double x = xn.x(), y = xn.y(), inv = 1.0 / depth;
  Eigen::Matrix<double, 2, 6> j;
  j << -inv, 0.0, x * inv, x * y, -1.0 - x * x, y,  //
      0.0, -inv, y * inv, 1.0 + y * y, -x * y, -x;
  return j;
}

Eigen::Vector2d ego_flow_normalized(const Eigen::Vector2d& xn, double depth, const RigidVelocity& vel) {
  Eigen::Matrix<double, 6, 1> twist;
  twist << vel.v_c, vel.w_c;
  return ego_flow_jacobian(xn, depth) * twist;
}

Eigen::Vector2d ego_flow_at(const Eigen::Vector2d& pixel, double depth, const RigidVelocity& vel,
                            const CameraIntrinsics& intr) {
  if (!(depth > 0.0) || !std::isfinite(depth)) return kInvalid;
  const Eigen::Vector2d f = ego_flow_normalized(intr.to_normalized(pixel), depth, vel);
  return {intr.fx * f.x(), intr.fy * f.y()};
}

FlowField ego_flow(const Image& depth, const RigidVelocity& vel, const CameraIntrinsics& intr) {
  if (depth.channels != 1) throw Error(ErrorKind::Shape, "ego flow expects a single-channel depth map");
  FlowField out(depth.width, depth.height);
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) out.set(x, y, ego_flow_at({double(x), double(y)}, depth(x, y), vel, intr));
  }
  return out;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& world, const Pose& pose,
                                                const CameraIntrinsics& intr) {
  const Eigen::Vector3d p = pose.transform(world);
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << intr.fx * iz, 0.0, -intr.fx * p.x() * iz * iz,  //
      0.0, intr.fy * iz, -intr.fy * p.y() * iz * iz;
  return j * pose.rotation_matrix();
}

std::vector<Eigen::Vector2d> gaussian_scene_flow(std::span<const Gaussian> at_t0, std::span<const Gaussian> at_t1,
                                                 const Pose& pose, const CameraIntrinsics& intr) {
  if (at_t0.size() != at_t1.size()) throw Error(ErrorKind::Shape, "scene flow needs matching Gaussian sets");
  std::vector<Eigen::Vector2d> out(at_t0.size(), kInvalid);
  for (std::size_t i = 0; i < at_t0.size(); ++i) {
    if (!(pose.transform(at_t0[i].mu).z() > 0.0) || !(pose.transform(at_t1[i].mu).z() > 0.0)) continue;
    out[i] = project(at_t1[i].mu, pose, intr).pixel - project(at_t0[i].mu, pose, intr).pixel;
  }
  return out;
}

bool event_left_branch(Timestamp t_e, Timestamp t0, Timestamp t2) {
  // 2 t_e <= t0 + t2 avoids rounding the midpoint.
  return 2 * t_e <= t0 + t2;
}

Image event_pseudo_image(const Image& reference, const Image& log_change, bool left_branch, double floor) {
  if (log_change.channels != 1 || log_change.width != reference.width || log_change.height != reference.height) {
    throw Error(ErrorKind::Shape, "polarity image does not match the reference frame");
  }
  Image out(reference.width, reference.height, reference.channels);
  for (int y = 0; y < reference.height; ++y) {
    for (int x = 0; x < reference.width; ++x) {
      const double gain = std::exp(left_branch ? log_change(x, y) : -log_change(x, y));
      for (int c = 0; c < reference.channels; ++c) out(x, y, c) = std::max(reference(x, y, c), floor) * gain;
    }
  }
  return out;
}

double l1_image_loss(const Image& render, const Image& target, Image* grad) {
  if (!render.same_shape(target)) throw Error(ErrorKind::Shape, "L1 loss needs equally shaped images");
  if (render.size() == 0) return 0.0;
  const double n = static_cast<double>(render.size());
  if (grad) *grad = Image(render.width, render.height, render.channels);
  double sum = 0.0;
  for (std::size_t i = 0; i < render.size(); ++i) {
    const double d = render.data[i] - target.data[i];
    sum += std::abs(d);
    if (grad) grad->data[i] = sign(d) / n;
  }
  return sum / n;
}

std::vector<Eigen::Vector2d> bound_flow(const BindingTable& table, const FlowField& flow) {
  std::vector<Eigen::Vector2d> out(table.bindings.size(), kInvalid);
  for (std::size_t g = 0; g < table.bindings.size(); ++g) {
    if (table.bindings[g].empty()) continue;
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    for (const Binding& b : table.bindings[g]) {
      if (b.pixel.x() < 0 || b.pixel.y() < 0 || b.pixel.x() >= flow.width || b.pixel.y() >= flow.height) {
        throw Error(ErrorKind::Shape, "binding pixel outside the flow field");
      }
      acc += b.weight * flow.at(b.pixel.x(), b.pixel.y());
    }
    out[g] = acc;
  }
  return out;
}

std::vector<Eigen::Vector2d> bound_centroid(const BindingTable& table) {
  std::vector<Eigen::Vector2d> out(table.bindings.size(), kInvalid);
  for (std::size_t g = 0; g < table.bindings.size(); ++g) {
    if (table.bindings[g].empty()) continue;
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    for (const Binding& b : table.bindings[g]) acc += b.weight * b.pixel.cast<double>();
    out[g] = acc;
  }
  return out;
}

MotionLoss motion_loss(std::span<const Eigen::Vector2d> predicted, std::span<const Eigen::Vector2d> ego,
                       std::span<const Eigen::Vector2d> scene) {
  if (predicted.size() != ego.size() || predicted.size() != scene.size()) {
    throw Error(ErrorKind::Shape, "motion loss terms differ in length");
  }
  MotionLoss out;
  out.grad.assign(predicted.size(), Eigen::Vector2d::Zero());
  std::vector<Eigen::Vector2d> residual(predicted.size(), kInvalid);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!finite(predicted[i]) || !finite(ego[i]) || !finite(scene[i])) continue;
    residual[i] = predicted[i] - (ego[i] + scene[i]);
    ++out.count;
  }
  if (out.count == 0) return out;
  const double n = static_cast<double>(out.count);
  for (std::size_t i = 0; i < residual.size(); ++i) {
    if (!finite(residual[i])) continue;
    out.value += residual[i].cwiseAbs().sum() / n;
    out.grad[i] = Eigen::Vector2d(sign(residual[i].x()), sign(residual[i].y())) / n;
  }
  return out;
}

MotionLoss motion_objective(SceneModel& model, std::span<const Gaussian> canon, const MotionWindow& win,
                            double weight, std::vector<GaussianGrad>* canon_grads) {
  const CameraTrajectory& traj = *win.trajectory;
  const auto& kfs = traj.keyframes();
  if (win.window + 1 >= kfs.size()) throw Error(ErrorKind::Shape, "motion window beyond the last keyframe");
  if (win.table->bindings.size() != canon.size()) throw Error(ErrorKind::Shape, "binding table size mismatch");
  const Timestamp t0 = kfs[win.window].t, t2 = kfs[win.window + 1].t;
  const Pose& pose0 = kfs[win.window].pose;

  DeformationField::Trace trace0, trace2;
  const std::vector<Gaussian> d0 = model.deformation.deform(canon, traj.normalize(t0), &trace0);
  const std::vector<Gaussian> d2 = model.deformation.deform(canon, traj.normalize(t2), &trace2);

  const std::vector<Eigen::Vector2d> predicted = bound_flow(*win.table, *win.predicted);
  const std::vector<Eigen::Vector2d> centroid = bound_centroid(*win.table);
  const Timestamp t_mid = t0 + (t2 - t0) / 2;
  const RigidVelocity vel = traj.velocity_at(t_mid, &model.posenet);
  const double duration = static_cast<double>(t2 - t0) * 1e-6;

  std::vector<Eigen::Vector2d> ego(canon.size(), kInvalid);
  std::vector<double> depth(canon.size(), kNaN);
  for (std::size_t i = 0; i < ego.size(); ++i) {
    if (!finite(centroid[i])) continue;
    const int px = static_cast<int>(std::lround(centroid[i].x()));
    const int py = static_cast<int>(std::lround(centroid[i].y()));
    if (!win.depth->contains(px, py)) continue;
    depth[i] = (*win.depth)(px, py);
    ego[i] = ego_flow_at(centroid[i], depth[i], vel, win.intr) * duration;
  }
  const std::vector<Eigen::Vector2d> scene = gaussian_scene_flow(d0, d2, pose0, win.intr);
  MotionLoss loss = motion_loss(predicted, ego, scene);
  if (loss.count == 0 || !canon_grads) return loss;

  // residual = predicted - ego - scene, so both terms receive -dL/dr.
  std::vector<GaussianGrad> g0(d0.size()), g2(d2.size());
  Eigen::Matrix<double, 6, 1> g_vel = Eigen::Matrix<double, 6, 1>::Zero();
  for (std::size_t i = 0; i < loss.grad.size(); ++i) {
    const Eigen::Vector2d g = -weight * loss.grad[i];
    if (g.isZero()) continue;
    g2[i].mu = projection_jacobian(d2[i].mu, pose0, win.intr).transpose() * g;
    g0[i].mu = -projection_jacobian(d0[i].mu, pose0, win.intr).transpose() * g;
    const Eigen::Vector2d scaled(g.x() * win.intr.fx, g.y() * win.intr.fy);
    g_vel += duration * ego_flow_jacobian(win.intr.to_normalized(centroid[i]), depth[i]).transpose() * scaled;
  }
  const auto c0 = model.deformation.backward(trace0, canon, g0);
  const auto c2 = model.deformation.backward(trace2, canon, g2);
  for (std::size_t i = 0; i < canon_grads->size(); ++i) {
    (*canon_grads)[i] += c0[i];
    (*canon_grads)[i] += c2[i];
  }
  model.posenet.backward(traj.normalize(t_mid), {g_vel.head<3>(), g_vel.tail<3>()});
  return loss;
}

Trainer::Trainer(SceneModel& model, const TrainingData& data, const TrainConfig& config)
    : model_(model),
      data_(data),
      config_(config),
      opt_mu_(config.lr_position),
      opt_scale_(config.lr_scale),
      opt_rotation_(config.lr_rotation),
      opt_opacity_(config.lr_opacity),
      opt_color_(config.lr_color),
      opt_deform_(config.lr_deformation),
      opt_pose_(config.lr_posenet),
      rng_(config.seed) {
  const std::size_t k = data.trajectory.keyframes().size();
  if (k < 2) throw Error(ErrorKind::InsufficientInput, "training needs at least two keyframes");
  if (data.keyframe_images.size() != k) throw Error(ErrorKind::Shape, "one image per keyframe is required");
  for (const Image& img : data.keyframe_images) {
    if (img.width != data.intr.width || img.height != data.intr.height || img.channels != 3) {
      throw Error(ErrorKind::Shape, "keyframe images must be RGB at the camera resolution");
    }
  }
  if (config.motion_loss && data.window_flows.size() != k - 1) {
    throw Error(ErrorKind::Config, "motion supervision needs one predicted flow per keyframe window");
  }
  if (config.iterations < 0 || config.warmup < 0) throw Error(ErrorKind::Config, "iteration counts must be >= 0");

  const auto n = static_cast<Eigen::Index>(model.canonical.size());
  params_.mu = nn::Param(3, n);
  params_.log_scale = nn::Param(3, n);
  params_.rotation = nn::Param(4, n);
  params_.opacity = nn::Param(1, n);
  params_.color = nn::Param(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Gaussian& g = model.canonical[static_cast<std::size_t>(i)];
    params_.mu.value.col(i) = g.mu;
    params_.log_scale.value.col(i) = g.log_scale;
    params_.rotation.value.col(i) = g.rotation;
    params_.opacity.value(0, i) = g.opacity_logit;
    params_.color.value.col(i) = g.color;
  }
  opt_mu_.add(params_.mu);
  opt_scale_.add(params_.log_scale);
  opt_rotation_.add(params_.rotation);
  opt_opacity_.add(params_.opacity);
  opt_color_.add(params_.color);
  opt_deform_.add(model.deformation.network().parameters());
  opt_pose_.add(model.posenet.network().parameters());
  bindings_.resize(k - 1);
  bound_at_.assign(k - 1, 0);
}

const BindingTable* Trainer::binding(std::size_t window) const {
  return window < bindings_.size() && bindings_[window] ? &*bindings_[window] : nullptr;
}

std::vector<Gaussian> Trainer::canonical() const {
  std::vector<Gaussian> out = model_.canonical;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    out[i].mu = params_.mu.value.col(c);
    out[i].log_scale = params_.log_scale.value.col(c);
    out[i].rotation = params_.rotation.value.col(c);
    out[i].opacity_logit = params_.opacity.value(0, c);
    out[i].color = params_.color.value.col(c);
  }
  return out;
}

void Trainer::accumulate(std::span<const GaussianGrad> grads) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    params_.mu.grad.col(c) += grads[i].mu;
    params_.log_scale.grad.col(c) += grads[i].log_scale;
    params_.rotation.grad.col(c) += grads[i].rotation;
    params_.opacity.grad(0, c) += grads[i].opacity_logit;
    params_.color.grad.col(c) += grads[i].color;
  }
}

double Trainer::rgb_term(std::span<const Gaussian> canon, std::size_t keyframe, double weight,
                         std::vector<GaussianGrad>& canon_grads, RenderOutput* render_out) {
  const Keyframe& kf = data_.trajectory.keyframes()[keyframe];
  DeformationField::Trace trace;
  const std::vector<Gaussian> deformed = model_.deformation.deform(canon, data_.trajectory.normalize(kf.t), &trace);
  RenderOutput out = render(deformed, kf.pose, data_.intr, data_.background);
  Image grad;
  const double loss = l1_image_loss(out.color, data_.keyframe_images[keyframe], &grad);
  for (double& g : grad.data) g *= weight;
  const RenderGrads rg = render_backward(out, deformed, kf.pose, data_.intr, grad);
  const auto cg = model_.deformation.backward(trace, canon, rg.gaussians);
  for (std::size_t i = 0; i < cg.size(); ++i) canon_grads[i] += cg[i];
  if (render_out) *render_out = std::move(out);
  return loss;
}

double Trainer::event_term(std::span<const Gaussian> canon, std::size_t window, Timestamp t_e, double weight,
                           std::vector<GaussianGrad>& canon_grads) {
  const auto& kfs = data_.trajectory.keyframes();
  const Timestamp t0 = kfs[window].t, t2 = kfs[window + 1].t;
  const bool left = event_left_branch(t_e, t0, t2);
  const Image change = left ? accumulate_polarity(data_.events, t0, t_e, config_.contrast_threshold)
                            : accumulate_polarity(data_.events, t_e, t2, config_.contrast_threshold);
  const Image pseudo = event_pseudo_image(data_.keyframe_images[left ? window : window + 1], change, left,
                                          config_.intensity_floor);

  DeformationField::Trace trace;
  const std::vector<Gaussian> deformed = model_.deformation.deform(canon, data_.trajectory.normalize(t_e), &trace);
  const Pose pose = data_.trajectory.pose_at(t_e, &model_.posenet);
  const RenderOutput out = render(deformed, pose, data_.intr, data_.background);
  Image grad;
  const double loss = l1_image_loss(out.color, pseudo, &grad);
  if (weight == 0.0) return loss;
  for (double& g : grad.data) g *= weight;
  const RenderGrads rg = render_backward(out, deformed, pose, data_.intr, grad);
  const auto cg = model_.deformation.backward(trace, canon, rg.gaussians);
  for (std::size_t i = 0; i < cg.size(); ++i) canon_grads[i] += cg[i];
  data_.trajectory.pose_backward(t_e, rg.pose, model_.posenet);
  return loss;
}

MotionLoss Trainer::motion_term(std::span<const Gaussian> canon, std::size_t window, const RenderOutput& at_t0,
                                double weight, std::vector<GaussianGrad>& canon_grads) {
  const auto& kfs = data_.trajectory.keyframes();
  const Timestamp t0 = kfs[window].t, t2 = kfs[window + 1].t;
  // Bindings are built lazily per window and refreshed once they are a full period old.
  if (!bindings_[window] || (config_.rebind_period > 0 && iteration_ - bound_at_[window] >= config_.rebind_period)) {
    const std::vector<Gaussian> d0 = model_.deformation.deform(canon, data_.trajectory.normalize(t0));
    const auto delta = static_cast<Timestamp>(std::llround(config_.delta_t_fraction * static_cast<double>(t2 - t0)));
    const EventStream near = filter_events_near(data_.events, t0, delta);
    const auto lifted = unproject_events(near.events(), at_t0.depth, at_t0.alpha, kfs[window].pose, data_.intr);
    std::vector<Eigen::Vector3d> centers(d0.size());
    for (std::size_t i = 0; i < d0.size(); ++i) centers[i] = d0[i].mu;
    bindings_[window] = bind_events(centers, lifted, config_.bind);
    bound_at_[window] = iteration_;
  }
  MotionWindow win;
  win.trajectory = &data_.trajectory;
  win.window = window;
  win.table = &*bindings_[window];
  win.predicted = &data_.window_flows[window];
  win.depth = &at_t0.depth;
  win.intr = data_.intr;
  return motion_objective(model_, canon, win, weight, weight == 0.0 ? nullptr : &canon_grads);
}

IterationLog Trainer::step() {
  IterationLog log;
  log.iteration = iteration_;
  log.warmup = iteration_ < config_.warmup;
  log.gamma2 = config_.weights.gamma2(iteration_);

  for (nn::Adam* opt : {&opt_mu_, &opt_scale_, &opt_rotation_, &opt_opacity_, &opt_color_, &opt_deform_, &opt_pose_}) {
    opt->zero_grad();
  }
  const std::vector<Gaussian> canon = canonical();
  std::vector<GaussianGrad> grads(canon.size());
  const auto& kfs = data_.trajectory.keyframes();

  if (log.warmup) {
    std::uniform_int_distribution<std::size_t> pick(0, kfs.size() - 1);
    log.rgb = rgb_term(canon, pick(rng_), 1.0, grads);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, kfs.size() - 2);
    const std::size_t w = pick(rng_);
    const Timestamp t0 = kfs[w].t, t2 = kfs[w + 1].t;
    RenderOutput at_t0;
    log.rgb = 0.5 * rgb_term(canon, w, 0.5, grads, &at_t0) + 0.5 * rgb_term(canon, w + 1, 0.5, grads);
    if (config_.event_loss && t2 - t0 >= 2) {
      std::uniform_int_distribution<Timestamp> pick_t(t0 + 1, t2 - 1);
      log.event = event_term(canon, w, pick_t(rng_), config_.weights.gamma1, grads);
    }
    if (config_.motion_loss) {
      const MotionLoss m = motion_term(canon, w, at_t0, log.gamma2, grads);
      log.motion = m.value;
      log.bound = m.count;
    }
  }
  log.total = config_.weights.total(log.rgb, log.event, log.motion, iteration_);
  if (!std::isfinite(log.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << iteration_ << " (rgb " << log.rgb << ", event " << log.event
        << ", motion " << log.motion << ", gamma2 " << log.gamma2 << ")";
    throw Error(ErrorKind::TrainingFailure, msg.str());
  }

  accumulate(grads);
  for (nn::Adam* opt : {&opt_mu_, &opt_scale_, &opt_rotation_, &opt_opacity_, &opt_color_, &opt_deform_}) opt->step();
  if (!log.warmup) opt_pose_.step();

  model_.canonical = canonical();
  for (std::size_t i = 0; i < model_.canonical.size(); ++i) {
    Gaussian& g = model_.canonical[i];
    clamp_parameters(g);
    const auto c = static_cast<Eigen::Index>(i);
    params_.rotation.value.col(c) = g.rotation;
    params_.opacity.value(0, c) = g.opacity_logit;
    params_.color.value.col(c) = g.color;
  }
  ++iteration_;
  return log;
}

std::vector<IterationLog> Trainer::run(const std::function<void(const IterationLog&)>& on_iteration) {
  std::vector<IterationLog> logs;
  while (iteration_ < config_.iterations) {
    logs.push_back(step());
    if (on_iteration) on_iteration(logs.back());
  }
  return logs;
}

}  // namespace evgs
