#include "evgs/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "evgs/errors.hpp"

namespace evgs {

double BlobTexture::operator()(double x, double y) const {
  double v = base;
  for (const Eigen::Vector4d& b : blobs) {
    const double dx = x - b[0], dy = y - b[1];
    v += b[3] * std::exp(-(dx * dx + dy * dy) / (2.0 * b[2] * b[2]));
  }
  return v;
}

BlobTexture random_texture(int width, int height, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BlobTexture t;
  for (int i = 0; i < count; ++i) {
    t.blobs.push_back({u(rng) * width, u(rng) * height, 1.5 + 2.5 * u(rng), 0.3 + 0.6 * u(rng)});
  }
  return t;
}

std::vector<Image> translating_frames(const BlobTexture& texture, int width, int height,
                                      const Eigen::Vector2d& displacement, int frames) {
  if (frames < 1) throw Error(ErrorKind::InsufficientInput, "need at least one frame step");
  std::vector<Image> out;
  for (int f = 0; f <= frames; ++f) {
    const Eigen::Vector2d shift = displacement * (static_cast<double>(f) / frames);
    Image img(width, height, 1);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) img(x, y) = texture(x - shift.x(), y - shift.y());
    }
    out.push_back(std::move(img));
  }
  return out;
}

EventStream translating_stream(const BlobTexture& texture, int width, int height, const Eigen::Vector2d& displacement,
                               Timestamp duration, int frames, double contrast_threshold) {
  const std::vector<Image> imgs = translating_frames(texture, width, height, displacement, frames);
  std::vector<Timestamp> times;
  for (int f = 0; f <= frames; ++f) times.push_back(duration * f / frames);
  SimulatorConfig cfg;
  cfg.contrast_threshold = contrast_threshold;
  return simulate_events(imgs, times, cfg);
}

Eigen::Vector3d OscillationScript::offset(Timestamp t) const {
  return amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period_us + phase);
}

bool OscillationScript::moves(std::int64_t id) const {
  return std::find(dynamic_ids.begin(), dynamic_ids.end(), id) != dynamic_ids.end();
}

void SceneSpec::validate() const {
  intr.validate();
  if (gaussians.empty()) throw Error(ErrorKind::InsufficientInput, "scene has no Gaussians");
  if (camera.empty()) throw Error(ErrorKind::InsufficientInput, "scene has no camera pose");
  if (dense_frames < 2) throw Error(ErrorKind::InsufficientInput, "scene needs at least two dense frames");
  if (frame_interval_us <= 0) throw Error(ErrorKind::Config, "frame interval must be positive");
  if (keyframe_stride < 1 || event_substeps < 1) throw Error(ErrorKind::Config, "stride and substeps must be >= 1");
  if (!(motion.period_us > 0.0)) throw Error(ErrorKind::Config, "oscillation period must be positive");
  if (keyframe_indices().size() < 2) throw Error(ErrorKind::InsufficientInput, "scene yields fewer than two keyframes");
  for (std::size_t i = 1; i < camera.size(); ++i) {
    if (camera[i].t <= camera[i - 1].t) throw Error(ErrorKind::Ordering, "camera poses must be time ordered");
  }
}

std::vector<int> SceneSpec::keyframe_indices() const {
  std::vector<int> out;
  for (int i = 0; i < dense_frames; i += keyframe_stride) out.push_back(i);
  return out;
}

std::vector<Gaussian> SceneSpec::gaussians_at(Timestamp t) const {
  std::vector<Gaussian> out = gaussians;
  const Eigen::Vector3d d = motion.offset(t);
  for (Gaussian& g : out) {
    if (motion.moves(g.id)) g.mu += d;
  }
  return out;
}

Pose SceneSpec::pose_at(Timestamp t) const {
  if (camera.size() == 1 || t <= camera.front().t) return camera.front().pose;
  if (t >= camera.back().t) return camera.back().pose;
  return CameraTrajectory(camera).pose_at(t);
}

SimulatedSequence simulate_sequence(const SceneSpec& scene, const SimulatorConfig& config) {
  scene.validate();
  SimulatedSequence seq;
  for (int i = 0; i < scene.dense_frames; ++i) {
    const Timestamp t = scene.time_of(i);
    seq.times.push_back(t);
    seq.frames.push_back(render(scene.gaussians_at(t), scene.pose_at(t), scene.intr, scene.background).color);
  }
  seq.keyframes = scene.keyframe_indices();

  std::vector<Image> lum;
  std::vector<Timestamp> lum_times;
  const int steps = scene.event_substeps;
  for (int i = 0; i + 1 < scene.dense_frames; ++i) {
    for (int s = 0; s < steps; ++s) {
      const Timestamp t = scene.time_of(i) + scene.frame_interval_us * s / steps;
      lum_times.push_back(t);
      lum.push_back(s == 0 ? luminance(seq.frames[i])
                           : luminance(render(scene.gaussians_at(t), scene.pose_at(t), scene.intr, scene.background).color));
    }
  }
  lum_times.push_back(seq.times.back());
  lum.push_back(luminance(seq.frames.back()));
  seq.events = simulate_events(lum, lum_times, config);
  return seq;
}

SceneSpec make_toy_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSpec s;
  s.intr = {60.0, 60.0, 31.5, 31.5, 64, 64};
  s.background = Eigen::Vector3d::Constant(0.05);

  std::int64_t id = 0;
  // Backdrop: a grid of flat splats at depth 4 with random shading, textured enough to fire
  // events under the camera pan.
  for (int gy = 0; gy < 12; ++gy) {
    for (int gx = 0; gx < 12; ++gx) {
      Gaussian g;
      g.id = id++;
      g.mu = {-2.2 + 0.4 * gx, -2.2 + 0.4 * gy, 4.0};
      g.log_scale = Eigen::Vector3d(std::log(0.2), std::log(0.2), std::log(0.02));
      g.set_opacity(0.95);
      const double level = 0.1 + 0.8 * u(rng);
      g.color = Eigen::Vector3d(level, 0.8 * level + 0.1 * u(rng), 0.6 * level + 0.2 * u(rng)).cwiseMin(1.0);
      s.gaussians.push_back(g);
    }
  }
  // Foreground: a textured disc that oscillates sideways.
  for (int i = 0; i < 60; ++i) {
    const double r = 0.5 * std::sqrt(u(rng)), a = 2.0 * std::numbers::pi * u(rng);
    Gaussian g;
    g.id = id++;
    g.mu = {r * std::cos(a), r * std::sin(a), 2.5 + 0.05 * (u(rng) - 0.5)};
    const double sc = 0.07 + 0.05 * u(rng);
    g.log_scale = Eigen::Vector3d::Constant(std::log(sc));
    g.set_opacity(0.9);
    const double level = u(rng) < 0.5 ? 0.2 + 0.2 * u(rng) : 0.7 + 0.25 * u(rng);
    g.color = Eigen::Vector3d(level, level * (0.7 + 0.3 * u(rng)), level * (0.5 + 0.5 * u(rng)));
    s.gaussians.push_back(g);
    s.motion.dynamic_ids.push_back(g.id);
  }
  s.dense_frames = 41;
  s.frame_interval_us = 10000;
  s.keyframe_stride = 5;
  s.event_substeps = 4;
  s.motion.amplitude = {0.35, 0.0, 0.0};
  s.motion.period_us = 400000.0;
  s.camera = {{0, Pose::from_camera_center(Eigen::Quaterniond::Identity(), {-0.3, 0.0, 0.0})},
              {400000, Pose::from_camera_center(Eigen::Quaterniond::Identity(), {0.3, 0.0, 0.0})}};
  return s;
}

}  // namespace evgs
