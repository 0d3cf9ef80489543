#include "evgs/pipeline.hpp"

#include <cmath>
#include <random>

#include "evgs/errors.hpp"
#include "evgs/metrics.hpp"

namespace evgs {

std::vector<FlowSample> translation_corpus(int width, int height, int count, const Eigen::Vector2d& axis, double speed,
                                           int bins, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.4, 1.0);
  std::vector<FlowSample> out;
  for (int i = 0; i < count; ++i) {
    const BlobTexture tex = random_texture(width, height, std::max(4, width * height / 256), seed + 7919 * i);
    const Eigen::Vector2d disp = axis.normalized() * speed * u(rng) * (i % 2 == 0 ? 1.0 : -1.0);
    const EventStream s = translating_stream(tex, width, height, disp, 100000);
    out.push_back(make_flow_sample(s, s.range(), bins));
  }
  return out;
}

std::vector<FlowSample> window_samples(const EventStream& events, std::span<const Timestamp> keyframe_times, int bins) {
  std::vector<FlowSample> out;
  for (std::size_t i = 0; i + 1 < keyframe_times.size(); ++i) {
    out.push_back(make_flow_sample(events, {keyframe_times[i], keyframe_times[i + 1]}, bins));
  }
  return out;
}

std::vector<FlowField> predict_flows(const TiledFlowPredictor& predictor, const nn::LoraAdapter* adapter,
                                     std::span<const FlowSample> samples) {
  std::vector<FlowField> out;
  for (const FlowSample& s : samples) out.push_back(predictor.predict(s.grid, adapter));
  return out;
}

double mean_epe(const FlowField& a, const FlowField& b) {
  if (a.width != b.width || a.height != b.height) throw Error(ErrorKind::Shape, "flow fields differ in size");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.u.size(); ++i) sum += std::hypot(a.u[i] - b.u[i], a.v[i] - b.v[i]);
  return a.u.empty() ? 0.0 : sum / static_cast<double>(a.u.size());
}

SceneModel init_model(const SceneSpec& scene, const DeformationConfig& deformation, const PoseNetConfig& posenet,
                      std::uint64_t seed) {
  return {scene.gaussians, DeformationField(deformation, seed), PoseNet(posenet, seed ^ 0x9e3779b97f4a7c15ULL)};
}

TrainingData make_training_data(const SceneSpec& scene, const SimulatedSequence& sequence,
                                std::vector<FlowField> window_flows) {
  std::vector<Keyframe> kfs;
  TrainingData data;
  for (int k : sequence.keyframes) {
    const Timestamp t = sequence.times[static_cast<std::size_t>(k)];
    kfs.push_back({t, scene.pose_at(t)});
    data.keyframe_images.push_back(sequence.frames[static_cast<std::size_t>(k)]);
  }
  data.intr = scene.intr;
  data.background = scene.background;
  data.trajectory = CameraTrajectory(std::move(kfs));
  data.events = sequence.events;
  data.window_flows = std::move(window_flows);
  return data;
}

RenderOutput render_model(const SceneModel& model, const CameraTrajectory& trajectory, const CameraIntrinsics& intr,
                          const Eigen::Vector3d& background, Timestamp t) {
  const auto deformed = model.deformation.deform(model.canonical, trajectory.normalize(t));
  return render(deformed, trajectory.pose_at(t, &model.posenet), intr, background);
}

HeldOutReport evaluate_held_out(const SceneModel& model, const CameraTrajectory& trajectory, const SceneSpec& scene,
                                const SimulatedSequence& sequence) {
  HeldOutReport report;
  std::vector<bool> is_key(sequence.frames.size(), false);
  for (int k : sequence.keyframes) is_key[static_cast<std::size_t>(k)] = true;
  const CameraIntrinsics& intr = scene.intr;

  double epe_sum = 0.0;
  for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
    if (is_key[i]) continue;
    const Timestamp t = sequence.times[i];
    if (t < trajectory.start() || t > trajectory.end()) continue;
    const Image img = render_model(model, trajectory, intr, scene.background, t).color;
    report.views.push_back(static_cast<int>(i));
    report.view_psnr.push_back(psnr(img, sequence.frames[i]));
    report.view_ssim.push_back(ssim(img, sequence.frames[i]));

    if (i + 1 >= sequence.frames.size() || sequence.times[i + 1] > trajectory.end()) continue;
    const Timestamp t1 = sequence.times[i + 1];
    const Pose pose = scene.pose_at(t);
    const auto gt0 = scene.gaussians_at(t), gt1 = scene.gaussians_at(t1);
    const auto est0 = model.deformation.deform(model.canonical, trajectory.normalize(t));
    const auto est1 = model.deformation.deform(model.canonical, trajectory.normalize(t1));
    const auto gt_flow = gaussian_scene_flow(gt0, gt1, pose, intr);
    const auto est_flow = gaussian_scene_flow(est0, est1, pose, intr);
    for (std::size_t g = 0; g < gt0.size(); ++g) {
      const Eigen::Vector3d p = pose.transform(gt0[g].mu);
      if (!(p.z() > 0.0)) continue;
      const Eigen::Vector2d px = project(gt0[g].mu, pose, intr).pixel;
      if (px.x() < 0 || px.y() < 0 || px.x() > intr.width - 1 || px.y() > intr.height - 1) continue;
      const Eigen::Vector2d err = est_flow[g] - gt_flow[g];
      // An estimate behind the camera counts as missing motion.
      epe_sum += std::isfinite(err.x()) ? err.norm() : gt_flow[g].norm();
      ++report.flow_samples;
    }
  }
  for (std::size_t v = 0; v < report.views.size(); ++v) {
    report.psnr += report.view_psnr[v] / static_cast<double>(report.views.size());
    report.ssim += report.view_ssim[v] / static_cast<double>(report.views.size());
  }
  if (report.flow_samples > 0) report.flow_epe = epe_sum / static_cast<double>(report.flow_samples);
  return report;
}

}  // namespace evgs
