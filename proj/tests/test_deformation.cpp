#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "evgs/deformation.hpp"
#include "evgs/errors.hpp"
#include "render_oracle.hpp"

using namespace evgs;
using namespace evgs::testing;

namespace {

DeformationConfig small_field() {
  DeformationConfig c;
  c.position_frequencies = 3;
  c.time_frequencies = 2;
  c.depth = 4;
  c.width = 16;
  c.skip_layer = 2;
  return c;
}

void randomize(nn::Mlp& mlp, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (nn::Param* p : mlp.parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value(i) += n(rng);
  }
}

std::vector<Keyframe> three_keyframes() {
  return {{0, Pose::identity()},
          {100000, Pose::from_camera_center(Eigen::Quaterniond(Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitY())),
                                            {0.1, 0.0, 0.05})},
          {300000, Pose::from_camera_center(Eigen::Quaterniond(Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitX())),
                                            {0.2, 0.1, 0.0})}};
}

}  // namespace

TEST(Deform, ZeroHeadsAreIdentity) {
  std::mt19937_64 rng(1);
  const auto gs = random_gaussians(rng, 12);
  const DeformationField field(small_field(), 3);
  for (double t : {0.0, 0.37, 1.0}) {
    const auto out = field.deform(gs, t);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      EXPECT_EQ(out[i].mu, gs[i].mu);
      EXPECT_EQ(out[i].log_scale, gs[i].log_scale);
      EXPECT_EQ(out[i].rotation, gs[i].rotation);
      EXPECT_EQ(out[i].opacity_logit, gs[i].opacity_logit);
      EXPECT_EQ(out[i].color, gs[i].color);
    }
  }
}

TEST(Deform, ConstantOffsetShiftsEveryMean) {
  std::mt19937_64 rng(2);
  const auto gs = random_gaussians(rng, 6);
  DeformationField field(small_field(), 3);
  auto& out_layer = field.network().layer(field.network().num_layers() - 1);
  out_layer.bias.value(0, 0) = 1.0;
  const auto out = field.deform(gs, 0.5);
  for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_EQ(out[i].mu, gs[i].mu + Eigen::Vector3d(1, 0, 0));
}

TEST(Deform, TimeOutsideUnitIntervalThrows) {
  const DeformationField field(small_field(), 3);
  EXPECT_THROW(field.deform({}, 1.5), Error);
}

TEST(Deform, DefaultShapeMatchesReference) {
  const DeformationField field(DeformationConfig{}, 1);
  EXPECT_EQ(field.network().num_layers(), 9u);
  EXPECT_EQ(field.network().layer_input_size(0), 63 + 13);
  EXPECT_EQ(field.network().layer_input_size(4), 256 + 76);
  EXPECT_EQ(field.network().layer_output_size(8), kDeformOutputs);
}

TEST(Deform, ParameterGradientsMatchFiniteDifference) {
  std::mt19937_64 rng(4);
  const auto gs = random_gaussians(rng, 5);
  DeformationField field(small_field(), 5);
  randomize(field.network(), 6, 0.2);
  // Loss = sum of random projections of every deformed parameter.
  std::normal_distribution<double> n;
  std::vector<GaussianGrad> w(gs.size());
  for (auto& g : w) {
    g.mu = {n(rng), n(rng), n(rng)};
    g.log_scale = {n(rng), n(rng), n(rng)};
    g.rotation = {n(rng), n(rng), n(rng), n(rng)};
  }
  auto loss = [&] {
    const auto out = field.deform(gs, 0.4);
    double acc = 0.0;
    for (std::size_t i = 0; i < gs.size(); ++i) {
      acc += w[i].mu.dot(out[i].mu) + w[i].log_scale.dot(out[i].log_scale) + w[i].rotation.dot(out[i].rotation);
    }
    return acc;
  };
  DeformationField::Trace trace;
  field.deform(gs, 0.4, &trace);
  for (auto* p : field.network().parameters()) p->zero_grad();
  field.backward(trace, gs, w);
  FdStats stats;
  for (auto* p : field.network().parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) compare(stats, p->grad(i), central(&p->value(i), 1e-6, loss));
  }
  EXPECT_GT(stats.checked, 500);
  EXPECT_LE(stats.max_relative, 1e-4);

  // Canonical rotation and scale.
  auto canon = gs;
  auto loss_c = [&] {
    const auto out = field.deform(canon, 0.4);
    double acc = 0.0;
    for (std::size_t i = 0; i < canon.size(); ++i) {
      acc += w[i].mu.dot(out[i].mu) + w[i].log_scale.dot(out[i].log_scale) + w[i].rotation.dot(out[i].rotation);
    }
    return acc;
  };
  const auto g_canon = field.backward(trace, gs, w, false);
  FdStats cs;
  for (std::size_t i = 0; i < canon.size(); ++i) {
    for (int k = 0; k < 4; ++k) compare(cs, g_canon[i].rotation[k], central(&canon[i].rotation[k], 1e-6, loss_c));
    for (int k = 0; k < 3; ++k) compare(cs, g_canon[i].log_scale[k], central(&canon[i].log_scale[k], 1e-6, loss_c));
  }
  EXPECT_LE(cs.max_relative, 1e-4);
}

TEST(Quaternion, BackwardMatchesFiniteDifference) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
  Eigen::Matrix3d g;
  for (int i = 0; i < 9; ++i) g(i) = n(rng);
  const Eigen::Vector4d analytic = quaternion_backward(q, g);
  for (int k = 0; k < 4; ++k) {
    auto f = [&] {
      Gaussian gg;
      gg.rotation = q;
      return gg.rotation_matrix().cwiseProduct(g).sum();
    };
    EXPECT_NEAR(analytic[k], central(&q[k], 1e-6, f), 1e-8);
  }
}

TEST(PoseAt, ZeroCorrectionIsInterpolation) {
  const CameraTrajectory traj(three_keyframes());
  const PoseNet net(PoseNetConfig{}, 1);
  const Pose a = traj.pose_at(40000, &net), b = traj.pose_at(40000);
  const Pose c = interpolate(traj.keyframes()[0].pose, traj.keyframes()[1].pose, 0.4);
  EXPECT_EQ(a.rotation.coeffs(), b.rotation.coeffs());
  EXPECT_EQ(a.translation, b.translation);
  EXPECT_LE((a.translation - c.translation).norm(), 1e-15);
}

TEST(PoseAt, KeyframeTimesReturnKeyframes) {
  const CameraTrajectory traj(three_keyframes());
  PoseNet net(PoseNetConfig{}, 1);
  randomize(net.network(), 2, 0.5);
  for (const Keyframe& k : traj.keyframes()) {
    const Pose p = traj.pose_at(k.t, &net);
    EXPECT_EQ(p.rotation.coeffs(), k.pose.rotation.coeffs());
    EXPECT_EQ(p.translation, k.pose.translation);
  }
}

TEST(PoseAt, OutOfRangeIsExtrapolationError) {
  const CameraTrajectory traj(three_keyframes());
  try {
    traj.pose_at(300001);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Extrapolation);
  }
  EXPECT_THROW(traj.pose_at(-1), Error);
}

TEST(PoseAt, RotationCorrectionMovesProjectedPoint) {
  // Static camera; a +w_z correction rotates the camera, so points seen by it turn by -s w_z.
  const CameraTrajectory traj({{0, Pose::identity()}, {200000, Pose::identity()}});
  PoseNet net(PoseNetConfig{}, 1);
  auto& out = net.network().layer(net.network().num_layers() - 1);
  out.bias.value(5, 0) = 1.0;
  const Pose p = traj.pose_at(100000, &net);
  const double s = 0.1 * 0.1 / 0.2;
  const CameraIntrinsics intr{100, 100, 50, 50, 101, 101};
  const Eigen::Vector2d px = project({0.5, 0.0, 2.0}, p, intr).pixel;
  const Eigen::Vector3d expect = Eigen::AngleAxisd(-s, Eigen::Vector3d::UnitZ()) * Eigen::Vector3d(0.5, 0.0, 2.0);
  EXPECT_NEAR(px.x(), 100 * expect.x() / 2.0 + 50, 1e-9);
  EXPECT_NEAR(px.y(), 100 * expect.y() / 2.0 + 50, 1e-9);
  EXPECT_LT(px.y(), 50.0);
}

TEST(PoseAt, PoseNetGradientMatchesFiniteDifference) {
  const CameraTrajectory traj(three_keyframes());
  PoseNet net(PoseNetConfig{2, 8}, 3);
  randomize(net.network(), 4, 0.5);
  const Eigen::Vector3d wp(0.3, -0.4, 1.2), wq(0.7, 0.1, -0.5);
  const Eigen::Vector3d point(0.2, -0.1, 2.0);
  const Timestamp t = 170000;
  // Loss = linear functional of a transformed point: gradient under left perturbation is
  // g_v = wp, g_w = p_c x wp.
  auto loss = [&] { return wp.dot(traj.pose_at(t, &net).transform(point)) + wq.dot(traj.pose_at(t, &net).translation); };
  const Pose pose = traj.pose_at(t, &net);
  const Eigen::Vector3d pc = pose.transform(point);
  PoseGrad g;
  g.v = wp + wq;
  g.w = pc.cross(wp) + pose.translation.cross(wq);
  for (auto* p : net.network().parameters()) p->zero_grad();
  traj.pose_backward(t, g, net);
  FdStats stats;
  for (auto* p : net.network().parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) compare(stats, p->grad(i), central(&p->value(i), 1e-6, loss));
  }
  EXPECT_LE(stats.max_relative, 1e-4);
}

TEST(Trajectory, RejectsBadKeyframes) {
  EXPECT_THROW(CameraTrajectory({{0, Pose::identity()}}), Error);
  EXPECT_THROW(CameraTrajectory({{5, Pose::identity()}, {5, Pose::identity()}}), Error);
}

TEST(Trajectory, VelocityAddsCorrection) {
  const CameraTrajectory traj({{0, Pose::identity()},
                               {100000, Pose::from_camera_center(Eigen::Quaterniond::Identity(), {0, 0, 0.1})}});
  EXPECT_LE((traj.velocity_at(50000).v_c - Eigen::Vector3d(0, 0, 1)).norm(), 1e-12);
  PoseNet net(PoseNetConfig{}, 1);
  net.network().layer(1).bias.value(0, 0) = 0.5;
  EXPECT_LE((traj.velocity_at(50000, &net).v_c - Eigen::Vector3d(0.5, 0, 1)).norm(), 1e-12);
}
