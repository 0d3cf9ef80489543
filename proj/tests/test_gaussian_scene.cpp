#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "evgs/errors.hpp"
#include "evgs/gaussian_scene.hpp"
#include "render_oracle.hpp"

using namespace evgs;
using namespace evgs::testing;

namespace {

Gaussian isotropic(std::int64_t id, const Eigen::Vector3d& mu, double scale, double opacity,
                   const Eigen::Vector3d& color) {
  Gaussian g;
  g.id = id;
  g.mu = mu;
  g.log_scale.setConstant(std::log(scale));
  g.set_opacity(opacity);
  g.color = color;
  return g;
}

}  // namespace

TEST(Render, OpaqueCenterShowsGaussianColor) {
  const CameraIntrinsics intr = small_camera(15);
  std::vector<Gaussian> gs{isotropic(0, {0, 0, 2}, 0.1, 1.0, {0.2, 0.7, 0.4})};
  const RenderOutput out = render(gs, Pose::identity(), intr, {1, 1, 1});
  EXPECT_EQ(out.color(7, 7, 0), 0.2);
  EXPECT_EQ(out.color(7, 7, 1), 0.7);
  EXPECT_EQ(out.color(7, 7, 2), 0.4);
  EXPECT_DOUBLE_EQ(out.depth(7, 7), 2.0);
}

TEST(Render, TwoHalfTransparentLayers) {
  const CameraIntrinsics intr = small_camera(15);
  const Eigen::Vector3d front(1, 0, 0), back(0, 0, 1);
  std::vector<Gaussian> gs{isotropic(1, {0, 0, 2}, 0.2, 0.5, back), isotropic(0, {0, 0, 1}, 0.1, 0.5, front)};
  const RenderOutput out = render(gs, Pose::identity(), intr, {0, 0, 0});
  const Eigen::Vector3d expected = 0.5 * front + 0.25 * back;
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.color(7, 7, c), expected[c], 1e-15);
  EXPECT_NEAR(out.alpha(7, 7), 0.75, 1e-15);
  EXPECT_NEAR(out.depth(7, 7), (0.5 * 1.0 + 0.25 * 2.0) / 0.75, 1e-12);
}

TEST(Render, EmptySceneIsBackground) {
  const RenderOutput out = render({}, Pose::identity(), small_camera(8), {0.1, 0.2, 0.3});
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      EXPECT_EQ(out.color(x, y, 2), 0.3);
      EXPECT_EQ(out.depth(x, y), 0.0);
      EXPECT_EQ(out.alpha(x, y), 0.0);
    }
  }
}

TEST(Render, BlendWeightsAndTransmittanceInvariants) {
  std::mt19937_64 rng(2);
  const auto gs = random_gaussians(rng, 30);
  const RenderOutput out = render(gs, Pose::identity(), small_camera(16), {0, 0, 0});
  for (std::size_t p = 0; p + 1 < out.offsets.size(); ++p) {
    double sum = 0.0, prev_t = 1.0;
    for (std::size_t r = out.offsets[p]; r < out.offsets[p + 1]; ++r) {
      const Contributor& c = out.records[r];
      EXPECT_GE(c.alpha, 0.0);
      EXPECT_LE(c.transmittance, prev_t);
      prev_t = c.transmittance;
      sum += c.alpha * c.transmittance;
    }
    EXPECT_LE(sum, 1.0 + 1e-12);
  }
  for (double v : out.color.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Render, PermutationInvariant) {
  std::mt19937_64 rng(3);
  auto gs = random_gaussians(rng, 25);
  gs[4].mu.z() = gs[7].mu.z();  // equal depth: ids decide
  const RenderOutput a = render(gs, Pose::identity(), small_camera(16), {0.5, 0.5, 0.5});
  std::shuffle(gs.begin(), gs.end(), rng);
  const RenderOutput b = render(gs, Pose::identity(), small_camera(16), {0.5, 0.5, 0.5});
  EXPECT_EQ(a.color.data, b.color.data);
  EXPECT_EQ(a.depth.data, b.depth.data);
}

TEST(Render, BehindCameraGaussianIgnored) {
  std::vector<Gaussian> gs{isotropic(0, {0, 0, -2}, 0.3, 1.0, {1, 1, 1})};
  const RenderOutput out = render(gs, Pose::identity(), small_camera(8), {0, 0, 0});
  for (double v : out.color.data) EXPECT_EQ(v, 0.0);
}

TEST(RenderBackward, FiniteDifferenceAllParameters) {
  std::mt19937_64 rng(11);
  auto gs = random_gaussians(rng, 10, 0.3);
  const CameraIntrinsics intr = small_camera(16);
  Pose pose = Pose::from_camera_center(Eigen::Quaterniond(Eigen::AngleAxisd(0.05, Eigen::Vector3d::UnitY())),
                                       {0.02, -0.03, 0.05});
  Image target(16, 16, 3);
  std::uniform_real_distribution<double> c(0.0, 1.0);
  for (double& v : target.data) v = c(rng);
  const Eigen::Vector3d bg(0.1, 0.2, 0.3);

  const RenderOutput out = render(gs, pose, intr, bg);
  Image g_img;
  l1_loss(out.color, target, &g_img);
  const RenderGrads grads = render_backward(out, gs, pose, intr, g_img);
  auto loss = [&] { return l1_loss(render(gs, pose, intr, bg).color, target); };

  FdStats mu, opacity, color, shape;
  const double h = 1e-5;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      compare(mu, grads.gaussians[i].mu[k], central(&gs[i].mu[k], h, loss));
      compare(color, grads.gaussians[i].color[k], central(&gs[i].color[k], h, loss));
      compare(shape, grads.gaussians[i].log_scale[k], central(&gs[i].log_scale[k], h, loss));
    }
    for (int k = 0; k < 4; ++k) compare(shape, grads.gaussians[i].rotation[k], central(&gs[i].rotation[k], h, loss));
    compare(opacity, grads.gaussians[i].opacity_logit, central(&gs[i].opacity_logit, h, loss));
  }
  EXPECT_LE(mu.max_relative, 1e-4);
  EXPECT_LE(opacity.max_relative, 1e-4);
  EXPECT_LE(color.max_relative, 1e-4);
  EXPECT_LE(shape.max_relative, 1e-4);

  // Pose: left perturbation X_c -> Exp(w) X_c + v.
  FdStats pose_stats;
  for (int k = 0; k < 6; ++k) {
    auto perturbed = [&](double e) {
      Pose d;
      if (k < 3) {
        d.translation[k] = e;
      } else {
        d.rotation = so3_exp(Eigen::Vector3d::Unit(k - 3) * e);
      }
      return l1_loss(render(gs, d * pose, intr, bg).color, target);
    };
    const double numeric = (perturbed(h) - perturbed(-h)) / (2 * h);
    compare(pose_stats, k < 3 ? grads.pose.v[k] : grads.pose.w[k - 3], numeric);
  }
  EXPECT_LE(pose_stats.max_relative, 1e-4);
}

TEST(RenderBackward, ZeroOpacityHasZeroGradients) {
  std::mt19937_64 rng(5);
  auto gs = random_gaussians(rng, 5);
  gs[2].set_opacity(0.0);
  const CameraIntrinsics intr = small_camera(16);
  const RenderOutput out = render(gs, Pose::identity(), intr, {0, 0, 0});
  const RenderGrads g = render_backward(out, gs, Pose::identity(), intr, Image(16, 16, 3, 1.0));
  EXPECT_EQ(g.gaussians[2].mu.norm(), 0.0);
  EXPECT_EQ(g.gaussians[2].color.norm(), 0.0);
  EXPECT_EQ(g.gaussians[2].log_scale.norm(), 0.0);
  EXPECT_EQ(g.gaussians[2].opacity_logit, 0.0);
}

TEST(RenderBackward, OccludedColorGradientVanishes) {
  const Gaussian wall = isotropic(0, {0, 0, 1}, 0.5, 1.0, {1, 0, 0});
  const Gaussian hidden = isotropic(1, {0, 0, 2}, 0.05, 0.9, {0, 1, 0});
  const CameraIntrinsics intr = small_camera(15);
  auto color_grad = [&](std::vector<Gaussian> gs) {
    const RenderOutput out = render(gs, Pose::identity(), intr, {0, 0, 0});
    return render_backward(out, gs, Pose::identity(), intr, Image(15, 15, 3, 1.0)).gaussians.back().color.norm();
  };
  const double alone = color_grad({hidden});
  const double occluded = color_grad({wall, hidden});
  EXPECT_GT(alone, 0.1);
  EXPECT_LT(occluded, 0.01 * alone);
}

TEST(RenderBackward, MissingRecordsIsStateError) {
  RenderOutput out;
  out.color = Image(4, 4, 3);
  try {
    render_backward(out, {}, Pose::identity(), small_camera(4), Image(4, 4, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::State);
  }
}

TEST(PositionalEncoding, Examples) {
  Eigen::VectorXd x(2);
  x << 0.3, -0.7;
  EXPECT_EQ(positional_encoding(x, 0), x);
  const Eigen::VectorXd z = positional_encoding(Eigen::VectorXd(Eigen::VectorXd::Zero(3)), 4);
  ASSERT_EQ(z.size(), encoded_size(3, 4));
  EXPECT_EQ(z.size(), 27);
  for (int l = 0; l < 4; ++l) {
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(z[3 * (1 + 2 * l) + k], 0.0);
      EXPECT_EQ(z[3 * (2 + 2 * l) + k], 1.0);
    }
  }
  const Eigen::VectorXd e = positional_encoding(x, 2);
  EXPECT_NEAR(e[2 * 2 + 1], std::cos(M_PI * -0.7), 1e-15);
  EXPECT_NEAR(e[2 * 3 + 0], std::sin(2.0 * M_PI * 0.3), 1e-15);
}

TEST(Gaussian, OpacityRoundTripAndClamp) {
  Gaussian g;
  g.set_opacity(0.25);
  EXPECT_NEAR(g.opacity(), 0.25, 1e-15);
  g.set_opacity(1.0);
  EXPECT_EQ(g.opacity(), 1.0);
  g.set_opacity(0.0);
  EXPECT_EQ(g.opacity(), 0.0);
  g.color = {1.5, -0.2, 0.5};
  g.opacity_logit = 1e4;
  clamp_parameters(g);
  EXPECT_EQ(g.color, Eigen::Vector3d(1.0, 0.0, 0.5));
  EXPECT_EQ(g.opacity_logit, kMaxOpacityLogit);
}

TEST(Gaussian, CovarianceIsSymmetricPsd) {
  std::mt19937_64 rng(8);
  for (const Gaussian& g : random_gaussians(rng, 20)) {
    const Eigen::Matrix3d c = g.covariance();
    EXPECT_LE((c - c.transpose()).norm(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(c);
    EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
  }
}
