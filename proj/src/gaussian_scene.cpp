#include "evgs/gaussian_scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "evgs/errors.hpp"

namespace evgs {

double Gaussian::opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }

void Gaussian::set_opacity(double probability) {
  const double p = std::clamp(probability, 0.0, 1.0);
  if (p <= 0.0) {
    opacity_logit = kMinOpacityLogit;
  } else if (p >= 1.0) {
    opacity_logit = kMaxOpacityLogit;
  } else {
    opacity_logit = std::clamp(std::log(p / (1.0 - p)), kMinOpacityLogit, kMaxOpacityLogit);
  }
}

Eigen::Matrix3d Gaussian::rotation_matrix() const {
  const Eigen::Vector4d q = rotation.normalized();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

Eigen::Matrix3d Gaussian::covariance() const {
  const Eigen::Matrix3d m = rotation_matrix() * log_scale.array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

void clamp_parameters(Gaussian& g) {
  g.opacity_logit = std::clamp(g.opacity_logit, kMinOpacityLogit, kMaxOpacityLogit);
  g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
  if (g.rotation.norm() < 1e-12) g.rotation = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
}

GaussianGrad& GaussianGrad::operator+=(const GaussianGrad& o) {
  mu += o.mu;
  log_scale += o.log_scale;
  rotation += o.rotation;
  opacity_logit += o.opacity_logit;
  color += o.color;
  return *this;
}

namespace {

Splat make_splat(const Gaussian& g, const Eigen::Matrix3d& w, const Pose& pose, const CameraIntrinsics& intr,
                 const RenderSettings& settings) {
  Splat s;
  s.p_cam = w * g.mu + pose.translation;
  const double z = s.p_cam.z();
  if (!(z > settings.near_plane)) return s;
  const double x = s.p_cam.x(), y = s.p_cam.y();
  s.mean = {intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy};
  s.jacobian << intr.fx / z, 0.0, -intr.fx * x / (z * z),
                0.0, intr.fy / z, -intr.fy * y / (z * z);
  s.cov_world = g.covariance();
  s.cov_cam = w * s.cov_world * w.transpose();
  Eigen::Matrix2d cov2 = s.jacobian * s.cov_cam * s.jacobian.transpose();
  cov2 = 0.5 * (cov2 + cov2.transpose());
  cov2.diagonal().array() += settings.covariance_floor;
  const double det = cov2.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) return s;
  s.conic << cov2(1, 1) / det, -cov2(0, 1) / det, -cov2(1, 0) / det, cov2(0, 0) / det;
  s.opacity = g.opacity();
  s.visible = std::isfinite(s.mean.x()) && std::isfinite(s.mean.y());
  return s;
}

double max_eigenvalue(const Eigen::Matrix2d& conic) {
  // Largest eigenvalue of the covariance = 1 / smallest eigenvalue of the conic.
  const double mid = 0.5 * (conic(0, 0) + conic(1, 1));
  const double det = conic(0, 0) * conic(1, 1) - conic(0, 1) * conic(1, 0);
  const double lmin = mid - std::sqrt(std::max(0.0, mid * mid - det));
  return lmin > 0.0 ? 1.0 / lmin : 0.0;
}

}  // namespace

RenderOutput render(std::span<const Gaussian> gaussians, const Pose& pose, const CameraIntrinsics& intr,
                    const Eigen::Vector3d& background, const RenderSettings& settings) {
  const int w = intr.width, h = intr.height;
  if (w <= 0 || h <= 0) throw Error(ErrorKind::Config, "render needs a positive image size");
  RenderOutput out;
  out.color = Image(w, h, 3);
  out.depth = Image(w, h, 1);
  out.alpha = Image(w, h, 1);
  out.background = background;
  out.splats.resize(gaussians.size());

  const Eigen::Matrix3d rot = pose.rotation_matrix();
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    out.splats[i] = make_splat(gaussians[i], rot, pose, intr, settings);
  }

  std::vector<std::uint32_t> order;
  order.reserve(gaussians.size());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    if (out.splats[i].visible) order.push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double za = out.splats[a].p_cam.z(), zb = out.splats[b].p_cam.z();
    if (za != zb) return za < zb;
    return gaussians[a].id < gaussians[b].id;
  });

  // Per-pixel candidate lists in depth order.
  const double cull = settings.cull_sigma * settings.cull_sigma;
  std::vector<std::vector<std::uint32_t>> candidates(static_cast<std::size_t>(w) * h);
  for (std::uint32_t gi : order) {
    const Splat& s = out.splats[gi];
    const double radius = settings.cull_sigma * std::sqrt(max_eigenvalue(s.conic));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.mean.x() - radius)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(s.mean.x() + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.mean.y() - radius)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.mean.y() + radius)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d d(x - s.mean.x(), y - s.mean.y());
        if (d.dot(s.conic * d) <= cull) candidates[static_cast<std::size_t>(y) * w + x].push_back(gi);
      }
    }
  }

  out.offsets.assign(static_cast<std::size_t>(w) * h + 1, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * w + x;
      out.offsets[pix] = out.records.size();
      double t = 1.0;
      Eigen::Vector3d c = Eigen::Vector3d::Zero();
      double depth = 0.0;
      for (std::uint32_t gi : candidates[pix]) {
        const Splat& s = out.splats[gi];
        const Eigen::Vector2d d(x - s.mean.x(), y - s.mean.y());
        const double falloff = std::exp(-0.5 * d.dot(s.conic * d));
        const double a = s.opacity * falloff;
        out.records.push_back({gi, a, falloff, t});
        c += gaussians[gi].color * (a * t);
        depth += s.p_cam.z() * a * t;
        t *= 1.0 - a;
        if (t < settings.min_transmittance) break;
      }
      c += background * t;
      const double acc = 1.0 - t;
      for (int ch = 0; ch < 3; ++ch) out.color(x, y, ch) = c[ch];
      out.alpha(x, y) = acc;
      out.depth(x, y) = acc > 1e-8 ? depth / acc : 0.0;
    }
  }
  out.offsets.back() = out.records.size();
  return out;
}

Eigen::Vector4d quaternion_backward(const Eigen::Vector4d& q_raw, const Eigen::Matrix3d& g) {
  const double n = q_raw.norm();
  const Eigen::Vector4d q = q_raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Vector4d dq;
  dq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                 w * g(2, 1) - 2.0 * x * g(2, 2));
  dq[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                 z * g(2, 1) - 2.0 * y * g(2, 2));
  dq[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                 y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return (dq - q * q.dot(dq)) / n;
}

RenderGrads render_backward(const RenderOutput& out, std::span<const Gaussian> gaussians, const Pose& pose,
                            const CameraIntrinsics& intr, const Image& grad_color) {
  if (!out.has_records()) throw Error(ErrorKind::State, "render output carries no contributor records");
  if (out.splats.size() != gaussians.size()) {
    throw Error(ErrorKind::State, "render output does not match the Gaussian list");
  }
  if (!grad_color.same_shape(out.color)) throw Error(ErrorKind::Shape, "color gradient has the wrong shape");
  const int w = out.color.width, h = out.color.height;

  RenderGrads grads;
  grads.gaussians.resize(gaussians.size());
  std::vector<Eigen::Vector2d> g_mean(gaussians.size(), Eigen::Vector2d::Zero());
  std::vector<Eigen::Matrix2d> g_conic(gaussians.size(), Eigen::Matrix2d::Zero());

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * w + x;
      const std::size_t begin = out.offsets[pix], end = out.offsets[pix + 1];
      const Eigen::Vector3d gc(grad_color(x, y, 0), grad_color(x, y, 1), grad_color(x, y, 2));
      // behind: color composited behind the current contributor, as seen from just behind it.
      Eigen::Vector3d behind = out.background;
      for (std::size_t r = end; r-- > begin;) {
        const Contributor& rec = out.records[r];
        const Gaussian& g = gaussians[rec.gaussian];
        const Splat& s = out.splats[rec.gaussian];
        GaussianGrad& gg = grads.gaussians[rec.gaussian];
        gg.color += gc * (rec.alpha * rec.transmittance);
        const double d_alpha = rec.transmittance * gc.dot(g.color - behind);
        behind = g.color * rec.alpha + behind * (1.0 - rec.alpha);

        gg.opacity_logit += d_alpha * rec.falloff * s.opacity * (1.0 - s.opacity);
        // alpha = o exp(-q/2), q = d^T Q d, d = pixel - mean.
        const double d_q = -0.5 * rec.alpha * d_alpha;
        const Eigen::Vector2d d(x - s.mean.x(), y - s.mean.y());
        g_mean[rec.gaussian] -= 2.0 * d_q * (s.conic * d);
        g_conic[rec.gaussian] += d_q * d * d.transpose();
      }
    }
  }

  const Eigen::Matrix3d rot = pose.rotation_matrix();
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Splat& s = out.splats[i];
    if (!s.visible) continue;
    const Gaussian& g = gaussians[i];
    GaussianGrad& gg = grads.gaussians[i];

    const Eigen::Matrix2d g_cov2 = -s.conic * g_conic[i] * s.conic;
    const Eigen::Matrix3d g_cov_cam = s.jacobian.transpose() * g_cov2 * s.jacobian;
    const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2 * s.jacobian * s.cov_cam;

    const double px = s.p_cam.x(), py = s.p_cam.y(), pz = s.p_cam.z();
    const double z2 = pz * pz, z3 = z2 * pz;
    Eigen::Vector3d g_p;
    g_p.x() = g_mean[i].x() * intr.fx / pz - g_jac(0, 2) * intr.fx / z2;
    g_p.y() = g_mean[i].y() * intr.fy / pz - g_jac(1, 2) * intr.fy / z2;
    g_p.z() = -g_mean[i].x() * intr.fx * px / z2 - g_mean[i].y() * intr.fy * py / z2 -
              g_jac(0, 0) * intr.fx / z2 + g_jac(0, 2) * 2.0 * intr.fx * px / z3 -
              g_jac(1, 1) * intr.fy / z2 + g_jac(1, 2) * 2.0 * intr.fy * py / z3;

    gg.mu += rot.transpose() * g_p;
    grads.pose.v += g_p;
    grads.pose.w += s.p_cam.cross(g_p);
    for (int k = 0; k < 3; ++k) {
      const Eigen::Matrix3d e = skew(Eigen::Vector3d::Unit(k));
      grads.pose.w[k] += 2.0 * (g_cov_cam.cwiseProduct(e * s.cov_cam)).sum();
    }

    const Eigen::Matrix3d g_cov_world = rot.transpose() * g_cov_cam * rot;
    const Eigen::Matrix3d r_g = g.rotation_matrix();
    const Eigen::Vector3d scale = g.log_scale.array().exp();
    const Eigen::Matrix3d m = r_g * scale.asDiagonal();
    const Eigen::Matrix3d g_m = 2.0 * g_cov_world * m;
    gg.log_scale += (g_m.cwiseProduct(r_g)).colwise().sum().transpose().cwiseProduct(scale);
    gg.rotation += quaternion_backward(g.rotation, g_m * scale.asDiagonal());
  }
  return grads;
}

Eigen::VectorXd positional_encoding(const Eigen::VectorXd& x, int frequencies) {
  return positional_encoding(Eigen::MatrixXd(x), frequencies).col(0);
}

Eigen::MatrixXd positional_encoding(const Eigen::MatrixXd& x, int frequencies) {
  if (frequencies < 0) throw Error(ErrorKind::Config, "frequency count must be non-negative");
  const Eigen::Index d = x.rows();
  Eigen::MatrixXd out(d * (2 * frequencies + 1), x.cols());
  out.topRows(d) = x;
  double f = std::numbers::pi;
  for (int l = 0; l < frequencies; ++l, f *= 2.0) {
    out.middleRows(d * (1 + 2 * l), d) = (f * x).array().sin();
    out.middleRows(d * (2 + 2 * l), d) = (f * x).array().cos();
  }
  return out;
}

}  // namespace evgs
