#include "evgs/contrast_max.hpp"

#include <algorithm>
#include <cmath>

#include "evgs/errors.hpp"

namespace evgs {

FlowField FlowField::constant(int w, int h, const Eigen::Vector2d& flow) {
  FlowField f(w, h);
  std::fill(f.u.begin(), f.u.end(), flow.x());
  std::fill(f.v.begin(), f.v.end(), flow.y());
  return f;
}

Eigen::Vector2d FlowField::mean() const {
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  if (u.empty()) return m;
  for (std::size_t i = 0; i < u.size(); ++i) m += Eigen::Vector2d(u[i], v[i]);
  return m / static_cast<double>(u.size());
}

std::vector<WarpedEvent> warp_events(std::span<const Event> events, const FlowField& flow, TimeWindow window,
                                     Timestamp t_ref, VoteWeight weight) {
  const double tau_ref = window.normalize(t_ref);
  std::vector<WarpedEvent> out;
  out.reserve(events.size());
  for (const Event& e : events) {
    const double dtau = window.normalize(e.t) - tau_ref;
    const Eigen::Vector2d f = flow.at(e.x, e.y);
    out.push_back({e.x - dtau * f.x(), e.y - dtau * f.y(), weight == VoteWeight::Unit ? 1.0 : double(e.p)});
  }
  return out;
}

std::vector<WarpedEvent> warp_events(const EventStream& stream, const FlowField& flow, Timestamp t_ref,
                                     VoteWeight weight) {
  return warp_events(stream.events(), flow, stream.range(), t_ref, weight);
}

Iwe build_iwe(std::span<const WarpedEvent> warped, int width, int height) {
  Image iwe(width, height, 1);
  for (const WarpedEvent& w : warped) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y)) continue;
    const double fx0 = std::floor(w.x);
    const double fy0 = std::floor(w.y);
    if (fx0 < -1.0 || fy0 < -1.0 || fx0 >= width || fy0 >= height) continue;
    const int x0 = static_cast<int>(fx0);
    const int y0 = static_cast<int>(fy0);
    const double ax = w.x - fx0;
    const double ay = w.y - fy0;
    const double shares[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int k = 0; k < 4; ++k) {
      if (iwe.contains(xs[k], ys[k])) iwe(xs[k], ys[k]) += w.weight * shares[k];
    }
  }
  return iwe;
}

double variance_objective(const Image& iwe) {
  const double n = static_cast<double>(iwe.size());
  double mean = 0.0;
  for (double v : iwe.data) mean += v;
  mean /= n;
  double acc = 0.0;
  for (double v : iwe.data) acc += (v - mean) * (v - mean);
  return acc / n;
}

namespace {

void require_gradient_size(const Image& img) {
  if (img.width < 3 || img.height < 3) throw Error(ErrorKind::Size, "gradient objective needs at least 3x3 pixels");
}

// Difference stencil along one axis: returns (lo, hi, scale) so that d = scale * (I[hi] - I[lo]).
struct Stencil {
  int lo;
  int hi;
  double scale;
};

Stencil stencil(int i, int n) {
  if (i == 0) return {0, 1, 1.0};
  if (i == n - 1) return {n - 2, n - 1, 1.0};
  return {i - 1, i + 1, 0.5};
}

}  // namespace

double gradient_magnitude_objective(const Image& iwe) {
  require_gradient_size(iwe);
  double acc = 0.0;
  for (int y = 0; y < iwe.height; ++y) {
    const Stencil sy = stencil(y, iwe.height);
    for (int x = 0; x < iwe.width; ++x) {
      const Stencil sx = stencil(x, iwe.width);
      const double gx = sx.scale * (iwe(sx.hi, y) - iwe(sx.lo, y));
      const double gy = sy.scale * (iwe(x, sy.hi) - iwe(x, sy.lo));
      acc += gx * gx + gy * gy;
    }
  }
  return acc / static_cast<double>(iwe.size());
}

Image gradient_magnitude_objective_backward(const Image& iwe) {
  require_gradient_size(iwe);
  Image grad(iwe.width, iwe.height, 1);
  const double k = 2.0 / static_cast<double>(iwe.size());
  for (int y = 0; y < iwe.height; ++y) {
    const Stencil sy = stencil(y, iwe.height);
    for (int x = 0; x < iwe.width; ++x) {
      const Stencil sx = stencil(x, iwe.width);
      const double gx = sx.scale * (iwe(sx.hi, y) - iwe(sx.lo, y));
      const double gy = sy.scale * (iwe(x, sy.hi) - iwe(x, sy.lo));
      grad(sx.hi, y) += k * gx * sx.scale;
      grad(sx.lo, y) -= k * gx * sx.scale;
      grad(x, sy.hi) += k * gy * sy.scale;
      grad(x, sy.lo) -= k * gy * sy.scale;
    }
  }
  return grad;
}

Image downsample(const Image& img, int factor) {
  if (factor < 1) throw Error(ErrorKind::Config, "downsample factor must be >= 1");
  if (factor == 1) return img;
  const int w = (img.width + factor - 1) / factor;
  const int h = (img.height + factor - 1) / factor;
  Image out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      int count = 0;
      for (int yy = y * factor; yy < std::min(img.height, (y + 1) * factor); ++yy) {
        for (int xx = x * factor; xx < std::min(img.width, (x + 1) * factor); ++xx) {
          acc += img(xx, yy);
          ++count;
        }
      }
      out(x, y) = acc / count;
    }
  }
  return out;
}

namespace {

Image upsample_adjoint(const Image& grad_small, int factor, int width, int height) {
  if (factor == 1) return grad_small;
  Image out(width, height, 1);
  for (int y = 0; y < grad_small.height; ++y) {
    for (int x = 0; x < grad_small.width; ++x) {
      const int x1 = std::min(width, (x + 1) * factor);
      const int y1 = std::min(height, (y + 1) * factor);
      const int count = (x1 - x * factor) * (y1 - y * factor);
      for (int yy = y * factor; yy < y1; ++yy) {
        for (int xx = x * factor; xx < x1; ++xx) out(xx, yy) = grad_small(x, y) / count;
      }
    }
  }
  return out;
}

struct TileLayout {
  int tile_w;
  int tile_h;
  int nx;
  int ny;
};

TileLayout tile_layout(const Image& img, int tile_size) {
  TileLayout t;
  t.tile_w = std::min(tile_size, img.width);
  t.tile_h = std::min(tile_size, img.height);
  t.nx = (img.width + t.tile_w - 1) / t.tile_w;
  t.ny = (img.height + t.tile_h - 1) / t.tile_h;
  return t;
}

Image extract_tile(const Image& img, const TileLayout& t, int tx, int ty) {
  Image tile(t.tile_w, t.tile_h, 1);
  for (int y = 0; y < t.tile_h; ++y) {
    for (int x = 0; x < t.tile_w; ++x) {
      const int sx = tx * t.tile_w + x;
      const int sy = ty * t.tile_h + y;
      if (img.contains(sx, sy)) tile(x, y) = img(sx, sy);
    }
  }
  return tile;
}

void validate(const MultiscaleConfig& config) {
  if (config.scales.empty()) throw Error(ErrorKind::Config, "multiscale objective needs at least one scale");
  if (config.tile_size < 3) throw Error(ErrorKind::Config, "tile size must be at least 3");
}

}  // namespace

double tile_multiscale_objective(const Image& iwe, const MultiscaleConfig& config) {
  validate(config);
  double total = 0.0;
  for (int s : config.scales) {
    const Image level = downsample(iwe, s);
    const TileLayout t = tile_layout(level, config.tile_size);
    double acc = 0.0;
    for (int ty = 0; ty < t.ny; ++ty) {
      for (int tx = 0; tx < t.nx; ++tx) acc += gradient_magnitude_objective(extract_tile(level, t, tx, ty));
    }
    total += acc / (t.nx * t.ny);
  }
  return total / static_cast<double>(config.scales.size());
}

Image tile_multiscale_objective_backward(const Image& iwe, const MultiscaleConfig& config) {
  validate(config);
  Image grad(iwe.width, iwe.height, 1);
  const double scale_weight = 1.0 / static_cast<double>(config.scales.size());
  for (int s : config.scales) {
    const Image level = downsample(iwe, s);
    const TileLayout t = tile_layout(level, config.tile_size);
    const double tile_weight = scale_weight / (t.nx * t.ny);
    Image level_grad(level.width, level.height, 1);
    for (int ty = 0; ty < t.ny; ++ty) {
      for (int tx = 0; tx < t.nx; ++tx) {
        const Image g = gradient_magnitude_objective_backward(extract_tile(level, t, tx, ty));
        for (int y = 0; y < t.tile_h; ++y) {
          for (int x = 0; x < t.tile_w; ++x) {
            const int sx = tx * t.tile_w + x;
            const int sy = ty * t.tile_h + y;
            if (level.contains(sx, sy)) level_grad(sx, sy) += tile_weight * g(x, y);
          }
        }
      }
    }
    const Image full = upsample_adjoint(level_grad, s, iwe.width, iwe.height);
    for (std::size_t i = 0; i < grad.size(); ++i) grad.data[i] += full.data[i];
  }
  return grad;
}

double tile_multiscale_objective(const EventStream& stream, const FlowField& flow, Timestamp t_ref,
                                 const MultiscaleConfig& config) {
  const auto warped = warp_events(stream, flow, t_ref);
  return tile_multiscale_objective(build_iwe(warped, stream.width(), stream.height()), config);
}

GridSearchResult cm_grid_search(const EventStream& stream, Timestamp t_ref, double flow_range, double step) {
  if (!(step > 0.0) || !(flow_range >= 0.0)) throw Error(ErrorKind::Config, "grid search needs step > 0 and range >= 0");
  const int n = static_cast<int>(std::floor(flow_range / step + 1e-9));
  const TimeWindow window = stream.range();
  const double tau_ref = window.normalize(t_ref);
  std::vector<double> dtau;
  dtau.reserve(stream.size());
  for (const Event& e : stream.events()) dtau.push_back(window.normalize(e.t) - tau_ref);

  GridSearchResult best;
  bool first = true;
  std::vector<WarpedEvent> warped(stream.size());
  for (int iu = -n; iu <= n; ++iu) {
    for (int iv = -n; iv <= n; ++iv) {
      const Eigen::Vector2d f(iu * step, iv * step);
      for (std::size_t k = 0; k < stream.size(); ++k) {
        const Event& e = stream.events()[k];
        warped[k] = {e.x - dtau[k] * f.x(), e.y - dtau[k] * f.y(), 1.0};
      }
      const double obj = gradient_magnitude_objective(build_iwe(warped, stream.width(), stream.height()));
      if (first || obj > best.objective) {
        best = {f, obj};
        first = false;
      }
    }
  }
  return best;
}

}  // namespace evgs
