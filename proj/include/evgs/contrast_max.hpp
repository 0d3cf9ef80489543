#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "evgs/event_core.hpp"
#include "evgs/image.hpp"

namespace evgs {

/// Dense optical flow in pixels per unit (normalized) window time.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(int w, int h) : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.0), v(u) {}
  static FlowField constant(int w, int h, const Eigen::Vector2d& flow);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  Eigen::Vector2d at(int x, int y) const { return {u[index(x, y)], v[index(x, y)]}; }
  void set(int x, int y, const Eigen::Vector2d& f) {
    u[index(x, y)] = f.x();
    v[index(x, y)] = f.y();
  }
  Eigen::Vector2d mean() const;
};

struct WarpedEvent {
  double x = 0.0;
  double y = 0.0;
  double weight = 1.0;
};

enum class VoteWeight { Unit, Polarity };

/// x' = x - (tau_k - tau_ref) * v(x_k), with tau the window-normalized time.
std::vector<WarpedEvent> warp_events(std::span<const Event> events, const FlowField& flow, TimeWindow window,
                                     Timestamp t_ref, VoteWeight weight = VoteWeight::Unit);
std::vector<WarpedEvent> warp_events(const EventStream& stream, const FlowField& flow, Timestamp t_ref,
                                     VoteWeight weight = VoteWeight::Unit);

/// Image of warped events: bilinear voting, out-of-bounds shares dropped.
using Iwe = Image;
Iwe build_iwe(std::span<const WarpedEvent> warped, int width, int height);

double variance_objective(const Image& iwe);
/// Mean squared gradient magnitude; central differences inside, one-sided on the border.
double gradient_magnitude_objective(const Image& iwe);
/// d(gradient_magnitude_objective)/d(iwe).
Image gradient_magnitude_objective_backward(const Image& iwe);

struct MultiscaleConfig {
  std::vector<int> scales{1, 2, 4};
  int tile_size = 16;
};

/// Average-pool by an integer factor; partial border blocks average the pixels they hold.
Image downsample(const Image& img, int factor);

double tile_multiscale_objective(const Image& iwe, const MultiscaleConfig& config = {});
Image tile_multiscale_objective_backward(const Image& iwe, const MultiscaleConfig& config = {});
double tile_multiscale_objective(const EventStream& stream, const FlowField& flow, Timestamp t_ref,
                                 const MultiscaleConfig& config = {});

struct GridSearchResult {
  Eigen::Vector2d flow = Eigen::Vector2d::Zero();
  double objective = 0.0;
};

/// Exhaustive search of constant flows in [-range, range]^2 maximizing the gradient-magnitude
/// objective of the full-image IWE. Ties keep the first candidate in u-major order.
GridSearchResult cm_grid_search(const EventStream& stream, Timestamp t_ref, double flow_range, double step);

}  // namespace evgs
