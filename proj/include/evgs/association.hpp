#pragma once

#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evgs/event_core.hpp"
#include "evgs/geometry.hpp"
#include "evgs/image.hpp"

namespace evgs {

struct UnprojectedEvent {
  std::size_t event_id = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector2i pixel = Eigen::Vector2i::Zero();
  Timestamp t = 0;
};

struct Binding {
  std::size_t event_id = 0;
  double weight = 0.0;
  Eigen::Vector2i pixel = Eigen::Vector2i::Zero();
  friend bool operator==(const Binding&, const Binding&) = default;
};

/// Per Gaussian (by position in the bound list), up to k weighted events.
struct BindingTable {
  std::vector<std::vector<Binding>> bindings;
  std::size_t bound_count() const;
  friend bool operator==(const BindingTable&, const BindingTable&) = default;
};

inline constexpr int kDefaultBindK = 3;
inline constexpr long kRebindPeriod = 500;
inline constexpr double kBackgroundAlpha = 0.5;

struct BindConfig {
  int k = kDefaultBindK;
  /// Bindings farther than this are dropped. Negative selects 5% of the Gaussian bounding-box
  /// diagonal; infinity disables the cutoff.
  double cutoff = -1.0;
  double epsilon = 1e-6;
};

/// Events with |t - t0| <= delta_t, order preserved.
EventStream filter_events_near(const EventStream& stream, Timestamp t0, Timestamp delta_t);

/// Lifts events through a rendered depth map. Pixels whose accumulated alpha falls below the
/// threshold are background and dropped. Event ids are positions in `events`.
std::vector<UnprojectedEvent> unproject_events(std::span<const Event> events, const Image& depth, const Image& alpha,
                                               const Pose& pose, const CameraIntrinsics& intr,
                                               double alpha_threshold = kBackgroundAlpha);

double default_cutoff(std::span<const Eigen::Vector3d> gaussians);

/// Exact k-nearest unprojected events per Gaussian over a uniform grid. Ties go to the lower
/// event id; weights are normalized inverse distances.
BindingTable bind_events(std::span<const Eigen::Vector3d> gaussians, std::span<const UnprojectedEvent> events,
                         const BindConfig& config = {});

/// Exhaustive O(N M) reference with the same tie and cutoff rules.
BindingTable bind_events_brute_force(std::span<const Eigen::Vector3d> gaussians, std::span<const UnprojectedEvent> events,
                                     const BindConfig& config = {});

bool should_rebind(long iteration, long period = kRebindPeriod);

/// `gaussian_id,event_id,weight` rows.
void write_bindings_csv(std::ostream& os, const BindingTable& table);

}  // namespace evgs
