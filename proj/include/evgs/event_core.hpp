#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evgs/image.hpp"

namespace evgs {

using Timestamp = std::int64_t;  // microseconds

struct Event {
  std::int32_t x = 0;
  std::int32_t y = 0;
  Timestamp t = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

struct TimeWindow {
  Timestamp t_start = 0;
  Timestamp t_end = 0;

  double duration() const { return static_cast<double>(t_end - t_start); }
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
  /// Maps a timestamp to [0, 1] across the window.
  double normalize(Timestamp t) const { return static_cast<double>(t - t_start) / duration(); }
};

/// Time-ordered events of one sensor. Immutable once built.
class EventStream {
 public:
  EventStream() = default;
  /// Validates ordering, pixel bounds, polarity values and the time range.
  EventStream(std::vector<Event> events, int width, int height, TimeWindow range);

  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  int width() const { return width_; }
  int height() const { return height_; }
  TimeWindow range() const { return range_; }

  /// Events with t_a <= t < t_b.
  std::span<const Event> slice(Timestamp t_a, Timestamp t_b) const;
  /// Events with t_a <= t <= t_b, repackaged as a stream over that window.
  EventStream window(Timestamp t_a, Timestamp t_b) const;

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  std::vector<Event> events_;
  int width_ = 0;
  int height_ = 0;
  TimeWindow range_;
};

struct SimulatorConfig {
  double contrast_threshold = 0.1;
  double intensity_floor = 1e-3;
  /// Standard deviation of per-crossing threshold noise; 0 disables it.
  double threshold_jitter = 0.0;
  std::uint64_t seed = 0;
};

/// Ideal brightness-change sensor over linearly interpolated log intensity. The per-pixel
/// reference level is continuous across the whole sequence.
EventStream simulate_events(std::span<const Image> frames, std::span<const Timestamp> timestamps,
                            const SimulatorConfig& config = {});

/// Per-pixel sum of p * C over events with t_a <= t < t_b.
Image accumulate_polarity(const EventStream& stream, Timestamp t_a, Timestamp t_b, double contrast_threshold);

class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(int bins, int width, int height, TimeWindow window);

  int bins() const { return bins_; }
  int width() const { return width_; }
  int height() const { return height_; }
  TimeWindow window() const { return window_; }

  double& at(int b, int y, int x) { return values_[(static_cast<std::size_t>(b) * height_ + y) * width_ + x]; }
  double at(int b, int y, int x) const { return values_[(static_cast<std::size_t>(b) * height_ + y) * width_ + x]; }
  const std::vector<double>& values() const { return values_; }
  double total() const;

 private:
  int bins_ = 0;
  int width_ = 0;
  int height_ = 0;
  TimeWindow window_;
  std::vector<double> values_;
};

inline constexpr int kDefaultVoxelBins = 5;

/// Temporal bilinear binning of polarities over events with t_start <= t <= t_end.
VoxelGrid voxelize(std::span<const Event> events, int width, int height, TimeWindow window,
                   int bins = kDefaultVoxelBins);
VoxelGrid voxelize(const EventStream& stream, TimeWindow window, int bins = kDefaultVoxelBins);

}  // namespace evgs
