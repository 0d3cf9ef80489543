#include "evgs/event_core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "evgs/errors.hpp"

namespace evgs {

EventStream::EventStream(std::vector<Event> events, int width, int height, TimeWindow range)
    : events_(std::move(events)), width_(width), height_(height), range_(range) {
  if (width <= 0 || height <= 0) throw Error(ErrorKind::Config, "event stream needs a positive sensor size");
  if (range.t_end < range.t_start) throw Error(ErrorKind::Ordering, "event stream time range is reversed");
  Timestamp prev = range.t_start;
  for (const Event& e : events_) {
    if (e.x < 0 || e.y < 0 || e.x >= width || e.y >= height) {
      throw Error(ErrorKind::Format, "event outside the sensor at (" + std::to_string(e.x) + "," +
                                         std::to_string(e.y) + ")");
    }
    if (e.p != 1 && e.p != -1) throw Error(ErrorKind::Format, "event polarity must be +1 or -1");
    if (e.t < prev) throw Error(ErrorKind::Ordering, "event timestamps must be non-decreasing");
    if (e.t > range.t_end) throw Error(ErrorKind::Ordering, "event after the stream time range");
    prev = e.t;
  }
}

std::span<const Event> EventStream::slice(Timestamp t_a, Timestamp t_b) const {
  auto lo = std::lower_bound(events_.begin(), events_.end(), t_a,
                             [](const Event& e, Timestamp t) { return e.t < t; });
  auto hi = std::lower_bound(lo, events_.end(), t_b, [](const Event& e, Timestamp t) { return e.t < t; });
  if (hi < lo) hi = lo;
  return {lo, hi};
}

EventStream EventStream::window(Timestamp t_a, Timestamp t_b) const {
  if (t_b < t_a) throw Error(ErrorKind::InvalidInterval, "window end precedes its start");
  auto lo = std::lower_bound(events_.begin(), events_.end(), t_a,
                             [](const Event& e, Timestamp t) { return e.t < t; });
  auto hi = std::upper_bound(lo, events_.end(), t_b, [](Timestamp t, const Event& e) { return t < e.t; });
  return EventStream(std::vector<Event>(lo, hi), width_, height_, TimeWindow{t_a, t_b});
}

EventStream simulate_events(std::span<const Image> frames, std::span<const Timestamp> timestamps,
                            const SimulatorConfig& config) {
  if (frames.size() < 2) throw Error(ErrorKind::InsufficientInput, "event simulation needs at least 2 frames");
  if (frames.size() != timestamps.size()) {
    throw Error(ErrorKind::InsufficientInput, "frame and timestamp counts differ");
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] <= timestamps[i - 1]) {
      throw Error(ErrorKind::Ordering, "frame timestamps must be strictly increasing");
    }
  }
  const int width = frames[0].width;
  const int height = frames[0].height;
  for (const Image& f : frames) {
    if (f.width != width || f.height != height || f.channels != 1) {
      throw Error(ErrorKind::Shape, "simulation frames must be single-channel and equally sized");
    }
  }
  if (!(config.contrast_threshold > 0.0)) throw Error(ErrorKind::Config, "contrast threshold must be positive");

  constexpr double kTolerance = 1e-9;
  const double c = config.contrast_threshold;
  auto log_of = [&](double v) { return std::log(std::max(v, config.intensity_floor)); };

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> jitter(0.0, config.threshold_jitter > 0.0 ? config.threshold_jitter : 1.0);
  auto threshold = [&]() {
    if (config.threshold_jitter <= 0.0) return c;
    return std::max(0.01, c + jitter(rng));
  };

  const std::size_t n_pix = static_cast<std::size_t>(width) * height;
  std::vector<double> reference(n_pix);
  std::vector<double> previous(n_pix);
  for (std::size_t i = 0; i < n_pix; ++i) reference[i] = previous[i] = log_of(frames[0].data[i]);

  std::vector<Event> events;
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const double t0 = static_cast<double>(timestamps[k - 1]);
    const double dt = static_cast<double>(timestamps[k] - timestamps[k - 1]);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        const double l0 = previous[i];
        const double l1 = log_of(frames[k].data[i]);
        previous[i] = l1;
        if (l1 == l0) continue;
        const int pol = l1 > l0 ? 1 : -1;
        double& ref = reference[i];
        // Walk the threshold crossings between l0 and l1 in order.
        while (true) {
          const double step = threshold();
          const double level = ref + pol * step;
          const bool crossed = pol > 0 ? level <= l1 + kTolerance : level >= l1 - kTolerance;
          if (!crossed) break;
          const double frac = std::clamp((level - l0) / (l1 - l0), 0.0, 1.0);
          const Timestamp t = static_cast<Timestamp>(std::llround(t0 + frac * dt));
          events.push_back(Event{x, y, t, static_cast<std::int8_t>(pol)});
          ref = level;
        }
      }
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return EventStream(std::move(events), width, height, TimeWindow{timestamps.front(), timestamps.back()});
}

Image accumulate_polarity(const EventStream& stream, Timestamp t_a, Timestamp t_b, double contrast_threshold) {
  if (t_b < t_a) throw Error(ErrorKind::InvalidInterval, "accumulation window end precedes its start");
  Image out(stream.width(), stream.height(), 1);
  for (const Event& e : stream.slice(t_a, t_b)) out(e.x, e.y) += e.p * contrast_threshold;
  return out;
}

VoxelGrid::VoxelGrid(int bins, int width, int height, TimeWindow window)
    : bins_(bins), width_(width), height_(height), window_(window),
      values_(static_cast<std::size_t>(bins) * width * height, 0.0) {}

double VoxelGrid::total() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s;
}

VoxelGrid voxelize(std::span<const Event> events, int width, int height, TimeWindow window, int bins) {
  if (bins < 2) throw Error(ErrorKind::InvalidBins, "voxel grid needs at least 2 bins");
  if (window.t_end <= window.t_start) throw Error(ErrorKind::InvalidInterval, "voxel window must have t_end > t_start");
  VoxelGrid grid(bins, width, height, window);
  const double scale = static_cast<double>(bins - 1) / window.duration();
  for (const Event& e : events) {
    if (e.t < window.t_start || e.t > window.t_end) continue;
    if (e.x < 0 || e.y < 0 || e.x >= width || e.y >= height) continue;
    const double tn = static_cast<double>(e.t - window.t_start) * scale;
    const int lo = std::min(static_cast<int>(std::floor(tn)), bins - 1);
    const double frac = tn - lo;
    grid.at(lo, e.y, e.x) += e.p * (1.0 - frac);
    if (frac > 0.0 && lo + 1 < bins) grid.at(lo + 1, e.y, e.x) += e.p * frac;
  }
  return grid;
}

VoxelGrid voxelize(const EventStream& stream, TimeWindow window, int bins) {
  return voxelize(std::span<const Event>(stream.events()), stream.width(), stream.height(), window, bins);
}

}  // namespace evgs
