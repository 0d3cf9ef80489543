#include "evgs/association.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <unordered_map>

#include "evgs/errors.hpp"

namespace evgs {

std::size_t BindingTable::bound_count() const {
  return static_cast<std::size_t>(
      std::count_if(bindings.begin(), bindings.end(), [](const auto& b) { return !b.empty(); }));
}

EventStream filter_events_near(const EventStream& stream, Timestamp t0, Timestamp delta_t) {
  if (delta_t < 0) throw Error(ErrorKind::Config, "delta_t must be non-negative");
  return stream.window(t0 - delta_t, t0 + delta_t);
}

std::vector<UnprojectedEvent> unproject_events(std::span<const Event> events, const Image& depth, const Image& alpha,
                                               const Pose& pose, const CameraIntrinsics& intr,
                                               double alpha_threshold) {
  std::vector<UnprojectedEvent> out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (!depth.contains(e.x, e.y)) continue;
    const double z = depth(e.x, e.y);
    if (alpha(e.x, e.y) < alpha_threshold || !(z > 0.0)) continue;
    out.push_back({i, unproject({double(e.x), double(e.y)}, z, pose, intr), {e.x, e.y}, e.t});
  }
  return out;
}

double default_cutoff(std::span<const Eigen::Vector3d> gaussians) {
  if (gaussians.empty()) return 0.0;
  Eigen::Vector3d lo = gaussians[0], hi = gaussians[0];
  for (const auto& p : gaussians) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return 0.05 * (hi - lo).norm();
}

namespace {

struct Candidate {
  double d2;
  std::size_t index;  // into the event list
  std::size_t id;
};

bool closer(const Candidate& a, const Candidate& b) {
  if (a.d2 != b.d2) return a.d2 < b.d2;
  return a.id < b.id;
}

double resolve_cutoff(std::span<const Eigen::Vector3d> gaussians, const BindConfig& config) {
  if (config.k < 1) throw Error(ErrorKind::Config, "bind needs k >= 1");
  return config.cutoff < 0.0 ? default_cutoff(gaussians) : config.cutoff;
}

std::vector<Binding> finish(std::vector<Candidate>& best, std::span<const UnprojectedEvent> events,
                            const BindConfig& config) {
  std::vector<Binding> out;
  double total = 0.0;
  for (const Candidate& c : best) {
    const double w = 1.0 / (std::sqrt(c.d2) + config.epsilon);
    out.push_back({c.id, w, events[c.index].pixel});
    total += w;
  }
  for (Binding& b : out) b.weight /= total;
  return out;
}

}  // namespace

BindingTable bind_events_brute_force(std::span<const Eigen::Vector3d> gaussians, std::span<const UnprojectedEvent> events,
                                     const BindConfig& config) {
  const double cutoff = resolve_cutoff(gaussians, config);
  BindingTable table;
  table.bindings.resize(gaussians.size());
  for (std::size_t g = 0; g < gaussians.size(); ++g) {
    std::vector<Candidate> all;
    for (std::size_t j = 0; j < events.size(); ++j) {
      const double d2 = (events[j].point - gaussians[g]).squaredNorm();
      if (d2 <= cutoff * cutoff) all.push_back({d2, j, events[j].event_id});
    }
    std::sort(all.begin(), all.end(), closer);
    if (all.size() > static_cast<std::size_t>(config.k)) all.resize(config.k);
    table.bindings[g] = finish(all, events, config);
  }
  return table;
}

BindingTable bind_events(std::span<const Eigen::Vector3d> gaussians, std::span<const UnprojectedEvent> events,
                         const BindConfig& config) {
  const double cutoff = resolve_cutoff(gaussians, config);
  BindingTable table;
  table.bindings.resize(gaussians.size());
  if (events.empty() || gaussians.empty()) return table;

  Eigen::Vector3d lo = events[0].point, hi = events[0].point;
  for (const auto& e : events) {
    lo = lo.cwiseMin(e.point);
    hi = hi.cwiseMax(e.point);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  const double per_axis = std::max(1.0, std::cbrt(static_cast<double>(events.size())));
  double cell = extent / per_axis;
  if (std::isfinite(cutoff) && cutoff > 0.0) cell = std::max(cell, cutoff);
  const Eigen::Vector3i dims = ((hi - lo) / cell).array().floor().cast<int>() + 1;

  // Queries far outside the grid are clamped; their ring bounds only get more conservative.
  auto cell_of = [&](const Eigen::Vector3d& p) -> Eigen::Vector3i {
    return ((p - lo) / cell).array().floor().max(-1e6).min(1e6).cast<int>();
  };
  std::unordered_map<long long, std::vector<std::size_t>> grid;
  auto key = [&](const Eigen::Vector3i& c) {
    return (static_cast<long long>(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
  };
  for (std::size_t j = 0; j < events.size(); ++j) grid[key(cell_of(events[j].point))].push_back(j);

  const auto k = static_cast<std::size_t>(config.k);
  for (std::size_t g = 0; g < gaussians.size(); ++g) {
    const Eigen::Vector3d& q = gaussians[g];
    const Eigen::Vector3i qc = cell_of(q);
    // Farthest ring that can still hold a grid cell.
    int min_ring = 0, max_ring = 0;
    for (int a = 0; a < 3; ++a) {
      max_ring = std::max({max_ring, std::abs(qc[a]), std::abs(dims[a] - 1 - qc[a])});
      min_ring = std::max({min_ring, -qc[a], qc[a] - (dims[a] - 1)});
    }
    std::vector<Candidate> best;
    for (int r = min_ring; r <= max_ring; ++r) {
      // Points outside rings 0..r-1 lie at least (r - 1) cells away along some axis.
      const double reach = std::max(0, r - 1) * cell;
      if (reach > cutoff) break;
      if (best.size() == k && best.back().d2 < reach * reach) break;
      const Eigen::Vector3i c0 = (qc.array() - r).max(0).matrix();
      const Eigen::Vector3i c1 = (qc.array() + r).min(dims.array() - 1).matrix();
      for (int z = c0.z(); z <= c1.z(); ++z) {
        for (int y = c0.y(); y <= c1.y(); ++y) {
          for (int x = c0.x(); x <= c1.x(); ++x) {
            const Eigen::Vector3i c(x, y, z);
            if ((c - qc).cwiseAbs().maxCoeff() != r) continue;
            const auto it = grid.find(key(c));
            if (it == grid.end()) continue;
            for (std::size_t j : it->second) {
              const double d2 = (events[j].point - q).squaredNorm();
              if (d2 > cutoff * cutoff) continue;
              const Candidate cand{d2, j, events[j].event_id};
              if (best.size() == k && !closer(cand, best.back())) continue;
              best.insert(std::upper_bound(best.begin(), best.end(), cand, closer), cand);
              if (best.size() > k) best.pop_back();
            }
          }
        }
      }
    }
    table.bindings[g] = finish(best, events, config);
  }
  return table;
}

bool should_rebind(long iteration, long period) { return period > 0 && iteration % period == 0; }

void write_bindings_csv(std::ostream& os, const BindingTable& table) {
  os << "gaussian_id,event_id,weight\n";
  os << std::setprecision(17);
  for (std::size_t g = 0; g < table.bindings.size(); ++g) {
    for (const Binding& b : table.bindings[g]) os << g << ',' << b.event_id << ',' << b.weight << '\n';
  }
}

}  // namespace evgs
