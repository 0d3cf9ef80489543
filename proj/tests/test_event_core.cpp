#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "evgs/errors.hpp"
#include "evgs/event_core.hpp"

using namespace evgs;

namespace {

std::vector<Image> random_sequence(std::mt19937_64& rng, int w, int h, int n) {
  std::uniform_real_distribution<double> u(0.02, 1.0);
  std::vector<Image> frames;
  for (int i = 0; i < n; ++i) {
    Image f(w, h);
    for (double& v : f.data) v = u(rng);
    frames.push_back(f);
  }
  return frames;
}

std::vector<Timestamp> uniform_times(int n, Timestamp dt) {
  std::vector<Timestamp> t;
  for (int i = 0; i < n; ++i) t.push_back(i * dt);
  return t;
}

}  // namespace

TEST(Simulate, ConstantFramesProduceNoEvents) {
  std::vector<Image> frames(3, Image(4, 4, 1, 0.5));
  const auto times = uniform_times(3, 1000);
  EXPECT_TRUE(simulate_events(frames, times).empty());
}

TEST(Simulate, ExactThreeThresholdRise) {
  Image a(2, 2, 1, 0.3), b = a;
  b(1, 0) = 0.3 * std::exp(0.3);
  std::vector<Image> frames{a, b};
  std::vector<Timestamp> times{0, 300};
  const EventStream s = simulate_events(frames, times);
  ASSERT_EQ(s.size(), 3u);
  const Timestamp expected[3] = {100, 200, 300};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(s.events()[i].x, 1);
    EXPECT_EQ(s.events()[i].y, 0);
    EXPECT_EQ(s.events()[i].p, 1);
    EXPECT_EQ(s.events()[i].t, expected[i]);
  }
}

TEST(Simulate, RoundTripWithinThreshold) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto frames = random_sequence(rng, 16, 12, 6);
    const auto times = uniform_times(6, 500);
    const EventStream s = simulate_events(frames, times);
    const Image acc = accumulate_polarity(s, 0, times.back() + 1, 0.1);
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 16; ++x) {
        const double dlog = std::log(frames.back()(x, y)) - std::log(frames.front()(x, y));
        EXPECT_LE(std::abs(acc(x, y) - dlog), 0.1 + 1e-12);
      }
    }
  }
}

TEST(Simulate, SortedAndDeterministic) {
  std::mt19937_64 rng(2);
  const auto frames = random_sequence(rng, 8, 8, 5);
  const auto times = uniform_times(5, 1000);
  const EventStream a = simulate_events(frames, times);
  const EventStream b = simulate_events(frames, times);
  EXPECT_EQ(a, b);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LE(a.events()[i - 1].t, a.events()[i].t);
}

TEST(Simulate, JitterIsSeededAndKeepsPolarity) {
  std::mt19937_64 rng(4);
  const auto frames = random_sequence(rng, 8, 8, 4);
  const auto times = uniform_times(4, 1000);
  SimulatorConfig cfg;
  cfg.threshold_jitter = 0.02;
  cfg.seed = 99;
  EXPECT_EQ(simulate_events(frames, times, cfg), simulate_events(frames, times, cfg));
}

TEST(Simulate, ErrorPaths) {
  std::vector<Image> one(1, Image(2, 2, 1, 0.5));
  std::vector<Timestamp> t1{0};
  try {
    simulate_events(one, t1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientInput);
  }
  std::vector<Image> two(2, Image(2, 2, 1, 0.5));
  std::vector<Timestamp> bad{10, 10};
  try {
    simulate_events(two, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Ordering);
  }
}

TEST(Simulate, BlackPixelsUseIntensityFloor) {
  Image a(1, 1, 1, 0.0), b(1, 1, 1, 1e-3 * std::exp(0.25));
  std::vector<Image> frames{a, b};
  std::vector<Timestamp> times{0, 100};
  EXPECT_EQ(simulate_events(frames, times).size(), 2u);
}

TEST(Accumulate, EmptyWindowIsZero) {
  EventStream s({{0, 0, 5, 1}}, 2, 2, {0, 10});
  const Image img = accumulate_polarity(s, 6, 6, 0.1);
  for (double v : img.data) EXPECT_EQ(v, 0.0);
}

TEST(Accumulate, NetPolarityTimesThreshold) {
  EventStream s({{1, 1, 1, 1}, {1, 1, 2, 1}, {1, 1, 3, -1}}, 2, 2, {0, 10});
  const Image img = accumulate_polarity(s, 0, 10, 0.1);
  EXPECT_NEAR(img(1, 1), 0.1, 1e-15);
  EXPECT_EQ(img(0, 0), 0.0);
}

TEST(Accumulate, HalfOpenWindow) {
  EventStream s({{0, 0, 5, 1}, {0, 0, 10, 1}}, 1, 1, {0, 10});
  EXPECT_NEAR(accumulate_polarity(s, 5, 10, 1.0)(0, 0), 1.0, 0.0);
}

TEST(Voxelize, EventAtBinCenter) {
  // 5 bins over [0, 400]: bin n sits at t = 100 n.
  EventStream s({{2, 1, 200, 1}}, 4, 3, {0, 400});
  const VoxelGrid g = voxelize(s, {0, 400});
  for (int b = 0; b < 5; ++b) EXPECT_EQ(g.at(b, 1, 2), b == 2 ? 1.0 : 0.0);
  EXPECT_EQ(g.total(), 1.0);
}

TEST(Voxelize, MidpointSplitsEvenly) {
  EventStream s({{0, 0, 150, 1}}, 1, 1, {0, 400});
  const VoxelGrid g = voxelize(s, {0, 400});
  EXPECT_DOUBLE_EQ(g.at(1, 0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.at(2, 0, 0), 0.5);
}

TEST(Voxelize, EmptyStreamIsZero) {
  EventStream s({}, 3, 3, {0, 100});
  EXPECT_EQ(voxelize(s, {0, 100}).total(), 0.0);
}

TEST(Voxelize, MassConservationOnRandomStreams) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> px(0, 15);
    std::uniform_int_distribution<Timestamp> pt(0, 9999);
    std::vector<Event> ev;
    for (int i = 0; i < 500; ++i) ev.push_back({px(rng), px(rng), pt(rng), static_cast<std::int8_t>(i % 3 ? 1 : -1)});
    std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    const EventStream s(ev, 16, 16, {0, 9999});
    const TimeWindow win{2000, 8000};
    double expected = 0.0;
    for (const Event& e : ev) {
      if (e.t >= win.t_start && e.t <= win.t_end) expected += e.p;
    }
    EXPECT_NEAR(voxelize(s, win).total(), expected, 1e-9);
  }
}

TEST(Voxelize, RejectsTooFewBins) {
  EventStream s({}, 3, 3, {0, 100});
  try {
    voxelize(s, {0, 100}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidBins);
  }
}

TEST(EventStream, RejectsUnsortedInput) {
  EXPECT_THROW(EventStream({{0, 0, 5, 1}, {0, 0, 4, 1}}, 1, 1, {0, 10}), Error);
  EXPECT_THROW(EventStream({{0, 0, 5, 0}}, 1, 1, {0, 10}), Error);
  EXPECT_THROW(EventStream({{3, 0, 5, 1}}, 1, 1, {0, 10}), Error);
}
