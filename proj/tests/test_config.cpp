#include <sstream>

#include <gtest/gtest.h>

#include "evgs/config.hpp"
#include "evgs/errors.hpp"

using namespace evgs;

namespace {

RunConfig parse(const std::string& text, const std::filesystem::path& base = {}) {
  std::istringstream in(text);
  return parse_config(in, base);
}

bool rejects(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.kind() == ErrorKind::Config;
  }
  return false;
}

}  // namespace

TEST(Config, DefaultsWithoutKeys) {
  const RunConfig c = parse("");
  EXPECT_EQ(c.keyframe_stride, 5);
  EXPECT_EQ(c.lora_rank, 16);
  EXPECT_EQ(c.train.warmup, 3500);
  EXPECT_TRUE(c.train.event_loss);
  EXPECT_EQ(c.events_path(), std::filesystem::path("out") / "events.bin");
  EXPECT_EQ(c.run_dir(), std::filesystem::path("out") / "train_full_s0");
}

TEST(Config, ParsesSectionsAndResolvesPaths) {
  const RunConfig c = parse(
      "[paths]\nscene = scenes/a.json\noutput = ../runs\n"
      "[simulate]\ncontrast_threshold = 0.05\n"
      "[flow]\nhidden = 32, 16\ninput = voxel\ntv_weight = 0.2\n"
      "[train]\niterations = 12\nmotion_loss = false\n"
      "[run]\nseed = 7\n",
      "/data/cfg");
  EXPECT_EQ(c.paths.scene, std::filesystem::path("/data/cfg/scenes/a.json"));
  EXPECT_EQ(c.paths.output, std::filesystem::path("/data/runs"));
  EXPECT_DOUBLE_EQ(c.simulator.contrast_threshold, 0.05);
  EXPECT_DOUBLE_EQ(c.train.contrast_threshold, 0.05);
  EXPECT_EQ(c.predictor.hidden, (std::vector<int>{32, 16}));
  EXPECT_EQ(c.predictor.input, PredictorInput::Voxel);
  EXPECT_DOUBLE_EQ(c.pretrain.loss.tv_weight, 0.2);
  EXPECT_DOUBLE_EQ(c.finetune.loss.tv_weight, 0.2);
  EXPECT_EQ(c.train.iterations, 12);
  EXPECT_FALSE(c.train.motion_loss);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.run_dir().filename(), "train_no-motion_s7");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_TRUE(rejects("[train]\nitertions = 5\n"));
  EXPECT_TRUE(rejects("[nonsense]\nx = 1\n"));
  EXPECT_TRUE(rejects("[train]\niterations = five\n"));
  EXPECT_TRUE(rejects("[train]\niterations = 5x\n"));
  EXPECT_TRUE(rejects("[train]\nevent_loss = maybe\n"));
  EXPECT_TRUE(rejects("[simulate]\ncontrast_threshold = 0\n"));
  EXPECT_TRUE(rejects("[flow]\ninput = optical\n"));
  EXPECT_TRUE(rejects("stray = 1\n"));
  EXPECT_TRUE(rejects("[train\n"));
}

TEST(Config, LoadRequiresExistingScene) {
  try {
    load_config("/nonexistent/run.ini");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Config, OverridesReachEveryComponent) {
  RunConfig c = parse("[run]\nseed = 3\n");
  Overrides o;
  o.seed = 11;
  o.iterations = 40;
  o.no_event_loss = true;
  apply_overrides(c, o);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.simulator.seed, 11u);
  EXPECT_EQ(c.pretrain.seed, 11u);
  EXPECT_EQ(c.finetune.seed, 11u);
  EXPECT_EQ(c.train.seed, 11u);
  EXPECT_EQ(c.train.iterations, 40);
  EXPECT_FALSE(c.train.event_loss);
  EXPECT_TRUE(c.train.motion_loss);
  EXPECT_EQ(ablation_tag(c.train), "no-event");
  o.iterations = -1;
  EXPECT_THROW(apply_overrides(c, o), Error);
}
