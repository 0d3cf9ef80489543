#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "evgs/deformation.hpp"
#include "evgs/event_core.hpp"
#include "evgs/flow_adapter.hpp"
#include "evgs/supervision.hpp"

namespace evgs {

/// Everything a command needs. Relative paths in a config file resolve against its directory.
struct RunConfig {
  struct Paths {
    std::filesystem::path scene;
    std::filesystem::path output = "out";
    /// Defaults below are relative to `output` when left empty.
    std::filesystem::path events;     // events.bin
    std::filesystem::path predictor;  // predictor.ckpt
    std::filesystem::path adapter;    // adapter.ckpt
  } paths;

  SimulatorConfig simulator;
  int keyframe_stride = 5;

  PredictorConfig predictor;
  FlowTrainConfig pretrain{100, 1e-3, 2e-4, {}, 0};
  /// Pretraining corpus: this many windows per axis, horizontal then vertical.
  int pretrain_windows = 48;
  double pretrain_speed = 8.0;
  FlowTrainConfig finetune;
  int lora_rank = kDefaultLoraRank;
  double lora_init = 0.01;

  TrainConfig train;
  DeformationConfig deformation;
  PoseNetConfig posenet;
  /// Held-out PSNR is logged every this many iterations (and at the last one).
  long eval_every = 250;

  std::uint64_t seed = 0;

  std::filesystem::path events_path() const;
  std::filesystem::path predictor_path() const;
  std::filesystem::path adapter_path() const;
  /// Per-run directory for train, render and eval, named by ablation tag and seed.
  std::filesystem::path run_dir() const;
};

/// "full", "no-event", "no-motion" or "no-event-no-motion".
std::string ablation_tag(const TrainConfig& config);

/// Unknown sections or keys and unparsable values are config errors.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
/// Also requires the scene file to exist.
RunConfig load_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<long> iterations;
  bool no_event_loss = false;
  bool no_motion_loss = false;
};

/// Applies command-line overrides and pushes the seed into every stochastic component.
void apply_overrides(RunConfig& config, const Overrides& overrides);

}  // namespace evgs
