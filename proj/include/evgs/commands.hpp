#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evgs/config.hpp"
#include "evgs/pipeline.hpp"

namespace evgs {

/// Per-view image quality on held-out frames plus the scene-flow error, for one ablation.
struct MetricsReport {
  std::string tag;
  std::vector<int> views;
  std::vector<double> psnr;
  std::vector<double> ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double flow_epe = 0.0;
};

MetricsReport make_report(const HeldOutReport& held_out, const std::string& tag);
void write_metrics_report(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_metrics_report(const std::filesystem::path& path);

/// The simulated sequence as stored by `simulate`: dense frames and keyframes read back from
/// disk (so 8-bit quantized) plus the event file.
SimulatedSequence load_sequence(const RunConfig& config);

// Each command writes its outputs below config.paths.output and returns its metrics CSV.
std::filesystem::path cmd_simulate(const RunConfig& config);
/// Trains the base flow predictor on synthetic translations.
std::filesystem::path cmd_pretrain_flow(const RunConfig& config);
std::filesystem::path cmd_finetune_flow(const RunConfig& config);
std::filesystem::path cmd_train(const RunConfig& config);
std::filesystem::path cmd_render(const RunConfig& config);
std::filesystem::path cmd_eval(const RunConfig& config);

using Command = std::filesystem::path (*)(const RunConfig&);
std::optional<Command> find_command(std::string_view name);
std::vector<std::string> command_names();

}  // namespace evgs
