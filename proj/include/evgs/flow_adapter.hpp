#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evgs/contrast_max.hpp"
#include "evgs/event_core.hpp"
#include "evgs/nn.hpp"

namespace evgs {

enum class PredictorInput {
  /// Flattened voxel-grid crop.
  Voxel,
  /// Per-crop sharpness of the voxel bins shifted along a grid of candidate flows, standardized
  /// across candidates.
  CostVolume,
};

struct PredictorConfig {
  PredictorInput input = PredictorInput::CostVolume;
  int width = 64;
  int height = 64;
  int bins = kDefaultVoxelBins;
  /// Output tile stride; each tile yields one flow vector.
  int patch = 16;
  /// Side of the voxel-grid crop fed to the network, centered on the tile (>= patch).
  int context = 32;
  std::vector<int> hidden{64, 64};
  /// Flow output is flow_scale * tanh(.) in pixels per window.
  double flow_scale = 16.0;
  /// Candidate flows of the cost volume: a square grid over [-radius, radius]^2.
  double search_radius = 12.0;
  double search_step = 2.0;

  int input_size() const;
};

/// Shared-weight dense network applied per voxel-grid tile; tile flows are bilinearly
/// upsampled to a per-pixel field.
class TiledFlowPredictor {
 public:
  TiledFlowPredictor() = default;
  TiledFlowPredictor(const PredictorConfig& config, std::uint64_t seed);

  const PredictorConfig& config() const { return config_; }
  int tiles_x() const { return (config_.width + config_.patch - 1) / config_.patch; }
  int tiles_y() const { return (config_.height + config_.patch - 1) / config_.patch; }
  nn::Mlp& network() { return net_; }
  const nn::Mlp& network() const { return net_; }

  /// One column per tile.
  Eigen::MatrixXd tile_inputs(const VoxelGrid& grid) const;
  FlowField predict(const VoxelGrid& grid, const nn::LoraAdapter* adapter = nullptr) const;

  FlowField upsample(const Eigen::MatrixXd& tile_flow) const;
  Eigen::MatrixXd upsample_adjoint(const FlowField& grad) const;

  std::uint64_t base_checksum() const { return nn::checksum(net_.parameters()); }

 private:
  void check_grid(const VoxelGrid& grid) const;

  PredictorConfig config_;
  nn::Mlp net_;
};

inline constexpr int kDefaultLoraRank = 16;

nn::LoraAdapter make_flow_adapter(const TiledFlowPredictor& predictor, int rank = kDefaultLoraRank,
                                  double init_scale = 0.01, std::uint64_t seed = 0);

/// One unsupervised training sample: a window of events and its voxel grid.
struct FlowSample {
  VoxelGrid grid;
  std::vector<Event> events;
  TimeWindow window;
  Timestamp t_ref = 0;
  int width = 0;
  int height = 0;
};

FlowSample make_flow_sample(const EventStream& stream, TimeWindow window, int bins = kDefaultVoxelBins);
FlowSample make_flow_sample(const EventStream& stream, TimeWindow window, Timestamp t_ref, int bins);

struct FlowLossConfig {
  double tv_weight = 0.1;
  MultiscaleConfig objective;
  /// Samples whose contrast falls below this are skipped.
  double min_contrast = 1e-8;
};

struct FlowLoss {
  double value = 0.0;
  double contrast = 0.0;
  double tv = 0.0;
  bool skipped = false;
};

struct GradRequest {
  bool base = false;
  bool adapter = false;
};

/// 1 / contrast(IWE warped by predicted flow) + lambda * TV(predicted flow). Gradients, when
/// requested, accumulate into the network and/or adapter parameters.
FlowLoss flow_loss(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter, const FlowSample& sample,
                   const FlowLossConfig& config, GradRequest grads = {});
/// Same, with the predictor inputs of the sample already computed by tile_inputs.
FlowLoss flow_loss(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter, const FlowSample& sample,
                   const Eigen::MatrixXd& inputs, const FlowLossConfig& config, GradRequest grads = {});

/// Mean of |du/dx| + |du/dy| + |dv/dx| + |dv/dy| with forward differences; each term averaged
/// over its own valid positions.
double tv_regularizer(const FlowField& flow);
FlowField tv_regularizer_backward(const FlowField& flow);

struct FlowTrainConfig {
  int epochs = 3;
  double lr_start = 5e-4;
  double lr_end = 1e-4;
  FlowLossConfig loss;
  std::uint64_t seed = 0;
};

struct FlowTrainLog {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  int skipped = 0;
};

/// Trains the base weights on a corpus; they are treated as frozen afterwards.
FlowTrainLog pretrain(TiledFlowPredictor& predictor, std::span<const FlowSample> corpus,
                      const FlowTrainConfig& config);

/// Low-rank contrast-maximization fine-tuning: only adapter parameters move.
FlowTrainLog locm_finetune(TiledFlowPredictor& predictor, nn::LoraAdapter& adapter,
                           std::span<const FlowSample> samples, const FlowTrainConfig& config);

double mean_flow_loss(TiledFlowPredictor& predictor, const nn::LoraAdapter* adapter,
                      std::span<const FlowSample> samples, const FlowLossConfig& config);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
};

/// Analytic parameter gradients versus central finite differences. Covers base weights and,
/// when an adapter is supplied, its A and B matrices.
GradientCheckResult gradient_check(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter,
                                   const FlowSample& sample, const FlowLossConfig& config,
                                   double step = 1e-4);

}  // namespace evgs
