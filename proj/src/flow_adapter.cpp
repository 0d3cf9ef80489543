#include "evgs/flow_adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evgs/errors.hpp"

namespace evgs {

int PredictorConfig::input_size() const {
  if (input == PredictorInput::Voxel) return bins * context * context;
  const int per_axis = 2 * static_cast<int>(std::floor(search_radius / search_step + 1e-9)) + 1;
  return per_axis * per_axis;
}

TiledFlowPredictor::TiledFlowPredictor(const PredictorConfig& config, std::uint64_t seed) : config_(config) {
  if (config.patch < 1 || config.context < config.patch) {
    throw Error(ErrorKind::Config, "predictor needs patch >= 1 and context >= patch");
  }
  if (config.bins < 2) throw Error(ErrorKind::InvalidBins, "predictor needs at least 2 bins");
  if (config.input == PredictorInput::CostVolume && !(config.search_step > 0.0 && config.search_radius >= 0.0)) {
    throw Error(ErrorKind::Config, "cost volume needs a positive search step");
  }
  nn::MlpSpec spec;
  spec.input = config.input_size();
  spec.hidden = config.hidden;
  spec.output = 2;
  spec.hidden_activation = nn::Activation::Tanh;
  spec.output_activation = nn::Activation::Tanh;
  net_ = nn::Mlp(spec);
  std::mt19937_64 rng(seed);
  net_.init(rng);
  // Start near zero flow: a saturated tanh head cannot recover once events are pushed off-frame.
  net_.scale_output_layer(0.1);
}

void TiledFlowPredictor::check_grid(const VoxelGrid& grid) const {
  if (grid.width() != config_.width || grid.height() != config_.height || grid.bins() != config_.bins) {
    throw Error(ErrorKind::Config, "voxel grid shape does not match the predictor configuration");
  }
}

namespace {

double sample_bilinear(const VoxelGrid& grid, int b, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto at = [&](int xx, int yy) {
    return xx < 0 || yy < 0 || xx >= grid.width() || yy >= grid.height() ? 0.0 : grid.at(b, yy, xx);
  };
  return (1 - ax) * (1 - ay) * at(x0, y0) + ax * (1 - ay) * at(x0 + 1, y0) + (1 - ax) * ay * at(x0, y0 + 1) +
         ax * ay * at(x0 + 1, y0 + 1);
}

}  // namespace

Eigen::MatrixXd TiledFlowPredictor::tile_inputs(const VoxelGrid& grid) const {
  check_grid(grid);
  const int ctx = config_.context;
  const int margin = (ctx - config_.patch) / 2;
  const int tiles = tiles_x() * tiles_y();
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(config_.input_size(), tiles);

  if (config_.input == PredictorInput::Voxel) {
    for (int ty = 0; ty < tiles_y(); ++ty) {
      for (int tx = 0; tx < tiles_x(); ++tx) {
        const int col = ty * tiles_x() + tx;
        const int x0 = tx * config_.patch - margin;
        const int y0 = ty * config_.patch - margin;
        for (int b = 0; b < config_.bins; ++b) {
          for (int y = 0; y < ctx; ++y) {
            const int sy = y0 + y;
            if (sy < 0 || sy >= config_.height) continue;
            for (int x = 0; x < ctx; ++x) {
              const int sx = x0 + x;
              if (sx < 0 || sx >= config_.width) continue;
              in((b * ctx + y) * ctx + x, col) = grid.at(b, sy, sx);
            }
          }
        }
        // Unit RMS per crop keeps the first layer out of saturation whatever the event density.
        const double rms = std::sqrt(in.col(col).squaredNorm() / static_cast<double>(in.rows()));
        if (rms > 1e-12) in.col(col) /= rms;
      }
    }
    return in;
  }

  // Bin b sits at normalized time b / (bins - 1); pulling it back along a candidate flow and
  // summing gives that candidate's image of warped events.
  const int half = (static_cast<int>(std::sqrt(static_cast<double>(in.rows()))) - 1) / 2;
  const int w = config_.width, h = config_.height;
  std::vector<double> warped(static_cast<std::size_t>(w) * h);
  int c = 0;
  for (int iv = -half; iv <= half; ++iv) {
    for (int iu = -half; iu <= half; ++iu, ++c) {
      const double u = iu * config_.search_step, v = iv * config_.search_step;
      std::fill(warped.begin(), warped.end(), 0.0);
      for (int b = 0; b < config_.bins; ++b) {
        const double tau = static_cast<double>(b) / (config_.bins - 1);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) warped[static_cast<std::size_t>(y) * w + x] += sample_bilinear(grid, b, x + tau * u, y + tau * v);
        }
      }
      for (int ty = 0; ty < tiles_y(); ++ty) {
        for (int tx = 0; tx < tiles_x(); ++tx) {
          const int x0 = std::max(0, tx * config_.patch - margin), x1 = std::min(w, tx * config_.patch - margin + ctx);
          const int y0 = std::max(0, ty * config_.patch - margin), y1 = std::min(h, ty * config_.patch - margin + ctx);
          double e = 0.0;
          for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
              const double val = warped[static_cast<std::size_t>(y) * w + x];
              e += val * val;
            }
          }
          in(c, ty * tiles_x() + tx) = e / std::max(1, (x1 - x0) * (y1 - y0));
        }
      }
    }
  }
  for (int col = 0; col < tiles; ++col) {
    const double mean = in.col(col).mean();
    const double sd = std::sqrt((in.col(col).array() - mean).square().mean());
    if (sd > 1e-12) {
      in.col(col) = (in.col(col).array() - mean) / sd;
    } else {
      in.col(col).setZero();
    }
  }
  return in;
}

namespace {

// Bilinear sample position of pixel i between tile centers, clamped at the outer centers.
struct Lerp {
  int i0;
  int i1;
  double a;
};

Lerp tile_lerp(int pixel, int patch, int tiles) {
  const double center0 = 0.5 * (patch - 1);
  const double f = (pixel - center0) / patch;
  if (f <= 0.0) return {0, 0, 0.0};
  if (f >= tiles - 1) return {tiles - 1, tiles - 1, 0.0};
  const int i0 = static_cast<int>(std::floor(f));
  return {i0, i0 + 1, f - i0};
}

}  // namespace

FlowField TiledFlowPredictor::upsample(const Eigen::MatrixXd& tile_flow) const {
  FlowField out(config_.width, config_.height);
  const int tx_n = tiles_x();
  for (int y = 0; y < config_.height; ++y) {
    const Lerp ly = tile_lerp(y, config_.patch, tiles_y());
    for (int x = 0; x < config_.width; ++x) {
      const Lerp lx = tile_lerp(x, config_.patch, tx_n);
      const double w00 = (1 - lx.a) * (1 - ly.a), w10 = lx.a * (1 - ly.a);
      const double w01 = (1 - lx.a) * ly.a, w11 = lx.a * ly.a;
      const Eigen::Vector2d f = w00 * tile_flow.col(ly.i0 * tx_n + lx.i0) + w10 * tile_flow.col(ly.i0 * tx_n + lx.i1) +
                                w01 * tile_flow.col(ly.i1 * tx_n + lx.i0) + w11 * tile_flow.col(ly.i1 * tx_n + lx.i1);
      out.set(x, y, f);
    }
  }
  return out;
}

Eigen::MatrixXd TiledFlowPredictor::upsample_adjoint(const FlowField& grad) const {
  const int tx_n = tiles_x();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2, tx_n * tiles_y());
  for (int y = 0; y < config_.height; ++y) {
    const Lerp ly = tile_lerp(y, config_.patch, tiles_y());
    for (int x = 0; x < config_.width; ++x) {
      const Lerp lx = tile_lerp(x, config_.patch, tx_n);
      const Eigen::Vector2d g = grad.at(x, y);
      out.col(ly.i0 * tx_n + lx.i0) += (1 - lx.a) * (1 - ly.a) * g;
      out.col(ly.i0 * tx_n + lx.i1) += lx.a * (1 - ly.a) * g;
      out.col(ly.i1 * tx_n + lx.i0) += (1 - lx.a) * ly.a * g;
      out.col(ly.i1 * tx_n + lx.i1) += lx.a * ly.a * g;
    }
  }
  return out;
}

FlowField TiledFlowPredictor::predict(const VoxelGrid& grid, const nn::LoraAdapter* adapter) const {
  const Eigen::MatrixXd out = net_.evaluate(tile_inputs(grid), adapter);
  return upsample(config_.flow_scale * out);
}

nn::LoraAdapter make_flow_adapter(const TiledFlowPredictor& predictor, int rank, double init_scale,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return nn::make_lora(predictor.network(), rank, init_scale, rng);
}

FlowSample make_flow_sample(const EventStream& stream, TimeWindow window, int bins) {
  return make_flow_sample(stream, window, window.t_start, bins);
}

FlowSample make_flow_sample(const EventStream& stream, TimeWindow window, Timestamp t_ref, int bins) {
  FlowSample s;
  const EventStream sub = stream.window(window.t_start, window.t_end);
  s.events = sub.events();
  s.window = window;
  s.t_ref = t_ref;
  s.width = stream.width();
  s.height = stream.height();
  s.grid = voxelize(std::span<const Event>(s.events), s.width, s.height, window, bins);
  return s;
}

double tv_regularizer(const FlowField& flow) {
  if (flow.width < 2 || flow.height < 2) throw Error(ErrorKind::Size, "TV needs at least a 2x2 flow field");
  double dx = 0.0, dy = 0.0;
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x + 1 < flow.width; ++x) {
      dx += std::abs(flow.u[flow.index(x + 1, y)] - flow.u[flow.index(x, y)]) +
            std::abs(flow.v[flow.index(x + 1, y)] - flow.v[flow.index(x, y)]);
    }
  }
  for (int y = 0; y + 1 < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      dy += std::abs(flow.u[flow.index(x, y + 1)] - flow.u[flow.index(x, y)]) +
            std::abs(flow.v[flow.index(x, y + 1)] - flow.v[flow.index(x, y)]);
    }
  }
  return dx / (flow.height * (flow.width - 1.0)) + dy / ((flow.height - 1.0) * flow.width);
}

FlowField tv_regularizer_backward(const FlowField& flow) {
  if (flow.width < 2 || flow.height < 2) throw Error(ErrorKind::Size, "TV needs at least a 2x2 flow field");
  FlowField g(flow.width, flow.height);
  const double kx = 1.0 / (flow.height * (flow.width - 1.0));
  const double ky = 1.0 / ((flow.height - 1.0) * flow.width);
  auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x + 1 < flow.width; ++x) {
      const std::size_t a = flow.index(x, y), b = flow.index(x + 1, y);
      const double su = kx * sgn(flow.u[b] - flow.u[a]);
      const double sv = kx * sgn(flow.v[b] - flow.v[a]);
      g.u[b] += su; g.u[a] -= su;
      g.v[b] += sv; g.v[a] -= sv;
    }
  }
  for (int y = 0; y + 1 < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const std::size_t a = flow.index(x, y), b = flow.index(x, y + 1);
      const double su = ky * sgn(flow.u[b] - flow.u[a]);
      const double sv = ky * sgn(flow.v[b] - flow.v[a]);
      g.u[b] += su; g.u[a] -= su;
      g.v[b] += sv; g.v[a] -= sv;
    }
  }
  return g;
}

FlowLoss flow_loss(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter, const FlowSample& sample,
                   const FlowLossConfig& config, GradRequest grads) {
  return flow_loss(predictor, adapter, sample, predictor.tile_inputs(sample.grid), config, grads);
}

FlowLoss flow_loss(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter, const FlowSample& sample,
                   const Eigen::MatrixXd& inputs, const FlowLossConfig& config, GradRequest grads) {
  const double scale = predictor.config().flow_scale;
  const nn::Mlp::Trace trace = predictor.network().forward(inputs, adapter);
  const FlowField flow = predictor.upsample(scale * trace.output);

  const double tau_ref = sample.window.normalize(sample.t_ref);
  std::vector<WarpedEvent> warped;
  std::vector<double> dtau;
  warped.reserve(sample.events.size());
  dtau.reserve(sample.events.size());
  for (const Event& e : sample.events) {
    const double d = sample.window.normalize(e.t) - tau_ref;
    const Eigen::Vector2d f = flow.at(e.x, e.y);
    warped.push_back({e.x - d * f.x(), e.y - d * f.y(), 1.0});
    dtau.push_back(d);
  }
  const Image iwe = build_iwe(warped, sample.width, sample.height);

  FlowLoss loss;
  loss.contrast = tile_multiscale_objective(iwe, config.objective);
  loss.tv = tv_regularizer(flow);
  if (!(loss.contrast >= config.min_contrast)) {
    loss.skipped = true;
    loss.value = config.tv_weight * loss.tv;
    return loss;
  }
  loss.value = 1.0 / loss.contrast + config.tv_weight * loss.tv;
  if (!grads.base && !(grads.adapter && adapter)) return loss;

  Image g_iwe = tile_multiscale_objective_backward(iwe, config.objective);
  const double d_contrast = -1.0 / (loss.contrast * loss.contrast);
  for (double& v : g_iwe.data) v *= d_contrast;

  FlowField g_flow = tv_regularizer_backward(flow);
  for (std::size_t i = 0; i < g_flow.u.size(); ++i) {
    g_flow.u[i] *= config.tv_weight;
    g_flow.v[i] *= config.tv_weight;
  }
  for (std::size_t k = 0; k < warped.size(); ++k) {
    const WarpedEvent& w = warped[k];
    if (!std::isfinite(w.x) || !std::isfinite(w.y)) continue;
    const double fx0 = std::floor(w.x), fy0 = std::floor(w.y);
    if (fx0 < -1.0 || fy0 < -1.0 || fx0 >= sample.width || fy0 >= sample.height) continue;
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
    const double ax = w.x - fx0, ay = w.y - fy0;
    auto g_at = [&](int x, int y) { return g_iwe.contains(x, y) ? g_iwe(x, y) : 0.0; };
    const double g00 = g_at(x0, y0), g10 = g_at(x0 + 1, y0), g01 = g_at(x0, y0 + 1), g11 = g_at(x0 + 1, y0 + 1);
    const double d_x = (1 - ay) * (g10 - g00) + ay * (g11 - g01);
    const double d_y = (1 - ax) * (g01 - g00) + ax * (g11 - g10);
    const Event& e = sample.events[k];
    const std::size_t idx = g_flow.index(e.x, e.y);
    g_flow.u[idx] -= dtau[k] * d_x;
    g_flow.v[idx] -= dtau[k] * d_y;
  }
  const Eigen::MatrixXd g_out = scale * predictor.upsample_adjoint(g_flow);
  predictor.network().backward(trace, g_out, grads.base, grads.adapter ? adapter : nullptr);
  return loss;
}

namespace {

void require_finite(double v, long step) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::TrainingFailure, "flow loss became non-finite at step " + std::to_string(step));
  }
}

FlowTrainLog run_training(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter, std::span<const FlowSample> samples,
                          const FlowTrainConfig& config, nn::Adam& optim, GradRequest grads) {
  if (config.epochs < 1) throw Error(ErrorKind::Config, "training needs at least one epoch");
  if (config.loss.tv_weight < 0.0) throw Error(ErrorKind::Config, "TV weight must be non-negative");
  FlowTrainLog log;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const long total = static_cast<long>(config.epochs) * static_cast<long>(samples.size());
  // Inputs do not depend on trainable parameters.
  std::vector<Eigen::MatrixXd> inputs;
  inputs.reserve(samples.size());
  for (const FlowSample& s : samples) inputs.push_back(predictor.tile_inputs(s.grid));
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double acc = 0.0;
    int counted = 0;
    for (std::size_t idx : order) {
      optim.set_learning_rate(nn::exponential_decay(config.lr_start, config.lr_end, step, total));
      optim.zero_grad();
      const FlowLoss l = flow_loss(predictor, adapter, samples[idx], inputs[idx], config.loss, grads);
      require_finite(l.value, step);
      ++step;
      if (l.skipped) {
        ++log.skipped;
        continue;
      }
      optim.step();
      log.step_loss.push_back(l.value);
      acc += l.value;
      ++counted;
    }
    log.epoch_loss.push_back(counted ? acc / counted : 0.0);
  }
  optim.zero_grad();
  return log;
}

}  // namespace

FlowTrainLog pretrain(TiledFlowPredictor& predictor, std::span<const FlowSample> corpus, const FlowTrainConfig& config) {
  nn::Adam optim(config.lr_start);
  optim.add(predictor.network().parameters());
  return run_training(predictor, nullptr, corpus, config, optim, {true, false});
}

FlowTrainLog locm_finetune(TiledFlowPredictor& predictor, nn::LoraAdapter& adapter, std::span<const FlowSample> samples,
                           const FlowTrainConfig& config) {
  nn::Adam optim(config.lr_start);
  optim.add(adapter.parameters());
  return run_training(predictor, &adapter, samples, config, optim, {false, true});
}

double mean_flow_loss(TiledFlowPredictor& predictor, const nn::LoraAdapter* adapter, std::span<const FlowSample> samples,
                      const FlowLossConfig& config) {
  double acc = 0.0;
  int n = 0;
  for (const FlowSample& s : samples) {
    const FlowLoss l = flow_loss(predictor, const_cast<nn::LoraAdapter*>(adapter), s, config, {});
    if (l.skipped) continue;
    acc += l.value;
    ++n;
  }
  return n ? acc / n : 0.0;
}

GradientCheckResult gradient_check(TiledFlowPredictor& predictor, nn::LoraAdapter* adapter, const FlowSample& sample,
                                   const FlowLossConfig& config, double step) {
  std::vector<nn::Param*> params = predictor.network().parameters();
  if (adapter) {
    for (nn::Param* p : adapter->parameters()) params.push_back(p);
  }
  for (nn::Param* p : params) p->zero_grad();
  flow_loss(predictor, adapter, sample, config, {true, adapter != nullptr});

  GradientCheckResult result;
  for (nn::Param* p : params) {
    const Eigen::MatrixXd analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + step;
      const double lp = flow_loss(predictor, adapter, sample, config, {}).value;
      p->value.data()[i] = saved - step;
      const double lm = flow_loss(predictor, adapter, sample, config, {}).value;
      p->value.data()[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
      ++result.checked;
    }
    p->zero_grad();
  }
  return result;
}

}  // namespace evgs
