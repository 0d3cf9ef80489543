#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace evgs::nn {

/// A trainable tensor and its accumulated gradient.
struct Param {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols)
      : value(Eigen::MatrixXd::Zero(rows, cols)), grad(Eigen::MatrixXd::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(); }
};

enum class Activation { Identity, Tanh, Relu };

struct MlpSpec {
  int input = 0;
  std::vector<int> hidden;
  int output = 0;
  Activation hidden_activation = Activation::Relu;
  Activation output_activation = Activation::Identity;
  /// Hidden layer index whose input is concatenated with the network input; -1 disables it.
  int skip_layer = -1;
};

struct DenseLayer {
  Param weight;  // out x in
  Param bias;    // out x 1
};

/// Low-rank bypass of one dense layer: delta W = B * A.
struct LoraLayer {
  Param a;  // rank x in
  Param b;  // out x rank
};

struct LoraAdapter {
  int rank = 0;
  std::vector<LoraLayer> layers;

  std::vector<Param*> parameters();
  /// Sets every B to zero, which makes the bypass vanish exactly.
  void zero_b();
};

class Mlp {
 public:
  struct Trace {
    std::vector<Eigen::MatrixXd> inputs;    // layer inputs (after skip concatenation)
    std::vector<Eigen::MatrixXd> pre;       // pre-activations
    std::vector<Eigen::MatrixXd> lora_mid;  // A * input per layer, empty without adapters
    Eigen::MatrixXd output;
  };

  Mlp() = default;
  explicit Mlp(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return layers_.size(); }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }
  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }
  int layer_input_size(std::size_t i) const;
  int layer_output_size(std::size_t i) const;

  /// Glorot-uniform weights, zero biases.
  void init(std::mt19937_64& rng);
  /// Zeroes the final layer so the network output is exactly zero at start.
  void zero_output_layer();
  void scale_output_layer(double factor);

  /// Column-batched forward pass; each column of x is one sample.
  Trace forward(const Eigen::MatrixXd& x, const LoraAdapter* lora = nullptr) const;
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& x, const LoraAdapter* lora = nullptr) const {
    return forward(x, lora).output;
  }

  /// Accumulates gradients into base parameters (when base_grads) and adapter parameters (when
  /// lora is given); returns dL/dx.
  Eigen::MatrixXd backward(const Trace& trace, const Eigen::MatrixXd& grad_output, bool base_grads,
                           LoraAdapter* lora = nullptr);

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  std::size_t parameter_count() const;

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> layers_;
};

/// A (rank x in) ~ N(0, init_scale^2), B = 0, one entry per layer of the network.
LoraAdapter make_lora(const Mlp& mlp, int rank, double init_scale, std::mt19937_64& rng);

/// Adaptive-moment gradient descent over registered parameters.
class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void add(Param& p);
  void add(const std::vector<Param*>& ps) {
    for (Param* p : ps) add(*p);
  }
  void step();
  void zero_grad();
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  struct Slot {
    Param* param;
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
  };
  std::vector<Slot> slots_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

/// Geometric interpolation from lr_start (step 0) to lr_end (step total_steps - 1).
double exponential_decay(double lr_start, double lr_end, long step, long total_steps);

/// FNV-1a over the raw bytes of all values; detects any bit change.
std::uint64_t checksum(const std::vector<const Param*>& params);

}  // namespace evgs::nn
