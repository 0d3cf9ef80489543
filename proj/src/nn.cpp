#include "evgs/nn.hpp"

#include <cmath>
#include <cstring>

#include "evgs/errors.hpp"

namespace evgs::nn {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Relu: return z.cwiseMax(0.0);
  }
  return z;
}

Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& z, const Eigen::MatrixXd& grad_out, Activation act) {
  switch (act) {
    case Activation::Identity: return grad_out;
    case Activation::Tanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      return (grad_out.array() * (1.0 - t * t)).matrix();
    }
    case Activation::Relu: return (grad_out.array() * (z.array() > 0.0).cast<double>()).matrix();
  }
  return grad_out;
}

}  // namespace

std::vector<Param*> LoraAdapter::parameters() {
  std::vector<Param*> out;
  for (LoraLayer& l : layers) {
    out.push_back(&l.a);
    out.push_back(&l.b);
  }
  return out;
}

void LoraAdapter::zero_b() {
  for (LoraLayer& l : layers) l.b.value.setZero();
}

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  if (spec_.input <= 0 || spec_.output <= 0) throw Error(ErrorKind::Config, "mlp needs positive input/output sizes");
  const std::size_t n = spec_.hidden.size() + 1;
  layers_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    layers_[i].weight = Param(layer_output_size(i), layer_input_size(i));
    layers_[i].bias = Param(layer_output_size(i), 1);
  }
}

int Mlp::layer_input_size(std::size_t i) const {
  int in = i == 0 ? spec_.input : spec_.hidden[i - 1];
  if (spec_.skip_layer > 0 && static_cast<std::size_t>(spec_.skip_layer) == i) in += spec_.input;
  return in;
}

int Mlp::layer_output_size(std::size_t i) const {
  return i < spec_.hidden.size() ? spec_.hidden[i] : spec_.output;
}

void Mlp::init(std::mt19937_64& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const double limit = std::sqrt(6.0 / (layer_input_size(i) + layer_output_size(i)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd& w = layers_[i].weight.value;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
    }
    layers_[i].bias.value.setZero();
  }
}

void Mlp::zero_output_layer() {
  layers_.back().weight.value.setZero();
  layers_.back().bias.value.setZero();
}

void Mlp::scale_output_layer(double factor) {
  layers_.back().weight.value *= factor;
  layers_.back().bias.value *= factor;
}

Mlp::Trace Mlp::forward(const Eigen::MatrixXd& x, const LoraAdapter* lora) const {
  if (x.rows() != spec_.input) throw Error(ErrorKind::Shape, "mlp input has the wrong feature size");
  if (lora && lora->layers.size() != layers_.size()) throw Error(ErrorKind::Shape, "adapter does not match network");
  Trace tr;
  const std::size_t n = layers_.size();
  tr.inputs.resize(n);
  tr.pre.resize(n);
  if (lora) tr.lora_mid.resize(n);
  Eigen::MatrixXd h = x;
  for (std::size_t i = 0; i < n; ++i) {
    if (spec_.skip_layer > 0 && static_cast<std::size_t>(spec_.skip_layer) == i) {
      Eigen::MatrixXd cat(h.rows() + x.rows(), h.cols());
      cat << h, x;
      h = std::move(cat);
    }
    tr.inputs[i] = h;
    Eigen::MatrixXd z = layers_[i].weight.value * h;
    z.colwise() += layers_[i].bias.value.col(0);
    if (lora) {
      tr.lora_mid[i] = lora->layers[i].a.value * h;
      z.noalias() += lora->layers[i].b.value * tr.lora_mid[i];
    }
    const Activation act = i + 1 == n ? spec_.output_activation : spec_.hidden_activation;
    h = activate(z, act);
    tr.pre[i] = std::move(z);
  }
  tr.output = std::move(h);
  return tr;
}

Eigen::MatrixXd Mlp::backward(const Trace& tr, const Eigen::MatrixXd& grad_output, bool base_grads,
                              LoraAdapter* lora) {
  const std::size_t n = layers_.size();
  Eigen::MatrixXd g = grad_output;
  Eigen::MatrixXd grad_input = Eigen::MatrixXd::Zero(spec_.input, grad_output.cols());
  for (std::size_t idx = n; idx-- > 0;) {
    const Activation act = idx + 1 == n ? spec_.output_activation : spec_.hidden_activation;
    const Eigen::MatrixXd dz = activation_grad(tr.pre[idx], g, act);
    DenseLayer& layer = layers_[idx];
    if (base_grads) {
      layer.weight.grad.noalias() += dz * tr.inputs[idx].transpose();
      layer.bias.grad += dz.rowwise().sum();
    }
    Eigen::MatrixXd dh = layer.weight.value.transpose() * dz;
    if (lora) {
      LoraLayer& ad = lora->layers[idx];
      const Eigen::MatrixXd dmid = ad.b.value.transpose() * dz;
      ad.b.grad.noalias() += dz * tr.lora_mid[idx].transpose();
      ad.a.grad.noalias() += dmid * tr.inputs[idx].transpose();
      dh.noalias() += ad.a.value.transpose() * dmid;
    }
    if (spec_.skip_layer > 0 && static_cast<std::size_t>(spec_.skip_layer) == idx) {
      const Eigen::Index prev = dh.rows() - spec_.input;
      grad_input += dh.bottomRows(spec_.input);
      g = dh.topRows(prev);
    } else {
      g = std::move(dh);
    }
  }
  grad_input += g;
  return grad_input;
}

std::vector<Param*> Mlp::parameters() {
  std::vector<Param*> out;
  for (DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Param*> Mlp::parameters() const {
  std::vector<const Param*> out;
  for (const DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

LoraAdapter make_lora(const Mlp& mlp, int rank, double init_scale, std::mt19937_64& rng) {
  if (rank < 1) throw Error(ErrorKind::Config, "adapter rank must be >= 1");
  LoraAdapter ad;
  ad.rank = rank;
  std::normal_distribution<double> dist(0.0, init_scale);
  for (std::size_t i = 0; i < mlp.num_layers(); ++i) {
    LoraLayer l{Param(rank, mlp.layer_input_size(i)), Param(mlp.layer_output_size(i), rank)};
    for (Eigen::Index c = 0; c < l.a.value.cols(); ++c) {
      for (Eigen::Index r = 0; r < l.a.value.rows(); ++r) l.a.value(r, c) = dist(rng);
    }
    ad.layers.push_back(std::move(l));
  }
  return ad;
}

void Adam::add(Param& p) {
  slots_.push_back({&p, Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()),
                    Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols())});
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Slot& s : slots_) {
    s.m = beta1_ * s.m + (1.0 - beta1_) * s.param->grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * s.param->grad.cwiseAbs2();
    s.param->value.array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (Slot& s : slots_) s.param->zero_grad();
}

double exponential_decay(double lr_start, double lr_end, long step, long total_steps) {
  if (total_steps <= 1) return lr_start;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_start * std::pow(lr_end / lr_start, std::min(1.0, std::max(0.0, frac)));
}

std::uint64_t checksum(const std::vector<const Param*>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Param* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace evgs::nn
