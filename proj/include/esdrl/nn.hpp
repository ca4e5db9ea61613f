#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "esdrl/rng.hpp"

namespace esdrl {

using ParameterVector = std::vector<double>;

enum class Activation : std::uint8_t { Tanh = 0, ReLU = 1 };

inline const char* to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh" || s == "Tanh") return Activation::Tanh;
  if (s == "relu" || s == "ReLU") return Activation::ReLU;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// Shape of a fully connected network. The output layer is always affine.
struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::Tanh;

  std::size_t layer_count() const noexcept { return hidden_dims.size() + 1; }

  std::size_t fan_in(std::size_t layer) const {
    return layer == 0 ? input_dim : hidden_dims.at(layer - 1);
  }

  std::size_t fan_out(std::size_t layer) const {
    return layer + 1 == layer_count() ? output_dim : hidden_dims.at(layer);
  }

  // Flat-vector offset of a layer's weight block; its biases follow directly.
  std::size_t layer_offset(std::size_t layer) const {
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layer; ++l) offset += (fan_in(l) + 1) * fan_out(l);
    return offset;
  }

  std::size_t parameter_count() const { return layer_offset(layer_count()); }

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("MlpSpec: input_dim must be >= 1");
    if (output_dim == 0) throw std::invalid_argument("MlpSpec: output_dim must be >= 1");
    for (std::size_t h : hidden_dims)
      if (h == 0) throw std::invalid_argument("MlpSpec: hidden dims must be >= 1");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

inline std::string describe(const MlpSpec& spec) {
  std::ostringstream os;
  os << spec.input_dim;
  for (auto h : spec.hidden_dims) os << "-" << h;
  os << "-" << spec.output_dim << " " << to_string(spec.activation);
  return os.str();
}

// One (observation, chosen action, regression target) triple for the
// squared TD-error loss.
struct TdSample {
  std::span<const double> observation;
  std::size_t action = 0;
  double target = 0.0;
};

struct TdGradient {
  ParameterVector gradient;
  double loss = 0.0;
};

// Feed-forward network whose parameters live in one flat vector, laid out
// layer by layer as row-major weights (fan_out x fan_in) followed by biases.
class Mlp {
 public:
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    params_.assign(spec_.parameter_count(), 0.0);
  }

  Mlp(MlpSpec spec, ParameterVector params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (params_.size() != spec_.parameter_count()) {
      throw std::invalid_argument("parameter vector has length " + std::to_string(params_.size()) +
                                  ", network " + describe(spec_) + " needs " +
                                  std::to_string(spec_.parameter_count()));
    }
  }

  // Glorot-uniform weights, zero biases.
  static Mlp glorot(MlpSpec spec, std::uint64_t seed) {
    Mlp net(std::move(spec));
    SplitMix64 rng(seed);
    for (std::size_t l = 0; l < net.spec_.layer_count(); ++l) {
      const std::size_t in = net.spec_.fan_in(l);
      const std::size_t out = net.spec_.fan_out(l);
      const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
      double* w = net.params_.data() + net.spec_.layer_offset(l);
      for (std::size_t i = 0; i < in * out; ++i) w[i] = rng.uniform(-bound, bound);
    }
    return net;
  }

  const MlpSpec& spec() const noexcept { return spec_; }
  const ParameterVector& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  ParameterVector flatten() const { return params_; }

  void load(std::span<const double> values) {
    if (values.size() != params_.size())
      throw std::invalid_argument("parameter length mismatch: got " + std::to_string(values.size()) +
                                  ", expected " + std::to_string(params_.size()));
    std::copy(values.begin(), values.end(), params_.begin());
  }

  std::span<double> mutable_parameters() noexcept { return params_; }

  std::vector<double> forward(std::span<const double> x) const {
    check_input(x);
    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> next;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
      affine(l, cur, next);
      if (l + 1 < spec_.layer_count()) activate(next);
      cur.swap(next);
    }
    return cur;
  }

  // Activations of the last hidden layer (the input itself for a linear model).
  std::vector<double> hidden_features(std::span<const double> x) const {
    check_input(x);
    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> next;
    for (std::size_t l = 0; l + 1 < spec_.layer_count(); ++l) {
      affine(l, cur, next);
      activate(next);
      cur.swap(next);
    }
    return cur;
  }

  // Mean squared TD error over the batch and its gradient in flat order.
  TdGradient backward_td(std::span<const TdSample> batch) const {
    if (batch.empty()) throw std::invalid_argument("backward_td: empty batch");
    const std::size_t layers = spec_.layer_count();
    const double scale = 1.0 / static_cast<double>(batch.size());
    TdGradient result{ParameterVector(params_.size(), 0.0), 0.0};

    std::vector<std::vector<double>> acts(layers + 1);
    std::vector<double> delta, prev_delta;
    for (const TdSample& sample : batch) {
      check_input(sample.observation);
      if (sample.action >= spec_.output_dim)
        throw std::invalid_argument("backward_td: action index out of range");
      if (!std::isfinite(sample.target)) throw std::invalid_argument("backward_td: non-finite target");

      acts[0].assign(sample.observation.begin(), sample.observation.end());
      for (std::size_t l = 0; l < layers; ++l) {
        affine(l, acts[l], acts[l + 1]);
        if (l + 1 < layers) activate(acts[l + 1]);
      }
      const double residual = sample.target - acts[layers][sample.action];
      result.loss += scale * residual * residual;

      delta.assign(spec_.output_dim, 0.0);
      delta[sample.action] = -2.0 * scale * residual;
      for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = spec_.fan_in(l);
        const std::size_t out = spec_.fan_out(l);
        const std::size_t offset = spec_.layer_offset(l);
        double* gw = result.gradient.data() + offset;
        double* gb = gw + in * out;
        const double* w = params_.data() + offset;
        const std::vector<double>& input = acts[l];
        for (std::size_t o = 0; o < out; ++o) {
          const double d = delta[o];
          if (d == 0.0) continue;
          gb[o] += d;
          double* row = gw + o * in;
          for (std::size_t i = 0; i < in; ++i) row[i] += d * input[i];
        }
        if (l == 0) break;
        prev_delta.assign(in, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
          const double d = delta[o];
          if (d == 0.0) continue;
          const double* row = w + o * in;
          for (std::size_t i = 0; i < in; ++i) prev_delta[i] += row[i] * d;
        }
        for (std::size_t i = 0; i < in; ++i) prev_delta[i] *= activation_derivative(input[i]);
        delta.swap(prev_delta);
      }
    }
    return result;
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  void check_input(std::span<const double> x) const {
    if (x.size() != spec_.input_dim)
      throw std::invalid_argument("observation has length " + std::to_string(x.size()) + ", network expects " +
                                  std::to_string(spec_.input_dim));
  }

  void affine(std::size_t l, const std::vector<double>& in_vec, std::vector<double>& out_vec) const {
    const std::size_t in = spec_.fan_in(l);
    const std::size_t out = spec_.fan_out(l);
    const double* w = params_.data() + spec_.layer_offset(l);
    const double* b = w + in * out;
    out_vec.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * in_vec[i];
      out_vec[o] = acc;
    }
  }

  void activate(std::vector<double>& v) const {
    if (spec_.activation == Activation::Tanh) {
      for (double& x : v) x = std::tanh(x);
    } else {
      for (double& x : v) x = x > 0.0 ? x : 0.0;
    }
  }

  // Derivative expressed through the activation output.
  double activation_derivative(double activated) const {
    if (spec_.activation == Activation::Tanh) return 1.0 - activated * activated;
    return activated > 0.0 ? 1.0 : 0.0;
  }

  MlpSpec spec_;
  ParameterVector params_;
};

inline Mlp unflatten(const MlpSpec& spec, ParameterVector values) { return Mlp(spec, std::move(values)); }

// Index of the largest score; ties go to the lowest index.
inline std::size_t argmax_action(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax_action: empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline std::size_t greedy_action(const Mlp& policy, std::span<const double> observation) {
  const auto scores = policy.forward(observation);
  return argmax_action(scores);
}

}  // namespace esdrl
