#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gridshock/error.hpp"
#include "gridshock/rng.hpp"

namespace gridshock {

enum class Activation { Tanh, Logistic, Identity, Softplus };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Logistic: return "logistic";
    case Activation::Identity: return "identity";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "logistic") return Activation::Logistic;
  if (name == "identity") return Activation::Identity;
  if (name == "softplus") return Activation::Softplus;
  throw ValidationError("unknown activation '" + name + "'");
}

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Logistic: return logistic(z);
    case Activation::Identity: return z;
    case Activation::Softplus: return softplus(z);
  }
  return z;
}

/// d activation / d z, written in terms of the pre-activation.
inline double activate_derivative(Activation a, double z, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Logistic: return y * (1.0 - y);
    case Activation::Identity: return 1.0;
    case Activation::Softplus: return logistic(z);
  }
  return 1.0;
}

struct MlpLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;
  Activation activation = Activation::Tanh;

  bool operator==(const MlpLayer&) const = default;
};

/// Feed-forward network for the weather response. The last layer has a single
/// softplus unit, so the output is non-negative for any input.
struct MlpParams {
  std::vector<MlpLayer> layers;

  [[nodiscard]] std::size_t input_size() const { return layers.empty() ? 0 : layers.front().inputs; }

  [[nodiscard]] std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// Layer stack input -> hidden... -> 1 with every weight and bias zero.
  static MlpParams zeros(std::size_t inputs, const std::vector<std::size_t>& hidden,
                         Activation hidden_activation = Activation::Tanh) {
    MlpParams p;
    std::size_t fan_in = inputs;
    for (auto width : hidden) {
      p.layers.push_back(MlpLayer{fan_in, width, std::vector<double>(fan_in * width, 0.0),
                                  std::vector<double>(width, 0.0), hidden_activation});
      fan_in = width;
    }
    p.layers.push_back(
        MlpLayer{fan_in, 1, std::vector<double>(fan_in, 0.0), std::vector<double>(1, 0.0), Activation::Softplus});
    return p;
  }

  /// Glorot-uniform weights, U(-s, s) with s = sqrt(6 / (fan_in + fan_out)); zero biases.
  static MlpParams glorot(std::size_t inputs, const std::vector<std::size_t>& hidden, Rng& rng,
                          Activation hidden_activation = Activation::Tanh) {
    MlpParams p = zeros(inputs, hidden, hidden_activation);
    for (auto& layer : p.layers) {
      const double s = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
      for (auto& w : layer.weights) w = uniform(rng, -s, s);
    }
    return p;
  }

  void set_zero() {
    for (auto& l : layers) {
      std::fill(l.weights.begin(), l.weights.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
  }

  bool operator==(const MlpParams&) const = default;
};

/// Activations retained from a forward pass.
struct MlpCache {
  std::vector<std::vector<double>> pre;   // per layer
  std::vector<std::vector<double>> post;  // post[0] is the input
};

inline double mlp_forward(const MlpParams& net, std::span<const double> input, MlpCache* cache = nullptr) {
  if (input.size() != net.input_size()) {
    throw ValidationError("network expects " + std::to_string(net.input_size()) + " inputs, got " +
                          std::to_string(input.size()));
  }
  thread_local std::vector<double> a;
  thread_local std::vector<double> next;
  a.assign(input.begin(), input.end());
  if (cache) {
    cache->pre.resize(net.layers.size());
    cache->post.resize(net.layers.size() + 1);
    cache->post[0] = a;
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    next.assign(layer.outputs, 0.0);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      double z = layer.bias[o];
      const double* w = layer.weights.data() + o * layer.inputs;
      for (std::size_t in = 0; in < layer.inputs; ++in) z += w[in] * a[in];
      next[o] = z;
    }
    if (cache) cache->pre[l] = next;
    for (auto& z : next) z = activate(layer.activation, z);
    if (cache) cache->post[l + 1] = next;
    a.swap(next);
  }
  return a[0];
}

/// Back-propagates `upstream` (d objective / d output) through a cached pass,
/// accumulating parameter gradients into `grad` (same shape as the network)
/// and, when non-empty, input gradients into `d_input`.
inline void mlp_backward(const MlpParams& net, const MlpCache& cache, double upstream, MlpParams& grad,
                         std::span<double> d_input = {}) {
  thread_local std::vector<double> delta;
  thread_local std::vector<double> prev;
  delta.assign(1, upstream);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    auto& g = grad.layers[l];
    const auto& z = cache.pre[l];
    const auto& y = cache.post[l + 1];
    const auto& x = cache.post[l];
    for (std::size_t o = 0; o < layer.outputs; ++o) delta[o] *= activate_derivative(layer.activation, z[o], y[o]);
    const bool need_prev = l > 0 || !d_input.empty();
    if (need_prev) prev.assign(layer.inputs, 0.0);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      g.bias[o] += d;
      double* gw = g.weights.data() + o * layer.inputs;
      const double* w = layer.weights.data() + o * layer.inputs;
      for (std::size_t in = 0; in < layer.inputs; ++in) {
        gw[in] += d * x[in];
        if (need_prev) prev[in] += d * w[in];
      }
    }
    if (l == 0) {
      for (std::size_t in = 0; in < d_input.size(); ++in) d_input[in] += prev[in];
    } else {
      delta.swap(prev);
    }
  }
}

}  // namespace gridshock
