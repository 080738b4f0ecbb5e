#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsm/errors.hpp"
#include "dcsm/rng.hpp"

namespace dcsm {

// One fully connected layer; weights are row-major (out x in).
struct DenseLayer {
  int out = 0;
  int in = 0;
  std::vector<double> weights;
  std::vector<double> bias;
};

// MLP with rectified hidden layers followed by a bias-free linear map onto K
// mixture logits. A shared output bias would be cancelled by the softmax's
// shift invariance, so none is kept.
struct GatingNetwork {
  int input_dim = 0;
  int experts = 0;                 // K
  std::vector<DenseLayer> layers;  // hidden layers; rectifier after each
  std::vector<double> output_map;  // experts x repr_dim, row-major

  int repr_dim() const { return layers.empty() ? input_dim : layers.back().out; }

  std::vector<int> hidden_widths() const {
    std::vector<int> w;
    for (const auto& l : layers) w.push_back(l.out);
    return w;
  }

  std::size_t parameter_count() const {
    std::size_t n = output_map.size();
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }
};

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero; initial
// logits stay near zero so every expert sees gradient signal from the start.
inline GatingNetwork init_gating(int input_dim, const std::vector<int>& hidden, int experts,
                                 std::uint64_t seed) {
  if (input_dim < 1) throw std::invalid_argument("init_gating: input_dim must be >= 1");
  if (experts < 1) throw std::invalid_argument("init_gating: experts must be >= 1");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("init_gating: hidden widths must be >= 1");
  }

  Rng rng(seed);
  GatingNetwork net;
  net.input_dim = input_dim;
  net.experts = experts;

  int in = input_dim;
  for (int h : hidden) {
    DenseLayer layer;
    layer.out = h;
    layer.in = in;
    layer.weights.resize(static_cast<std::size_t>(h) * in);
    const double bound = std::sqrt(6.0 / (in + h));
    for (auto& w : layer.weights) w = rng.uniform(-bound, bound);
    layer.bias.assign(h, 0.0);
    net.layers.push_back(std::move(layer));
    in = h;
  }
  net.output_map.resize(static_cast<std::size_t>(experts) * in);
  const double bound = std::sqrt(6.0 / (in + experts));
  for (auto& w : net.output_map) w = rng.uniform(-bound, bound);
  return net;
}

// Activations recorded by the forward pass for the matching backward call.
// inputs[l] is the input of layer l (flattened batch x width); inputs.back()
// is the representation fed to the output map. pre[l] holds layer l's
// pre-activations.
struct GatingCache {
  int batch = 0;
  int input_dim = 0;
  int experts = 0;
  std::vector<int> widths;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> pre;
};

inline std::vector<std::vector<double>> gating_forward(const GatingNetwork& net,
                                                       const std::vector<std::vector<double>>& batch,
                                                       GatingCache* cache = nullptr) {
  const std::size_t n = batch.size();
  for (const auto& x : batch) {
    if (static_cast<int>(x.size()) != net.input_dim) {
      throw DataError("gating_forward: feature width " + std::to_string(x.size()) +
                      " does not match input_dim " + std::to_string(net.input_dim));
    }
  }

  std::vector<double> cur(n * static_cast<std::size_t>(net.input_dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < net.input_dim; ++j) cur[i * net.input_dim + j] = batch[i][j];
  }

  if (cache) {
    cache->batch = static_cast<int>(n);
    cache->input_dim = net.input_dim;
    cache->experts = net.experts;
    cache->widths = net.hidden_widths();
    cache->inputs.clear();
    cache->pre.clear();
  }

  int width = net.input_dim;
  for (const auto& layer : net.layers) {
    if (cache) cache->inputs.push_back(cur);
    std::vector<double> next(n * static_cast<std::size_t>(layer.out));
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = cur.data() + i * width;
      double* y = next.data() + i * layer.out;
      for (int o = 0; o < layer.out; ++o) {
        const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
        double acc = layer.bias[o];
        for (int j = 0; j < layer.in; ++j) acc += w[j] * x[j];
        y[o] = acc;
      }
    }
    if (cache) cache->pre.push_back(next);
    for (auto& v : next) v = v > 0.0 ? v : 0.0;  // rectifier
    cur = std::move(next);
    width = layer.out;
  }
  if (cache) cache->inputs.push_back(cur);

  std::vector<std::vector<double>> logits(n, std::vector<double>(net.experts));
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = cur.data() + i * width;
    for (int k = 0; k < net.experts; ++k) {
      const double* w = net.output_map.data() + static_cast<std::size_t>(k) * width;
      double acc = 0.0;
      for (int j = 0; j < width; ++j) acc += w[j] * x[j];
      logits[i][k] = acc;
    }
  }
  return logits;
}

// Reverse-mode gradient of sum_i <d_logits_i, logits_i> with respect to every
// parameter, in flatten_parameters order. The rectifier subgradient at
// exactly zero is taken as zero.
inline std::vector<double> gating_backward(const GatingNetwork& net, const GatingCache& cache,
                                           const std::vector<std::vector<double>>& d_logits) {
  if (cache.input_dim != net.input_dim || cache.experts != net.experts ||
      cache.widths != net.hidden_widths() ||
      cache.inputs.size() != net.layers.size() + 1) {
    throw DataError("gating_backward: cache does not match this network");
  }
  if (static_cast<int>(d_logits.size()) != cache.batch) {
    throw DataError("gating_backward: d_logits batch size does not match cache");
  }
  for (const auto& g : d_logits) {
    if (static_cast<int>(g.size()) != net.experts) {
      throw DataError("gating_backward: d_logits width does not match expert count");
    }
  }

  const std::size_t n = d_logits.size();
  const int repr = net.repr_dim();
  std::vector<double> grad(net.parameter_count(), 0.0);

  // per-layer offsets into the flat gradient
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& l : net.layers) {
    offsets.push_back(off);
    off += l.weights.size() + l.bias.size();
  }
  const std::size_t out_map_off = off;

  const auto& repr_act = cache.inputs.back();
  std::vector<double> delta(n * static_cast<std::size_t>(repr), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* h = repr_act.data() + i * repr;
    const double* dl = d_logits[i].data();
    for (int k = 0; k < net.experts; ++k) {
      double* gw = grad.data() + out_map_off + static_cast<std::size_t>(k) * repr;
      const double dk = dl[k];
      const double* wk = net.output_map.data() + static_cast<std::size_t>(k) * repr;
      double* di = delta.data() + i * repr;
      for (int j = 0; j < repr; ++j) {
        gw[j] += dk * h[j];
        di[j] += dk * wk[j];
      }
    }
  }

  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = net.layers[static_cast<std::size_t>(l)];
    const auto& pre = cache.pre[static_cast<std::size_t>(l)];
    const auto& input = cache.inputs[static_cast<std::size_t>(l)];
    double* gw = grad.data() + offsets[static_cast<std::size_t>(l)];
    double* gb = gw + layer.weights.size();

    std::vector<double> next_delta(n * static_cast<std::size_t>(layer.in), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = input.data() + i * layer.in;
      const double* p = pre.data() + i * layer.out;
      double* dp = delta.data() + i * layer.out;
      double* dn = next_delta.data() + i * layer.in;
      for (int o = 0; o < layer.out; ++o) {
        const double d = p[o] > 0.0 ? dp[o] : 0.0;
        if (d == 0.0) continue;
        gb[o] += d;
        const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
        double* gwo = gw + static_cast<std::size_t>(o) * layer.in;
        for (int j = 0; j < layer.in; ++j) {
          gwo[j] += d * x[j];
          dn[j] += d * w[j];
        }
      }
    }
    delta = std::move(next_delta);
  }
  return grad;
}

// Flat parameter order: layer by layer, weights then biases, then output_map.
inline std::vector<double> flatten_parameters(const GatingNetwork& net) {
  std::vector<double> flat;
  flat.reserve(net.parameter_count());
  for (const auto& l : net.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  flat.insert(flat.end(), net.output_map.begin(), net.output_map.end());
  return flat;
}

inline void set_parameters(GatingNetwork& net, std::span<const double> flat) {
  if (flat.size() != net.parameter_count()) {
    throw std::invalid_argument("set_parameters: expected " +
                                std::to_string(net.parameter_count()) + " values, got " +
                                std::to_string(flat.size()));
  }
  std::size_t pos = 0;
  for (auto& l : net.layers) {
    std::copy_n(flat.begin() + pos, l.weights.size(), l.weights.begin());
    pos += l.weights.size();
    std::copy_n(flat.begin() + pos, l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
  std::copy_n(flat.begin() + pos, net.output_map.size(), net.output_map.begin());
}

// Max-subtracted softmax; outputs are positive and sum to 1.
inline std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace dcsm
