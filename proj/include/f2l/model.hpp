#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "f2l/numerics.hpp"
#include "f2l/rng.hpp"
#include "f2l/tensor.hpp"

namespace f2l {

// Flat parameter vector for a stack of dense layers: ReLU between layers,
// linear output. Per-layer layout: weights (out x in, row-major), then bias.
struct ModelParams {
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes;  // (in, out)
  std::vector<double> values;
  std::uint64_t seed = 0;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto [in, out] : layer_shapes) n += in * out + out;
    return n;
  }
  std::size_t input_dim() const { return layer_shapes.front().first; }
  std::size_t output_dim() const { return layer_shapes.back().second; }
  bool same_shape(const ModelParams& o) const {
    return layer_shapes == o.layer_shapes;
  }
  bool operator==(const ModelParams&) const = default;
};

// Glorot-uniform weights (+/- sqrt(6/(fan_in+fan_out))), zero biases.
inline ModelParams make_net(
    std::vector<std::pair<std::size_t, std::size_t>> shapes, std::uint64_t seed) {
  ModelParams m;
  m.layer_shapes = std::move(shapes);
  m.seed = seed;
  m.values.reserve(m.param_count());
  std::mt19937_64 rng(seed);
  for (auto [in, out] : m.layer_shapes) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (std::size_t i = 0; i < in * out; ++i) m.values.push_back(uni(rng));
    for (std::size_t i = 0; i < out; ++i) m.values.push_back(0.0);
  }
  return m;
}

inline ModelParams make_mlp(std::size_t input, std::size_t hidden,
                            std::size_t classes, std::uint64_t seed) {
  return make_net({{input, hidden}, {hidden, classes}}, seed);
}

// Intermediate activations kept for the backward pass. inputs[k] is the
// activation entering layer k (inputs[0] is the batch), preacts[k] the
// pre-activation output of layer k.
struct ForwardCache {
  std::vector<Tensor2> inputs;
  std::vector<Tensor2> preacts;
};

inline Tensor2 forward(const ModelParams& m, const Tensor2& batch,
                       ForwardCache* cache = nullptr) {
  if (m.layer_shapes.empty() || m.values.size() != m.param_count())
    throw std::invalid_argument("forward: malformed model");
  if (batch.cols != m.input_dim())
    throw std::invalid_argument("forward: batch width does not match input dim");
  Tensor2 act = batch;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < m.layer_shapes.size(); ++k) {
    const auto [in, out] = m.layer_shapes[k];
    const double* w = m.values.data() + offset;
    const double* b = w + in * out;
    Tensor2 z(act.rows, out);
    for (std::size_t n = 0; n < act.rows; ++n) {
      const double* x = act.data.data() + n * in;
      double* zr = z.data.data() + n * out;
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * x[i];
        zr[o] = acc;
      }
    }
    if (cache) {
      cache->inputs.push_back(std::move(act));
      cache->preacts.push_back(z);
    }
    const bool last = (k + 1 == m.layer_shapes.size());
    if (last) return z;
    act = std::move(z);
    for (double& v : act.data) v = v > 0.0 ? v : 0.0;  // ReLU
    offset += in * out + out;
  }
  return act;  // unreachable
}

// Parameter gradient given dL/dlogits for the batch that produced `cache`.
inline std::vector<double> backward(const ModelParams& m, const ForwardCache& cache,
                                    const Tensor2& dlogits) {
  const std::size_t layers = m.layer_shapes.size();
  std::vector<double> grad(m.values.size(), 0.0);
  std::vector<std::size_t> offsets(layers);
  std::size_t off = 0;
  for (std::size_t k = 0; k < layers; ++k) {
    offsets[k] = off;
    off += m.layer_shapes[k].first * m.layer_shapes[k].second +
           m.layer_shapes[k].second;
  }
  Tensor2 dz = dlogits;
  for (std::size_t k = layers; k-- > 0;) {
    const auto [in, out] = m.layer_shapes[k];
    const Tensor2& x = cache.inputs[k];
    double* gw = grad.data() + offsets[k];
    double* gb = gw + in * out;
    for (std::size_t n = 0; n < dz.rows; ++n) {
      const double* dzr = dz.data.data() + n * out;
      const double* xr = x.data.data() + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dzr[o];
        if (d == 0.0) continue;
        double* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += d * xr[i];
        gb[o] += d;
      }
    }
    if (k == 0) break;
    const double* w = m.values.data() + offsets[k];
    Tensor2 dprev(dz.rows, in, 0.0);
    for (std::size_t n = 0; n < dz.rows; ++n) {
      const double* dzr = dz.data.data() + n * out;
      double* dp = dprev.data.data() + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dzr[o];
        if (d == 0.0) continue;
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) dp[i] += d * wo[i];
      }
      // ReLU mask from the preceding layer's pre-activation.
      const double* zprev = cache.preacts[k - 1].data.data() + n * in;
      for (std::size_t i = 0; i < in; ++i)
        if (zprev[i] <= 0.0) dp[i] = 0.0;
    }
    dz = std::move(dprev);
  }
  return grad;
}

// Mean temperature-softmax cross-entropy over the batch.
inline double ce_loss(const ModelParams& m, const Tensor2& batch,
                      std::span<const int> labels, double temperature) {
  if (batch.rows == 0) throw std::invalid_argument("ce_loss: empty batch");
  if (labels.size() != batch.rows)
    throw std::invalid_argument("ce_loss: label count mismatch");
  const Tensor2 logits = forward(m, batch);
  double loss = 0.0;
  for (std::size_t n = 0; n < batch.rows; ++n) {
    const ProbVector p = temp_softmax(logits.row(n), temperature);
    loss += cross_entropy(p, static_cast<std::size_t>(labels[n]));
  }
  return loss / static_cast<double>(batch.rows);
}

inline std::vector<double> ce_gradient(const ModelParams& m, const Tensor2& batch,
                                       std::span<const int> labels,
                                       double temperature) {
  if (batch.rows == 0) throw std::invalid_argument("ce_gradient: empty batch");
  if (labels.size() != batch.rows)
    throw std::invalid_argument("ce_gradient: label count mismatch");
  ForwardCache cache;
  const Tensor2 logits = forward(m, batch, &cache);
  Tensor2 dz(logits.rows, logits.cols);
  const double scale = 1.0 / (temperature * static_cast<double>(batch.rows));
  for (std::size_t n = 0; n < logits.rows; ++n) {
    const ProbVector p = temp_softmax(logits.row(n), temperature);
    double* d = dz.data.data() + n * dz.cols;
    for (std::size_t l = 0; l < dz.cols; ++l) d[l] = p[l] * scale;
    d[labels[n]] -= scale;
  }
  return backward(m, cache, dz);
}

// One SGD step on the mean temperature-softmax cross-entropy.
inline ModelParams grad_step(const ModelParams& m, const Tensor2& batch,
                             std::span<const int> labels, double lr,
                             double temperature) {
  if (lr < 0.0 || !std::isfinite(lr))
    throw std::invalid_argument("grad_step: negative learning rate");
  const std::vector<double> grad = ce_gradient(m, batch, labels, temperature);
  ModelParams out = m;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] -= lr * grad[i];
  return out;
}

// Softmax probabilities for every row of `features` at the given temperature.
inline Tensor2 predict_probs(const ModelParams& m, const Tensor2& features,
                             double temperature) {
  const Tensor2 logits = forward(m, features);
  Tensor2 probs(logits.rows, logits.cols);
  for (std::size_t n = 0; n < logits.rows; ++n) {
    const ProbVector p = temp_softmax(logits.row(n), temperature);
    std::copy(p.begin(), p.end(), probs.data.begin() + n * probs.cols);
  }
  return probs;
}

inline std::vector<int> predict_labels(const ModelParams& m, const Tensor2& features) {
  const Tensor2 logits = forward(m, features);
  std::vector<int> out(logits.rows);
  for (std::size_t n = 0; n < logits.rows; ++n)
    out[n] = static_cast<int>(argmax(logits.row(n)));
  return out;
}

}  // namespace f2l
