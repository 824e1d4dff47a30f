#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "f2l/dataset.hpp"
#include "f2l/model.hpp"
#include "f2l/rng.hpp"

namespace f2l {

struct ClientState {
  int id = 0;
  Shard shard;
  ModelParams model;
  std::size_t sample_count = 0;
};

struct RegionState {
  int id = 0;
  std::vector<ClientState> clients;
  ModelParams regional_model;
};

struct TrainParams {
  std::size_t epochs = 5;
  double lr = 0.05;
  std::size_t batch_size = 32;
  double temperature = 1.0;
};

// Seeded, shuffled mini-batch SGD from `init` on the client's shard.
inline ModelParams local_train(const Shard& shard, const ModelParams& init,
                               const TrainParams& params, std::uint64_t seed) {
  if (shard.empty()) throw std::invalid_argument("local_train: empty shard");
  ModelParams model = init;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = std::max<std::size_t>(1, params.batch_size);
  for (std::size_t e = 0; e < params.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Shard batch = subset(shard, idx);
      model = grad_step(model, batch.features, batch.labels, params.lr,
                        params.temperature);
    }
  }
  return model;
}

// Elementwise weighted mean of parameter vectors; uniform by default.
inline ModelParams fedavg(std::span<const ModelParams> models,
                          std::span<const double> weights = {}) {
  if (models.empty()) throw std::invalid_argument("fedavg: no models");
  for (const ModelParams& m : models)
    if (!m.same_shape(models[0]))
      throw std::invalid_argument("fedavg: layer shape mismatch");
  std::vector<double> w;
  if (weights.empty()) {
    w.assign(models.size(), 1.0 / static_cast<double>(models.size()));
  } else {
    if (weights.size() != models.size())
      throw std::invalid_argument("fedavg: weight count mismatch");
    double sum = 0.0;
    for (double wi : weights) {
      if (wi < 0.0) throw std::invalid_argument("fedavg: negative weight");
      sum += wi;
    }
    if (sum <= 0.0) throw std::invalid_argument("fedavg: weights all zero");
    w.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) w[i] = weights[i] / sum;
  }
  ModelParams out = models[0];
  // Per-element contributions are summed in ascending value order, so the
  // result cannot depend on the order the models arrive in. The uniform path
  // additionally anchors at the minimum, which keeps identical inputs exact.
  std::vector<double> contrib(models.size());
  if (weights.empty()) {
    const double inv = 1.0 / static_cast<double>(models.size());
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      double lo = models[0].values[i];
      for (std::size_t k = 1; k < models.size(); ++k)
        lo = std::min(lo, models[k].values[i]);
      for (std::size_t k = 0; k < models.size(); ++k)
        contrib[k] = models[k].values[i] - lo;
      std::sort(contrib.begin(), contrib.end());
      double acc = 0.0;
      for (double c : contrib) acc += c;
      out.values[i] = lo + acc * inv;
    }
    return out;
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    for (std::size_t k = 0; k < models.size(); ++k)
      contrib[k] = w[k] * models[k].values[i];
    std::sort(contrib.begin(), contrib.end());
    double acc = 0.0;
    for (double c : contrib) acc += c;
    out.values[i] = acc;
  }
  return out;
}

// k distinct client ids, uniform without replacement.
inline std::vector<int> sample_clients(const RegionState& region, std::size_t k,
                                       std::uint64_t seed) {
  if (k > region.clients.size())
    throw std::invalid_argument("sample_clients: k exceeds population");
  std::vector<int> ids(region.clients.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = region.clients[i].id;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Euclidean norm of the parameter difference.
inline double weight_divergence(const ModelParams& a, const ModelParams& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("weight_divergence: shape mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

// L1 distance between class-frequency vectors.
inline double probability_distance(std::span<const double> p_client,
                                   std::span<const double> p_global) {
  if (p_client.size() != p_global.size())
    throw std::invalid_argument("probability_distance: length mismatch");
  double sum = 0.0;
  for (std::size_t c = 0; c < p_client.size(); ++c)
    sum += std::abs(p_client[c] - p_global[c]);
  return sum;
}

// Heterogeneity proxy from the gradient dissimilarity inequality:
// A = (1/N) sum_n ||grad f_n(w)||^2, B = ||mean_n grad f_n(w)||^2.
struct GradientDissimilarity {
  double mean_sq_norm = 0.0;  // A
  double sq_norm_mean = 0.0;  // B
};

inline GradientDissimilarity gradient_dissimilarity(
    std::span<const ClientState> clients, const ModelParams& model) {
  if (clients.empty())
    throw std::invalid_argument("gradient_dissimilarity: no clients");
  GradientDissimilarity out;
  std::vector<double> mean_grad(model.values.size(), 0.0);
  for (const ClientState& client : clients) {
    const std::vector<double> g =
        ce_gradient(model, client.shard.features, client.shard.labels, 1.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      sq += g[i] * g[i];
      mean_grad[i] += g[i];
    }
    out.mean_sq_norm += sq;
  }
  const double n = static_cast<double>(clients.size());
  out.mean_sq_norm /= n;
  for (double& g : mean_grad) g /= n;
  for (double g : mean_grad) out.sq_norm_mean += g * g;
  return out;
}

}  // namespace f2l
