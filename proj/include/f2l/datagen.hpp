#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "f2l/dataset.hpp"
#include "f2l/rng.hpp"

namespace f2l {

struct infeasible_partition : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gaussian mixture: per-class mean vectors, per-class diagonal variances,
// mixture weights.
struct GmmSpec {
  Tensor2 means;      // C x d
  Tensor2 variances;  // C x d, diagonal entries
  std::vector<double> weights;

  std::size_t classes() const { return means.rows; }
  std::size_t dim() const { return means.cols; }
};

inline void validate(const GmmSpec& spec) {
  if (spec.means.rows == 0 || spec.means.cols == 0)
    throw std::invalid_argument("gmm: empty spec");
  if (spec.variances.rows != spec.means.rows ||
      spec.variances.cols != spec.means.cols)
    throw std::invalid_argument("gmm: variance shape mismatch");
  if (spec.weights.size() != spec.means.rows)
    throw std::invalid_argument("gmm: weight count mismatch");
  double sum = 0.0;
  for (double w : spec.weights) {
    if (w < 0.0) throw std::invalid_argument("gmm: negative mixture weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("gmm: mixture weights must sum to 1");
  for (double v : spec.variances.data)
    if (!(v > 0.0)) throw std::invalid_argument("gmm: nonpositive variance");
}

// Isotropic mixture with random class means of the given norm scale; the
// desk-scale stand-in task.
inline GmmSpec make_blob_spec(std::size_t classes, std::size_t dim,
                              double mean_scale, double variance,
                              std::uint64_t seed) {
  GmmSpec spec;
  spec.means = Tensor2(classes, dim);
  spec.variances = Tensor2(classes, dim, variance);
  spec.weights.assign(classes, 1.0 / static_cast<double>(classes));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : spec.means.data) v = mean_scale * normal(rng);
  return spec;
}

inline Dataset gmm_sample(const GmmSpec& spec, std::size_t n, std::uint64_t seed) {
  validate(spec);
  Dataset ds;
  ds.class_count = static_cast<int>(spec.classes());
  ds.features = Tensor2(n, spec.dim());
  ds.labels.resize(n);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> cat(spec.weights.begin(), spec.weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = cat(rng);
    ds.labels[i] = c;
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < spec.dim(); ++j)
      row[j] = spec.means.at(c, j) + std::sqrt(spec.variances.at(c, j)) * normal(rng);
  }
  return ds;
}

// One draw from Dirichlet(alphas) via normalized gammas.
inline std::vector<double> dirichlet_sample(std::mt19937_64& rng,
                                            std::span<const double> alphas) {
  std::vector<double> draw(alphas.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    std::gamma_distribution<double> gamma(alphas[i], 1.0);
    draw[i] = gamma(rng);
    sum += draw[i];
  }
  if (sum <= 0.0) {  // all-zero underflow; fall back to uniform
    std::fill(draw.begin(), draw.end(), 1.0 / static_cast<double>(draw.size()));
    return draw;
  }
  for (double& d : draw) d /= sum;
  return draw;
}

struct PartitionPlan {
  double alpha = 0.5;
  std::size_t regions = 3;
  std::size_t clients_per_region = 10;
  double server_fraction = 0.2;
  std::uint64_t seed = 0;
};

inline void validate(const PartitionPlan& plan) {
  if (!(plan.alpha > 0.0))
    throw std::invalid_argument("partition: alpha must be positive");
  if (plan.regions == 0 || plan.clients_per_region == 0)
    throw std::invalid_argument("partition: empty topology");
  if (plan.server_fraction < 0.0 || plan.server_fraction >= 1.0)
    throw std::invalid_argument("partition: server_fraction out of [0,1)");
}

struct Partition {
  std::vector<std::vector<Shard>> shards;  // [region][client]
  Shard server_pool;
};

// Server pool drawn uniformly first, then the remaining samples are split per
// class with proportions Dirichlet(alpha,...,alpha) across all clients.
// Shards are disjoint and jointly exhaustive with the pool.
inline Partition dirichlet_partition(const Dataset& ds, const PartitionPlan& plan) {
  validate(plan);
  if (ds.empty()) throw std::invalid_argument("partition: empty dataset");
  const std::size_t clients = plan.regions * plan.clients_per_region;

  std::mt19937_64 rng = make_rng(plan.seed, "partition");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t pool_n =
      static_cast<std::size_t>(plan.server_fraction * static_cast<double>(ds.size()));
  Partition part;
  part.server_pool = subset(ds, std::span(order).first(pool_n));

  // Remaining indices grouped per class, in shuffled order.
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t k = pool_n; k < order.size(); ++k)
    by_class[ds.labels[order[k]]].push_back(order[k]);

  std::vector<std::vector<std::size_t>> assigned(clients);
  std::vector<double> alphas(clients, plan.alpha);
  for (int c = 0; c < ds.class_count; ++c) {
    const auto& pool = by_class[c];
    if (pool.empty()) continue;
    const std::vector<double> prop = dirichlet_sample(rng, alphas);
    std::vector<std::size_t> take(clients);
    std::size_t total = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      take[k] = static_cast<std::size_t>(prop[k] * static_cast<double>(pool.size()));
      total += take[k];
    }
    // Rounding leftovers go to the currently smallest client.
    for (std::size_t left = pool.size() - total; left > 0; --left) {
      std::size_t smallest = 0;
      for (std::size_t k = 1; k < clients; ++k)
        if (assigned[k].size() + take[k] < assigned[smallest].size() + take[smallest])
          smallest = k;
      ++take[smallest];
    }
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      for (std::size_t t = 0; t < take[k]; ++t)
        assigned[k].push_back(pool[cursor++]);
    }
  }

  for (std::size_t k = 0; k < clients; ++k) {
    if (assigned[k].empty())
      throw infeasible_partition("partition: client " + std::to_string(k) +
                                 " would receive no samples");
  }

  part.shards.resize(plan.regions);
  for (std::size_t r = 0; r < plan.regions; ++r) {
    part.shards[r].reserve(plan.clients_per_region);
    for (std::size_t k = 0; k < plan.clients_per_region; ++k)
      part.shards[r].push_back(
          subset(ds, assigned[r * plan.clients_per_region + k]));
  }
  return part;
}

}  // namespace f2l
