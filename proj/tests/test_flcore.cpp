#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "f2l/datagen.hpp"
#include "f2l/flcore.hpp"
#include "f2l/metrics.hpp"
#include "support/oracles.hpp"

using namespace f2l;

namespace {

Shard separable_shard(std::size_t n, std::uint64_t seed) {
  Shard shard;
  shard.class_count = 2;
  shard.features = Tensor2(n, 2);
  shard.labels.resize(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    shard.labels[i] = y;
    shard.features.at(i, 0) = (y == 0 ? -2.0 : 2.0) + noise(rng);
    shard.features.at(i, 1) = noise(rng);
  }
  return shard;
}

RegionState toy_region(std::size_t clients) {
  RegionState region;
  region.id = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    ClientState c;
    c.id = static_cast<int>(k);
    c.shard = separable_shard(8, 100 + k);
    c.sample_count = c.shard.size();
    region.clients.push_back(std::move(c));
  }
  return region;
}

}  // namespace

TEST_CASE("local_train learns a separable toy shard and is deterministic") {
  const Shard shard = separable_shard(64, 9);
  const ModelParams init = make_mlp(2, 8, 2, 1);
  TrainParams params;
  params.epochs = 0;
  CHECK(local_train(shard, init, params, 5).values == init.values);

  params.epochs = 20;
  params.lr = 0.1;
  params.batch_size = 16;
  const ModelParams trained = local_train(shard, init, params, 5);
  CHECK(top1_accuracy(trained, shard) >= 0.95);

  const ModelParams replay = local_train(shard, init, params, 5);
  CHECK(replay.values == trained.values);  // bit-identical

  CHECK_THROWS_AS(local_train(Shard{}, init, params, 5), std::invalid_argument);
}

TEST_CASE("fedavg analytic cases and the elementwise oracle") {
  std::mt19937_64 rng(13);
  const ModelParams a = oracles::random_model({{3, 4}, {4, 2}}, rng);
  const std::vector<ModelParams> same{a, a, a};
  CHECK(fedavg(same).values == a.values);

  ModelParams lo, hi;
  lo.layer_shapes = hi.layer_shapes = {{1, 1}};
  lo.values = {0.0, 0.0};
  hi.values = {2.0, 2.0};
  const ModelParams mid = fedavg(std::vector<ModelParams>{lo, hi});
  CHECK(mid.values == std::vector<double>{1.0, 1.0});

  std::vector<ModelParams> models;
  for (int k = 0; k < 5; ++k)
    models.push_back(oracles::random_model({{3, 4}, {4, 2}}, rng));
  const ModelParams avg = fedavg(models);
  const std::vector<double> want = oracles::naive_mean_params(models);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(std::abs(avg.values[i] - want[i]) <= 1e-15);

  // Permutation invariance holds exactly.
  std::vector<ModelParams> shuffled{models[3], models[0], models[4], models[1],
                                    models[2]};
  CHECK(fedavg(shuffled).values == avg.values);

  // Duplicating every model leaves the uniform mean unchanged.
  std::vector<ModelParams> doubled = models;
  doubled.insert(doubled.end(), models.begin(), models.end());
  const ModelParams twice = fedavg(doubled);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(twice.values[i] ==
          doctest::Approx(avg.values[i]).epsilon(1e-15).scale(1.0));

  ModelParams odd = a;
  odd.layer_shapes = {{3, 4}, {4, 3}};
  CHECK_THROWS_AS(fedavg(std::vector<ModelParams>{a, odd}),
                  std::invalid_argument);
  CHECK_THROWS_AS(fedavg(std::vector<ModelParams>{a, a},
                         std::vector<double>{0.0, 0.0}),
                  std::invalid_argument);
}

TEST_CASE("fedavg honors sample-count weights") {
  ModelParams lo, hi;
  lo.layer_shapes = hi.layer_shapes = {{1, 1}};
  lo.values = {0.0, 0.0};
  hi.values = {4.0, 4.0};
  const ModelParams w = fedavg(std::vector<ModelParams>{lo, hi},
                               std::vector<double>{3.0, 1.0});
  CHECK(w.values == std::vector<double>{1.0, 1.0});
}

TEST_CASE("sample_clients is uniform without replacement") {
  const RegionState region = toy_region(10);
  const std::vector<int> all = sample_clients(region, 10, 77);
  CHECK(all.size() == 10);
  for (int k = 0; k < 10; ++k) CHECK(all[k] == k);

  CHECK(sample_clients(region, 4, 123) == sample_clients(region, 4, 123));
  CHECK_THROWS_AS(sample_clients(region, 11, 1), std::invalid_argument);

  const std::size_t draws = 10000;
  std::vector<std::size_t> hits(10, 0);
  for (std::size_t d = 0; d < draws; ++d)
    for (int id : sample_clients(region, 4, 1000 + d)) ++hits[id];
  const double p = 0.4;
  const double se = std::sqrt(p * (1 - p) / static_cast<double>(draws));
  for (std::size_t k = 0; k < 10; ++k) {
    const double freq = static_cast<double>(hits[k]) / static_cast<double>(draws);
    CHECK(std::abs(freq - p) < 3.0 * se);
  }
}

TEST_CASE("weight_divergence is a metric on parameter vectors") {
  std::mt19937_64 rng(29);
  const ModelParams a = oracles::random_model({{2, 3}, {3, 2}}, rng);
  CHECK(weight_divergence(a, a) == 0.0);

  ModelParams ones, zeros;
  ones.layer_shapes = zeros.layer_shapes = {{1, 1}};
  ones.values = {1.0, 1.0};
  zeros.values = {0.0, 0.0};
  CHECK(weight_divergence(ones, zeros) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams x = oracles::random_model({{2, 3}, {3, 2}}, rng);
    const ModelParams y = oracles::random_model({{2, 3}, {3, 2}}, rng);
    const ModelParams z = oracles::random_model({{2, 3}, {3, 2}}, rng);
    double sq = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      const double d = x.values[i] - y.values[i];
      sq += d * d;
    }
    CHECK(std::abs(weight_divergence(x, y) - std::sqrt(sq)) < 1e-12);
    CHECK(weight_divergence(x, z) <=
          weight_divergence(x, y) + weight_divergence(y, z) + 1e-12);
  }

  ModelParams odd = a;
  odd.layer_shapes = {{2, 3}, {3, 3}};
  CHECK_THROWS_AS(weight_divergence(a, odd), std::invalid_argument);
}

TEST_CASE("probability_distance is the L1 gap between class frequencies") {
  const std::vector<double> e1{1.0, 0.0, 0.0};
  const std::vector<double> e2{0.0, 1.0, 0.0};
  CHECK(probability_distance(e1, e1) == 0.0);
  CHECK(probability_distance(e1, e2) == doctest::Approx(2.0).epsilon(1e-12));

  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracles::random_prob_vector(6, rng);
    const auto q = oracles::random_prob_vector(6, rng);
    double want = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) want += std::abs(p[c] - q[c]);
    CHECK(std::abs(probability_distance(p, q) - want) < 1e-12);
  }
  CHECK_THROWS_AS(probability_distance(e1, std::vector<double>{0.5, 0.5}),
                  std::invalid_argument);
}

TEST_CASE("gradient dissimilarity: Jensen gap and per-sample oracle") {
  const ModelParams model = make_mlp(2, 4, 2, 3);

  // Identical shards: zero heterogeneity, A equals B.
  std::vector<ClientState> same(3);
  for (auto& c : same) c.shard = separable_shard(16, 5);
  const GradientDissimilarity eq = gradient_dissimilarity(same, model);
  CHECK(std::abs(eq.mean_sq_norm - eq.sq_norm_mean) < 1e-10);

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<ClientState> clients(4);
    for (std::size_t k = 0; k < clients.size(); ++k)
      clients[k].shard = separable_shard(12, 50 * trial + k);
    const GradientDissimilarity gd = gradient_dissimilarity(clients, model);
    CHECK(gd.mean_sq_norm >= gd.sq_norm_mean - 1e-10);  // Jensen

    // Brute force from per-sample gradients.
    std::vector<double> mean_grad(model.values.size(), 0.0);
    double mean_sq = 0.0;
    for (const ClientState& client : clients) {
      std::vector<double> g(model.values.size(), 0.0);
      for (std::size_t i = 0; i < client.shard.size(); ++i) {
        Tensor2 one(1, 2);
        std::copy(client.shard.features.row(i).begin(),
                  client.shard.features.row(i).end(), one.row(0).begin());
        const std::vector<int> y{client.shard.labels[i]};
        const auto gi = ce_gradient(model, one, y, 1.0);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
      }
      double sq = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        g[j] /= static_cast<double>(client.shard.size());
        sq += g[j] * g[j];
        mean_grad[j] += g[j];
      }
      mean_sq += sq;
    }
    mean_sq /= static_cast<double>(clients.size());
    double sq_of_mean = 0.0;
    for (double g : mean_grad) {
      const double m = g / static_cast<double>(clients.size());
      sq_of_mean += m * m;
    }
    CHECK(std::abs(gd.mean_sq_norm - mean_sq) < 1e-8);
    CHECK(std::abs(gd.sq_norm_mean - sq_of_mean) < 1e-8);
  }
  CHECK_THROWS_AS(gradient_dissimilarity(std::vector<ClientState>{}, model),
                  std::invalid_argument);
}
