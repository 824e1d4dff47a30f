#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "f2l/datagen.hpp"
#include "f2l/flcore.hpp"
#include "f2l/idx.hpp"
#include "f2l/lkd.hpp"
#include "f2l/metrics.hpp"

namespace f2l {

struct GmmDataConfig {
  std::size_t classes = 10;
  std::size_t dim = 16;
  double mean_scale = 2.0;
  double variance = 1.0;
  std::size_t train_n = 6000;
  std::size_t eval_n = 2000;
};

struct IdxDataConfig {
  std::string train_images;
  std::string train_labels;
  std::string eval_images;
  std::string eval_labels;
};

using DataConfig = std::variant<GmmDataConfig, IdxDataConfig>;

// A new region joining mid-run, fed from a reserved slice of the dataset the
// initial partition never saw.
struct InjectionEvent {
  std::size_t round = 0;
  std::size_t clients = 3;
  double alpha = 0.1;
  double data_fraction = 0.2;
};

struct RunConfig {
  DataConfig data;
  PartitionPlan plan;
  TrainParams client;
  std::size_t clients_per_round = 0;  // 0 = all clients participate
  std::size_t rounds_per_episode = 2;
  std::size_t total_rounds = 6;
  std::size_t hidden = 64;
  DistillConfig distill;
  std::vector<InjectionEvent> injections;
  std::uint64_t seed = 1;
  bool wallclock_timing = false;  // off by default so logs are reproducible
};

inline void validate(const RunConfig& cfg) {
  validate(cfg.plan);
  if (cfg.rounds_per_episode == 0 || cfg.total_rounds < cfg.rounds_per_episode)
    throw std::invalid_argument(
        "run: total_rounds must be >= rounds_per_episode >= 1");
  for (const InjectionEvent& ev : cfg.injections) {
    if (ev.round == 0 || ev.round > cfg.total_rounds)
      throw std::invalid_argument("run: injection round out of range");
    if (ev.clients == 0 || !(ev.alpha > 0.0) || ev.data_fraction <= 0.0 ||
        ev.data_fraction >= 1.0)
      throw std::invalid_argument("run: malformed injection event");
  }
}

struct RoundRecord {
  std::size_t round = 0;
  std::vector<double> region_top1;
  double global_top1 = 0.0;
  std::vector<double> per_class_acc;
  double beta_spread = std::numeric_limits<double>::quiet_NaN();
  std::string aggregator = "none";  // none | LKD | FedAvg
  double seconds_global_step = 0.0;
};

struct RunLog {
  std::vector<RoundRecord> records;
};

struct RunResult {
  RunLog log;
  ModelParams global_model;
  std::vector<RegionState> regions;
  Tensor2 last_beta;  // empty if LKD reliability was never evaluated
};

// Worst-class spread of the reliability weights across regions.
inline double beta_spread(const Tensor2& beta) {
  double spread = 0.0;
  for (std::size_t c = 0; c < beta.cols; ++c) {
    double lo = beta.at(0, c), hi = beta.at(0, c);
    for (std::size_t r = 1; r < beta.rows; ++r) {
      lo = std::min(lo, beta.at(r, c));
      hi = std::max(hi, beta.at(r, c));
    }
    spread = std::max(spread, hi - lo);
  }
  return spread;
}

inline double beta_spread(const ReliabilityMatrix& rel) {
  return beta_spread(rel.beta);
}

// One communication round inside a region: every participant trains from the
// regional model, then the region aggregates in ascending client id order.
// Client RNG streams are keyed by client id and round only, so a region's
// trajectory cannot depend on any other region.
inline void regional_round(RegionState& region, const TrainParams& params,
                           std::uint64_t root_seed, std::size_t round,
                           std::size_t clients_per_round = 0) {
  if (region.clients.empty())
    throw std::invalid_argument("regional_round: region has no clients");
  std::vector<int> participants;
  if (clients_per_round == 0 || clients_per_round >= region.clients.size()) {
    for (const ClientState& c : region.clients) participants.push_back(c.id);
  } else {
    participants = sample_clients(
        region, clients_per_round,
        substream(root_seed, "sample:" + std::to_string(region.id) + ":" +
                                 std::to_string(round)));
  }
  std::sort(participants.begin(), participants.end());
  std::vector<ModelParams> trained;
  trained.reserve(participants.size());
  for (int id : participants) {
    for (ClientState& client : region.clients) {
      if (client.id != id) continue;
      client.model = local_train(
          client.shard, region.regional_model, params,
          substream(root_seed, "client:" + std::to_string(id) + ":round:" +
                                   std::to_string(round)));
      trained.push_back(client.model);
    }
  }
  region.regional_model = fedavg(trained);
}

struct GlobalStepResult {
  ModelParams model;
  std::string aggregator;
  double spread = std::numeric_limits<double>::quiet_NaN();
  Tensor2 beta;
};

// The episode-boundary aggregation: LKD when the label-driven reliability
// spread is at least epsilon, plain FedAvg otherwise. An infinite epsilon
// short-circuits to FedAvg without evaluating any reliability.
inline GlobalStepResult global_step(std::span<const RegionState> regions,
                                    const ModelParams& global_model,
                                    const Dataset& pool, const Dataset& valset,
                                    const DistillConfig& cfg,
                                    std::uint64_t distill_seed) {
  if (regions.empty()) throw std::invalid_argument("global_step: no regions");
  std::vector<ModelParams> teachers;
  teachers.reserve(regions.size());
  for (const RegionState& r : regions) teachers.push_back(r.regional_model);

  GlobalStepResult out;
  if (std::isinf(cfg.epsilon) && cfg.epsilon > 0.0) {
    out.model = fedavg(teachers);
    out.aggregator = "FedAvg";
    return out;
  }
  out.beta = class_reliability(teachers, valset, cfg.reliability_temperature);
  out.spread = beta_spread(out.beta);
  if (out.spread >= cfg.epsilon) {
    out.model = distill(teachers, global_model, global_model, pool, valset, cfg,
                        distill_seed);
    out.aggregator = "LKD";
  } else {
    out.model = fedavg(teachers);
    out.aggregator = "FedAvg";
  }
  return out;
}

namespace detail {

// Lambda coefficients resolved against the current region count. A NaN
// lambda1 selects the default schedule landing on lambda3 = 0.01.
inline DistillConfig resolve_lambdas(DistillConfig cfg, std::size_t regions) {
  if (std::isnan(cfg.lambda1))
    cfg.lambda1 =
        lambda1_for_lambda3(regions, 0.01, cfg.use_update_distillation);
  const auto [l2, l3] =
      lambda_schedule(regions, cfg.lambda1, cfg.use_update_distillation);
  cfg.lambda2 = l2;
  cfg.lambda3 = l3;
  return cfg;
}

struct SimSetup {
  Dataset eval;
  Dataset pool;  // server pool: distillation samples and reliability valset
  std::vector<RegionState> regions;
  std::vector<Dataset> injection_reserves;
  std::size_t feature_dim = 0;
  int classes = 0;
};

inline Dataset build_dataset(const DataConfig& data, std::uint64_t root,
                             bool eval_split) {
  if (const auto* gmm = std::get_if<GmmDataConfig>(&data)) {
    const GmmSpec spec =
        make_blob_spec(gmm->classes, gmm->dim, gmm->mean_scale, gmm->variance,
                       substream(root, "gmmspec"));
    return gmm_sample(spec, eval_split ? gmm->eval_n : gmm->train_n,
                      substream(root, eval_split ? "gmm:eval" : "gmm:train"));
  }
  const auto& idx = std::get<IdxDataConfig>(data);
  return eval_split ? load_idx(idx.eval_images, idx.eval_labels)
                    : load_idx(idx.train_images, idx.train_labels);
}

inline std::vector<RegionState> regions_from_shards(
    std::vector<std::vector<Shard>> shards, int first_region_id,
    int first_client_id, const ModelParams& init) {
  std::vector<RegionState> regions;
  int next_client = first_client_id;
  for (std::size_t r = 0; r < shards.size(); ++r) {
    RegionState region;
    region.id = first_region_id + static_cast<int>(r);
    region.regional_model = init;
    for (Shard& shard : shards[r]) {
      ClientState client;
      client.id = next_client++;
      client.sample_count = shard.size();
      client.shard = std::move(shard);
      client.model = init;
      region.clients.push_back(std::move(client));
    }
    regions.push_back(std::move(region));
  }
  return regions;
}

inline SimSetup build_setup(const RunConfig& cfg, const ModelParams& init) {
  SimSetup setup;
  Dataset train = build_dataset(cfg.data, cfg.seed, false);
  setup.eval = build_dataset(cfg.data, cfg.seed, true);
  setup.feature_dim = train.features.cols;
  setup.classes = train.class_count;

  // Injection reserves come off the top so the initial partition never sees
  // that data.
  std::vector<std::size_t> remaining(train.size());
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  for (std::size_t k = 0; k < cfg.injections.size(); ++k) {
    auto rng = make_rng(cfg.seed, "inject:" + std::to_string(k));
    std::shuffle(remaining.begin(), remaining.end(), rng);
    const std::size_t take = std::min(
        remaining.size() - 1,
        static_cast<std::size_t>(cfg.injections[k].data_fraction *
                                 static_cast<double>(train.size())));
    setup.injection_reserves.push_back(
        subset(train, std::span(remaining).first(take)));
    remaining.erase(remaining.begin(), remaining.begin() + take);
  }
  const Dataset base =
      cfg.injections.empty() ? std::move(train) : subset(train, remaining);

  PartitionPlan plan = cfg.plan;
  plan.seed = cfg.seed;
  Partition part = dirichlet_partition(base, plan);
  setup.pool = std::move(part.server_pool);
  setup.regions = regions_from_shards(std::move(part.shards), 0, 0, init);
  return setup;
}

// A joining region has never trained with the federation, so its clients
// start from a fresh seeded initialization, not from the broadcast global.
inline void inject_region(std::vector<RegionState>& regions, SimSetup& setup,
                          const RunConfig& cfg, std::size_t k) {
  const InjectionEvent& ev = cfg.injections[k];
  PartitionPlan plan;
  plan.alpha = ev.alpha;
  plan.regions = 1;
  plan.clients_per_region = ev.clients;
  plan.server_fraction = 0.0;
  plan.seed = substream(cfg.seed, "inject-part:" + std::to_string(k));
  Partition part = dirichlet_partition(setup.injection_reserves[k], plan);
  const ModelParams init =
      make_mlp(setup.feature_dim, cfg.hidden, setup.classes,
               substream(cfg.seed, "inject-init:" + std::to_string(k)));
  int next_client = 0;
  for (const RegionState& r : regions)
    for (const ClientState& c : r.clients)
      next_client = std::max(next_client, c.id + 1);
  std::vector<RegionState> fresh = regions_from_shards(
      std::move(part.shards), regions.back().id + 1, next_client, init);
  for (RegionState& r : fresh) regions.push_back(std::move(r));
}

// Regional accuracies are taken before any broadcast so episode rounds report
// the teachers as trained, not the freshly distributed global model.
inline void record_regions(RoundRecord& rec, std::span<const RegionState> regions,
                           const Dataset& eval) {
  for (const RegionState& r : regions)
    rec.region_top1.push_back(top1_accuracy(r.regional_model, eval));
}

inline void record_global(RoundRecord& rec, const ModelParams& global,
                          const Dataset& eval) {
  const ConfusionMatrix cm = confusion_matrix(global, eval);
  rec.global_top1 = top1_accuracy(cm);
  rec.per_class_acc = per_class_accuracy(cm);
}

}  // namespace detail

// Full simulation: per-round regional FedAvg, a global step every
// rounds_per_episode rounds, scheduled region injection, per-round metrics.
inline RunResult run(const RunConfig& cfg) {
  validate(cfg);
  ModelParams init;
  detail::SimSetup setup = [&] {
    // Model init needs the data dimensions, so build data first with a
    // placeholder and patch the models after.
    detail::SimSetup s = detail::build_setup(cfg, ModelParams{});
    init = make_mlp(s.feature_dim, cfg.hidden, s.classes,
                    substream(cfg.seed, "init"));
    for (RegionState& r : s.regions) {
      r.regional_model = init;
      for (ClientState& c : r.clients) c.model = init;
    }
    return s;
  }();

  ModelParams global = init;
  RunResult result;
  for (std::size_t round = 1; round <= cfg.total_rounds; ++round) {
    for (std::size_t k = 0; k < cfg.injections.size(); ++k)
      if (cfg.injections[k].round == round)
        detail::inject_region(setup.regions, setup, cfg, k);

    for (RegionState& region : setup.regions)
      regional_round(region, cfg.client, cfg.seed, round, cfg.clients_per_round);

    RoundRecord rec;
    rec.round = round;
    detail::record_regions(rec, setup.regions, setup.eval);
    if (round % cfg.rounds_per_episode == 0) {
      const std::size_t episode = round / cfg.rounds_per_episode;
      const DistillConfig dc =
          detail::resolve_lambdas(cfg.distill, setup.regions.size());
      const auto t0 = std::chrono::steady_clock::now();
      GlobalStepResult step =
          global_step(setup.regions, global, setup.pool, setup.pool, dc,
                      substream(cfg.seed, "distill:" + std::to_string(episode)));
      if (cfg.wallclock_timing)
        rec.seconds_global_step =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
      global = std::move(step.model);
      rec.aggregator = step.aggregator;
      rec.beta_spread = step.spread;
      if (step.beta.rows > 0) result.last_beta = std::move(step.beta);
      for (RegionState& region : setup.regions) region.regional_model = global;
    }
    detail::record_global(rec, global, setup.eval);
    result.log.records.push_back(std::move(rec));
  }
  result.global_model = std::move(global);
  result.regions = std::move(setup.regions);
  return result;
}

// Reference hierarchical FedAvg loop with no distillation machinery at all;
// the epsilon = +inf run must reproduce it bit for bit.
inline RunResult run_fedavg_baseline(const RunConfig& cfg) {
  validate(cfg);
  ModelParams init;
  detail::SimSetup setup = [&] {
    detail::SimSetup s = detail::build_setup(cfg, ModelParams{});
    init = make_mlp(s.feature_dim, cfg.hidden, s.classes,
                    substream(cfg.seed, "init"));
    for (RegionState& r : s.regions) {
      r.regional_model = init;
      for (ClientState& c : r.clients) c.model = init;
    }
    return s;
  }();

  ModelParams global = init;
  RunResult result;
  for (std::size_t round = 1; round <= cfg.total_rounds; ++round) {
    for (std::size_t k = 0; k < cfg.injections.size(); ++k)
      if (cfg.injections[k].round == round)
        detail::inject_region(setup.regions, setup, cfg, k);

    for (RegionState& region : setup.regions)
      regional_round(region, cfg.client, cfg.seed, round, cfg.clients_per_round);

    RoundRecord rec;
    rec.round = round;
    detail::record_regions(rec, setup.regions, setup.eval);
    if (round % cfg.rounds_per_episode == 0) {
      std::vector<ModelParams> teachers;
      for (const RegionState& r : setup.regions)
        teachers.push_back(r.regional_model);
      global = fedavg(teachers);
      rec.aggregator = "FedAvg";
      for (RegionState& region : setup.regions) region.regional_model = global;
    }
    detail::record_global(rec, global, setup.eval);
    result.log.records.push_back(std::move(rec));
  }
  result.global_model = std::move(global);
  result.regions = std::move(setup.regions);
  return result;
}

}  // namespace f2l
