#pragma once

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "f2l/orchestrator.hpp"

namespace f2l {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Fail fast on typos: every key must be in the allowed set.
inline void expect_keys(const nlohmann::json& j, const std::string& path,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw config_error("config field is not an object: " + path);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw config_error("unknown config field: " + path + it.key());
  }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& path, const char* key) {
  if (!j.contains(key))
    throw config_error("missing required config field: " + path + key);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error("invalid value for config field: " + path + key);
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& path, const char* key,
         T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error("invalid value for config field: " + path + key);
  }
}

// epsilon accepts a number or the string "inf" (JSON has no infinity literal).
inline double get_epsilon(const nlohmann::json& j, const std::string& path,
                          double fallback) {
  if (!j.contains("epsilon")) return fallback;
  const auto& v = j.at("epsilon");
  if (v.is_string()) {
    if (v.get<std::string>() == "inf")
      return std::numeric_limits<double>::infinity();
    throw config_error("invalid value for config field: " + path + "epsilon");
  }
  if (!v.is_number())
    throw config_error("invalid value for config field: " + path + "epsilon");
  return v.get<double>();
}

inline DataConfig parse_data(const nlohmann::json& j, const std::string& path) {
  const std::string type = require<std::string>(j, path, "type");
  if (type == "gmm") {
    expect_keys(j, path,
                {"type", "classes", "dim", "mean_scale", "variance", "train_n",
                 "eval_n"});
    GmmDataConfig g;
    g.classes = get_or<std::size_t>(j, path, "classes", g.classes);
    g.dim = get_or<std::size_t>(j, path, "dim", g.dim);
    g.mean_scale = get_or<double>(j, path, "mean_scale", g.mean_scale);
    g.variance = get_or<double>(j, path, "variance", g.variance);
    g.train_n = get_or<std::size_t>(j, path, "train_n", g.train_n);
    g.eval_n = get_or<std::size_t>(j, path, "eval_n", g.eval_n);
    return g;
  }
  if (type == "idx") {
    expect_keys(j, path,
                {"type", "train_images", "train_labels", "eval_images",
                 "eval_labels"});
    IdxDataConfig d;
    d.train_images = require<std::string>(j, path, "train_images");
    d.train_labels = require<std::string>(j, path, "train_labels");
    d.eval_images = require<std::string>(j, path, "eval_images");
    d.eval_labels = require<std::string>(j, path, "eval_labels");
    return d;
  }
  throw config_error("invalid value for config field: " + path + "type");
}

}  // namespace detail

// Strict parse of the run configuration: unknown keys are errors, missing
// required fields name themselves in the diagnostic.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::expect_keys;
  using detail::get_or;
  using detail::require;
  expect_keys(j, "",
              {"seed", "data", "partition", "client", "clients_per_round",
               "rounds_per_episode", "total_rounds", "hidden", "distill",
               "injections", "wallclock_timing"});
  RunConfig cfg;
  if (!j.contains("data"))
    throw config_error("missing required config field: data");
  cfg.data = detail::parse_data(j.at("data"), "data.");

  if (!j.contains("partition"))
    throw config_error("missing required config field: partition");
  {
    const auto& p = j.at("partition");
    expect_keys(p, "partition.",
                {"alpha", "regions", "clients_per_region", "server_fraction"});
    cfg.plan.alpha = require<double>(p, "partition.", "alpha");
    cfg.plan.regions = require<std::size_t>(p, "partition.", "regions");
    cfg.plan.clients_per_region =
        require<std::size_t>(p, "partition.", "clients_per_region");
    cfg.plan.server_fraction =
        get_or<double>(p, "partition.", "server_fraction", 0.2);
  }
  if (j.contains("client")) {
    const auto& c = j.at("client");
    expect_keys(c, "client.", {"epochs", "lr", "batch_size"});
    cfg.client.epochs = get_or<std::size_t>(c, "client.", "epochs", cfg.client.epochs);
    cfg.client.lr = get_or<double>(c, "client.", "lr", cfg.client.lr);
    cfg.client.batch_size =
        get_or<std::size_t>(c, "client.", "batch_size", cfg.client.batch_size);
  }
  cfg.clients_per_round =
      get_or<std::size_t>(j, "", "clients_per_round", cfg.clients_per_round);
  cfg.rounds_per_episode =
      get_or<std::size_t>(j, "", "rounds_per_episode", cfg.rounds_per_episode);
  cfg.total_rounds = get_or<std::size_t>(j, "", "total_rounds", cfg.total_rounds);
  cfg.hidden = get_or<std::size_t>(j, "", "hidden", cfg.hidden);
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    expect_keys(d, "distill.",
                {"temperature", "reliability_temperature", "lambda1", "epsilon",
                 "server_epochs", "server_lr", "server_batch",
                 "use_update_distillation"});
    DistillConfig& dc = cfg.distill;
    dc.temperature = get_or<double>(d, "distill.", "temperature", dc.temperature);
    dc.reliability_temperature = get_or<double>(
        d, "distill.", "reliability_temperature", dc.reliability_temperature);
    if (d.contains("lambda1") && !d.at("lambda1").is_null())
      dc.lambda1 = require<double>(d, "distill.", "lambda1");
    else
      dc.lambda1 = std::numeric_limits<double>::quiet_NaN();  // auto schedule
    dc.epsilon = detail::get_epsilon(d, "distill.", dc.epsilon);
    dc.server_epochs =
        get_or<std::size_t>(d, "distill.", "server_epochs", dc.server_epochs);
    dc.server_lr = get_or<double>(d, "distill.", "server_lr", dc.server_lr);
    dc.server_batch =
        get_or<std::size_t>(d, "distill.", "server_batch", dc.server_batch);
    dc.use_update_distillation = get_or<bool>(
        d, "distill.", "use_update_distillation", dc.use_update_distillation);
  } else {
    cfg.distill.lambda1 = std::numeric_limits<double>::quiet_NaN();
  }
  if (j.contains("injections")) {
    const auto& arr = j.at("injections");
    if (!arr.is_array())
      throw config_error("invalid value for config field: injections");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const std::string path = "injections[" + std::to_string(k) + "].";
      expect_keys(arr[k], path, {"round", "clients", "alpha", "data_fraction"});
      InjectionEvent ev;
      ev.round = require<std::size_t>(arr[k], path, "round");
      ev.clients = get_or<std::size_t>(arr[k], path, "clients", ev.clients);
      ev.alpha = get_or<double>(arr[k], path, "alpha", ev.alpha);
      ev.data_fraction =
          get_or<double>(arr[k], path, "data_fraction", ev.data_fraction);
      cfg.injections.push_back(ev);
    }
  }
  cfg.seed = get_or<std::uint64_t>(j, "", "seed", cfg.seed);
  cfg.wallclock_timing =
      get_or<bool>(j, "", "wallclock_timing", cfg.wallclock_timing);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config parse error in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace f2l
