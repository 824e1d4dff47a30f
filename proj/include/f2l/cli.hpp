#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "f2l/config.hpp"
#include "f2l/io.hpp"

namespace f2l {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;

namespace detail {

// Console summaries only; files keep full precision.
inline std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct CliOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  std::size_t trials = 1000;
  std::uint64_t theory_seed = 7;
  std::size_t theory_regions = 3;
  std::size_t theory_classes = 5;
};

inline RunConfig load_config(const CliOptions& opt) {
  if (opt.config_path.empty())
    throw config_error("missing required config field: --config");
  RunConfig cfg = load_run_config(opt.config_path);
  if (opt.seed_override) cfg.seed = *opt.seed_override;
  return cfg;
}

inline std::filesystem::path ensure_out_dir(const CliOptions& opt) {
  std::filesystem::path dir(opt.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline int cmd_partition(const CliOptions& opt) {
  const RunConfig cfg = load_config(opt);
  const auto dir = ensure_out_dir(opt);
  const Dataset train = build_dataset(cfg.data, cfg.seed, false);
  PartitionPlan plan = cfg.plan;
  plan.seed = cfg.seed;
  const Partition part = dirichlet_partition(train, plan);

  atomic_write(dir / "server_pool.csv", dataset_csv(part.server_pool));
  std::ostringstream summary;
  summary << "region,client,total";
  for (int c = 0; c < train.class_count; ++c) summary << ",class_" << c;
  summary << '\n';
  for (std::size_t r = 0; r < part.shards.size(); ++r) {
    for (std::size_t k = 0; k < part.shards[r].size(); ++k) {
      const Shard& shard = part.shards[r][k];
      atomic_write(dir / ("shard_r" + std::to_string(r) + "_c" +
                          std::to_string(k) + ".csv"),
                   dataset_csv(shard));
      summary << r << ',' << k << ',' << shard.size();
      for (std::size_t n : class_counts(shard)) summary << ',' << n;
      summary << '\n';
    }
  }
  atomic_write(dir / "partition_summary.csv", summary.str());
  std::cout << "partition: " << part.shards.size() << " regions, pool "
            << part.server_pool.size() << " samples -> " << dir.string()
            << '\n';
  return kExitOk;
}

inline int cmd_run(const CliOptions& opt) {
  const RunConfig cfg = load_config(opt);
  const auto dir = ensure_out_dir(opt);
  const RunResult result = run(cfg);

  atomic_write(dir / "runlog.jsonl", runlog_jsonl(result.log));
  atomic_write(dir / "summary.csv", summary_csv(result.log));
  if (result.last_beta.rows > 0) {
    ReliabilityMatrix rel;
    rel.beta = result.last_beta;
    rel.temperature = cfg.distill.reliability_temperature;
    atomic_write(dir / "reliability.csv", reliability_csv(rel));
  }
  const Dataset eval = build_dataset(cfg.data, cfg.seed, true);
  atomic_write(dir / "confusion_global.csv",
               confusion_csv(confusion_matrix(result.global_model, eval)));
  const RoundRecord& last = result.log.records.back();
  std::cout << "run: " << result.log.records.size() << " rounds, final top-1 "
            << brief(last.global_top1) << " -> " << dir.string()
            << '\n';
  return kExitOk;
}

// One episode of regional training followed by a single forced distillation;
// reports teacher and student accuracies side by side.
inline int cmd_distill(const CliOptions& opt) {
  const RunConfig cfg = load_config(opt);
  const auto dir = ensure_out_dir(opt);
  validate(cfg);

  SimSetup setup = build_setup(cfg, ModelParams{});
  const ModelParams init = make_mlp(setup.feature_dim, cfg.hidden, setup.classes,
                                    substream(cfg.seed, "init"));
  for (RegionState& r : setup.regions) {
    r.regional_model = init;
    for (ClientState& c : r.clients) c.model = init;
  }
  for (std::size_t round = 1; round <= cfg.rounds_per_episode; ++round)
    for (RegionState& region : setup.regions)
      regional_round(region, cfg.client, cfg.seed, round, cfg.clients_per_round);

  std::vector<ModelParams> teachers;
  for (const RegionState& r : setup.regions)
    teachers.push_back(r.regional_model);
  const DistillConfig dc = resolve_lambdas(cfg.distill, teachers.size());
  const ModelParams student =
      distill(teachers, init, init, setup.pool, setup.pool, dc,
              substream(cfg.seed, "distill:1"));

  ReliabilityMatrix rel;
  rel.temperature = dc.reliability_temperature;
  rel.beta = class_reliability(teachers, setup.pool, dc.reliability_temperature);
  rel.beta_old =
      old_model_reliability(init, student, setup.pool, dc.reliability_temperature);
  atomic_write(dir / "reliability.csv", reliability_csv(rel));

  nlohmann::json report;
  report["beta_spread"] = beta_spread(rel.beta);
  report["teacher_top1"] = nlohmann::json::array();
  for (std::size_t r = 0; r < teachers.size(); ++r) {
    const ConfusionMatrix cm = confusion_matrix(teachers[r], setup.eval);
    report["teacher_top1"].push_back(top1_accuracy(cm));
    atomic_write(dir / ("confusion_teacher_" + std::to_string(r) + ".csv"),
                 confusion_csv(cm));
  }
  const ConfusionMatrix student_cm = confusion_matrix(student, setup.eval);
  report["student_top1"] = top1_accuracy(student_cm);
  atomic_write(dir / "confusion_student.csv", confusion_csv(student_cm));
  atomic_write(dir / "distill_report.json", report.dump(2) + "\n");
  std::cout << "distill: student top-1 " << brief(top1_accuracy(student_cm))
            << " vs teachers";
  for (const auto& t : report["teacher_top1"])
    std::cout << ' ' << brief(t.get<double>());
  std::cout << " -> " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_verify_theory(const CliOptions& opt) {
  const auto dir = ensure_out_dir(opt);
  const TheoryReport rep = check_theorems(opt.trials, opt.theory_regions,
                                          opt.theory_classes, opt.theory_seed);
  atomic_write(dir / "theory_report.json", theory_report_json(rep));
  std::cout << "verify-theory: " << rep.trials << " trials, violations "
            << rep.violations_t1 << '/' << rep.violations_t2 << " -> "
            << (dir / "theory_report.json").string() << '\n';
  return rep.violations_t1 == 0 && rep.violations_t2 == 0 ? kExitOk : 1;
}

inline int cmd_report(const CliOptions& opt) {
  const auto dir = ensure_out_dir(opt);
  const auto log_path = dir / "runlog.jsonl";
  std::ifstream in(log_path);
  if (!in) throw io_error("cannot open " + log_path.string());
  const RunLog log = parse_runlog_jsonl(in);
  if (log.records.empty()) throw io_error("empty run log: " + log_path.string());
  atomic_write(dir / "summary.csv", summary_csv(log));
  std::size_t lkd = 0, avg = 0;
  for (const RoundRecord& r : log.records) {
    lkd += r.aggregator == "LKD";
    avg += r.aggregator == "FedAvg";
  }
  std::cout << "report: " << log.records.size() << " rounds, final top-1 "
            << brief(log.records.back().global_top1) << ", LKD steps "
            << lkd << ", FedAvg steps " << avg << '\n';
  return kExitOk;
}

}  // namespace detail

// Entry point shared by the binary and the tests. `args` is argv-style,
// including the program name.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Hierarchical federated learning simulator with label-driven "
               "knowledge distillation"};
  app.require_subcommand(1);
  detail::CliOptions opt;

  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opt.config_path, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--seed", opt.seed_override, "root seed override");
  };
  add_common(app.add_subcommand("partition", "materialize a Dirichlet partition"),
             true);
  add_common(app.add_subcommand("run", "full federated run"), true);
  add_common(app.add_subcommand("distill", "single distillation episode"), true);
  auto* theory =
      app.add_subcommand("verify-theory", "numerical theorem verification");
  theory->add_option("--trials", opt.trials, "ensembles to sample");
  theory->add_option("--seed", opt.theory_seed, "sampling seed");
  theory->add_option("--regions", opt.theory_regions, "teachers per ensemble");
  theory->add_option("--classes", opt.theory_classes, "classes per ensemble");
  theory->add_option("--out", opt.out_dir, "output directory");
  auto* report = app.add_subcommand("report", "summarize an existing run log");
  report->add_option("--out", opt.out_dir, "directory holding runlog.jsonl")
      ->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    if (app.got_subcommand("partition")) return detail::cmd_partition(opt);
    if (app.got_subcommand("run")) return detail::cmd_run(opt);
    if (app.got_subcommand("distill")) return detail::cmd_distill(opt);
    if (app.got_subcommand("verify-theory")) return detail::cmd_verify_theory(opt);
    if (app.got_subcommand("report")) return detail::cmd_report(opt);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const format_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const infeasible_partition& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const io_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  }
  return kExitConfigError;
}

}  // namespace f2l
