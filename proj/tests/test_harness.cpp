#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "f2l/cli.hpp"
#include "f2l/config.hpp"
#include "f2l/io.hpp"
#include "f2l/metrics.hpp"
#include "support/oracles.hpp"

using namespace f2l;

namespace {

Dataset labeled_line(std::vector<double> xs, std::vector<int> ys, int classes) {
  Dataset ds;
  ds.class_count = classes;
  ds.features = Tensor2(xs.size(), 1);
  std::copy(xs.begin(), xs.end(), ds.features.data.begin());
  ds.labels = std::move(ys);
  return ds;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

nlohmann::json base_config() {
  return nlohmann::json{
      {"seed", 3},
      {"data",
       {{"type", "gmm"},
        {"classes", 4},
        {"dim", 4},
        {"mean_scale", 2.5},
        {"variance", 1.0},
        {"train_n", 400},
        {"eval_n", 200}}},
      {"partition",
       {{"alpha", 0.5},
        {"regions", 2},
        {"clients_per_region", 2},
        {"server_fraction", 0.2}}},
      {"client", {{"epochs", 1}, {"lr", 0.1}, {"batch_size", 32}}},
      {"rounds_per_episode", 2},
      {"total_rounds", 2},
      {"hidden", 8},
      {"distill",
       {{"server_epochs", 2}, {"server_lr", 0.1}, {"server_batch", 32}}}};
}

}  // namespace

TEST_CASE("confusion matrix counts and the trace identity") {
  // w = (1, -1): class 0 for positive inputs.
  ModelParams model;
  model.layer_shapes = {{1, 2}};
  model.values = {1.0, -1.0, 0.0, 0.0};
  const Dataset perfect =
      labeled_line({1.0, 2.0, -1.0, -2.0, 3.0, -0.5}, {0, 0, 1, 1, 0, 1}, 2);
  const ConfusionMatrix cm = confusion_matrix(model, perfect);
  CHECK(cm.at(0, 0) == 3);
  CHECK(cm.at(1, 1) == 3);
  CHECK(cm.at(0, 1) == 0);
  CHECK(cm.at(1, 0) == 0);
  CHECK(top1_accuracy(cm) == 1.0);

  // Constant predictor drops everything into column 0.
  ModelParams constant;
  constant.layer_shapes = {{1, 2}};
  constant.values = {0.0, 0.0, 1.0, 0.0};
  const ConfusionMatrix cc = confusion_matrix(constant, perfect);
  CHECK(cc.at(0, 0) + cc.at(1, 0) == perfect.size());
  CHECK(cc.at(0, 1) + cc.at(1, 1) == 0);

  // Trace accuracy equals sample-wise accuracy.
  std::mt19937_64 rng(9);
  const ModelParams noisy = oracles::random_model({{1, 3}}, rng);
  const Dataset ds =
      labeled_line({0.3, -0.4, 1.2, 0.9, -2.0, 0.1}, {0, 1, 2, 0, 1, 2}, 3);
  const ConfusionMatrix nm = confusion_matrix(noisy, ds);
  const std::vector<int> pred = predict_labels(noisy, ds.features);
  double hits = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += pred[i] == ds.labels[i];
  CHECK(std::abs(top1_accuracy(nm) - hits / static_cast<double>(ds.size())) <
        1e-12);
  CHECK_THROWS_AS(confusion_matrix(model, Dataset{}), std::invalid_argument);
}

TEST_CASE("per-class accuracy, missing-class marker, weighted-mean identity") {
  ConfusionMatrix cm;
  cm.classes = 3;
  cm.counts = {5, 0, 0,   //
               0, 4, 0,   //
               0, 0, 2};
  auto acc = per_class_accuracy(cm);
  for (double a : acc) CHECK(a == 1.0);

  cm.counts = {5, 0, 0,   //
               4, 0, 0,   // class 1 fully misclassified
               0, 0, 0};  // class 2 absent
  acc = per_class_accuracy(cm);
  CHECK(acc[0] == 1.0);
  CHECK(acc[1] == 0.0);
  CHECK(std::isnan(acc[2]));

  std::mt19937_64 rng(33);
  std::uniform_int_distribution<std::size_t> count(0, 9);
  for (int trial = 0; trial < 10; ++trial) {
    ConfusionMatrix random;
    random.classes = 4;
    random.counts.resize(16);
    for (auto& v : random.counts) v = count(rng);
    const auto pca = per_class_accuracy(random);
    double weighted = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      std::size_t row = 0;
      for (std::size_t p = 0; p < 4; ++p) row += random.at(c, p);
      if (row > 0) weighted += pca[c] * static_cast<double>(row);
    }
    weighted /= static_cast<double>(random.total());
    CHECK(std::abs(weighted - top1_accuracy(random)) < 1e-12);
  }
}

TEST_CASE("config parsing is strict about keys and names missing fields") {
  const RunConfig cfg = parse_run_config(base_config());
  CHECK(cfg.plan.alpha == 0.5);
  CHECK(cfg.plan.regions == 2);
  CHECK(cfg.total_rounds == 2);
  CHECK(std::isnan(cfg.distill.lambda1));  // auto schedule

  nlohmann::json missing = base_config();
  missing.erase("data");
  CHECK_THROWS_WITH_AS(parse_run_config(missing),
                       "missing required config field: data", config_error);

  nlohmann::json missing_alpha = base_config();
  missing_alpha["partition"].erase("alpha");
  CHECK_THROWS_WITH_AS(parse_run_config(missing_alpha),
                       "missing required config field: partition.alpha",
                       config_error);

  nlohmann::json unknown = base_config();
  unknown["distill"]["server_lrr"] = 0.1;
  CHECK_THROWS_WITH_AS(parse_run_config(unknown),
                       "unknown config field: distill.server_lrr", config_error);

  nlohmann::json inf_eps = base_config();
  inf_eps["distill"]["epsilon"] = "inf";
  CHECK(std::isinf(parse_run_config(inf_eps).distill.epsilon));

  nlohmann::json bad_eps = base_config();
  bad_eps["distill"]["epsilon"] = "huge";
  CHECK_THROWS_AS(parse_run_config(bad_eps), config_error);

  nlohmann::json lambda = base_config();
  lambda["distill"]["lambda1"] = 0.6;
  CHECK(parse_run_config(lambda).distill.lambda1 == 0.6);

  nlohmann::json inject = base_config();
  inject["injections"] = {{{"round", 2}, {"clients", 2}, {"alpha", 0.2},
                           {"data_fraction", 0.3}}};
  CHECK(parse_run_config(inject).injections.size() == 1);
}

TEST_CASE("summary csv and runlog jsonl round-trip exactly") {
  RunLog log;
  RoundRecord r;
  r.round = 1;
  r.region_top1 = {0.25, 1.0 / 3.0};
  r.global_top1 = 0.123456789012345678;
  r.per_class_acc = {1.0, std::numeric_limits<double>::quiet_NaN(), 0.5};
  r.aggregator = "LKD";
  r.beta_spread = 0.07;
  r.seconds_global_step = 0.0;
  log.records.push_back(r);
  r.round = 2;
  r.aggregator = "none";
  r.beta_spread = std::numeric_limits<double>::quiet_NaN();
  log.records.push_back(r);

  std::istringstream jsonl(runlog_jsonl(log));
  const RunLog back = parse_runlog_jsonl(jsonl);
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[0].global_top1 == log.records[0].global_top1);
  CHECK(back.records[0].region_top1 == log.records[0].region_top1);
  CHECK(std::isnan(back.records[1].beta_spread));
  CHECK(std::isnan(back.records[0].per_class_acc[1]));
  CHECK(back.records[0].aggregator == "LKD");
  // Re-serializing the parsed log reproduces the bytes.
  CHECK(runlog_jsonl(back) == runlog_jsonl(log));

  const std::string csv = summary_csv(log);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "round,global_top1,aggregator,beta_spread,seconds_global_step");
  std::getline(in, line);
  std::istringstream fields(line);
  std::string cell;
  std::getline(fields, cell, ',');
  CHECK(std::stoul(cell) == 1);
  std::getline(fields, cell, ',');
  CHECK(std::stod(cell) == log.records[0].global_top1);  // exact
  std::getline(fields, cell, ',');
  CHECK(cell == "LKD");
}

TEST_CASE("atomic_write leaves no partial files behind") {
  const auto dir = scratch_dir("f2l_atomic");
  atomic_write(dir / "out.txt", "payload");
  std::ifstream in(dir / "out.txt");
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  CHECK(content == "payload");
  CHECK(!std::filesystem::exists(dir / "out.txt.tmp"));

  CHECK_THROWS_AS(atomic_write(dir / "no_such_dir" / "out.txt", "x"), io_error);
  CHECK(!std::filesystem::exists(dir / "no_such_dir" / "out.txt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli: verify-theory writes a clean report") {
  const auto dir = scratch_dir("f2l_cli_theory");
  const int rc = run_cli({"f2l", "verify-theory", "--trials", "50", "--seed",
                          "7", "--out", dir.string()});
  CHECK(rc == 0);
  std::ifstream in(dir / "theory_report.json");
  REQUIRE(in.good());
  nlohmann::json rep;
  in >> rep;
  CHECK(rep["trials"] == 50);
  CHECK(rep["violations_t1"] == 0);
  CHECK(rep["violations_t2"] == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli: config errors exit 2 naming the field, data errors exit 3") {
  const auto dir = scratch_dir("f2l_cli_err");
  nlohmann::json cfg = base_config();
  cfg.erase("partition");
  atomic_write(dir / "bad.json", cfg.dump(2));
  CHECK(run_cli({"f2l", "run", "--config", (dir / "bad.json").string(), "--out",
                 dir.string()}) == kExitConfigError);

  // Unknown subcommand and missing required flag are config errors too.
  CHECK(run_cli({"f2l", "frobnicate"}) == kExitConfigError);
  CHECK(run_cli({"f2l", "run"}) == kExitConfigError);

  nlohmann::json idx = base_config();
  idx["data"] = {{"type", "idx"},
                 {"train_images", (dir / "missing.idx").string()},
                 {"train_labels", (dir / "missing.idx").string()},
                 {"eval_images", (dir / "missing.idx").string()},
                 {"eval_labels", (dir / "missing.idx").string()}};
  atomic_write(dir / "idx.json", idx.dump(2));
  CHECK(run_cli({"f2l", "run", "--config", (dir / "idx.json").string(), "--out",
                 dir.string()}) == kExitDataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli: run is reproducible and report rebuilds the summary") {
  const auto dir = scratch_dir("f2l_cli_run");
  atomic_write(dir / "cfg.json", base_config().dump(2));
  const auto out_a = dir / "a";
  const auto out_b = dir / "b";
  CHECK(run_cli({"f2l", "run", "--config", (dir / "cfg.json").string(), "--out",
                 out_a.string()}) == 0);
  CHECK(run_cli({"f2l", "run", "--config", (dir / "cfg.json").string(), "--out",
                 out_b.string()}) == 0);

  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  CHECK(slurp(out_a / "summary.csv") == slurp(out_b / "summary.csv"));
  CHECK(slurp(out_a / "runlog.jsonl") == slurp(out_b / "runlog.jsonl"));
  CHECK(std::filesystem::exists(out_a / "confusion_global.csv"));

  // Same config, different seed: different trajectory.
  const auto out_c = dir / "c";
  CHECK(run_cli({"f2l", "run", "--config", (dir / "cfg.json").string(), "--out",
                 out_c.string(), "--seed", "99"}) == 0);
  CHECK(slurp(out_c / "runlog.jsonl") != slurp(out_a / "runlog.jsonl"));

  // report regenerates summary.csv from the log alone.
  const std::string before = slurp(out_a / "summary.csv");
  std::filesystem::remove(out_a / "summary.csv");
  CHECK(run_cli({"f2l", "report", "--out", out_a.string()}) == 0);
  CHECK(slurp(out_a / "summary.csv") == before);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli: partition and distill emit their artifacts") {
  const auto dir = scratch_dir("f2l_cli_part");
  atomic_write(dir / "cfg.json", base_config().dump(2));
  CHECK(run_cli({"f2l", "partition", "--config", (dir / "cfg.json").string(),
                 "--out", (dir / "p").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "p" / "server_pool.csv"));
  CHECK(std::filesystem::exists(dir / "p" / "partition_summary.csv"));
  CHECK(std::filesystem::exists(dir / "p" / "shard_r1_c1.csv"));

  CHECK(run_cli({"f2l", "distill", "--config", (dir / "cfg.json").string(),
                 "--out", (dir / "d").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "d" / "distill_report.json"));
  CHECK(std::filesystem::exists(dir / "d" / "reliability.csv"));
  CHECK(std::filesystem::exists(dir / "d" / "confusion_student.csv"));
  CHECK(std::filesystem::exists(dir / "d" / "confusion_teacher_1.csv"));

  // Reliability export carries one row per region plus the old-model row.
  std::ifstream rel(dir / "d" / "reliability.csv");
  std::string line;
  std::getline(rel, line);
  CHECK(line == "model,class_0,class_1,class_2,class_3");
  std::size_t rows = 0;
  bool has_old = false;
  while (std::getline(rel, line)) {
    ++rows;
    has_old = has_old || line.rfind("old,", 0) == 0;
  }
  CHECK(rows == 3);
  CHECK(has_old);
  std::filesystem::remove_all(dir);
}
