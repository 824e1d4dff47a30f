#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "f2l/dataset.hpp"
#include "f2l/lkd.hpp"
#include "f2l/metrics.hpp"
#include "f2l/orchestrator.hpp"
#include "f2l/theory.hpp"

namespace f2l {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest exactly-round-tripping decimal form.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Files are fully written or not created at all: write to a temp sibling and
// rename over the target.
inline void atomic_write(const std::filesystem::path& path,
                         const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw io_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string dataset_csv(const Dataset& ds) {
  std::ostringstream out;
  for (std::size_t j = 0; j < ds.features.cols; ++j)
    out << "feature_" << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.features.cols; ++j)
      out << format_double(ds.features.at(i, j)) << ',';
    out << ds.labels[i] << '\n';
  }
  return out.str();
}

inline std::string summary_csv(const RunLog& log) {
  std::ostringstream out;
  out << "round,global_top1,aggregator,beta_spread,seconds_global_step\n";
  for (const RoundRecord& r : log.records) {
    out << r.round << ',' << format_double(r.global_top1) << ',' << r.aggregator
        << ',' << format_double(r.beta_spread) << ','
        << format_double(r.seconds_global_step) << '\n';
  }
  return out.str();
}

namespace detail {

inline nlohmann::json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN()
                     : j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const RoundRecord& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["region_top1"] = r.region_top1;
  j["global_top1"] = r.global_top1;
  nlohmann::json pc = nlohmann::json::array();
  for (double v : r.per_class_acc) pc.push_back(detail::json_number(v));
  j["per_class_acc"] = std::move(pc);
  j["beta_spread"] = detail::json_number(r.beta_spread);
  j["aggregator"] = r.aggregator;
  j["seconds_global_step"] = r.seconds_global_step;
  return j;
}

inline RoundRecord round_record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<std::size_t>();
  r.region_top1 = j.at("region_top1").get<std::vector<double>>();
  r.global_top1 = j.at("global_top1").get<double>();
  for (const auto& v : j.at("per_class_acc"))
    r.per_class_acc.push_back(detail::number_or_nan(v));
  r.beta_spread = detail::number_or_nan(j.at("beta_spread"));
  r.aggregator = j.at("aggregator").get<std::string>();
  r.seconds_global_step = j.at("seconds_global_step").get<double>();
  return r;
}

inline std::string runlog_jsonl(const RunLog& log) {
  std::string out;
  for (const RoundRecord& r : log.records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline RunLog parse_runlog_jsonl(std::istream& in) {
  RunLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    log.records.push_back(round_record_from_json(nlohmann::json::parse(line)));
  }
  return log;
}

// Reliability export: one row per region plus an "old" row when the old-model
// weights are present.
inline std::string reliability_csv(const ReliabilityMatrix& rel) {
  std::ostringstream out;
  out << "model";
  for (std::size_t c = 0; c < rel.beta.cols; ++c) out << ",class_" << c;
  out << '\n';
  for (std::size_t r = 0; r < rel.beta.rows; ++r) {
    out << "region_" << r;
    for (std::size_t c = 0; c < rel.beta.cols; ++c)
      out << ',' << format_double(rel.beta.at(r, c));
    out << '\n';
  }
  if (!rel.beta_old.empty()) {
    out << "old";
    for (double v : rel.beta_old) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true_class";
  for (std::size_t c = 0; c < cm.classes; ++c) out << ",pred_" << c;
  out << '\n';
  for (std::size_t t = 0; t < cm.classes; ++t) {
    out << t;
    for (std::size_t p = 0; p < cm.classes; ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  return out.str();
}

inline std::string theory_report_json(const TheoryReport& rep) {
  nlohmann::json j;
  j["trials"] = rep.trials;
  j["violations_t1"] = rep.violations_t1;
  j["violations_t2"] = rep.violations_t2;
  j["max_gap_t1"] = rep.max_gap_t1;
  j["max_gap_t2"] = rep.max_gap_t2;
  return j.dump(2) + "\n";
}

}  // namespace f2l
