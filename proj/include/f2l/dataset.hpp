#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "f2l/tensor.hpp"

namespace f2l {

// Feature matrix plus integer labels. A Shard is a client's or the server's
// slice of a Dataset.
struct Dataset {
  Tensor2 features;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  bool operator==(const Dataset&) const = default;
};

using Shard = Dataset;

inline void validate(const Dataset& ds) {
  if (ds.features.rows != ds.labels.size())
    throw std::invalid_argument("dataset: label count does not match rows");
  for (int y : ds.labels)
    if (y < 0 || y >= ds.class_count)
      throw std::invalid_argument("dataset: label out of range");
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.class_count = ds.class_count;
  out.features = Tensor2(idx.size(), ds.features.cols);
  out.labels.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = ds.features.row(idx[k]);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.labels[k] = ds.labels[idx[k]];
  }
  return out;
}

inline std::vector<std::size_t> class_counts(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.class_count, 0);
  for (int y : ds.labels) ++counts[y];
  return counts;
}

// Empirical class frequencies (the p(y=c) vector of a shard).
inline std::vector<double> class_frequencies(const Dataset& ds) {
  std::vector<double> freq(ds.class_count, 0.0);
  if (ds.empty()) return freq;
  for (int y : ds.labels) freq[y] += 1.0;
  for (double& f : freq) f /= static_cast<double>(ds.size());
  return freq;
}

}  // namespace f2l
