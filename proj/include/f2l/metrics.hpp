#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "f2l/dataset.hpp"
#include "f2l/model.hpp"

namespace f2l {

// C x C count matrix, rows = true class, cols = predicted class.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  std::size_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * classes + pred];
  }
  std::size_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * classes + pred];
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t v : counts) n += v;
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes; ++c) n += at(c, c);
    return n;
  }
};

inline ConfusionMatrix confusion_matrix(const ModelParams& model,
                                        const Dataset& ds) {
  if (ds.empty()) throw std::invalid_argument("confusion_matrix: empty dataset");
  ConfusionMatrix cm;
  cm.classes = ds.class_count;
  cm.counts.assign(cm.classes * cm.classes, 0);
  const std::vector<int> pred = predict_labels(model, ds.features);
  for (std::size_t i = 0; i < ds.size(); ++i)
    ++cm.at(ds.labels[i], pred[i]);
  return cm;
}

inline double top1_accuracy(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total();
  return n == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(n);
}

// Diagonal over row sum per class; NaN marks classes absent from the
// evaluation set.
inline std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> acc(cm.classes);
  for (std::size_t c = 0; c < cm.classes; ++c) {
    std::size_t row_sum = 0;
    for (std::size_t p = 0; p < cm.classes; ++p) row_sum += cm.at(c, p);
    acc[c] = row_sum == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(cm.at(c, c)) /
                                static_cast<double>(row_sum);
  }
  return acc;
}

inline double top1_accuracy(const ModelParams& model, const Dataset& ds) {
  return top1_accuracy(confusion_matrix(model, ds));
}

}  // namespace f2l
