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

// Server-pool indices bucketed by a model's argmax predictions.
struct AlignedPool {
  std::vector<std::vector<std::size_t>> buckets;  // one index list per class
  int source_model = -1;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.size();
    return n;
  }
};

// Per-region, per-class reliability weights plus the old-model weights.
struct ReliabilityMatrix {
  Tensor2 beta;                  // R x C, columns sum to 1 over regions
  std::vector<double> beta_old;  // length C
  double temperature = 0.0;
};

struct DistillConfig {
  double temperature = 3.0;              // T for the soft losses
  double reliability_temperature = 10.0; // T_omega
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda3 = 1.0;
  double epsilon = 0.05;
  std::size_t server_epochs = 20;
  double server_lr = 0.05;
  std::size_t server_batch = 64;  // 0 = full batch
  bool use_update_distillation = true;
};

// Surrogate output: the class-probability vector if the model's prediction is
// c, the all-zero vector otherwise. Ties break toward the lowest index.
inline ProbVector surrogate_prob(const ProbVector& probs, std::size_t c) {
  if (c >= probs.size())
    throw std::invalid_argument("surrogate_prob: class out of range");
  if (argmax(probs) == c) return probs;
  return ProbVector(probs.size(), 0.0);
}

inline AlignedPool align_samples(const ModelParams& model, const Dataset& pool,
                                 int source_model = -1) {
  if (pool.empty()) throw std::invalid_argument("align_samples: empty pool");
  AlignedPool aligned;
  aligned.source_model = source_model;
  aligned.buckets.resize(model.output_dim());
  const std::vector<int> pred = predict_labels(model, pool.features);
  for (std::size_t i = 0; i < pred.size(); ++i)
    aligned.buckets[pred[i]].push_back(i);
  return aligned;
}

// Mann-Whitney one-vs-rest AUC with midrank tie handling; nullopt when either
// side is empty (degenerate class — callers substitute 0.5).
inline std::optional<double> auc_ovr(std::span<const double> scores,
                                     std::span<const char> positives) {
  if (scores.size() != positives.size())
    throw std::invalid_argument("auc_ovr: length mismatch");
  std::size_t npos = 0;
  for (char p : positives) npos += p ? 1 : 0;
  const std::size_t nneg = scores.size() - npos;
  if (npos == 0 || nneg == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (positives[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos -
                   0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

namespace detail {

// One-vs-rest AUC per class from the model's class-probability scores on the
// validation set; 0.5 for classes absent from the labels.
inline std::vector<double> per_class_auc(const ModelParams& model,
                                         const Dataset& valset) {
  const Tensor2 probs = predict_probs(model, valset.features, 1.0);
  std::vector<double> auc(valset.class_count, 0.5);
  std::vector<double> scores(valset.size());
  std::vector<char> positives(valset.size());
  for (int c = 0; c < valset.class_count; ++c) {
    for (std::size_t i = 0; i < valset.size(); ++i) {
      scores[i] = probs.at(i, c);
      positives[i] = valset.labels[i] == c ? 1 : 0;
    }
    auc[c] = auc_ovr(scores, positives).value_or(0.5);
  }
  return auc;
}

inline std::vector<double> softmax_scaled(std::span<const double> values,
                                          double temperature) {
  std::vector<double> scaled(values.begin(), values.end());
  for (double& v : scaled) v *= temperature;
  return temp_softmax(scaled, 1.0);
}

}  // namespace detail

// beta[r][c] = exp(AUC_{c,r} * T_omega) / sum_r' exp(AUC_{c,r'} * T_omega).
inline Tensor2 class_reliability(std::span<const ModelParams> models,
                                 const Dataset& valset,
                                 double reliability_temperature) {
  if (models.empty()) throw std::invalid_argument("class_reliability: no models");
  if (valset.empty()) throw std::invalid_argument("class_reliability: empty valset");
  const std::size_t regions = models.size();
  const std::size_t classes = valset.class_count;
  Tensor2 auc(regions, classes);
  for (std::size_t r = 0; r < regions; ++r) {
    const std::vector<double> a = detail::per_class_auc(models[r], valset);
    std::copy(a.begin(), a.end(), auc.row(r).begin());
  }
  Tensor2 beta(regions, classes);
  std::vector<double> column(regions);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t r = 0; r < regions; ++r) column[r] = auc.at(r, c);
    const std::vector<double> w =
        detail::softmax_scaled(column, reliability_temperature);
    for (std::size_t r = 0; r < regions; ++r) beta.at(r, c) = w[r];
  }
  return beta;
}

// Per-class weight of the previous global model against the current one.
inline std::vector<double> old_model_reliability(const ModelParams& old_model,
                                                 const ModelParams& new_model,
                                                 const Dataset& valset,
                                                 double reliability_temperature) {
  if (valset.empty())
    throw std::invalid_argument("old_model_reliability: empty valset");
  const std::vector<double> auc_old = detail::per_class_auc(old_model, valset);
  const std::vector<double> auc_new = detail::per_class_auc(new_model, valset);
  std::vector<double> beta(auc_old.size());
  for (std::size_t c = 0; c < beta.size(); ++c) {
    const std::vector<double> w = detail::softmax_scaled(
        std::vector<double>{auc_old[c], auc_new[c]}, reliability_temperature);
    beta[c] = w[0];
  }
  return beta;
}

// Class-weighted KL from teacher to student over the teacher-aligned pool,
// normalized by the pool size.
inline double teacher_loss(const ModelParams& teacher, const ModelParams& student,
                           const Dataset& pool, const AlignedPool& aligned,
                           std::span<const double> beta_row, double temperature) {
  if (pool.empty()) throw std::invalid_argument("teacher_loss: empty pool");
  if (aligned.buckets.size() != beta_row.size())
    throw std::invalid_argument("teacher_loss: beta length mismatch");
  const Tensor2 p = predict_probs(teacher, pool.features, temperature);
  const Tensor2 q = predict_probs(student, pool.features, temperature);
  double sum = 0.0;
  for (std::size_t c = 0; c < aligned.buckets.size(); ++c) {
    if (beta_row[c] == 0.0) continue;
    double class_sum = 0.0;
    for (std::size_t i : aligned.buckets[c])
      class_sum += kl_divergence(p.row(i), q.row(i));
    sum += beta_row[c] * class_sum;
  }
  return sum / static_cast<double>(pool.size());
}

// Retention loss: class-weighted KL from the old global model to the new one
// over the pool aligned by the current global model.
inline double update_loss(const ModelParams& old_model, const ModelParams& new_model,
                          const Dataset& pool, const AlignedPool& aligned_g,
                          std::span<const double> beta_old, double temperature) {
  return teacher_loss(old_model, new_model, pool, aligned_g, beta_old, temperature);
}

// lambda2 = lambda1/R and lambda3 = 1 - (R+1) lambda1 / R when update
// distillation is on; lambda2 = 0 and lambda3 = 1 - lambda1 otherwise.
inline std::pair<double, double> lambda_schedule(std::size_t regions, double lambda1,
                                                 bool use_update) {
  if (regions == 0) throw std::invalid_argument("lambda_schedule: no regions");
  const double r = static_cast<double>(regions);
  const double max1 = use_update ? r / (r + 1.0) : 1.0;
  if (!(lambda1 >= 0.0) || lambda1 > max1 + 1e-12)
    throw std::invalid_argument("lambda_schedule: lambda1 out of feasible range");
  if (use_update) return {lambda1 / r, 1.0 - (r + 1.0) * lambda1 / r};
  return {0.0, 1.0 - lambda1};
}

// lambda1 that lands the schedule on a target hard-loss weight lambda3.
inline double lambda1_for_lambda3(std::size_t regions, double lambda3,
                                  bool use_update) {
  const double r = static_cast<double>(regions);
  return use_update ? r * (1.0 - lambda3) / (r + 1.0) : 1.0 - lambda3;
}

// Joint objective: lambda1 * sum_r teacher KL + lambda2 * update KL +
// lambda3 * mean hard cross-entropy at T = 1.
inline double joint_loss(std::span<const ModelParams> teachers,
                         const ModelParams& student, const ModelParams& old_global,
                         const Dataset& pool, const ReliabilityMatrix& rel,
                         const DistillConfig& cfg) {
  if (teachers.empty()) throw std::invalid_argument("joint_loss: no teachers");
  if (pool.empty()) throw std::invalid_argument("joint_loss: empty pool");
  double loss = 0.0;
  if (cfg.lambda1 != 0.0) {
    for (std::size_t r = 0; r < teachers.size(); ++r) {
      const AlignedPool aligned =
          align_samples(teachers[r], pool, static_cast<int>(r));
      loss += cfg.lambda1 * teacher_loss(teachers[r], student, pool, aligned,
                                         rel.beta.row(r), cfg.temperature);
    }
  }
  if (cfg.lambda2 != 0.0 && cfg.use_update_distillation) {
    const AlignedPool aligned_g = align_samples(student, pool);
    loss += cfg.lambda2 * update_loss(old_global, student, pool, aligned_g,
                                      rel.beta_old, cfg.temperature);
  }
  loss += cfg.lambda3 * ce_loss(student, pool.features, pool.labels, 1.0);
  return loss;
}

// Label-driven joint distillation. Reliability weights and alignments are
// recomputed once per epoch and held constant through that epoch's gradient
// steps; no gradient flows through them.
inline ModelParams distill(std::span<const ModelParams> teachers,
                           const ModelParams& student_init,
                           const ModelParams& old_global, const Dataset& pool,
                           const Dataset& valset, const DistillConfig& cfg,
                           std::uint64_t seed,
                           std::vector<double>* epoch_losses = nullptr) {
  if (teachers.empty()) throw std::invalid_argument("distill: no teachers");
  if (pool.empty() || valset.empty())
    throw std::invalid_argument("distill: empty pool or valset");
  const std::size_t pool_n = pool.size();
  const std::size_t classes = student_init.output_dim();
  ModelParams student = student_init;
  std::mt19937_64 rng(seed);

  // Teacher soft targets and alignments depend only on the fixed teachers.
  std::vector<Tensor2> teacher_probs;
  std::vector<std::vector<int>> teacher_bucket(teachers.size());
  teacher_probs.reserve(teachers.size());
  for (std::size_t r = 0; r < teachers.size(); ++r) {
    teacher_probs.push_back(
        predict_probs(teachers[r], pool.features, cfg.temperature));
    teacher_bucket[r] = predict_labels(teachers[r], pool.features);
  }
  const Tensor2 old_probs = cfg.use_update_distillation
                                ? predict_probs(old_global, pool.features,
                                                cfg.temperature)
                                : Tensor2();

  std::vector<std::size_t> order(pool_n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs =
      cfg.server_batch == 0 ? pool_n : std::min(cfg.server_batch, pool_n);

  for (std::size_t epoch = 0; epoch < cfg.server_epochs; ++epoch) {
    ReliabilityMatrix rel;
    rel.temperature = cfg.reliability_temperature;
    rel.beta = class_reliability(teachers, valset, cfg.reliability_temperature);
    rel.beta_old = cfg.use_update_distillation
                       ? old_model_reliability(old_global, student, valset,
                                               cfg.reliability_temperature)
                       : std::vector<double>(classes, 0.0);
    const std::vector<int> global_bucket =
        cfg.use_update_distillation ? predict_labels(student, pool.features)
                                    : std::vector<int>();
    if (epoch_losses)
      epoch_losses->push_back(
          joint_loss(teachers, student, old_global, pool, rel, cfg));

    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < pool_n; start += bs) {
      const std::size_t stop = std::min(pool_n, start + bs);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Dataset batch = subset(pool, idx);

      ForwardCache cache;
      const Tensor2 logits = forward(student, batch.features, &cache);
      Tensor2 dz(logits.rows, logits.cols, 0.0);
      const double inv_batch = 1.0 / static_cast<double>(batch.size());
      for (std::size_t n = 0; n < batch.size(); ++n) {
        const std::size_t i = idx[n];
        const ProbVector q_soft = temp_softmax(logits.row(n), cfg.temperature);
        const ProbVector q_hard = temp_softmax(logits.row(n), 1.0);
        double* d = dz.data.data() + n * dz.cols;
        for (std::size_t r = 0; r < teachers.size(); ++r) {
          const double w =
              cfg.lambda1 * rel.beta.at(r, teacher_bucket[r][i]) / cfg.temperature;
          if (w == 0.0) continue;
          const double* p = teacher_probs[r].data.data() + i * classes;
          for (std::size_t l = 0; l < classes; ++l)
            d[l] += w * (q_soft[l] - p[l]);
        }
        if (cfg.use_update_distillation && cfg.lambda2 != 0.0) {
          const double w =
              cfg.lambda2 * rel.beta_old[global_bucket[i]] / cfg.temperature;
          const double* p = old_probs.data.data() + i * classes;
          for (std::size_t l = 0; l < classes; ++l)
            d[l] += w * (q_soft[l] - p[l]);
        }
        for (std::size_t l = 0; l < classes; ++l)
          d[l] += cfg.lambda3 * q_hard[l];
        d[batch.labels[n]] -= cfg.lambda3;
        for (std::size_t l = 0; l < classes; ++l) d[l] *= inv_batch;
      }
      const std::vector<double> grad = backward(student, cache, dz);
      for (std::size_t i = 0; i < student.values.size(); ++i)
        student.values[i] -= cfg.server_lr * grad[i];
    }
  }
  return student;
}

}  // namespace f2l
