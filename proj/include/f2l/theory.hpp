#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "f2l/tensor.hpp"

namespace f2l {

// Per-class Gaussian moments of one regional model.
struct GaussianClassModel {
  std::vector<double> mean;      // length C
  std::vector<double> variance;  // length C, > 0
};

// R regional models with per-class accuracies and the empirical global means.
struct TeacherEnsemble {
  std::vector<GaussianClassModel> teachers;
  Tensor2 accuracy;                 // R x C, tau in [0,1]
  std::vector<double> global_mean;  // length C

  std::size_t regions() const { return teachers.size(); }
  std::size_t classes() const { return global_mean.size(); }
};

// KL(N(mu_r, var_r) || N(mu_g, var_g)) in closed form.
inline double gaussian_kl(double mu_r, double var_r, double mu_g, double var_g) {
  if (!(var_r > 0.0) || !(var_g > 0.0))
    throw std::invalid_argument("gaussian_kl: nonpositive variance");
  const double d = mu_r - mu_g;
  return 0.5 * (d * d / var_g + var_r / var_g - 1.0 - std::log(var_r / var_g));
}

struct StudentMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Optimal student moments under label-driven distillation: exp(tau)-weighted
// means of the teachers' per-class moments.
inline StudentMoments lkd_optimal_student(const TeacherEnsemble& ens,
                                          std::size_t c) {
  if (c >= ens.classes())
    throw std::invalid_argument("lkd_optimal_student: class out of range");
  double wsum = 0.0;
  StudentMoments out;
  for (std::size_t r = 0; r < ens.regions(); ++r) {
    const double w = std::exp(ens.accuracy.at(r, c));
    wsum += w;
    out.mean += w * ens.teachers[r].mean[c];
    out.variance += w * ens.teachers[r].variance[c];
  }
  out.mean /= wsum;
  out.variance /= wsum;
  return out;
}

// Uniform-weight baseline: plain arithmetic means.
inline StudentMoments mtkd_optimal_student(const TeacherEnsemble& ens,
                                           std::size_t c) {
  if (c >= ens.classes())
    throw std::invalid_argument("mtkd_optimal_student: class out of range");
  StudentMoments out;
  for (std::size_t r = 0; r < ens.regions(); ++r) {
    out.mean += ens.teachers[r].mean[c];
    out.variance += ens.teachers[r].variance[c];
  }
  out.mean /= static_cast<double>(ens.regions());
  out.variance /= static_cast<double>(ens.regions());
  return out;
}

// Lower bound on per-class accuracy as a function of the decision margin and
// the model's class std deviation: 1 - exp(-(b/sigma)^2 / 2) / sqrt(2 pi).
inline double accuracy_variance_bound(double margin, double sigma) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("accuracy_variance_bound: nonpositive sigma");
  const double z = margin / sigma;
  return 1.0 - std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Cov(pi_i, pi_j) = -nu_i nu_j / (nu_bar^2 (nu_bar + 1)) for a Dirichlet
// allocation-weight vector, nu_bar = sum nu.
inline double dirichlet_covariance(std::span<const double> nu, std::size_t i,
                                   std::size_t j) {
  if (i == j) throw std::invalid_argument("dirichlet_covariance: i == j");
  if (i >= nu.size() || j >= nu.size())
    throw std::invalid_argument("dirichlet_covariance: index out of range");
  double bar = 0.0;
  for (double v : nu) {
    if (!(v > 0.0))
      throw std::invalid_argument("dirichlet_covariance: nonpositive nu");
    bar += v;
  }
  return -nu[i] * nu[j] / (bar * bar * (bar + 1.0));
}

enum class EnsembleOrdering {
  kConsistent,  // variances ascending, accuracies descending
  kInverted,    // accuracies deliberately re-paired in reverse (negative control)
};

// Random ensemble consistent with the ordering assumption: per class,
// variances ascending, accuracies derived from a shared margin (so they
// descend with variance), and mean offsets on one side of the global mean
// with ascending magnitude.
inline TeacherEnsemble sample_ensemble(std::size_t regions, std::size_t classes,
                                       std::mt19937_64& rng,
                                       EnsembleOrdering ordering) {
  TeacherEnsemble ens;
  ens.teachers.assign(regions, GaussianClassModel{
                                   std::vector<double>(classes, 0.0),
                                   std::vector<double>(classes, 1.0)});
  ens.accuracy = Tensor2(regions, classes);
  ens.global_mean.resize(classes);
  std::uniform_real_distribution<double> log_var(std::log(0.1), std::log(10.0));
  std::uniform_real_distribution<double> margin_dist(0.5, 2.0);
  std::uniform_real_distribution<double> mean_dist(-2.0, 2.0);
  std::normal_distribution<double> offset_dist(0.0, 1.0);
  std::bernoulli_distribution side(0.5);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> var(regions);
    for (double& v : var) v = std::exp(log_var(rng));
    std::sort(var.begin(), var.end());
    const double margin = margin_dist(rng);
    ens.global_mean[c] = mean_dist(rng);
    std::vector<double> offs(regions);
    for (double& o : offs) o = std::abs(offset_dist(rng));
    std::sort(offs.begin(), offs.end());
    const double sign = side(rng) ? 1.0 : -1.0;
    for (std::size_t r = 0; r < regions; ++r) {
      ens.teachers[r].variance[c] = var[r];
      ens.teachers[r].mean[c] = ens.global_mean[c] + sign * offs[r];
      const std::size_t src = ordering == EnsembleOrdering::kInverted
                                  ? regions - 1 - r
                                  : r;
      ens.accuracy.at(r, c) = accuracy_variance_bound(margin, std::sqrt(var[src]));
    }
  }
  return ens;
}

struct TheoryReport {
  std::size_t trials = 0;
  std::size_t violations_t1 = 0;
  std::size_t violations_t2 = 0;
  double max_gap_t1 = -std::numeric_limits<double>::infinity();
  double max_gap_t2 = -std::numeric_limits<double>::infinity();
};

// Numerical verification of the two student-moment theorems on random
// ensembles. A positive gap beyond the tolerance is a violation.
inline TheoryReport check_theorems(
    std::size_t trials, std::size_t regions, std::size_t classes,
    std::uint64_t seed,
    EnsembleOrdering ordering = EnsembleOrdering::kConsistent,
    double tolerance = 1e-9) {
  if (trials == 0) throw std::invalid_argument("check_theorems: zero trials");
  TheoryReport report;
  report.trials = trials;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const TeacherEnsemble ens = sample_ensemble(regions, classes, rng, ordering);
    for (std::size_t c = 0; c < classes; ++c) {
      const StudentMoments lkd = lkd_optimal_student(ens, c);
      const StudentMoments mtkd = mtkd_optimal_student(ens, c);
      const double gap_var = lkd.variance - mtkd.variance;
      const double gap_mean = std::abs(lkd.mean - ens.global_mean[c]) -
                              std::abs(mtkd.mean - ens.global_mean[c]);
      report.max_gap_t1 = std::max(report.max_gap_t1, gap_var);
      report.max_gap_t2 = std::max(report.max_gap_t2, gap_mean);
      if (gap_var > tolerance) ++report.violations_t1;
      if (gap_mean > tolerance) ++report.violations_t2;
    }
  }
  return report;
}

}  // namespace f2l
