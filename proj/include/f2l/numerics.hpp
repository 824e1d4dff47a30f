#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "f2l/tensor.hpp"

namespace f2l {

// Class-probability vector over C classes. Either a proper distribution or
// all-zero (the surrogate output for a rejected prediction).
using ProbVector = std::vector<double>;

// Probabilities are floored at this value inside logarithms.
inline constexpr double kProbFloor = 1e-12;

// argmax with ties broken toward the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

// Temperature softmax exp(z_l/T) / sum_j exp(z_j/T), computed with
// max-subtraction so large logits cannot overflow.
inline ProbVector temp_softmax(std::span<const double> logits, double temperature) {
  if (!std::isfinite(temperature) || temperature <= 0.0)
    throw std::invalid_argument("temp_softmax: temperature must be positive");
  if (logits.empty())
    throw std::invalid_argument("temp_softmax: empty logits");
  double zmax = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z))
      throw std::invalid_argument("temp_softmax: non-finite logit");
    zmax = std::max(zmax, z);
  }
  ProbVector out(logits.size());
  double sum = 0.0;
  for (std::size_t l = 0; l < logits.size(); ++l) {
    out[l] = std::exp((logits[l] - zmax) / temperature);
    sum += out[l];
  }
  for (double& p : out) p /= sum;
  return out;
}

// KL(p || q) = sum_l p_l (ln p_l - ln q_l), with 0*ln 0 = 0 and q floored.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: length mismatch");
  double sum = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) {
    if (p[l] > 0.0)
      sum += p[l] * (std::log(p[l]) - std::log(std::max(q[l], kProbFloor)));
  }
  return sum;
}

// Negative log-likelihood of the true label.
inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(probs[label], kProbFloor));
}

}  // namespace f2l
