// SPDX-License-Identifier: Apache-2.0
#include "uacal/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "uacal/error.hpp"

namespace uacal {

ProbRow::ProbRow(std::vector<double> probs) : probs_(std::move(probs)) {
  require(!probs_.empty(), ErrorCode::invalid_argument, "ProbRow: empty distribution");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const double p = probs_[i];
    require(std::isfinite(p) && p >= 0.0 && p <= 1.0, ErrorCode::invalid_argument,
            "ProbRow: entry " + std::to_string(i) + " outside [0,1]");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-6, ErrorCode::invalid_argument,
          "ProbRow: entries sum to " + std::to_string(sum));
}

void softmax_inplace(std::span<double> values) {
  const double mx = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double& v : values) {
    v = std::exp(v - mx);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (double& v : values) v *= inv;
}

ProbRow softmax(std::span<const double> logits) {
  require(!logits.empty(), ErrorCode::invalid_argument, "softmax: empty input");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require(std::isfinite(logits[i]), ErrorCode::non_finite,
            "softmax: non-finite logit at index " + std::to_string(i));
  }
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return ProbRow(std::move(out));
}

double log_sum_exp(std::span<const double> values) {
  const double mx = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double entropy(const ProbRow& p) { return entropy(p.probs()); }

double scaled_entropy(double h) {
  require(h >= 0.0, ErrorCode::invalid_argument,
          "scaled_entropy: negative entropy " + std::to_string(h));
  return std::clamp(std::tanh(h), kScaledEntropyEps, 1.0 - kScaledEntropyEps);
}

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double step) {
  require(step > 0.0, ErrorCode::invalid_argument, "finite_diff_grad: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + step;
    const double up = f(probe);
    probe[k] = x[k] - step;
    const double down = f(probe);
    probe[k] = x[k];
    require(std::isfinite(up) && std::isfinite(down), ErrorCode::non_finite,
            "finite_diff_grad: non-finite function value at coordinate " + std::to_string(k));
    grad[k] = (up - down) / (2.0 * step);
  }
  return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  require(a.size() == b.size(), ErrorCode::shape_mismatch, "max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double denom = std::max({std::abs(a[k]), std::abs(b[k]), floor});
    worst = std::max(worst, std::abs(a[k] - b[k]) / denom);
  }
  return worst;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace uacal
