// SPDX-License-Identifier: Apache-2.0
//
// Shared numeric kernels: softmax, entropy, the tanh-scaled entropy used by
// the uncertainty-aware loss, and a central-difference gradient checker.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace uacal {

/// Clamp applied to tanh(H) so that log(tanh H) and log(1 - tanh H) stay finite.
inline constexpr double kScaledEntropyEps = 1e-6;

/// A next-token distribution over the vocabulary.
class ProbRow {
 public:
  /// Validates: non-empty, entries in [0, 1], sum within 1e-6 of one.
  explicit ProbRow(std::vector<double> probs);

  std::span<const double> probs() const { return probs_; }
  std::size_t vocab_size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

 private:
  std::vector<double> probs_;
};

ProbRow softmax(std::span<const double> logits);

/// In-place max-subtracted softmax; no validation. Used by hot loops.
void softmax_inplace(std::span<double> values);

/// log-sum-exp with max subtraction.
double log_sum_exp(std::span<const double> values);

/// Shannon entropy in nats, 0 log 0 := 0.
double entropy(const ProbRow& p);
double entropy(std::span<const double> probs);

/// clamp(tanh(h), eps, 1 - eps). Rejects negative h.
double scaled_entropy(double h);

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every coordinate.
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double step);

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, floor).
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

/// splitmix64-style combination of a seed and a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit_uniform(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace uacal
