// SPDX-License-Identifier: Apache-2.0
//
// Training objectives over a stack of logit rows. Row r holds the logits that
// predict labels[r]; rows whose label is kIgnoreLabel are unsupervised.
//
//   clm        mean negative log-likelihood of the labels
//   ua_clm     uncertainty-aware objective: on rows whose argmax is wrong,
//              -P * log(tanh H); on rows whose argmax is right,
//              -(1 - P) * log(1 - tanh H); each set averaged separately.
//              P is the probability of the argmax token, H the entropy.
//   annealed   clm + beta * ua_clm with a step-dependent beta
//   ult        clm plus token-level unlikelihood on earlier target tokens
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "uacal/model.hpp"

namespace uacal {

inline constexpr int kIgnoreLabel = -1;

enum class LossKind { clm, ua_clm, annealed, ult };

std::string_view loss_kind_name(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

/// Index sets of correctly / incorrectly predicted supervised rows.
struct CorrectnessMask {
  std::vector<int> correct;
  std::vector<int> incorrect;
  std::vector<int> predicted_ids;  // argmax of every row, lowest id on ties
};

/// Argmax with ties broken towards the lowest index.
int argmax_lowest(std::span<const double> row);

CorrectnessMask correctness_mask(const Matrix& logits, std::span<const int> labels);

/// A scalar loss and its gradient with respect to the logits.
struct LossValue {
  double value = 0.0;
  Matrix grad;
};

LossValue clm_loss(const Matrix& logits, std::span<const int> labels);

LossValue ua_clm_loss(const Matrix& logits, std::span<const int> labels);

/// Same objective with a caller-supplied (frozen) mask.
LossValue ua_clm_loss(const Matrix& logits, std::span<const int> labels,
                      const CorrectnessMask& mask);

struct AnnealSchedule {
  double beta_early = 0.2;
  double beta_late = 0.8;
  double switch_fraction = 0.2;

  void validate() const;
  /// beta_early while step <= switch_fraction * total_steps, else beta_late.
  double beta_at(std::int64_t step, std::int64_t total_steps) const;
  bool operator==(const AnnealSchedule&) const = default;
};

LossValue annealed_loss(std::int64_t step, std::int64_t total_steps, const Matrix& logits,
                        std::span<const int> labels, const AnnealSchedule& schedule = {});

/// Negative candidates for row r are the distinct labels of earlier supervised
/// rows of the same sequence, minus labels[r]. An empty sequence_ids span
/// treats all rows as one sequence.
LossValue unlikelihood_loss(const Matrix& logits, std::span<const int> labels,
                            std::span<const int> sequence_ids = {});

/// Probability clamp inside log(1 - p) of the unlikelihood term.
inline constexpr double kUnlikelihoodClamp = 1.0 - 1e-7;

struct LossContext {
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
  AnnealSchedule schedule;
};

LossValue compute_loss(LossKind kind, const Matrix& logits, std::span<const int> labels,
                       std::span<const int> sequence_ids, const LossContext& ctx);

/// Per-batch telemetry: set sizes and mean entropy / argmax probability per set.
struct TokenStats {
  int n_correct = 0;
  int n_incorrect = 0;
  double entropy_correct = 0.0;
  double entropy_incorrect = 0.0;
  double prob_correct = 0.0;
  double prob_incorrect = 0.0;
};

TokenStats token_stats(const Matrix& logits, std::span<const int> labels);

}  // namespace uacal
