// SPDX-License-Identifier: Apache-2.0
//
// Response-level uncertainty scores computed from a GenerationRecord.
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "uacal/generate.hpp"
#include "uacal/text.hpp"

namespace uacal {

struct UncertaintyReport {
  double mean_token_entropy = 0.0;
  double perplexity = 1.0;
  double predictive_entropy = 0.0;
  double semantic_entropy = 0.0;
  double confidence = 1.0;  // 1 / perplexity
};

/// Fixed metric order used by tables and reports.
enum class UncertaintyMetric { perplexity, mean_token_entropy, predictive_entropy, semantic_entropy };
inline constexpr UncertaintyMetric kAllUncertaintyMetrics[] = {
    UncertaintyMetric::perplexity, UncertaintyMetric::mean_token_entropy,
    UncertaintyMetric::predictive_entropy, UncertaintyMetric::semantic_entropy};

std::string_view uncertainty_metric_name(UncertaintyMetric metric);
double metric_value(const UncertaintyReport& report, UncertaintyMetric metric);

struct EquivalencePredicate {
  enum class Kind { exact_normalized, rouge_threshold };
  Kind kind = Kind::exact_normalized;
  double threshold = 0.7;  // rouge_threshold only: ROUGE-L F1 in both directions

  bool operator()(std::string_view a, std::string_view b) const;
};

std::string_view predicate_kind_name(EquivalencePredicate::Kind kind);
EquivalencePredicate::Kind parse_predicate_kind(std::string_view name);

double mean_token_entropy(const GenerationRecord& rec);
/// exp of the mean negative log-prob over the greedy decoding steps.
double perplexity(const GenerationRecord& rec);

struct SampleScore {
  std::string text;
  double logprob = 0.0;
  int n_tokens = 1;
};

/// -(1/M) sum_m logprob_m; with length_normalized each logprob is divided by
/// its token count first.
double predictive_entropy(std::span<const SampleScore> samples, bool length_normalized = false);

/// First-fit clustering in sample order against each cluster's founding
/// sample. Cluster mass is likelihood-weighted unless uniform_weights.
double semantic_entropy(std::span<const SampleScore> samples, const EquivalencePredicate& pred,
                        bool uniform_weights = false);

/// Cluster index of every sample under the first-fit rule.
std::vector<int> cluster_samples(std::span<const SampleScore> samples,
                                 const EquivalencePredicate& pred);

struct UncertaintyOptions {
  EquivalencePredicate predicate;
  bool length_normalized = false;
  bool uniform_weights = false;
  bool use_untempered = false;  // score samples by their untempered log-probs
};

UncertaintyReport compute_uncertainty(const GenerationRecord& rec,
                                      const UncertaintyOptions& options = {});

nlohmann::ordered_json uncertainty_to_json(const UncertaintyReport& report);
UncertaintyReport uncertainty_from_json(const nlohmann::ordered_json& j);

}  // namespace uacal
