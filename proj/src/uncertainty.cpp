// SPDX-License-Identifier: Apache-2.0
#include "uacal/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "uacal/error.hpp"

namespace uacal {
namespace {

void require_response(const GenerationRecord& rec, const char* who) {
  require(!rec.token_logprobs.empty(), ErrorCode::invalid_argument,
          std::string(who) + ": record '" + rec.id + "' has no decoded tokens");
}

}  // namespace

std::string_view uncertainty_metric_name(UncertaintyMetric metric) {
  switch (metric) {
    case UncertaintyMetric::perplexity: return "perplexity";
    case UncertaintyMetric::mean_token_entropy: return "mean_token_entropy";
    case UncertaintyMetric::predictive_entropy: return "predictive_entropy";
    case UncertaintyMetric::semantic_entropy: return "semantic_entropy";
  }
  return "?";
}

double metric_value(const UncertaintyReport& report, UncertaintyMetric metric) {
  switch (metric) {
    case UncertaintyMetric::perplexity: return report.perplexity;
    case UncertaintyMetric::mean_token_entropy: return report.mean_token_entropy;
    case UncertaintyMetric::predictive_entropy: return report.predictive_entropy;
    case UncertaintyMetric::semantic_entropy: return report.semantic_entropy;
  }
  return 0.0;
}

bool EquivalencePredicate::operator()(std::string_view a, std::string_view b) const {
  switch (kind) {
    case Kind::exact_normalized: return normalize_text(a) == normalize_text(b);
    case Kind::rouge_threshold:
      return rouge_l(a, b).f1 >= threshold && rouge_l(b, a).f1 >= threshold;
  }
  return false;
}

std::string_view predicate_kind_name(EquivalencePredicate::Kind kind) {
  return kind == EquivalencePredicate::Kind::exact_normalized ? "exact_normalized"
                                                              : "rouge_threshold";
}

EquivalencePredicate::Kind parse_predicate_kind(std::string_view name) {
  if (name == "exact_normalized") return EquivalencePredicate::Kind::exact_normalized;
  if (name == "rouge_threshold") return EquivalencePredicate::Kind::rouge_threshold;
  fail(ErrorCode::config_error, "unknown equivalence predicate '" + std::string(name) +
                                    "' (expected exact_normalized|rouge_threshold)");
}

double mean_token_entropy(const GenerationRecord& rec) {
  require_response(rec, "mean_token_entropy");
  double sum = 0.0;
  for (double h : rec.token_entropies) sum += h;
  return sum / static_cast<double>(rec.token_entropies.size());
}

double perplexity(const GenerationRecord& rec) {
  require_response(rec, "perplexity");
  double sum = 0.0;
  for (double lp : rec.token_logprobs) {
    require(std::isfinite(lp) && lp <= 0.0, ErrorCode::non_finite,
            "perplexity: invalid token log-prob in record '" + rec.id + "'");
    sum -= lp;
  }
  return std::exp(sum / static_cast<double>(rec.token_logprobs.size()));
}

double predictive_entropy(std::span<const SampleScore> samples, bool length_normalized) {
  require(!samples.empty(), ErrorCode::invalid_argument, "predictive_entropy: no samples");
  double sum = 0.0;
  for (const auto& s : samples) {
    require(std::isfinite(s.logprob), ErrorCode::non_finite,
            "predictive_entropy: non-finite sample log-prob");
    double lp = s.logprob;
    if (length_normalized) {
      require(s.n_tokens > 0, ErrorCode::invalid_argument,
              "predictive_entropy: length normalization needs n_tokens > 0");
      lp /= s.n_tokens;
    }
    sum -= lp;
  }
  return sum / static_cast<double>(samples.size());
}

std::vector<int> cluster_samples(std::span<const SampleScore> samples,
                                 const EquivalencePredicate& pred) {
  std::vector<int> assignment;
  std::vector<std::size_t> representatives;
  for (std::size_t m = 0; m < samples.size(); ++m) {
    require(pred(samples[m].text, samples[m].text), ErrorCode::invalid_argument,
            "semantic_entropy: equivalence predicate is not reflexive on sample '" +
                samples[m].text + "'");
    int cluster = -1;
    for (std::size_t c = 0; c < representatives.size() && cluster < 0; ++c) {
      if (pred(samples[m].text, samples[representatives[c]].text)) cluster = static_cast<int>(c);
    }
    if (cluster < 0) {
      cluster = static_cast<int>(representatives.size());
      representatives.push_back(m);
    }
    assignment.push_back(cluster);
  }
  return assignment;
}

double semantic_entropy(std::span<const SampleScore> samples, const EquivalencePredicate& pred,
                        bool uniform_weights) {
  require(!samples.empty(), ErrorCode::invalid_argument, "semantic_entropy: no samples");
  const auto assignment = cluster_samples(samples, pred);
  const int n_clusters = *std::max_element(assignment.begin(), assignment.end()) + 1;

  std::vector<double> weight(samples.size(), 1.0);
  if (!uniform_weights) {
    double max_lp = -INFINITY;
    for (const auto& s : samples) {
      require(std::isfinite(s.logprob), ErrorCode::non_finite,
              "semantic_entropy: non-finite sample log-prob");
      max_lp = std::max(max_lp, s.logprob);
    }
    for (std::size_t m = 0; m < samples.size(); ++m) {
      weight[m] = std::exp(samples[m].logprob - max_lp);
    }
  }
  std::vector<double> mass(static_cast<std::size_t>(n_clusters), 0.0);
  double total = 0.0;
  for (std::size_t m = 0; m < samples.size(); ++m) {
    mass[assignment[m]] += weight[m];
    total += weight[m];
  }
  double h = 0.0;
  for (double w : mass) {
    const double p = w / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

UncertaintyReport compute_uncertainty(const GenerationRecord& rec,
                                      const UncertaintyOptions& options) {
  UncertaintyReport r;
  r.mean_token_entropy = mean_token_entropy(rec);
  r.perplexity = perplexity(rec);
  r.confidence = 1.0 / r.perplexity;
  std::vector<SampleScore> samples;
  for (const auto& s : rec.samples) {
    samples.push_back({s.text, options.use_untempered ? s.logprob_untempered : s.logprob,
                       std::max(s.n_tokens, 1)});
  }
  r.predictive_entropy = predictive_entropy(samples, options.length_normalized);
  r.semantic_entropy = semantic_entropy(samples, options.predicate, options.uniform_weights);
  return r;
}

nlohmann::ordered_json uncertainty_to_json(const UncertaintyReport& report) {
  nlohmann::ordered_json j;
  j["mean_token_entropy"] = report.mean_token_entropy;
  j["perplexity"] = report.perplexity;
  j["predictive_entropy"] = report.predictive_entropy;
  j["semantic_entropy"] = report.semantic_entropy;
  j["confidence"] = report.confidence;
  return j;
}

UncertaintyReport uncertainty_from_json(const nlohmann::ordered_json& j) {
  UncertaintyReport r;
  try {
    r.mean_token_entropy = j.at("mean_token_entropy").get<double>();
    r.perplexity = j.at("perplexity").get<double>();
    r.predictive_entropy = j.at("predictive_entropy").get<double>();
    r.semantic_entropy = j.at("semantic_entropy").get<double>();
    r.confidence = j.at("confidence").get<double>();
  } catch (const nlohmann::ordered_json::exception& e) {
    fail(ErrorCode::parse_error, std::string("uncertainty report: ") + e.what());
  }
  return r;
}

}  // namespace uacal
