// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "uacal/error.hpp"
#include "uacal/uncertainty.hpp"

using namespace uacal;

namespace {

GenerationRecord record_with(std::vector<double> logprobs, std::vector<double> entropies) {
  GenerationRecord rec;
  rec.id = "r";
  rec.response = "x";
  rec.token_logprobs = std::move(logprobs);
  rec.token_entropies = std::move(entropies);
  return rec;
}

std::vector<SampleScore> equal_weight(const std::vector<std::string>& texts) {
  std::vector<SampleScore> out;
  for (const auto& t : texts) out.push_back({t, -1.0, 1});
  return out;
}

}  // namespace

TEST_SUITE("uncertainty") {
  TEST_CASE("mean token entropy") {
    CHECK(mean_token_entropy(record_with({-0.1, -0.2}, {0.0, 0.0})) == 0.0);
    CHECK(mean_token_entropy(record_with({-0.1, -0.2}, {std::log(4.0), 0.0})) ==
          doctest::Approx(0.693147).epsilon(1e-6));
  }

  TEST_CASE("perplexity") {
    CHECK(perplexity(record_with({std::log(0.5), std::log(0.5), std::log(0.5)}, {0, 0, 0})) ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK(perplexity(record_with({std::log(1.0 / 37), std::log(1.0 / 37)}, {0, 0})) ==
          doctest::Approx(37.0).epsilon(1e-12));
    CHECK(perplexity(record_with({std::log(0.5), std::log(0.25)}, {0, 0})) ==
          doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
    auto rec = record_with({-0.3, -1.7, -0.05}, {0.1, 0.2, 0.3});
    rec.samples.push_back({"x", -1.0, -1.0, 1});
    const auto report = compute_uncertainty(rec);
    CHECK(report.confidence * report.perplexity == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(perplexity(record_with({}, {})), Error);
    CHECK_THROWS_AS(perplexity(record_with({NAN}, {0.0})), Error);
  }

  TEST_CASE("predictive entropy") {
    const std::vector<SampleScore> same{{"a", -1.0, 1}, {"b", -1.0, 1}, {"c", -1.0, 1}};
    CHECK(predictive_entropy(same) == doctest::Approx(1.0));
    const std::vector<SampleScore> one{{"a", -2.3, 1}};
    CHECK(predictive_entropy(one) == doctest::Approx(2.3));
    const std::vector<SampleScore> mixed{{"a", -0.5, 1}, {"b", -1.5, 3}, {"c", -4.0, 2}};
    CHECK(predictive_entropy(mixed) == doctest::Approx((0.5 + 1.5 + 4.0) / 3.0));
    CHECK(predictive_entropy(mixed, true) == doctest::Approx((0.5 + 0.5 + 2.0) / 3.0));
    const std::vector<SampleScore> bad{{"a", NAN, 1}};
    CHECK_THROWS_AS(predictive_entropy(bad), Error);
    CHECK_THROWS_AS(predictive_entropy({}), Error);
  }

  TEST_CASE("semantic entropy examples") {
    const EquivalencePredicate exact;
    CHECK(semantic_entropy(equal_weight({"blue", "Blue ", "blue"}), exact) == 0.0);
    CHECK(semantic_entropy(equal_weight({"a", "b", "c", "d"}), exact) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    const double h = semantic_entropy(equal_weight({"x", "y", "x", "x", "y"}), exact);
    CHECK(h == doctest::Approx(-0.6 * std::log(0.6) - 0.4 * std::log(0.4)).epsilon(1e-12));
    CHECK(std::round(h * 1e5) / 1e5 == doctest::Approx(0.67301));
    // Likelihood weights: cluster masses follow exp(logprob).
    const std::vector<SampleScore> weighted{{"x", std::log(0.3), 1}, {"y", std::log(0.1), 1}};
    CHECK(semantic_entropy(weighted, exact) ==
          doctest::Approx(-0.75 * std::log(0.75) - 0.25 * std::log(0.25)).epsilon(1e-12));
    CHECK(semantic_entropy(weighted, exact, true) == doctest::Approx(std::log(2.0)));
  }

  TEST_CASE("merging clusters never raises semantic entropy") {
    std::mt19937_64 rng(1);
    const EquivalencePredicate exact;
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<SampleScore> samples;
      for (int m = 0; m < 6; ++m) {
        samples.push_back({words[rng() % 5], -0.1 - static_cast<double>(rng() % 100) / 20.0, 1});
      }
      const double before = semantic_entropy(samples, exact);
      // Relabel every "b" as "a": a merge of two clusters.
      auto merged = samples;
      for (auto& s : merged) {
        if (s.text == "b") s.text = "a";
      }
      CHECK(semantic_entropy(merged, exact) <= before + 1e-12);
      // Treating every sample as its own cluster is an upper bound.
      auto distinct = samples;
      for (std::size_t m = 0; m < distinct.size(); ++m) distinct[m].text = "s" + std::to_string(m);
      CHECK(before <= semantic_entropy(distinct, exact) + 1e-12);
      CHECK(before <= std::log(6.0) + 1e-12);
    }
  }

  TEST_CASE("equivalence predicates") {
    const EquivalencePredicate exact;
    CHECK(exact("Paris ", "paris"));
    CHECK_FALSE(exact("Paris", "Paris, France"));
    EquivalencePredicate rouge;
    rouge.kind = EquivalencePredicate::Kind::rouge_threshold;
    rouge.threshold = 0.7;
    CHECK(rouge("the red fox", "the red fox"));
    CHECK(rouge("a b c d e", "a b c d f"));  // F1 0.8
    CHECK_FALSE(rouge("a b", "a c"));
    // Reflexive and symmetric on a sample of strings.
    const std::vector<std::string> texts{"a b", "b a", "a b c", "c", "", "a  b"};
    for (const auto& s : texts) {
      CHECK(exact(s, s));
      for (const auto& t : texts) {
        CHECK(exact(s, t) == exact(t, s));
        CHECK(rouge(s, t) == rouge(t, s));
      }
    }
    CHECK(parse_predicate_kind("rouge_threshold") == EquivalencePredicate::Kind::rouge_threshold);
    CHECK_THROWS_AS(parse_predicate_kind("cosine"), Error);
  }

  TEST_CASE("clusters are assigned in first-seen order") {
    const EquivalencePredicate exact;
    const auto c = cluster_samples(equal_weight({"q", "r", "Q", "s", "r"}), exact);
    CHECK(c == std::vector<int>{0, 1, 0, 2, 1});
  }

  TEST_CASE("compute_uncertainty and json roundtrip") {
    auto rec = record_with({std::log(0.5), std::log(0.25)}, {std::log(4.0), 0.0});
    rec.samples.push_back({"blue", -0.5, -0.7, 2});
    rec.samples.push_back({"blue", -0.5, -0.7, 2});
    rec.samples.push_back({"red", -1.5, -2.0, 3});
    UncertaintyOptions opts;
    const auto r = compute_uncertainty(rec, opts);
    CHECK(r.perplexity == doctest::Approx(std::sqrt(8.0)));
    CHECK(r.mean_token_entropy == doctest::Approx(std::log(2.0)));
    CHECK(r.predictive_entropy == doctest::Approx(2.5 / 3.0));
    CHECK(metric_value(r, UncertaintyMetric::perplexity) == r.perplexity);
    opts.use_untempered = true;
    CHECK(compute_uncertainty(rec, opts).predictive_entropy == doctest::Approx(3.4 / 3.0));
    const auto back = uncertainty_from_json(uncertainty_to_json(r));
    CHECK(back.perplexity == r.perplexity);
    CHECK(back.semantic_entropy == r.semantic_entropy);
    CHECK(back.confidence == r.confidence);
  }
}
