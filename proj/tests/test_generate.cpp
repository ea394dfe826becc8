// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>

#include "doctest.h"
#include "gradcheck.hpp"
#include "uacal/error.hpp"
#include "uacal/generate.hpp"
#include "uacal/numeric.hpp"

using namespace uacal;
using uacal::testing::tiny_adapted_model;

namespace {

const TokenSequence kPrompt{1, 5, 7};

GenConfig gen(double temperature, int samples = 5, int max_new = 4) {
  GenConfig g;
  g.temperature = temperature;
  g.num_samples = samples;
  g.max_new_tokens = max_new;
  g.seed = 17;
  g.stop_token = 15;  // rarely the argmax of the tiny random model
  return g;
}

}  // namespace

TEST_SUITE("generate") {
  TEST_CASE("greedy decoding is deterministic and ignores temperature") {
    const auto params = tiny_adapted_model(1);
    const auto a = greedy_decode(params, kPrompt, gen(0.3));
    const auto b = greedy_decode(params, kPrompt, gen(2.0));
    CHECK(a.ids == b.ids);
    CHECK(a.token_logprobs == b.token_logprobs);
    CHECK(a.token_entropies == b.token_entropies);
  }

  TEST_CASE("constant logits repeat the lowest id or stop immediately") {
    auto params = tiny_adapted_model(2);
    params.base.lm_head.setZero();
    params.adapters.for_each([](const std::string&, Matrix& m) { m.setZero(); });
    GenConfig cfg = gen(1.0, 1, 5);
    const auto repeated = greedy_decode(params, kPrompt, cfg);
    CHECK(repeated.ids == std::vector<int>(5, 0));
    CHECK_FALSE(repeated.stopped);
    cfg.stop_token = 0;
    const auto stopped = greedy_decode(params, kPrompt, cfg);
    CHECK(stopped.ids.empty());
    CHECK(stopped.stopped);
    CHECK(stopped.token_logprobs.size() == 1);  // the stop step is recorded
  }

  TEST_CASE("near-zero temperature sampling reproduces greedy decoding") {
    for (std::uint64_t seed : {3u, 4u, 5u}) {
      const auto params = tiny_adapted_model(seed);
      const auto greedy = greedy_decode(params, kPrompt, gen(1.0));
      for (std::uint64_t stream = 0; stream < 4; ++stream) {
        CHECK(sample_decode(params, kPrompt, gen(1e-6), stream).ids == greedy.ids);
      }
    }
  }

  TEST_CASE("sampling is reproducible per stream and M = 1 matches stream 0") {
    const auto params = tiny_adapted_model(6);
    const auto a = sample_decode(params, kPrompt, gen(1.0), 3);
    const auto b = sample_decode(params, kPrompt, gen(1.0), 3);
    CHECK(a.ids == b.ids);
    CHECK(a.token_logprobs == b.token_logprobs);
    const auto single = multi_sample(params, kPrompt, gen(1.0, 1));
    REQUIRE(single.size() == 1);
    const auto stream0 = sample_decode(params, kPrompt, gen(1.0), 0);
    CHECK(single[0].ids == stream0.ids);
    CHECK(single[0].token_logprobs == stream0.token_logprobs);
    // Batched streams agree with decoding each stream alone.
    const auto many = multi_sample(params, kPrompt, gen(1.0, 4));
    for (std::uint64_t s = 0; s < 4; ++s) {
      CHECK(many[s].ids == sample_decode(params, kPrompt, gen(1.0), s).ids);
    }
  }

  TEST_CASE("first-token draws follow the tempered softmax") {
    const auto params = tiny_adapted_model(7);
    const double temperature = 0.8;
    const auto pass = forward(params, std::vector<TokenSequence>{kPrompt});
    const auto logits = pass.row(0, static_cast<int>(kPrompt.size()) - 1);
    std::vector<double> scaled(logits.begin(), logits.end());
    for (double& v : scaled) v /= temperature;
    const ProbRow p = softmax(scaled);

    constexpr int kDraws = 10000;
    std::vector<int> counts(p.vocab_size(), 0);
    GenConfig cfg = gen(temperature, 1, 1);
    cfg.stop_token = 0;
    for (int s = 0; s < kDraws; ++s) {
      const auto d = sample_decode(params, kPrompt, cfg, static_cast<std::uint64_t>(s));
      const int tok = d.ids.empty() ? cfg.stop_token : d.ids[0];
      ++counts[tok];
    }
    // Pool cells with expected count below 5 into one bucket.
    double chi2 = 0.0, pooled_obs = 0.0, pooled_exp = 0.0;
    int cells = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const double expected = kDraws * p[k];
      if (expected < 5.0) {
        pooled_obs += counts[k];
        pooled_exp += expected;
        continue;
      }
      chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
      ++cells;
    }
    if (pooled_exp > 0.0) {
      chi2 += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / std::max(pooled_exp, 1e-9);
      ++cells;
    }
    // 0.999 quantile of chi-square with 15 degrees of freedom.
    REQUIRE(cells <= 16);
    CHECK(chi2 < 37.7);
  }

  TEST_CASE("telemetry is consistent") {
    const auto params = tiny_adapted_model(8);
    const GenConfig cfg = gen(0.7, 5, 5);
    std::vector<double> untempered;
    const auto samples = multi_sample(params, kPrompt, cfg, &untempered);
    REQUIRE(samples.size() == 5);
    for (std::size_t m = 0; m < samples.size(); ++m) {
      const auto& d = samples[m];
      double sum = 0.0;
      for (double lp : d.token_logprobs) sum += lp;
      CHECK(std::abs(sum - d.logprob()) < 1e-6);
      CHECK(d.token_logprobs.size() == d.ids.size() + (d.stopped ? 1 : 0));
      CHECK(untempered[m] <= 0.0);
    }

    const auto greedy = greedy_decode(params, kPrompt, cfg);
    TokenSequence seq = kPrompt;
    for (std::size_t t = 0; t < greedy.token_logprobs.size(); ++t) {
      const auto pass = forward(params, std::vector<TokenSequence>{seq});
      const auto logits = pass.row(0, static_cast<int>(seq.size()) - 1);
      const ProbRow p = softmax(logits);
      CHECK(greedy.token_entropies[t] == doctest::Approx(entropy(p)).epsilon(1e-9));
      CHECK(greedy.token_logprobs[t] >= std::log(1.0 / 16.0) - 1e-12);
      if (t < greedy.ids.size()) seq.push_back(greedy.ids[t]);
    }
  }

  TEST_CASE("generation records roundtrip through json") {
    GenerationRecord rec;
    rec.id = "q7";
    rec.prompt = "what is the color of zed ?";
    rec.response = "blue";
    rec.token_logprobs = {-0.25, -0.5};
    rec.token_entropies = {0.75, 0.125};
    rec.samples.push_back({"blue", -0.75, -1.5, 2});
    rec.samples.push_back({"red", -2.0, -3.0, 2});
    const auto back = generation_from_json(generation_to_json(rec, true));
    CHECK(back.id == rec.id);
    CHECK(back.response == rec.response);
    CHECK(back.token_logprobs == rec.token_logprobs);
    CHECK(back.token_entropies == rec.token_entropies);
    REQUIRE(back.samples.size() == 2);
    CHECK(back.samples[1].text == "red");
    CHECK(back.samples[1].logprob_untempered == -3.0);
    CHECK(back.samples[0].n_tokens == 2);
    auto broken = generation_to_json(rec, false);
    broken.erase("samples");
    CHECK_THROWS_AS(generation_from_json(broken), Error);
  }

  TEST_CASE("invalid inputs are rejected") {
    const auto params = tiny_adapted_model(9);
    CHECK_THROWS_AS(greedy_decode(params, TokenSequence{}, gen(1.0)), Error);
    CHECK_THROWS_AS(greedy_decode(params, TokenSequence(8, 1), gen(1.0)), Error);
    CHECK_THROWS_AS(sample_decode(params, kPrompt, gen(0.0), 0), Error);
    CHECK_THROWS_AS(multi_sample(params, kPrompt, gen(1.0, 0)), Error);
  }
}
