// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "uacal/checkpoint.hpp"
#include "uacal/error.hpp"
#include "uacal/hashing.hpp"
#include "uacal/model.hpp"

using namespace uacal;
using uacal::testing::tiny_adapted_model;
using uacal::testing::tiny_model_config;

namespace {

bool arrays_equal(const BaseParams& a, const BaseParams& b) {
  std::vector<const Matrix*> left, right;
  a.for_each([&](const std::string&, const Matrix& m) { left.push_back(&m); });
  b.for_each([&](const std::string&, const Matrix& m) { right.push_back(&m); });
  if (left.size() != right.size()) return false;
  for (std::size_t i = 0; i < left.size(); ++i) {
    if (left[i]->rows() != right[i]->rows() || left[i]->cols() != right[i]->cols()) return false;
    if (*left[i] != *right[i]) return false;
  }
  return true;
}

std::vector<TokenSequence> random_prompts(int n, int len, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  std::vector<TokenSequence> out(n);
  for (auto& s : out) {
    for (int t = 0; t < len; ++t) s.push_back(tok(rng));
  }
  return out;
}

LoraConfig small_lora() {
  LoraConfig lc;
  lc.rank = 4;
  lc.alpha = 8.0;
  lc.dropout = 0.0;
  return lc;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("initialization is seeded") {
    const auto a = init_model(tiny_model_config(3), small_lora());
    const auto b = init_model(tiny_model_config(3), small_lora());
    const auto c = init_model(tiny_model_config(4), small_lora());
    CHECK(arrays_equal(a.base, b.base));
    CHECK_FALSE(arrays_equal(a.base, c.base));
  }

  TEST_CASE("fresh adapters have B = 0 and do not change the output") {
    const auto params = init_model(tiny_model_config(1), small_lora());
    params.adapters.for_each([](const std::string& name, const Matrix& m) {
      if (name.ends_with("lora_b")) CHECK(m.isZero(0.0));
    });
    const auto batch = random_prompts(3, 8, 16, 5);
    ForwardOptions base_only;
    base_only.use_adapters = false;
    const auto with = forward(params, batch);
    const auto without = forward(params, batch, base_only);
    CHECK(with.logits == without.logits);
  }

  TEST_CASE("logits have the stacked shape and are finite") {
    const auto params = tiny_adapted_model(2);
    const std::vector<TokenSequence> batch{{1, 2, 3}, {4, 5, 6, 7, 8}};
    const auto pass = forward(params, batch);
    CHECK(pass.logits.rows() == 8);
    CHECK(pass.logits.cols() == 16);
    CHECK(pass.logits.allFinite());
    CHECK(pass.offsets == std::vector<int>{0, 3, 8});
  }

  TEST_CASE("causality: later tokens never change earlier logits") {
    const auto params = tiny_adapted_model(4);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      auto seq = random_prompts(1, 8, 16, 100 + trial)[0];
      const auto ref = forward(params, std::vector<TokenSequence>{seq});
      const int i = static_cast<int>(rng() % 7);
      for (int j = i + 1; j < 8; ++j) seq[j] = (seq[j] + 1 + static_cast<int>(rng() % 15)) % 16;
      const auto moved = forward(params, std::vector<TokenSequence>{seq});
      for (int p = 0; p <= i; ++p) {
        for (int v = 0; v < 16; ++v) CHECK(ref.logits(p, v) == moved.logits(p, v));
      }
    }
  }

  TEST_CASE("batch independence") {
    const auto params = tiny_adapted_model(5);
    const TokenSequence a{1, 7, 8, 9, 2};
    const TokenSequence b{1, 4, 4, 5};
    const auto alone = forward(params, std::vector<TokenSequence>{a});
    const auto pair = forward(params, std::vector<TokenSequence>{b, a});
    for (int p = 0; p < 5; ++p) {
      for (int v = 0; v < 16; ++v) {
        CHECK(std::abs(alone.logits(p, v) - pair.logits(4 + p, v)) < 1e-5);
      }
    }
  }

  TEST_CASE("zero upstream gradient gives zero adapter gradients and no base gradients") {
    const auto params = tiny_adapted_model(6);
    const auto batch = random_prompts(2, 6, 16, 3);
    const auto pass = forward(params, batch);
    const Matrix zero = Matrix::Zero(pass.logits.rows(), pass.logits.cols());
    const Gradients g = backward(params, pass, zero);
    g.adapters.for_each([](const std::string&, const Matrix& m) { CHECK(m.isZero(0.0)); });
    g.base.for_each([](const std::string&, const Matrix& m) { CHECK(m.size() == 0); });
  }

  TEST_CASE("adapter and base gradients match central differences") {
    const auto params = tiny_adapted_model(7);
    const auto batch = uacal::testing::tiny_batch(7);
    for (GradTarget target : {GradTarget::adapters, GradTarget::base}) {
      const auto r = uacal::testing::check_gradients(params, batch, LossKind::clm, target);
      INFO("worst entry " << r.where);
      CHECK(r.checked > 0);
      CHECK(r.worst < 1e-4);
    }
  }

  TEST_CASE("merging adapters") {
    SUBCASE("at initialization the base is unchanged") {
      const auto params = init_model(tiny_model_config(8), small_lora());
      const auto merged = merge_adapters(params);
      CHECK(arrays_equal(merged.base, params.base));
      CHECK_FALSE(merged.has_adapters());
    }
    SUBCASE("merged logits match the adapted model") {
      const auto params = tiny_adapted_model(9);
      const auto merged = merge_adapters(params);
      const auto prompts = random_prompts(100, 6, 16, 11);
      const auto a = forward(params, prompts);
      const auto b = forward(merged, prompts);
      CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() < 1e-5);
    }
    SUBCASE("double merge is rejected") {
      const auto merged = merge_adapters(tiny_adapted_model(10));
      CHECK_THROWS_AS(merge_adapters(merged), Error);
    }
  }

  TEST_CASE("config validation") {
    ModelConfig mc = tiny_model_config(0);
    mc.d_model = 15;
    CHECK_THROWS_AS(mc.validate(), Error);
    LoraConfig lc = small_lora();
    lc.target_maps = {"nonexistent"};
    CHECK_THROWS_AS(lc.validate(tiny_model_config(0)), Error);
    lc = small_lora();
    lc.rank = 0;
    CHECK_THROWS_AS(lc.validate(tiny_model_config(0)), Error);
  }

  TEST_CASE("prompts longer than the context are rejected") {
    const auto params = tiny_adapted_model(1);
    const std::vector<TokenSequence> batch{TokenSequence(9, 1)};
    CHECK_THROWS_AS(forward(params, batch), Error);
  }

  TEST_CASE("checkpoint roundtrip stores float32 arrays") {
    Checkpoint ck;
    ck.params = tiny_adapted_model(12);
    ck.loss_kind = "ua_clm";
    ck.step_count = 42;
    const std::string bytes = serialize_checkpoint(ck);
    CHECK(bytes.compare(0, 6, "UACAL1") == 0);
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.loss_kind == "ua_clm");
    CHECK(back.step_count == 42);
    CHECK(back.params.config == ck.params.config);
    REQUIRE(back.params.lora.has_value());
    CHECK(*back.params.lora == *ck.params.lora);
    std::vector<const Matrix*> original;
    ck.params.base.for_each([&](const std::string&, const Matrix& m) { original.push_back(&m); });
    std::size_t k = 0;
    back.params.base.for_each([&](const std::string&, const Matrix& m) {
      const Matrix rounded = original[k++]->cast<float>().cast<double>();
      CHECK(m == rounded);
    });
    // A second roundtrip is exact.
    CHECK(serialize_checkpoint(back) == bytes);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    Checkpoint ck;
    ck.params = tiny_adapted_model(13);
    std::string bytes = serialize_checkpoint(ck);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), Error);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), Error);
  }

  TEST_CASE("base hash tracks base arrays only") {
    auto params = tiny_adapted_model(14);
    const std::string before = hash_base(params.base);
    params.adapters.for_each([](const std::string&, Matrix& m) { m.array() += 1.0; });
    CHECK(hash_base(params.base) == before);
    params.base.lm_head(0, 0) += 1e-12;
    CHECK(hash_base(params.base) != before);
    CHECK(sha256_hex(std::string_view("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
