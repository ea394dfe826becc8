// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "uacal/error.hpp"
#include "uacal/hashing.hpp"
#include "uacal/synthworld.hpp"
#include "uacal/trainer.hpp"

using namespace uacal;

namespace {

// Copy task: <bos> a b <unk> a b <eos>, supervised from the second "a", so the
// answer is learnable from the prompt.
std::vector<TrainExample> copy_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> token(4, 9);
  std::vector<TrainExample> out;
  for (int i = 0; i < n; ++i) {
    TrainExample ex;
    ex.ids = {kBosId};
    const int a = token(rng), b = token(rng);
    ex.ids.insert(ex.ids.end(), {a, b, 3, a, b, kEosId});
    ex.supervise_from = 4;
    out.push_back(ex);
  }
  return out;
}

TrainConfig small_train(LossKind kind) {
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 11;
  tc.loss_kind = kind;
  return tc;
}

bool adapters_equal(const ModelParams& a, const ModelParams& b) {
  std::vector<Matrix> left;
  a.adapters.for_each([&](const std::string&, const Matrix& m) { left.push_back(m); });
  std::size_t k = 0;
  bool same = true;
  b.adapters.for_each([&](const std::string&, const Matrix& m) { same = same && m == left[k++]; });
  return same && k == left.size();
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("learning rate schedule") {
    TrainConfig tc;  // 1e-4, warmup 0.03
    CHECK(lr_at(0, 1000, tc) == 0.0);
    CHECK(lr_at(15, 1000, tc) == doctest::Approx(0.5e-4).epsilon(1e-12));
    CHECK(lr_at(30, 1000, tc) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at(515, 1000, tc) == doctest::Approx(0.5e-4).epsilon(1e-12));
    CHECK(lr_at(1000, 1000, tc) == 0.0);
    // Warmup length rounds up so that short runs still ramp.
    CHECK(lr_at(1, 10, tc) == doctest::Approx(1e-4 * 9.0 / 9.0).epsilon(1e-12));
    CHECK(lr_at(0, 10, tc) == 0.0);
    CHECK_THROWS_AS(lr_at(0, 0, tc), Error);
    CHECK_THROWS_AS(lr_at(11, 10, tc), Error);
  }

  TEST_CASE("adamw with zero gradient only decays") {
    Matrix theta(1, 3);
    theta << 1.0, -2.0, 0.5;
    const Matrix original = theta;
    const Matrix zero = Matrix::Zero(1, 3);
    Matrix* params[] = {&theta};
    const Matrix* grads[] = {&zero};
    AdamState state;
    adamw_step(params, grads, {true}, state, 1e-3, 0.01);
    CHECK((theta - original * (1.0 - 1e-5)).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("adamw first step moves by about lr against the gradient sign") {
    Matrix theta = Matrix::Zero(1, 4);
    Matrix g(1, 4);
    g << 0.3, -2.0, 1e-2, -7.0;
    Matrix* params[] = {&theta};
    const Matrix* grads[] = {&g};
    AdamState state;
    adamw_step(params, grads, {false}, state, 1e-3, 0.0);
    for (int i = 0; i < 4; ++i) {
      // Hand trace: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps).
      const double expected = -1e-3 * g(0, i) / (std::abs(g(0, i)) + kAdamEps);
      CHECK(theta(0, i) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("adamw is deterministic and rejects non-finite gradients") {
    Matrix a = Matrix::Constant(2, 2, 0.5), b = a;
    Matrix g(2, 2);
    g << 0.1, -0.2, 0.3, -0.4;
    AdamState sa, sb;
    for (int step = 0; step < 3; ++step) {
      Matrix* pa[] = {&a};
      Matrix* pb[] = {&b};
      const Matrix* gs[] = {&g};
      adamw_step(pa, gs, {true}, sa, 1e-2, 0.1);
      adamw_step(pb, gs, {true}, sb, 1e-2, 0.1);
    }
    CHECK(a == b);
    Matrix bad = g;
    bad(1, 1) = INFINITY;
    Matrix* pa[] = {&a};
    const Matrix* gs[] = {&bad};
    CHECK_THROWS_AS(adamw_step(pa, gs, {true}, sa, 1e-2, 0.1), Error);
  }

  TEST_CASE("batch labels supervise only from supervise_from") {
    TrainExample ex;
    ex.ids = {1, 5, 6, 7, 2};
    ex.supervise_from = 3;
    const std::vector<TrainExample> batch{ex};
    CHECK(batch_labels(batch) == std::vector<int>{kIgnoreLabel, kIgnoreLabel, 7, 2, kIgnoreLabel});
  }

  TEST_CASE("zero epochs leave the parameters unchanged") {
    auto params = uacal::testing::tiny_adapted_model(1);
    const auto before = params;
    TrainConfig tc = small_train(LossKind::ua_clm);
    tc.epochs = 0;
    const auto result = train(params, copy_dataset(8, 1), tc);
    CHECK(result.log.steps.empty());
    CHECK(adapters_equal(params, before));
  }

  TEST_CASE("same seed and data give bit-identical parameters") {
    for (LossKind kind : {LossKind::clm, LossKind::ua_clm, LossKind::annealed, LossKind::ult}) {
      auto a = uacal::testing::tiny_adapted_model(2);
      auto b = a;
      const auto data = copy_dataset(12, 2);
      train(a, data, small_train(kind));
      train(b, data, small_train(kind));
      CHECK(adapters_equal(a, b));
    }
  }

  TEST_CASE("adapter training leaves the base frozen") {
    auto params = uacal::testing::tiny_adapted_model(3);
    const std::string before = hash_base(params.base);
    const auto before_params = params;
    train(params, copy_dataset(12, 3), small_train(LossKind::ua_clm));
    CHECK(hash_base(params.base) == before);
    CHECK_FALSE(adapters_equal(params, before_params));
  }

  TEST_CASE("token counts partition the supervised positions") {
    auto params = uacal::testing::tiny_adapted_model(4);
    const auto data = copy_dataset(10, 4);
    TrainConfig tc = small_train(LossKind::clm);
    tc.epochs = 1;
    tc.batch_size = 5;
    const auto result = train(params, data, tc);
    REQUIRE(result.log.steps.size() == 2);
    for (const auto& s : result.log.steps) {
      CHECK(s.n_correct + s.n_incorrect == 5 * 3);  // three answer labels per example
    }
  }

  TEST_CASE("training lowers the loss on a learnable task") {
    auto params = init_base_model(uacal::testing::tiny_model_config(5));
    TrainConfig tc = small_train(LossKind::clm);
    tc.target = GradTarget::base;
    tc.epochs = 30;
    const auto result = train(params, copy_dataset(16, 5), tc);
    REQUIRE(result.log.steps.size() >= 8);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 4; ++i) {
      first += result.log.steps[i].loss;
      last += result.log.steps[result.log.steps.size() - 1 - i].loss;
    }
    CHECK(last < 0.5 * first);
  }

  TEST_CASE("sequences beyond the context are skipped and counted") {
    auto params = uacal::testing::tiny_adapted_model(6);
    auto data = copy_dataset(4, 6);
    TrainExample big;
    big.ids = TokenSequence(20, 5);
    data.push_back(big);
    TrainConfig tc = small_train(LossKind::clm);
    tc.epochs = 1;
    CHECK(train(params, data, tc).skipped == 1);
  }

  TEST_CASE("train log csv roundtrip") {
    TrainLog log;
    log.steps.push_back({0, 1.25, 1e-4, 3, 5, 0.5, 1.5, 0.9, 0.3});
    log.steps.push_back({1, 0.75, 2e-4, 4, 4, 0.25, 1.25, 0.95, 0.2});
    const TrainLog back = TrainLog::from_csv(log.to_csv());
    REQUIRE(back.steps.size() == 2);
    CHECK(back.steps[1].step == 1);
    CHECK(back.steps[1].loss == 0.75);
    CHECK(back.steps[0].n_incorrect == 5);
    CHECK(back.steps[0].entropy_incorrect == 1.5);
    CHECK(back.to_csv() == log.to_csv());
    CHECK_THROWS_AS(TrainLog::from_csv("step,loss\n1,x\n"), Error);
  }

  TEST_CASE("config validation") {
    TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), Error);
    tc = TrainConfig{};
    tc.warmup_ratio = 1.5;
    CHECK_THROWS_AS(tc.validate(), Error);
  }
}
