// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "uacal/error.hpp"
#include "uacal/numeric.hpp"

using namespace uacal;

TEST_SUITE("numeric") {
  TEST_CASE("softmax closed forms") {
    const double zero[] = {0.0, 0.0};
    const auto half = softmax(zero);
    CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-15));

    const double ln2[] = {std::log(2.0), 0.0};
    const auto thirds = softmax(ln2);
    CHECK(thirds[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(thirds[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("softmax of large logits does not overflow") {
    const double big[] = {1000.0, 0.0};
    const auto p = softmax(big);
    // long double oracle with max subtraction
    const long double tail = std::exp(-1000.0L);
    CHECK(p[0] == doctest::Approx(static_cast<double>(1.0L / (1.0L + tail))));
    CHECK(p[1] >= 0.0);
    CHECK(p[1] < 1e-300);
    CHECK(std::isfinite(p[0]));
  }

  TEST_CASE("softmax rejects empty and non-finite rows") {
    CHECK_THROWS_AS(softmax(std::span<const double>{}), Error);
    const double bad[] = {0.0, NAN};
    CHECK_THROWS_AS(softmax(bad), Error);
  }

  TEST_CASE("softmax is shift invariant and a distribution") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 3.0);
    std::uniform_real_distribution<double> shift(-100.0, 100.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> z(1 + trial % 17);
      for (double& v : z) v = normal(rng);
      const double c = shift(rng);
      std::vector<double> zc = z;
      for (double& v : zc) v += c;
      const auto p = softmax(z);
      const auto q = softmax(zc);
      double sum = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(std::abs(p[i] - q[i]) <= 1e-9);
        CHECK(p[i] >= 0.0);
        sum += p[i];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
      CHECK(entropy(p) <= std::log(static_cast<double>(z.size())) + 1e-12);
    }
  }

  TEST_CASE("entropy examples") {
    CHECK(entropy(ProbRow({0.0, 1.0, 0.0})) == 0.0);
    CHECK(entropy(ProbRow({0.25, 0.25, 0.25, 0.25})) == doctest::Approx(1.386294).epsilon(1e-6));
    const long double oracle = -(0.7L * std::log(0.7L) + 3 * 0.1L * std::log(0.1L));
    const double h = entropy(ProbRow({0.7, 0.1, 0.1, 0.1}));
    CHECK(h == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-14));
    CHECK(std::round(h * 1e6) / 1e6 == 0.940448);
  }

  TEST_CASE("ProbRow validates its contents") {
    CHECK_THROWS_AS(ProbRow({0.5, 0.6}), Error);
    CHECK_THROWS_AS(ProbRow({-0.1, 1.1}), Error);
    CHECK_THROWS_AS(ProbRow(std::vector<double>{}), Error);
  }

  TEST_CASE("scaled entropy clamp and closed forms") {
    CHECK(scaled_entropy(0.0) == kScaledEntropyEps);
    CHECK(scaled_entropy(std::log(4.0)) == doctest::Approx(15.0 / 17.0).epsilon(1e-14));
    CHECK(scaled_entropy(0.940448) == doctest::Approx(std::tanh(0.940448L)).epsilon(1e-14));
    CHECK(std::round(scaled_entropy(0.940448) * 1e5) / 1e5 == doctest::Approx(0.73541));
    CHECK(scaled_entropy(50.0) == 1.0 - kScaledEntropyEps);
  }

  TEST_CASE("scaled entropy is monotone on [0, ln V]") {
    double prev = scaled_entropy(0.0);
    for (int k = 1; k <= 2000; ++k) {
      const double cur = scaled_entropy(std::log(256.0) * k / 2000.0);
      CHECK(cur >= prev);
      prev = cur;
    }
  }

  TEST_CASE("finite differences") {
    const double three[] = {3.0};
    const auto g = finite_diff_grad([](std::span<const double> x) { return x[0] * x[0]; }, three,
                                    1e-5);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-9));

    const std::vector<double> x{0.3, -1.2, 4.0, 2.5};
    const auto ones = finite_diff_grad(
        [](std::span<const double> v) {
          double s = 0.0;
          for (double e : v) s += e;
          return s;
        },
        x, 1e-5);
    for (double v : ones) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    // quadratic form 0.5 x^T A x + b^T x, gradient A x + b
    const double a[3][3] = {{2.0, 0.5, 0.0}, {0.5, 3.0, -1.0}, {0.0, -1.0, 1.5}};
    const double b[3] = {0.1, -0.4, 2.0};
    auto quad = [&](std::span<const double> v) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i) {
        s += b[i] * v[i];
        for (int j = 0; j < 3; ++j) s += 0.5 * v[i] * a[i][j] * v[j];
      }
      return s;
    };
    const std::vector<double> at{0.7, -0.2, 1.3};
    std::vector<double> exact(3, 0.0);
    for (int i = 0; i < 3; ++i) {
      exact[i] = b[i];
      for (int j = 0; j < 3; ++j) exact[i] += a[i][j] * at[j];
    }
    CHECK(max_relative_error(finite_diff_grad(quad, at, 1e-4), exact) < 1e-6);
  }

  TEST_CASE("log_sum_exp matches a long double oracle") {
    const double v[] = {-3.0, 700.0, 699.5, 2.0};
    long double s = 0.0L;
    for (double e : v) s += std::exp(static_cast<long double>(e) - 700.0L);
    CHECK(log_sum_exp(v) == doctest::Approx(static_cast<double>(700.0L + std::log(s))));
  }

  TEST_CASE("seed mixing separates streams") {
    CHECK(mix_seed(1, 0) != mix_seed(1, 1));
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
    CHECK(mix_seed(5, 9) == mix_seed(5, 9));
    CHECK(unit_uniform(0) == 0.0);
    CHECK(unit_uniform(~0ULL) < 1.0);
  }
}
