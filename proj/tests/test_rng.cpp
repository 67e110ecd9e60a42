#include "dpmm/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <doctest.h>

TEST_CASE("rng streams are deterministic and name separated") {
  dpmm::Rng a = dpmm::Rng::stream(42, "data", 7);
  dpmm::Rng b = dpmm::Rng::stream(42, "data", 7);
  dpmm::Rng c = dpmm::Rng::stream(42, "init", 7);
  dpmm::Rng d = dpmm::Rng::stream(42, "data", 8);
  bool identical = true;
  bool differs_by_name = false;
  bool differs_by_index = false;
  for (int i = 0; i < 64; ++i) {
    std::uint64_t va = a.next_u64();
    identical = identical && (va == b.next_u64());
    differs_by_name = differs_by_name || (va != c.next_u64());
    differs_by_index = differs_by_index || (va != d.next_u64());
  }
  CHECK(identical);
  CHECK(differs_by_name);
  CHECK(differs_by_index);
}

TEST_CASE("uniform covers [0,1) with the right first moments") {
  dpmm::Rng rng(1234);
  const int n = 200000;
  double sum = 0.0;
  double min_v = 1.0;
  double max_v = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    sum += u;
    min_v = std::min(min_v, u);
    max_v = std::max(max_v, u);
  }
  CHECK(min_v >= 0.0);
  CHECK(max_v < 1.0);
  // SE of the mean is about 0.00065; allow 5 sigma.
  CHECK(std::abs(sum / n - 0.5) < 0.0033);
}

TEST_CASE("normal moments match a standard Gaussian") {
  dpmm::Rng rng(99);
  const int n = 200000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  double mean = sum / n;
  double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.012);       // 5 sigma at n = 200k
  CHECK(std::abs(var - 1.0) < 0.017);  // var of z^2 is 2
}

TEST_CASE("beta_one matches Beta(1, eta) mean and support") {
  for (double eta : {0.5, 1.0, 4.0}) {
    dpmm::Rng rng = dpmm::Rng::stream(7, "beta", static_cast<std::uint64_t>(eta * 10));
    const int n = 100000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = rng.beta_one(eta);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      sum += x;
    }
    double want = 1.0 / (1.0 + eta);
    CHECK(std::abs(sum / n - want) < 0.005);
  }
  dpmm::Rng rng(1);
  CHECK_THROWS_AS(rng.beta_one(0.0), std::invalid_argument);
}

TEST_CASE("gumbel draws have the Euler-Mascheroni mean") {
  dpmm::Rng rng(2718);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += rng.gumbel();
  // mean gamma ~ 0.5772, sd pi/sqrt(6) ~ 1.2825
  CHECK(std::abs(sum / n - 0.5772156649) < 0.015);
}

TEST_CASE("below is in range and roughly uniform") {
  dpmm::Rng rng(5150);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    std::uint64_t v = rng.below(10);
    REQUIRE(v < 10);
    counts[static_cast<std::size_t>(v)]++;
  }
  for (int c : counts) {
    CHECK(std::abs(c - n / 10) < 500);  // ~5 sigma for binomial(n, 0.1)
  }
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}
