#include "dpmm/math_core.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "dpmm/rng.hpp"
#include "oracles.hpp"

using dpmm::BetaParams;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("log_sum_exp matches hand values and stays stable") {
  std::vector<double> two_zeros{0.0, 0.0};
  CHECK(dpmm::log_sum_exp(two_zeros) == doctest::Approx(0.6931471805599453).epsilon(1e-14));

  std::vector<double> shifted{1000.0, 1000.0};
  CHECK(dpmm::log_sum_exp(shifted) ==
        doctest::Approx(1000.0 + 0.6931471805599453).epsilon(1e-14));

  std::vector<double> with_neg_inf{-kInf, 0.0};
  CHECK(dpmm::log_sum_exp(with_neg_inf) == doctest::Approx(0.0));

  std::vector<double> single{-3.5};
  CHECK(dpmm::log_sum_exp(single) == doctest::Approx(-3.5));
}

TEST_CASE("log_sum_exp rejects empty and all -inf inputs") {
  std::vector<double> empty;
  CHECK_THROWS_AS(dpmm::log_sum_exp(empty), std::invalid_argument);
  std::vector<double> all_neg_inf{-kInf, -kInf};
  CHECK_THROWS_AS(dpmm::log_sum_exp(all_neg_inf), std::invalid_argument);
}

TEST_CASE("digamma hits frozen reference points") {
  // -EulerGamma, and psi(2) = 1 - EulerGamma, psi(0.5) = -EulerGamma - 2 log 2.
  CHECK(dpmm::digamma(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-12));
  CHECK(dpmm::digamma(2.0) == doctest::Approx(0.4227843350984671).epsilon(1e-12));
  CHECK(dpmm::digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-12));
  CHECK_THROWS_AS(dpmm::digamma(0.0), std::invalid_argument);
  CHECK_THROWS_AS(dpmm::digamma(-1.5), std::invalid_argument);
}

TEST_CASE("digamma recurrence psi(x+1) - psi(x) = 1/x") {
  // Log spaced sweep of the range the library promises.
  for (double x = 0.01; x <= 1.0e4; x *= 1.37) {
    double lhs = dpmm::digamma(x + 1.0) - dpmm::digamma(x);
    CHECK(std::abs(lhs - 1.0 / x) < 1e-10 * std::max(1.0, 1.0 / x));
  }
}

TEST_CASE("digamma tracks an independent reference across the target range") {
  for (double x = 1.0e-3; x <= 1.0e6; x *= 2.7) {
    double got = dpmm::digamma(x);
    double want = oracles::digamma_ref(x);
    CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("log_gamma tracks an independent reference") {
  for (double x = 1.0e-3; x <= 1.0e6; x *= 2.3) {
    double got = dpmm::log_gamma(x);
    double want = oracles::log_gamma_ref(x);
    CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
  }
  CHECK(dpmm::log_gamma(1.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(dpmm::log_gamma(2.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS_AS(dpmm::log_gamma(0.0), std::invalid_argument);
}

TEST_CASE("log_beta_fn values and symmetry") {
  CHECK(dpmm::log_beta_fn(2.0, 1.0) == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
  CHECK(dpmm::log_beta_fn(1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-14));
  // B(1/2, 1/2) = pi.
  CHECK(dpmm::log_beta_fn(0.5, 0.5) == doctest::Approx(1.1447298858494002).epsilon(1e-12));
  dpmm::Rng rng(7101);
  for (int i = 0; i < 50; ++i) {
    double a = 0.05 + 40.0 * rng.uniform();
    double b = 0.05 + 40.0 * rng.uniform();
    CHECK(dpmm::log_beta_fn(a, b) == doctest::Approx(dpmm::log_beta_fn(b, a)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(dpmm::log_beta_fn(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("diag_gauss_log_pdf hand values and errors") {
  std::vector<double> z{0.0};
  std::vector<double> mean{0.0};
  std::vector<double> log_var{0.0};
  CHECK(dpmm::diag_gauss_log_pdf(z, mean, log_var) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-14));

  // At z = mean the quadratic term drops out.
  std::vector<double> z3{1.0, -2.0, 0.5};
  std::vector<double> lv3{0.3, -0.7, 1.1};
  double expect = -1.5 * 1.8378770664093455 - 0.5 * (0.3 - 0.7 + 1.1);
  CHECK(dpmm::diag_gauss_log_pdf(z3, z3, lv3) == doctest::Approx(expect).epsilon(1e-13));

  std::vector<double> short_mean{0.0, 0.0};
  CHECK_THROWS_AS(dpmm::diag_gauss_log_pdf(z, short_mean, log_var),
                  std::invalid_argument);
}

TEST_CASE("diag_gauss_log_pdf integrates to one under Gauss-Hermite") {
  // d = 1 standard normal with a shifted mean; integral f(z) dz rewritten as
  // integral exp(-t^2) [f(t) exp(t^2)] dt.
  auto gh = oracles::gauss_hermite(64);
  std::vector<double> mean{0.3};
  std::vector<double> log_var{0.0};
  double total = 0.0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    double t = gh.nodes[i];
    std::vector<double> z{t};
    double log_pdf = dpmm::diag_gauss_log_pdf(z, mean, log_var);
    total += gh.weights[i] * std::exp(log_pdf + t * t);
  }
  CHECK(std::abs(total - 1.0) < 1e-8);
}

TEST_CASE("diag_gauss_sample applies mean and scale to supplied noise") {
  std::vector<double> mean{1.0, -1.0};
  std::vector<double> log_var{0.0, 2.0 * std::log(2.0)};
  std::vector<double> eps{0.5, -0.25};
  auto z = dpmm::diag_gauss_sample(mean, log_var, eps);
  REQUIRE(z.size() == 2);
  CHECK(z[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(-1.5).epsilon(1e-15));

  std::vector<double> zero_eps{0.0, 0.0};
  auto at_mean = dpmm::diag_gauss_sample(mean, log_var, zero_eps);
  CHECK(at_mean[0] == doctest::Approx(mean[0]));
  CHECK(at_mean[1] == doctest::Approx(mean[1]));

  std::vector<double> short_eps{0.0};
  CHECK_THROWS_AS(dpmm::diag_gauss_sample(mean, log_var, short_eps),
                  std::invalid_argument);
}

TEST_CASE("kl_gauss_diag closed form matches hand and quadrature values") {
  std::vector<double> zero{0.0};
  std::vector<double> one{1.0};
  CHECK(dpmm::kl_gauss_diag(zero, zero, zero, zero) == doctest::Approx(0.0));
  CHECK(dpmm::kl_gauss_diag(one, zero, zero, zero) == doctest::Approx(0.5).epsilon(1e-14));

  // Non-trivial one dimensional case checked against direct quadrature of
  // q log(q/p) over the real line.
  std::vector<double> mq{0.3};
  std::vector<double> lvq{0.4};
  std::vector<double> mp{-0.2};
  std::vector<double> lvp{-0.3};
  double closed = dpmm::kl_gauss_diag(mq, lvq, mp, lvp);
  auto integrand = [&](double z) {
    std::vector<double> zz{z};
    double lq = dpmm::diag_gauss_log_pdf(zz, mq, lvq);
    double lp = dpmm::diag_gauss_log_pdf(zz, mp, lvp);
    return std::exp(lq) * (lq - lp);
  };
  double quad = oracles::integrate_real_line(integrand);
  CHECK(std::abs(closed - quad) < 1e-8);

  // KL is additive over independent coordinates.
  std::vector<double> mq2{0.3, 0.3};
  std::vector<double> lvq2{0.4, 0.4};
  std::vector<double> mp2{-0.2, -0.2};
  std::vector<double> lvp2{-0.3, -0.3};
  CHECK(dpmm::kl_gauss_diag(mq2, lvq2, mp2, lvp2) ==
        doctest::Approx(2.0 * closed).epsilon(1e-13));
}

TEST_CASE("kl_beta frozen value, zero case and quadrature sweep") {
  CHECK(dpmm::kl_beta({2.0, 1.0}, {1.0, 1.0}) ==
        doctest::Approx(0.19314718055994531).epsilon(1e-12));
  CHECK(dpmm::kl_beta({3.0, 0.5}, {3.0, 0.5}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(dpmm::kl_beta({0.0, 1.0}, {1.0, 1.0}), std::invalid_argument);

  dpmm::Rng rng(40191);
  for (int trial = 0; trial < 40; ++trial) {
    BetaParams q{0.1 + 49.9 * rng.uniform(), 0.1 + 49.9 * rng.uniform()};
    BetaParams p{0.1 + 49.9 * rng.uniform(), 0.1 + 49.9 * rng.uniform()};
    double closed = dpmm::kl_beta(q, p);
    double log_bq = dpmm::log_beta_fn(q.a, q.b);
    double log_bp = dpmm::log_beta_fn(p.a, p.b);
    auto integrand = [&](double x, double xc) {
      // xc is the distance to the nearest endpoint; near 1 use it for 1 - x.
      double lx = std::log(x <= 0.5 ? x : 1.0 - xc);
      double l1mx = std::log(x <= 0.5 ? 1.0 - x : xc);
      double lq = (q.a - 1.0) * lx + (q.b - 1.0) * l1mx - log_bq;
      double lp = (p.a - 1.0) * lx + (p.b - 1.0) * l1mx - log_bp;
      return std::exp(lq) * (lq - lp);
    };
    double quad = oracles::integrate01(integrand);
    CHECK(std::abs(closed - quad) < 1e-6);
  }
}

TEST_CASE("kl_beta agrees with a Monte Carlo estimate") {
  // Beta(1, eta) draws are exact by inverse CDF, so use a Beta(1, b) q.
  BetaParams q{1.0, 3.0};
  BetaParams p{1.0, 0.5};
  double closed = dpmm::kl_beta(q, p);
  double log_bq = dpmm::log_beta_fn(q.a, q.b);
  double log_bp = dpmm::log_beta_fn(p.a, p.b);
  dpmm::Rng rng = dpmm::Rng::stream(2024, "kl-beta-mc");
  const int n = 200000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = rng.beta_one(q.b);
    x = std::min(std::max(x, 1e-300), 1.0 - 1e-16);
    double lq = (q.b - 1.0) * std::log1p(-x) - log_bq;
    double lp = (p.b - 1.0) * std::log1p(-x) - log_bp;
    double v = lq - lp;
    sum += v;
    sum_sq += v * v;
  }
  double mean = sum / n;
  double se = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(std::abs(mean - closed) < 3.0 * se + 1e-12);
}
