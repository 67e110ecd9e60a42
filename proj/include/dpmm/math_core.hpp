#pragma once

#include <span>
#include <vector>

namespace dpmm {

// Diagonal Gaussian in log variance parameterization. Log variances keep the
// scale parameters unconstrained under gradient updates.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;
};

// Parameters of a Beta(a, b) distribution.
struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};

// log(sum_j exp(v_j)) with the usual max shift. Errors on an empty input and
// when every entry is -inf (the log of zero mass is undefined here; callers
// that can produce empty mixtures must check first).
double log_sum_exp(std::span<const double> v);

// Digamma psi(x) for x > 0. Small arguments are shifted up with
// psi(x) = psi(x + 1) - 1/x, then the asymptotic series is applied.
double digamma(double x);

// log Gamma(x) for x > 0, same shift-then-Stirling scheme as digamma.
double log_gamma(double x);

// log B(a, b) = lgamma(a) + lgamma(b) - lgamma(a + b), a > 0, b > 0.
double log_beta_fn(double a, double b);

// Log density of N(mean, diag(exp(log_var))) at z:
//   -(d/2) log(2 pi) - (1/2) sum_j log_var_j
//   - (1/2) sum_j (z_j - mean_j)^2 exp(-log_var_j)
double diag_gauss_log_pdf(std::span<const double> z,
                          std::span<const double> mean,
                          std::span<const double> log_var);

// Reparameterized draw mean + exp(log_var / 2) * eps with caller supplied
// noise, the building block gradients flow through.
std::vector<double> diag_gauss_sample(std::span<const double> mean,
                                      std::span<const double> log_var,
                                      std::span<const double> eps);

// KL(q || p) between diagonal Gaussians, the closed form
//   (1/2) sum_j [ lvp_j - lvq_j - 1 + exp(lvq_j - lvp_j)
//                 + (mq_j - mp_j)^2 exp(-lvp_j) ]
double kl_gauss_diag(std::span<const double> mean_q,
                     std::span<const double> log_var_q,
                     std::span<const double> mean_p,
                     std::span<const double> log_var_p);

// KL(q || p) between Beta distributions via digamma and log B.
double kl_beta(const BetaParams& q, const BetaParams& p);

}  // namespace dpmm
