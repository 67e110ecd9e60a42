#include "dpmm/math_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace dpmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
constexpr double kHalfLog2Pi = 0.9189385332046727418;

// Horner evaluation, c[0] is the highest order coefficient.
double polevl(double x, const double* c, int degree) {
  double r = c[0];
  for (int i = 1; i <= degree; ++i) r = r * x + c[i];
  return r;
}

// Bernoulli-number coefficients of the digamma asymptotic expansion,
//   psi(x) ~ log x - 1/(2x) - z * polevl(z, A, 6),  z = 1/x^2,
// ordered from the z^6 term down to the z^0 term.
constexpr double kDigammaSeries[7] = {
    8.33333333333333333333e-2,   // 1/12
    -2.10927960927960927961e-2,  // -691/32760
    7.57575757575757575758e-3,   // 1/132
    -4.16666666666666666667e-3,  // -1/240
    3.96825396825396825397e-3,   // 1/252
    -8.33333333333333333333e-3,  // -1/120
    8.33333333333333333333e-2,   // 1/12
};

// Stirling series coefficients for log Gamma,
//   lgam(x) ~ (x - 1/2) log x - x + log(2 pi)/2 + polevl(z, B, 6)/x,
// z = 1/x^2, ordered from the z^6 term down to the z^0 term.
constexpr double kStirlingSeries[7] = {
    6.41025641025641025641e-3,   // 1/156
    -1.91752691752691752692e-3,  // -691/360360
    8.41750841750841750842e-4,   // 1/1188
    -5.95238095238095238095e-4,  // -1/1680
    7.93650793650793650794e-4,   // 1/1260
    -2.77777777777777777778e-3,  // -1/360
    8.33333333333333333333e-2,   // 1/12
};

}  // namespace

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) {
    throw std::invalid_argument("log_sum_exp: empty input");
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (std::isinf(m) && m < 0.0) {
    throw std::invalid_argument("log_sum_exp: all entries are -inf");
  }
  if (std::isinf(m)) return m;  // +inf dominates
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double digamma(double x) {
  if (!(x > 0.0)) {
    throw std::invalid_argument("digamma: requires x > 0");
  }
  double value = 0.0;
  // Recurrence psi(x) = psi(x + 1) - 1/x until the series is accurate.
  while (x < 10.0) {
    value -= 1.0 / x;
    x += 1.0;
  }
  double z = 1.0 / (x * x);
  value += std::log(x) - 0.5 / x - z * polevl(z, kDigammaSeries, 6);
  return value;
}

double log_gamma(double x) {
  if (!(x > 0.0)) {
    throw std::invalid_argument("log_gamma: requires x > 0");
  }
  double shift = 0.0;
  // lgam(x) = lgam(x + 1) - log x, applied until Stirling converges fast.
  while (x < 12.0) {
    shift -= std::log(x);
    x += 1.0;
  }
  double z = 1.0 / (x * x);
  double series = polevl(z, kStirlingSeries, 6) / x;
  return shift + (x - 0.5) * std::log(x) - x + kHalfLog2Pi + series;
}

double log_beta_fn(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("log_beta_fn: requires a > 0 and b > 0");
  }
  return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

double diag_gauss_log_pdf(std::span<const double> z,
                          std::span<const double> mean,
                          std::span<const double> log_var) {
  const std::size_t d = z.size();
  if (mean.size() != d || log_var.size() != d) {
    throw std::invalid_argument("diag_gauss_log_pdf: dimension mismatch");
  }
  if (d == 0) {
    throw std::invalid_argument("diag_gauss_log_pdf: empty input");
  }
  double acc = -0.5 * static_cast<double>(d) * kLog2Pi;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = z[j] - mean[j];
    acc -= 0.5 * (log_var[j] + diff * diff * std::exp(-log_var[j]));
  }
  return acc;
}

std::vector<double> diag_gauss_sample(std::span<const double> mean,
                                      std::span<const double> log_var,
                                      std::span<const double> eps) {
  const std::size_t d = mean.size();
  if (log_var.size() != d || eps.size() != d) {
    throw std::invalid_argument("diag_gauss_sample: dimension mismatch");
  }
  std::vector<double> z(d);
  for (std::size_t j = 0; j < d; ++j) {
    z[j] = mean[j] + std::exp(0.5 * log_var[j]) * eps[j];
  }
  return z;
}

double kl_gauss_diag(std::span<const double> mean_q,
                     std::span<const double> log_var_q,
                     std::span<const double> mean_p,
                     std::span<const double> log_var_p) {
  const std::size_t d = mean_q.size();
  if (log_var_q.size() != d || mean_p.size() != d || log_var_p.size() != d) {
    throw std::invalid_argument("kl_gauss_diag: dimension mismatch");
  }
  if (d == 0) {
    throw std::invalid_argument("kl_gauss_diag: empty input");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = mean_q[j] - mean_p[j];
    acc += log_var_p[j] - log_var_q[j] - 1.0 +
           std::exp(log_var_q[j] - log_var_p[j]) +
           diff * diff * std::exp(-log_var_p[j]);
  }
  return 0.5 * acc;
}

double kl_beta(const BetaParams& q, const BetaParams& p) {
  if (!(q.a > 0.0) || !(q.b > 0.0) || !(p.a > 0.0) || !(p.b > 0.0)) {
    throw std::invalid_argument("kl_beta: shape parameters must be positive");
  }
  return log_beta_fn(p.a, p.b) - log_beta_fn(q.a, q.b) +
         (q.a - p.a) * digamma(q.a) + (q.b - p.b) * digamma(q.b) +
         (p.a - q.a + p.b - q.b) * digamma(q.a + q.b);
}

}  // namespace dpmm
