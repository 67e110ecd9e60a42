#include "dpmm/stick_breaking.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dpmm/math_core.hpp"

namespace dpmm {

namespace {

void check_state(const StickState& state) {
  if (state.gamma1.empty() || state.gamma1.size() != state.gamma2.size()) {
    throw std::invalid_argument("stick state: gamma vectors must be non-empty and equal length");
  }
  if (!(state.eta > 0.0)) {
    throw std::invalid_argument("stick state: eta must be positive");
  }
  for (std::size_t r = 0; r < state.gamma1.size(); ++r) {
    if (!(state.gamma1[r] > 0.0) || !(state.gamma2[r] > 0.0)) {
      throw std::invalid_argument("stick state: gamma entries must be positive");
    }
  }
}

}  // namespace

std::size_t linear_index(std::size_t m, std::size_t k, std::size_t num_modalities,
                         std::size_t num_components) {
  if (m >= num_modalities || k >= num_components) {
    throw std::invalid_argument("linear_index: position (" + std::to_string(m) +
                                ", " + std::to_string(k) + ") out of range");
  }
  return k * num_modalities + m;
}

std::vector<double> weights_from_sticks(std::span<const double> beta) {
  if (beta.empty()) {
    throw std::invalid_argument("weights_from_sticks: empty stick vector");
  }
  std::vector<double> pi(beta.size());
  double remaining = 1.0;
  for (std::size_t r = 0; r < beta.size(); ++r) {
    if (!(beta[r] >= 0.0) || !(beta[r] <= 1.0)) {
      throw std::invalid_argument("weights_from_sticks: sticks must lie in [0, 1]");
    }
    pi[r] = beta[r] * remaining;
    remaining *= 1.0 - beta[r];
  }
  return pi;
}

ExpectedLogSticks expected_log_sticks(const StickState& state) {
  check_state(state);
  const std::size_t mk = state.gamma1.size();
  ExpectedLogSticks out;
  out.log_beta.resize(mk);
  out.log_one_minus_beta.resize(mk);
  for (std::size_t r = 0; r < mk; ++r) {
    const double total = digamma(state.gamma1[r] + state.gamma2[r]);
    out.log_beta[r] = digamma(state.gamma1[r]) - total;
    out.log_one_minus_beta[r] = digamma(state.gamma2[r]) - total;
  }
  return out;
}

std::vector<double> expected_log_weights(const StickState& state) {
  const ExpectedLogSticks e = expected_log_sticks(state);
  const std::size_t mk = state.gamma1.size();
  std::vector<double> elw(mk);
  double acc = 0.0;
  for (std::size_t r = 0; r < mk; ++r) {
    elw[r] = e.log_beta[r] + acc;
    acc += e.log_one_minus_beta[r];
  }
  return elw;
}

std::vector<double> mean_weights(const StickState& state) {
  check_state(state);
  const std::size_t mk = state.gamma1.size();
  std::vector<double> beta_bar(mk);
  for (std::size_t r = 0; r < mk; ++r) {
    beta_bar[r] = state.gamma1[r] / (state.gamma1[r] + state.gamma2[r]);
  }
  beta_bar[mk - 1] = 1.0;
  return weights_from_sticks(beta_bar);
}

std::vector<double> sample_prior_weights(double eta, std::size_t mk, Rng& rng) {
  if (mk == 0) {
    throw std::invalid_argument("sample_prior_weights: mk must be positive");
  }
  std::vector<double> beta(mk);
  for (std::size_t r = 0; r + 1 < mk; ++r) beta[r] = rng.beta_one(eta);
  beta[mk - 1] = 1.0;
  return weights_from_sticks(beta);
}

double kl_sticks(const StickState& state) {
  check_state(state);
  const BetaParams prior{1.0, state.eta};
  double total = 0.0;
  for (std::size_t r = 0; r + 1 < state.gamma1.size(); ++r) {
    total += kl_beta({state.gamma1[r], state.gamma2[r]}, prior);
  }
  return total;
}

StickState init_sticks(std::size_t mk, double eta) {
  if (mk == 0 || !(eta > 0.0)) {
    throw std::invalid_argument("init_sticks: mk and eta must be positive");
  }
  StickState s;
  s.gamma1.assign(mk, 1.0);
  s.gamma2.assign(mk, eta);
  s.eta = eta;
  return s;
}

}  // namespace dpmm
