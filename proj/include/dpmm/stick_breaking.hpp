#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dpmm/rng.hpp"

namespace dpmm {

// Variational state of the truncated stick-breaking process. One Beta(gamma1,
// gamma2) factor per (modality, component) position in linear order; the last
// stick is deterministically closed to 1 when weights are formed, so the MK
// weights always sum to one. eta is the concentration of the Beta(1, eta)
// prior.
struct StickState {
  std::vector<double> gamma1;
  std::vector<double> gamma2;
  double eta = 1.0;
};

struct ExpectedLogSticks {
  std::vector<double> log_beta;
  std::vector<double> log_one_minus_beta;
};

// Position of modality m, component k in the linear stick order. Components
// are laid out k major: all M modalities of component 0 first, then component
// 1, and so on. Errors when m >= M or k >= K.
std::size_t linear_index(std::size_t m, std::size_t k, std::size_t num_modalities,
                         std::size_t num_components);

// pi[r] = beta[r] * prod_{s<r} (1 - beta[s]). Entries must lie in [0, 1];
// the caller closes the simplex by passing beta.back() == 1.
std::vector<double> weights_from_sticks(std::span<const double> beta);

// E[log beta_r] = psi(gamma1_r) - psi(gamma1_r + gamma2_r) and the
// complementary expectation, one pair per stick.
ExpectedLogSticks expected_log_sticks(const StickState& state);

// E[log pi_r] = E[log beta_r] + sum_{s<r} E[log(1 - beta_s)]. These are the
// weight terms of the responsibility scores; normalization downstream absorbs
// the fact that the truncation closure is not applied here.
std::vector<double> expected_log_weights(const StickState& state);

// Plug-in weights from posterior stick means gamma1/(gamma1+gamma2), with the
// last stick forced to 1 so the result is a proper distribution.
std::vector<double> mean_weights(const StickState& state);

// Draws each stick from the Beta(1, eta) prior and forms weights, closing the
// last stick. Deterministic for a given rng state.
std::vector<double> sample_prior_weights(double eta, std::size_t mk, Rng& rng);

// KL(q || prior) summed over the MK - 1 free sticks; the closed last stick
// carries no divergence.
double kl_sticks(const StickState& state);

// Prior-initialized state: gamma1 = 1, gamma2 = eta at every position.
StickState init_sticks(std::size_t mk, double eta);

}  // namespace dpmm
