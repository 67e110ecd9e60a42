#include "truncation_study.hpp"

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "dpmm/grad_engine.hpp"
#include "dpmm/rng.hpp"
#include "dpmm/stick_breaking.hpp"

namespace truncation {
namespace {

using dpmm::BatchEntry;
using dpmm::ComponentBank;
using dpmm::MixtureState;
using dpmm::Rng;

// Gradient fit used by the truncation study. Means start in a tight jittered
// clump at the data mean, so components are interchangeable at first and the
// positional ordering of the sticks decides which of them deserve mass. A
// warmup phase trains the bank under fixed, mildly tilted weights until the
// clump has split across the data clusters; only then do the gamma updates
// start, with a small step so the weight ordering adjusts gradually. Starting
// gamma updates while components still coincide hands everything to the first
// position, and skipping the tilt lets duplicate components carve a cluster
// into stable slices that never merge.
MixtureState fit_once(const std::vector<double>& train, std::size_t K,
                      double eta, unsigned master, std::size_t attempt) {
  constexpr int kWarmupSweeps = 600;
  constexpr int kMainSweeps = 400;
  constexpr double kLearnRate = 0.5;
  constexpr double kGammaStep = 0.05;
  constexpr double kInitJitter = 0.3;
  constexpr double kWarmupTilt = 0.25;

  MixtureState state;
  state.bank = ComponentBank::make(1, K, 1);
  state.sticks = dpmm::init_sticks(K, eta);
  state.n_total = train.size();

  double center = 0.0;
  for (double z : train) center += z;
  center /= static_cast<double>(train.size());
  Rng init = Rng::stream(master, "truncation-init", attempt);
  for (std::size_t k = 0; k < K; ++k) {
    state.bank.means[k].value = {center + kInitJitter * init.normal()};
    state.bank.log_vars[k].value = {0.0};
  }

  std::vector<BatchEntry> batch;
  batch.reserve(train.size());
  for (double z : train) batch.push_back({{z}, 0, true});
  auto params = state.bank.params();

  std::vector<double> warm_log_pi(K);
  double norm = 0.0;
  for (std::size_t r = 0; r < K; ++r)
    norm += std::exp(-kWarmupTilt * static_cast<double>(r));
  for (std::size_t r = 0; r < K; ++r)
    warm_log_pi[r] = -kWarmupTilt * static_cast<double>(r) - std::log(norm);

  for (int sweep = 0; sweep < kWarmupSweeps; ++sweep) {
    for (auto* p : params) p->zero_grad();
    dpmm::Tape tape;
    const dpmm::NodeId log_pi = tape.input(warm_log_pi);
    const dpmm::NodeId loss =
        dpmm::dp_loss_node(tape, batch, state, false, log_pi);
    tape.backward(loss);
    for (auto* p : params)
      for (std::size_t i = 0; i < p->size(); ++i)
        p->value[i] -= kLearnRate * p->grad[i];
  }

  for (int sweep = 0; sweep < kMainSweeps; ++sweep) {
    auto phi = dpmm::responsibilities(batch, state);
    state.sticks = dpmm::update_gamma(phi, state, batch.size(), kGammaStep);
    for (auto* p : params) p->zero_grad();
    dpmm::Tape tape;
    const dpmm::NodeId loss = dpmm::dp_loss_node(tape, batch, state);
    tape.backward(loss);
    for (auto* p : params)
      for (std::size_t i = 0; i < p->size(); ++i)
        p->value[i] -= kLearnRate * p->grad[i];
  }
  return state;
}

}  // namespace

MixtureState fit_mixture(const std::vector<double>& train, std::size_t K,
                         double eta, unsigned master) {
  std::vector<BatchEntry> batch;
  batch.reserve(train.size());
  for (double z : train) batch.push_back({{z}, 0, true});

  MixtureState best;
  double best_loss = 0.0;
  for (std::size_t attempt = 0; attempt < 3; ++attempt) {
    MixtureState state = fit_once(train, K, eta, master, attempt);
    const double loss = dpmm::dp_loss(batch, state);
    if (attempt == 0 || loss < best_loss) {
      best_loss = loss;
      best = std::move(state);
    }
  }
  return best;
}

double held_out_ll(const MixtureState& state, const std::vector<double>& held) {
  double acc = 0.0;
  for (double z : held) {
    const std::vector<double> zv = {z};
    acc += dpmm::marginal_log_density(zv, 0, state);
  }
  return acc / static_cast<double>(held.size());
}

}  // namespace truncation
