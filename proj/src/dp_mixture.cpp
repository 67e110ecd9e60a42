#include "dpmm/dp_mixture.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "dpmm/math_core.hpp"

namespace dpmm {

namespace {

void check_bank(const ComponentBank& bank) {
  if (bank.M == 0 || bank.K == 0 || bank.dim == 0) {
    throw std::invalid_argument("component bank: empty dimensions");
  }
  if (bank.means.size() != bank.size() || bank.log_vars.size() != bank.size()) {
    throw std::invalid_argument("component bank: component count mismatch");
  }
}

}  // namespace

ComponentBank ComponentBank::make(std::size_t M, std::size_t K, std::size_t dim,
                                  double mean_fill, double log_var_fill) {
  if (M == 0 || K == 0 || dim == 0) {
    throw std::invalid_argument("component bank: M, K, dim must be positive");
  }
  ComponentBank bank;
  bank.M = M;
  bank.K = K;
  bank.dim = dim;
  bank.means.reserve(M * K);
  bank.log_vars.reserve(M * K);
  for (std::size_t r = 0; r < M * K; ++r) {
    bank.means.push_back(ParamTensor::vector_param(dim, mean_fill));
    bank.log_vars.push_back(ParamTensor::vector_param(dim, log_var_fill));
  }
  return bank;
}

ParamTensor& ComponentBank::mean_at(std::size_t m, std::size_t k) {
  return means[linear_index(m, k, M, K)];
}

const ParamTensor& ComponentBank::mean_at(std::size_t m, std::size_t k) const {
  return means[linear_index(m, k, M, K)];
}

ParamTensor& ComponentBank::log_var_at(std::size_t m, std::size_t k) {
  return log_vars[linear_index(m, k, M, K)];
}

const ParamTensor& ComponentBank::log_var_at(std::size_t m, std::size_t k) const {
  return log_vars[linear_index(m, k, M, K)];
}

std::vector<ParamTensor*> ComponentBank::params() {
  std::vector<ParamTensor*> out;
  out.reserve(2 * size());
  for (auto& p : means) out.push_back(&p);
  for (auto& p : log_vars) out.push_back(&p);
  return out;
}

std::vector<double> component_log_liks(std::span<const double> z,
                                       const ComponentBank& bank) {
  check_bank(bank);
  if (z.size() != bank.dim) {
    throw std::invalid_argument("component_log_liks: dimension mismatch");
  }
  std::vector<double> out(bank.size());
  for (std::size_t r = 0; r < bank.size(); ++r) {
    out[r] = diag_gauss_log_pdf(z, bank.means[r].value, bank.log_vars[r].value);
  }
  return out;
}

double joint_log_density(std::span<const double> z, std::span<const double> pi,
                         const ComponentBank& bank) {
  std::vector<double> terms = component_log_liks(z, bank);
  if (pi.size() != terms.size()) {
    throw std::invalid_argument("joint_log_density: weight length mismatch");
  }
  for (std::size_t r = 0; r < terms.size(); ++r) {
    if (pi[r] < 0.0) {
      throw std::invalid_argument("joint_log_density: negative weight");
    }
    terms[r] = pi[r] > 0.0 ? terms[r] + std::log(pi[r])
                           : -std::numeric_limits<double>::infinity();
  }
  return log_sum_exp(terms);
}

std::vector<double> modality_weights(std::size_t m, const MixtureState& state) {
  check_bank(state.bank);
  if (m >= state.bank.M) {
    throw std::invalid_argument("modality_weights: modality out of range");
  }
  const std::vector<double> global = mean_weights(state.sticks);
  if (global.size() != state.bank.size()) {
    throw std::invalid_argument("modality_weights: stick/bank size mismatch");
  }
  std::vector<double> w(state.bank.K);
  double total = 0.0;
  for (std::size_t k = 0; k < state.bank.K; ++k) {
    w[k] = global[linear_index(m, k, state.bank.M, state.bank.K)];
    total += w[k];
  }
  if (!(total > 0.0)) {
    throw std::runtime_error("modality_weights: degenerate modality with zero mass");
  }
  for (double& wk : w) wk /= total;
  return w;
}

double marginal_log_density(std::span<const double> z, std::size_t m,
                            const MixtureState& state) {
  if (z.size() != state.bank.dim) {
    throw std::invalid_argument("marginal_log_density: dimension mismatch");
  }
  const std::vector<double> w = modality_weights(m, state);
  std::vector<double> terms(state.bank.K);
  for (std::size_t k = 0; k < state.bank.K; ++k) {
    const double lp = diag_gauss_log_pdf(z, state.bank.mean_at(m, k).value,
                                         state.bank.log_var_at(m, k).value);
    terms[k] = w[k] > 0.0 ? lp + std::log(w[k])
                          : -std::numeric_limits<double>::infinity();
  }
  return log_sum_exp(terms);
}

Responsibilities responsibilities(const std::vector<BatchEntry>& batch,
                                  const MixtureState& state) {
  if (batch.empty()) {
    throw std::invalid_argument("responsibilities: empty batch");
  }
  const std::vector<double> elw = expected_log_weights(state.sticks);
  if (elw.size() != state.bank.size()) {
    throw std::invalid_argument("responsibilities: stick/bank size mismatch");
  }
  Responsibilities out;
  out.phi.reserve(batch.size());
  for (const BatchEntry& entry : batch) {
    std::vector<double> row = component_log_liks(entry.z, state.bank);
    bool any_finite = false;
    for (std::size_t r = 0; r < row.size(); ++r) {
      row[r] += elw[r];
      any_finite = any_finite || std::isfinite(row[r]);
    }
    if (!any_finite) {
      throw std::runtime_error(
          "responsibilities: degenerate input, all components at -inf");
    }
    const double lse = log_sum_exp(row);
    for (double& v : row) v = std::exp(v - lse);
    out.phi.push_back(std::move(row));
  }
  return out;
}

StickState update_gamma(const Responsibilities& phi, const MixtureState& state,
                        std::size_t batch_size, double step) {
  if (!(step > 0.0) || step > 1.0) {
    throw std::invalid_argument("update_gamma: step must lie in (0, 1]");
  }
  if (batch_size == 0) {
    throw std::invalid_argument("update_gamma: batch_size must be positive");
  }
  if (state.n_total < batch_size) {
    throw std::invalid_argument("update_gamma: n_total smaller than batch");
  }
  const std::size_t mk = state.sticks.gamma1.size();
  if (phi.phi.empty()) {
    throw std::invalid_argument("update_gamma: empty responsibilities");
  }
  std::vector<double> mass(mk, 0.0);
  for (const auto& row : phi.phi) {
    if (row.size() != mk) {
      throw std::invalid_argument("update_gamma: responsibility width mismatch");
    }
    for (std::size_t r = 0; r < mk; ++r) mass[r] += row[r];
  }
  const double scale =
      static_cast<double>(state.n_total) / static_cast<double>(batch_size);

  StickState next = state.sticks;
  // Suffix sums give sum_{s > r} phi mass in one backward pass.
  double tail = 0.0;
  std::vector<double> tail_mass(mk, 0.0);
  for (std::size_t r = mk; r-- > 0;) {
    tail_mass[r] = tail;
    tail += mass[r];
  }
  for (std::size_t r = 0; r < mk; ++r) {
    const double target1 = 1.0 + scale * mass[r];
    const double target2 = state.sticks.eta + scale * tail_mass[r];
    next.gamma1[r] = (1.0 - step) * state.sticks.gamma1[r] + step * target1;
    next.gamma2[r] = (1.0 - step) * state.sticks.gamma2[r] + step * target2;
  }
  return next;
}

double dp_loss(const std::vector<BatchEntry>& batch, const MixtureState& state) {
  if (batch.empty()) {
    throw std::invalid_argument("dp_loss: empty batch");
  }
  if (state.n_total == 0) {
    throw std::invalid_argument("dp_loss: n_total must be positive");
  }
  const std::vector<double> weights = mean_weights(state.sticks);
  double acc = 0.0;
  for (const BatchEntry& entry : batch) {
    if (!entry.observed) continue;
    acc -= joint_log_density(entry.z, weights, state.bank);
  }
  return acc / static_cast<double>(batch.size()) +
         kl_sticks(state.sticks) / static_cast<double>(state.n_total);
}

NodeId dp_loss_node(Tape& tape, const std::vector<BatchEntry>& batch,
                    MixtureState& state, bool include_kl,
                    std::optional<NodeId> log_pi) {
  if (batch.empty()) {
    throw std::invalid_argument("dp_loss_node: empty batch");
  }
  std::vector<NodeId> observed;
  observed.reserve(batch.size());
  for (const BatchEntry& entry : batch) {
    if (!entry.observed) continue;
    if (entry.z.size() != state.bank.dim) {
      throw std::invalid_argument("dp_loss_node: dimension mismatch");
    }
    observed.push_back(tape.input(entry.z));
  }
  return dp_loss_node(tape, observed, batch.size(), state, include_kl, log_pi);
}

NodeId dp_loss_node(Tape& tape, std::span<const NodeId> observed,
                    std::size_t batch_total, MixtureState& state,
                    bool include_kl, std::optional<NodeId> log_pi) {
  if (batch_total == 0) {
    throw std::invalid_argument("dp_loss_node: empty batch");
  }
  if (observed.size() > batch_total) {
    throw std::invalid_argument(
        "dp_loss_node: more observed entries than batch slots");
  }
  if (state.n_total == 0) {
    throw std::invalid_argument("dp_loss_node: n_total must be positive");
  }
  NodeId log_pi_node;
  if (log_pi.has_value()) {
    log_pi_node = *log_pi;
  } else {
    std::vector<double> lw = mean_weights(state.sticks);
    for (double& w : lw) {
      w = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
    }
    log_pi_node = tape.input(std::move(lw));
  }
  if (tape.value(log_pi_node).size() != state.bank.size()) {
    throw std::invalid_argument("dp_loss_node: log weight length mismatch");
  }

  std::vector<NodeId> joints;
  joints.reserve(observed.size());
  for (NodeId z : observed) {
    if (tape.value(z).size() != state.bank.dim) {
      throw std::invalid_argument("dp_loss_node: dimension mismatch");
    }
    std::vector<NodeId> scalars;
    scalars.reserve(state.bank.size());
    for (std::size_t r = 0; r < state.bank.size(); ++r) {
      scalars.push_back(
          tape.gauss_log_pdf(z, state.bank.means[r], state.bank.log_vars[r]));
    }
    NodeId shifted = tape.add(tape.stack_scalars(scalars), log_pi_node);
    joints.push_back(tape.log_sum_exp_node(shifted));
  }

  NodeId data_term;
  if (joints.empty()) {
    data_term = tape.input_scalar(0.0);
  } else {
    const double factor = -static_cast<double>(joints.size()) /
                          static_cast<double>(batch_total);
    data_term = tape.scale(tape.mean_scalars(joints), factor);
  }
  if (!include_kl) return data_term;
  const double kl =
      kl_sticks(state.sticks) / static_cast<double>(state.n_total);
  return tape.add(data_term, tape.input_scalar(kl));
}

double elbo(const std::vector<BatchEntry>& batch, const MixtureState& state,
            double task_loss) {
  if (!std::isfinite(task_loss)) {
    throw std::invalid_argument("elbo: task_loss must be finite");
  }
  if (state.lambda_dp < 0.0) {
    throw std::invalid_argument("elbo: lambda_dp must be nonnegative");
  }
  if (state.lambda_dp == 0.0) return -task_loss;
  return -(task_loss + state.lambda_dp * dp_loss(batch, state));
}

MarginalSample sample_marginal(std::size_t m, const MixtureState& state,
                               double tau, Rng& rng, bool hard) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument("sample_marginal: tau must be > 0");
  }
  const std::vector<double> w = modality_weights(m, state);
  const std::size_t K = state.bank.K;
  const std::size_t d = state.bank.dim;

  std::vector<double> perturbed(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double logit = w[k] > 0.0 ? std::log(w[k])
                                    : -std::numeric_limits<double>::infinity();
    perturbed[k] = (logit + rng.gumbel()) / tau;
  }
  const double lse = log_sum_exp(perturbed);
  std::vector<double> soft(K);
  std::size_t arg_max = 0;
  for (std::size_t k = 0; k < K; ++k) {
    soft[k] = std::exp(perturbed[k] - lse);
    if (soft[k] > soft[arg_max]) arg_max = k;
  }

  std::vector<std::vector<double>> eps(K, std::vector<double>(d));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < d; ++j) eps[k][j] = rng.normal();
  }

  MarginalSample out;
  out.soft_weights = soft;
  out.z.assign(d, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double s = hard ? (k == arg_max ? 1.0 : 0.0) : soft[k];
    if (s == 0.0) continue;
    const auto& mu = state.bank.mean_at(m, k).value;
    const auto& lv = state.bank.log_var_at(m, k).value;
    for (std::size_t j = 0; j < d; ++j) {
      out.z[j] += s * (mu[j] + std::exp(0.5 * lv[j]) * eps[k][j]);
    }
  }
  return out;
}

}  // namespace dpmm
