#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dpmm/grad_engine.hpp"
#include "dpmm/rng.hpp"
#include "dpmm/stick_breaking.hpp"

namespace dpmm {

// All M*K diagonal Gaussian components, stored as learnable tensors at the
// k-major linear position r = k*M + m. Every component shares the latent
// dimension dim.
struct ComponentBank {
  std::size_t M = 0;
  std::size_t K = 0;
  std::size_t dim = 0;
  std::vector<ParamTensor> means;     // indexed by linear position
  std::vector<ParamTensor> log_vars;  // same indexing

  static ComponentBank make(std::size_t M, std::size_t K, std::size_t dim,
                            double mean_fill = 0.0, double log_var_fill = 0.0);

  std::size_t size() const { return M * K; }
  ParamTensor& mean_at(std::size_t m, std::size_t k);
  const ParamTensor& mean_at(std::size_t m, std::size_t k) const;
  ParamTensor& log_var_at(std::size_t m, std::size_t k);
  const ParamTensor& log_var_at(std::size_t m, std::size_t k) const;
  // Means first (linear order), then log-variances; handy for optimizer
  // registration and gradient checks.
  std::vector<ParamTensor*> params();
};

// One latent embedding with its modality tag. The observed flag lets loss
// batches carry placeholder rows for missing modalities.
struct BatchEntry {
  std::vector<double> z;
  std::size_t modality = 0;
  bool observed = true;
};

// Posterior responsibilities, one row of MK probabilities per batch entry.
struct Responsibilities {
  std::vector<std::vector<double>> phi;
};

struct MixtureState {
  StickState sticks;
  ComponentBank bank;
  double lambda_dp = 0.0;
  std::size_t n_total = 0;
};

// Log density of z under every component, at linear positions.
std::vector<double> component_log_liks(std::span<const double> z,
                                       const ComponentBank& bank);

// log sum_r pi[r] * N(z; component r). Zero weights contribute -inf terms.
double joint_log_density(std::span<const double> z, std::span<const double> pi,
                         const ComponentBank& bank);

// Modality m's K mixture weights renormalized to sum to 1. Throws when the
// modality holds no weight mass at all.
std::vector<double> modality_weights(std::size_t m, const MixtureState& state);

// Proper per-modality log density using renormalized weights, so exp of the
// result integrates to 1 over z.
double marginal_log_density(std::span<const double> z, std::size_t m,
                            const MixtureState& state);

// Row r of sample i: softmax over E[log pi_r] + log N(z_i; component r).
Responsibilities responsibilities(const std::vector<BatchEntry>& batch,
                                  const MixtureState& state);

// Stochastic variational gamma update: batch-scaled targets blended into the
// old state by `step`. step = 1 on the full dataset is the exact closed-form
// coordinate update.
StickState update_gamma(const Responsibilities& phi, const MixtureState& state,
                        std::size_t batch_size, double step);

// Mean negative joint log density of the observed entries plus the stick KL
// spread over the dataset:
//   (1/B) * sum_{observed} -joint_log_density(z, mean_weights, bank)
//     + kl_sticks / n_total
// with B the total batch size including unobserved rows.
double dp_loss(const std::vector<BatchEntry>& batch, const MixtureState& state);

// Tape construction of dp_loss, differentiable in the bank tensors. By
// default the mixture weights enter as constants (log mean_weights); pass
// log_pi to substitute a learnable log-weight node, and include_kl = false
// to drop the stick KL term (used by the learnable-weights ablation).
NodeId dp_loss_node(Tape& tape, const std::vector<BatchEntry>& batch,
                    MixtureState& state, bool include_kl = true,
                    std::optional<NodeId> log_pi = std::nullopt);

// Same loss over embedding nodes already on the tape, so the gradient also
// reaches whatever produced them (the encoders during end-to-end training).
// observed holds one node per observed entry; batch_total is B including the
// unobserved slots, which contribute no node.
NodeId dp_loss_node(Tape& tape, std::span<const NodeId> observed,
                    std::size_t batch_total, MixtureState& state,
                    bool include_kl = true,
                    std::optional<NodeId> log_pi = std::nullopt);

// -(task_loss + lambda_dp * dp_loss); training maximizes this.
double elbo(const std::vector<BatchEntry>& batch, const MixtureState& state,
            double task_loss);

struct MarginalSample {
  std::vector<double> z;
  std::vector<double> soft_weights;  // length K, the soft selection
};

// Draws one embedding from modality m's mixture via Gumbel-softmax component
// selection at temperature tau. hard = one-hot forward selection. Consumes
// exactly K gumbel draws then K*dim normal draws from rng.
MarginalSample sample_marginal(std::size_t m, const MixtureState& state,
                               double tau, Rng& rng, bool hard);

}  // namespace dpmm
