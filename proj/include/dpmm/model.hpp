#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dpmm/data_harness.hpp"
#include "dpmm/dp_mixture.hpp"
#include "dpmm/grad_engine.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/rng.hpp"

namespace dpmm {

enum class FusionMode { concat, sum };
enum class AlignmentMode { dp, cosine, kl, none };
enum class WeightsMode { gamma, learnable };

std::string to_string(FusionMode mode);
std::string to_string(AlignmentMode mode);
std::string to_string(WeightsMode mode);
FusionMode fusion_mode_from_string(const std::string& name);
AlignmentMode alignment_mode_from_string(const std::string& name);
WeightsMode weights_mode_from_string(const std::string& name);

// Hyperparameters of one training run. Every field is serialized into
// checkpoints, so runs can be reproduced from the file alone.
struct TrainConfig {
  double eta = 1.0;
  std::size_t K = 4;
  double lambda_dp = 1e-5;
  double tau = 0.01;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::size_t early_stop_patience = 15;
  // Blend factor of the minibatch gamma update; 0 disables stick updates
  // entirely (the bank still trains through the loss).
  double gamma_step = 0.1;
  std::uint64_t seed = 0;
  FusionMode fusion_mode = FusionMode::concat;
  bool gps_enabled = true;
  AlignmentMode alignment_mode = AlignmentMode::dp;
  // gamma: mixture weights come from the stick posterior. learnable: a free
  // logit vector replaces them and the stick KL drops out of the loss.
  WeightsMode weights_mode = WeightsMode::gamma;
  std::size_t latent_dim = 8;
  std::size_t hidden_dim = 32;
  // Number of marginal draws averaged per missing slot.
  std::size_t gps_draws = 1;
  // Scale of the optional gaussian jitter on the component means at init.
  // 0 keeps the exact mu = 0 start.
  double mu_init_scale = 0.0;
};

// Two-layer perceptron mapping one modality's raw features to the shared
// latent space: dense(in -> h), tanh, dense(h -> d).
struct Encoder {
  ParamTensor w1;
  ParamTensor b1;
  ParamTensor w2;
  ParamTensor b2;
};

// Full trainable state. Non-copyable: the optimizer stores the addresses of
// the parameter tensors, so the struct must stay where it was initialized.
// Use init_model to (re)build one in place.
struct ModelState {
  TrainConfig config;
  std::vector<std::size_t> input_dims;
  std::vector<Encoder> encoders;
  ParamTensor head_w;
  ParamTensor head_b;
  // Free mixture logits, length M*K in linear position order. Only read in
  // learnable weights mode but always allocated and registered.
  ParamTensor weight_logits;
  MixtureState mixture;
  Adam optimizer{0.0};
  // Counts train_step calls; keys the per-sample gumbel noise streams so the
  // draws differ between visits to the same sample.
  std::uint64_t noise_round = 0;

  ModelState() = default;
  ModelState(const ModelState&) = delete;
  ModelState& operator=(const ModelState&) = delete;

  std::size_t modalities() const { return input_dims.size(); }
  std::size_t latent_dim() const { return config.latent_dim; }
};

// Builds encoders, fusion head, mixture bank and optimizer for the given
// modality input dimensions, wiping whatever the state held before. Weights
// are seeded from config.seed; biases, log variances and mixture logits start
// at zero, means at zero plus mu_init_scale jitter, gamma1 = 1, gamma2 = eta.
// n_total_entries is the modality-entry count of the training split (samples
// times modalities); fit sets it itself, standalone callers that want dp loss
// terms or gamma updates must pass it.
void init_model(ModelState& state, const TrainConfig& config,
                const std::vector<std::size_t>& input_dims,
                std::size_t n_total_entries = 0);

// Deterministic latent embedding of one observed modality vector.
std::vector<double> encode(const std::vector<double>& x, std::size_t m,
                           const ModelState& state);

struct AssembledSample {
  std::vector<std::vector<double>> z;
  std::vector<std::uint8_t> observed;
};

// Embeddings for every modality slot of one sample: observed slots through
// the encoder, missing slots through a marginal mixture draw when GPS is
// enabled (component choice is hard one-hot when training, softmax-weighted
// otherwise) and zero vectors when it is not. rng supplies the draw noise;
// each missing modality consumes K gumbels then K*d normals per draw, in
// ascending modality order.
AssembledSample assemble_embeddings(const MultimodalSample& sample,
                                    const ModelState& state, bool training,
                                    Rng& rng);

// Fused classification probability in (0, 1).
double predict(const std::vector<std::vector<double>>& embeddings,
               const ModelState& state);

// One training example with its stable dataset index. The index keys the
// gumbel noise stream, so results do not depend on batch composition.
struct TrainItem {
  MultimodalSample sample;
  std::size_t id = 0;
};

// total = task + lambda_dp * dp. task is the mean BCE; dp is the alignment
// term picked by alignment_mode (dp_loss value, mean pairwise cosine
// distance, symmetric moment KL, or 0); kl_sticks is the raw stick KL when it
// enters the loss (dp mode with gamma weights) and 0 otherwise.
struct LossBreakdown {
  double total = 0.0;
  double task = 0.0;
  double dp = 0.0;
  double kl_sticks = 0.0;
};

// Evaluates the exact training graph at the current parameters and noise
// round without touching gradients or counters. Equals the loss the next
// train_step call will differentiate.
LossBreakdown loss_total(const std::vector<TrainItem>& batch,
                         ModelState& state);

// One optimization step: assemble embeddings with GPS, forward, backward,
// adaptive-moment update on all tensors, then a gamma blend from the batch
// responsibilities (skipped when gamma_step = 0 or weights are learnable).
// Throws on a non-finite loss, naming the component that diverged.
LossBreakdown train_step(const std::vector<TrainItem>& batch,
                         ModelState& state);

// Scores every sample in eval mode. Marginal draw noise comes from the
// per-sample stream (config.seed, "gumbel-eval", index), so scores are
// reproducible and independent of dataset order.
ScoredSet score_dataset(const ModelState& state, const Dataset& data);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_task = 0.0;
  double train_dp = 0.0;
  double val_auroc = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  // NaN / 0 when epochs = 0 and nothing was evaluated.
  double best_val_auroc = 0.0;
  std::size_t best_epoch = 0;
};

// Full training loop: initializes the state from the config and the train
// split's dimensions, runs shuffled minibatch epochs, tracks validation
// AUROC after each epoch, stops once an epoch fails to improve the best
// for more than early_stop_patience epochs in a row, and restores the
// best-epoch parameters before returning.
FitResult fit(ModelState& state, const TrainConfig& config,
              const Dataset& train, const Dataset& valid);

// Values of every parameter tensor plus the gamma vectors, in a fixed order
// understood by restore_values. Cheap persistence for early stopping.
std::vector<std::vector<double>> snapshot_values(const ModelState& state);
void restore_values(ModelState& state, const std::vector<std::vector<double>>& snapshot);

// Text checkpoint: config echo, shapes, row-major values in hex floats, the
// gamma vectors and counters. Round-trips bit exactly. Optimizer moments are
// not stored; a loaded model evaluates identically and resumes training with
// fresh moments. load_checkpoint rebuilds the state from the file's config.
void save_checkpoint(const ModelState& state, const std::string& path);
void load_checkpoint(ModelState& state, const std::string& path);

}  // namespace dpmm
