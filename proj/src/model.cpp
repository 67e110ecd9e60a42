#include "dpmm/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "dpmm/math_core.hpp"
#include "dpmm/stick_breaking.hpp"

namespace dpmm {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::concat: return "concat";
    case FusionMode::sum: return "sum";
  }
  throw std::invalid_argument("to_string: bad fusion mode value");
}

std::string to_string(AlignmentMode mode) {
  switch (mode) {
    case AlignmentMode::dp: return "dp";
    case AlignmentMode::cosine: return "cosine";
    case AlignmentMode::kl: return "kl";
    case AlignmentMode::none: return "none";
  }
  throw std::invalid_argument("to_string: bad alignment mode value");
}

std::string to_string(WeightsMode mode) {
  switch (mode) {
    case WeightsMode::gamma: return "gamma";
    case WeightsMode::learnable: return "learnable";
  }
  throw std::invalid_argument("to_string: bad weights mode value");
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "concat") return FusionMode::concat;
  if (name == "sum") return FusionMode::sum;
  throw std::invalid_argument("unknown fusion mode: " + name);
}

AlignmentMode alignment_mode_from_string(const std::string& name) {
  if (name == "dp") return AlignmentMode::dp;
  if (name == "cosine") return AlignmentMode::cosine;
  if (name == "kl") return AlignmentMode::kl;
  if (name == "none") return AlignmentMode::none;
  throw std::invalid_argument("unknown alignment mode: " + name);
}

WeightsMode weights_mode_from_string(const std::string& name) {
  if (name == "gamma") return WeightsMode::gamma;
  if (name == "learnable") return WeightsMode::learnable;
  throw std::invalid_argument("unknown weights mode: " + name);
}

namespace {

void check_initialized(const ModelState& state) {
  if (state.input_dims.empty() ||
      state.encoders.size() != state.input_dims.size()) {
    throw std::invalid_argument("model state not initialized");
  }
}

// Fixed traversal order shared by the optimizer registration, snapshots and
// checkpoints. Extending the model means extending this list.
std::vector<std::pair<std::string, ParamTensor*>> named_tensors(
    ModelState& state) {
  std::vector<std::pair<std::string, ParamTensor*>> out;
  for (std::size_t m = 0; m < state.encoders.size(); ++m) {
    Encoder& enc = state.encoders[m];
    const std::string base = "encoder" + std::to_string(m);
    out.emplace_back(base + ".w1", &enc.w1);
    out.emplace_back(base + ".b1", &enc.b1);
    out.emplace_back(base + ".w2", &enc.w2);
    out.emplace_back(base + ".b2", &enc.b2);
  }
  out.emplace_back("head.w", &state.head_w);
  out.emplace_back("head.b", &state.head_b);
  for (std::size_t r = 0; r < state.mixture.bank.size(); ++r) {
    out.emplace_back("mix.mean." + std::to_string(r),
                     &state.mixture.bank.means[r]);
    out.emplace_back("mix.logvar." + std::to_string(r),
                     &state.mixture.bank.log_vars[r]);
  }
  out.emplace_back("weight_logits", &state.weight_logits);
  return out;
}

void check_sample_shape(const MultimodalSample& sample,
                        const ModelState& state, const char* who) {
  const std::size_t M = state.modalities();
  if (sample.features.size() != M || sample.mask.size() != M) {
    throw std::invalid_argument(std::string(who) +
                                ": sample modality count mismatch");
  }
  bool any = false;
  for (std::size_t m = 0; m < M; ++m) any = any || sample.mask[m] != 0;
  if (!any) {
    throw std::invalid_argument(std::string(who) +
                                ": sample has no observed modality");
  }
}

// Log of modality m's K within-modality mixture weights under the active
// weights mode. Learnable mode renormalizes the modality's logits, matching
// what modality_weights does to the stick means.
std::vector<double> modality_log_weights(const ModelState& state,
                                         std::size_t m) {
  const std::size_t M = state.modalities();
  const std::size_t K = state.config.K;
  std::vector<double> lw(K);
  if (state.config.weights_mode == WeightsMode::gamma) {
    const std::vector<double> w = modality_weights(m, state.mixture);
    for (std::size_t k = 0; k < K; ++k) {
      lw[k] = w[k] > 0.0 ? std::log(w[k])
                         : -std::numeric_limits<double>::infinity();
    }
    return lw;
  }
  for (std::size_t k = 0; k < K; ++k) {
    lw[k] = state.weight_logits.value[linear_index(m, k, M, K)];
  }
  const double lse = log_sum_exp(lw);
  for (double& v : lw) v -= lse;
  return lw;
}

// One plain marginal draw, mirroring sample_marginal's noise order exactly:
// K gumbels, then K*d normals, soft or hard component mixing.
std::vector<double> marginal_draw(const ModelState& state, std::size_t m,
                                  bool hard, Rng& rng) {
  const std::size_t K = state.config.K;
  const std::size_t d = state.config.latent_dim;
  const double tau = state.config.tau;
  const std::vector<double> lw = modality_log_weights(state, m);

  std::vector<double> perturbed(K);
  for (std::size_t k = 0; k < K; ++k) {
    perturbed[k] = (lw[k] + rng.gumbel()) / tau;
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

  std::vector<double> z(d, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double s = hard ? (k == arg_max ? 1.0 : 0.0) : soft[k];
    if (s == 0.0) continue;
    const auto& mu = state.mixture.bank.mean_at(m, k).value;
    const auto& lv = state.mixture.bank.log_var_at(m, k).value;
    for (std::size_t j = 0; j < d; ++j) {
      z[j] += s * (mu[j] + std::exp(0.5 * lv[j]) * eps[k][j]);
    }
  }
  return z;
}

struct GraphOut {
  NodeId total = 0;
  double task = 0.0;
  double dp = 0.0;
  double kl_sticks_raw = 0.0;
  // Observed embedding values in canonical batch order, for the gamma blend.
  std::vector<BatchEntry> observed_entries;
};

// Builds the full loss graph for one batch at a given noise round. Shared by
// loss_total (values only) and train_step (backward pass), so the two always
// agree on the number the optimizer sees.
GraphOut build_graph(Tape& tape, const std::vector<TrainItem>& batch,
                     ModelState& state, std::uint64_t round) {
  if (batch.empty()) {
    throw std::invalid_argument("model loss: empty batch");
  }
  const TrainConfig& cfg = state.config;
  const std::size_t M = state.modalities();
  const std::size_t d = cfg.latent_dim;
  const std::size_t K = cfg.K;

  // Samples are processed in id order no matter how the batch vector is
  // arranged, so the reduction and the noise keying are order invariant.
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return batch[a].id < batch[b].id;
  });

  std::optional<NodeId> global_log_pi;
  std::vector<std::optional<NodeId>> gps_logits(M);
  if (cfg.weights_mode == WeightsMode::learnable) {
    NodeId logits = tape.param(state.weight_logits);
    global_log_pi = tape.log_softmax(logits);
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<std::size_t> idx(K);
      for (std::size_t k = 0; k < K; ++k) idx[k] = linear_index(m, k, M, K);
      gps_logits[m] = tape.log_softmax(tape.gather(logits, std::move(idx)));
    }
  }
  auto gps_logits_for = [&](std::size_t m) -> NodeId {
    if (!gps_logits[m].has_value()) {
      gps_logits[m] = tape.input(modality_log_weights(state, m));
    }
    return *gps_logits[m];
  };

  std::vector<NodeId> bces;
  bces.reserve(batch.size());
  std::vector<NodeId> observed_nodes;
  std::vector<std::size_t> observed_modality;
  std::vector<std::vector<NodeId>> per_modality(M);
  std::vector<std::vector<NodeId>> per_sample_observed;
  per_sample_observed.reserve(batch.size());

  for (std::size_t idx : order) {
    const TrainItem& item = batch[idx];
    check_sample_shape(item.sample, state, "model loss");
    if (item.id > 0xffffffffULL) {
      throw std::invalid_argument("model loss: item id does not fit 32 bits");
    }
    Rng noise = Rng::stream(cfg.seed, "gumbel", (round << 32) | item.id);

    std::vector<NodeId> z(M);
    std::vector<NodeId> sample_observed;
    for (std::size_t m = 0; m < M; ++m) {
      if (item.sample.mask[m]) {
        if (item.sample.features[m].size() != state.input_dims[m]) {
          throw std::invalid_argument("model loss: feature length mismatch");
        }
        Encoder& enc = state.encoders[m];
        NodeId x = tape.input(item.sample.features[m]);
        NodeId hidden = tape.tanh_act(tape.dense(x, enc.w1, enc.b1));
        z[m] = tape.dense(hidden, enc.w2, enc.b2);
        observed_nodes.push_back(z[m]);
        observed_modality.push_back(m);
        per_modality[m].push_back(z[m]);
        sample_observed.push_back(z[m]);
      } else if (cfg.gps_enabled) {
        std::vector<NodeId> draws;
        draws.reserve(cfg.gps_draws);
        for (std::size_t g = 0; g < cfg.gps_draws; ++g) {
          std::vector<double> gum(K);
          for (double& v : gum) v = noise.gumbel();
          NodeId sel =
              tape.gumbel_softmax(gps_logits_for(m), cfg.tau, std::move(gum),
                                  /*hard=*/true);
          std::vector<NodeId> comps(K);
          for (std::size_t k = 0; k < K; ++k) {
            std::vector<double> eps(d);
            for (double& v : eps) v = noise.normal();
            comps[k] = tape.gauss_sample(state.mixture.bank.mean_at(m, k),
                                         state.mixture.bank.log_var_at(m, k),
                                         std::move(eps));
          }
          draws.push_back(tape.lincomb(sel, comps));
        }
        NodeId mixed = draws[0];
        for (std::size_t g = 1; g < draws.size(); ++g) {
          mixed = tape.add(mixed, draws[g]);
        }
        if (draws.size() > 1) {
          mixed = tape.scale(mixed, 1.0 / static_cast<double>(draws.size()));
        }
        z[m] = mixed;
      } else {
        z[m] = tape.input(std::vector<double>(d, 0.0));
      }
    }

    NodeId fused;
    if (cfg.fusion_mode == FusionMode::concat) {
      fused = tape.concat(z);
    } else {
      fused = z[0];
      for (std::size_t m = 1; m < M; ++m) fused = tape.add(fused, z[m]);
    }
    NodeId prob = tape.sigmoid_act(tape.dense(fused, state.head_w, state.head_b));
    bces.push_back(tape.bce_loss(prob, item.sample.label));
    per_sample_observed.push_back(std::move(sample_observed));
  }

  NodeId task_node = tape.mean_scalars(bces);

  std::optional<NodeId> align;
  GraphOut out;
  switch (cfg.alignment_mode) {
    case AlignmentMode::dp: {
      const bool include_kl = cfg.weights_mode == WeightsMode::gamma;
      align = dp_loss_node(tape, observed_nodes, batch.size() * M,
                           state.mixture, include_kl, global_log_pi);
      if (include_kl) out.kl_sticks_raw = kl_sticks(state.mixture.sticks);
      break;
    }
    case AlignmentMode::cosine: {
      std::vector<NodeId> pairs;
      for (const auto& zs : per_sample_observed) {
        for (std::size_t a = 0; a < zs.size(); ++a) {
          for (std::size_t b = a + 1; b < zs.size(); ++b) {
            pairs.push_back(tape.cosine_distance(zs[a], zs[b]));
          }
        }
      }
      if (!pairs.empty()) align = tape.mean_scalars(pairs);
      break;
    }
    case AlignmentMode::kl: {
      std::vector<NodeId> pairs;
      for (std::size_t a = 0; a < M; ++a) {
        for (std::size_t b = a + 1; b < M; ++b) {
          if (per_modality[a].empty() || per_modality[b].empty()) continue;
          pairs.push_back(tape.sym_kl_moments(per_modality[a], per_modality[b]));
        }
      }
      if (!pairs.empty()) align = tape.mean_scalars(pairs);
      break;
    }
    case AlignmentMode::none:
      break;
  }

  NodeId total = task_node;
  if (align.has_value() && cfg.lambda_dp != 0.0) {
    total = tape.add(total, tape.scale(*align, cfg.lambda_dp));
  }
  out.total = total;
  out.task = tape.scalar(task_node);
  out.dp = align.has_value() ? tape.scalar(*align) : 0.0;
  out.observed_entries.reserve(observed_nodes.size());
  for (std::size_t i = 0; i < observed_nodes.size(); ++i) {
    out.observed_entries.push_back(
        {tape.value(observed_nodes[i]), observed_modality[i], true});
  }
  return out;
}

const char* diverged_component(const LossBreakdown& loss) {
  if (!std::isfinite(loss.task)) return "task";
  if (!std::isfinite(loss.dp)) return "dp";
  if (!std::isfinite(loss.total)) return "total";
  return nullptr;
}

}  // namespace

void init_model(ModelState& state, const TrainConfig& config,
                const std::vector<std::size_t>& input_dims,
                std::size_t n_total_entries) {
  if (input_dims.empty()) {
    throw std::invalid_argument("init_model: at least one modality required");
  }
  for (std::size_t dim : input_dims) {
    if (dim == 0) throw std::invalid_argument("init_model: zero input dim");
  }
  if (config.K == 0 || config.latent_dim == 0 || config.hidden_dim == 0) {
    throw std::invalid_argument(
        "init_model: K, latent_dim and hidden_dim must be positive");
  }
  if (!(config.tau > 0.0)) {
    throw std::invalid_argument("init_model: tau must be > 0");
  }
  if (!(config.eta > 0.0)) {
    throw std::invalid_argument("init_model: eta must be > 0");
  }
  if (config.lambda_dp < 0.0 || !std::isfinite(config.lambda_dp)) {
    throw std::invalid_argument("init_model: lambda_dp must be nonnegative");
  }
  if (config.gamma_step < 0.0 || config.gamma_step > 1.0) {
    throw std::invalid_argument("init_model: gamma_step must lie in [0, 1]");
  }
  if (config.gps_draws == 0) {
    throw std::invalid_argument("init_model: gps_draws must be positive");
  }
  if (config.batch_size == 0) {
    throw std::invalid_argument("init_model: batch_size must be positive");
  }
  if (config.learning_rate < 0.0) {
    throw std::invalid_argument("init_model: learning_rate must be nonnegative");
  }

  const std::size_t M = input_dims.size();
  const std::size_t d = config.latent_dim;
  const std::size_t h = config.hidden_dim;

  state.config = config;
  state.input_dims = input_dims;
  state.noise_round = 0;
  state.encoders.clear();
  state.encoders.resize(M);

  std::uint64_t tensor_index = 0;
  auto fill_gaussian = [&](ParamTensor& t, double scale) {
    Rng rng = Rng::stream(config.seed, "init", tensor_index++);
    for (double& v : t.value) v = scale * rng.normal();
  };

  for (std::size_t m = 0; m < M; ++m) {
    Encoder& enc = state.encoders[m];
    enc.w1 = ParamTensor::matrix_param(h, input_dims[m]);
    enc.b1 = ParamTensor::vector_param(h);
    enc.w2 = ParamTensor::matrix_param(d, h);
    enc.b2 = ParamTensor::vector_param(d);
    fill_gaussian(enc.w1, 1.0 / std::sqrt(static_cast<double>(input_dims[m])));
    fill_gaussian(enc.w2, 1.0 / std::sqrt(static_cast<double>(h)));
  }

  const std::size_t fused_dim =
      config.fusion_mode == FusionMode::concat ? M * d : d;
  state.head_w = ParamTensor::matrix_param(1, fused_dim);
  state.head_b = ParamTensor::vector_param(1);
  fill_gaussian(state.head_w, 1.0 / std::sqrt(static_cast<double>(fused_dim)));

  state.mixture.bank = ComponentBank::make(M, config.K, d);
  if (config.mu_init_scale != 0.0) {
    for (ParamTensor& mean : state.mixture.bank.means) {
      fill_gaussian(mean, config.mu_init_scale);
    }
  }
  state.mixture.sticks = init_sticks(M * config.K, config.eta);
  state.mixture.lambda_dp = config.lambda_dp;
  state.mixture.n_total = n_total_entries;
  state.weight_logits = ParamTensor::vector_param(M * config.K);

  state.optimizer = Adam(config.learning_rate);
  for (auto& [name, tensor] : named_tensors(state)) {
    (void)name;
    state.optimizer.add_param(tensor);
  }
}

std::vector<double> encode(const std::vector<double>& x, std::size_t m,
                           const ModelState& state) {
  check_initialized(state);
  if (m >= state.modalities()) {
    throw std::invalid_argument("encode: modality out of range");
  }
  if (x.size() != state.input_dims[m]) {
    throw std::invalid_argument("encode: feature length mismatch");
  }
  const Encoder& enc = state.encoders[m];
  // Same accumulation order as the tape's dense op, so the plain and taped
  // forward passes agree bit for bit.
  std::vector<double> hidden(enc.b1.size());
  const std::size_t in = x.size();
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    double acc = enc.b1.value[i];
    const double* row = &enc.w1.value[i * in];
    for (std::size_t j = 0; j < in; ++j) acc += row[j] * x[j];
    hidden[i] = std::tanh(acc);
  }
  std::vector<double> z(enc.b2.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double acc = enc.b2.value[i];
    const double* row = &enc.w2.value[i * hidden.size()];
    for (std::size_t j = 0; j < hidden.size(); ++j) acc += row[j] * hidden[j];
    z[i] = acc;
  }
  return z;
}

AssembledSample assemble_embeddings(const MultimodalSample& sample,
                                    const ModelState& state, bool training,
                                    Rng& rng) {
  check_initialized(state);
  check_sample_shape(sample, state, "assemble_embeddings");
  const std::size_t M = state.modalities();
  const std::size_t d = state.config.latent_dim;

  AssembledSample out;
  out.z.resize(M);
  out.observed.assign(M, 0);
  for (std::size_t m = 0; m < M; ++m) {
    if (sample.mask[m]) {
      if (sample.features[m].size() != state.input_dims[m]) {
        throw std::invalid_argument(
            "assemble_embeddings: feature length mismatch");
      }
      out.z[m] = encode(sample.features[m], m, state);
      out.observed[m] = 1;
    } else if (state.config.gps_enabled) {
      std::vector<double> acc(d, 0.0);
      for (std::size_t g = 0; g < state.config.gps_draws; ++g) {
        const std::vector<double> draw = marginal_draw(state, m, training, rng);
        for (std::size_t j = 0; j < d; ++j) acc[j] += draw[j];
      }
      if (state.config.gps_draws > 1) {
        const double inv = 1.0 / static_cast<double>(state.config.gps_draws);
        for (double& v : acc) v *= inv;
      }
      out.z[m] = std::move(acc);
    } else {
      out.z[m] = std::vector<double>(d, 0.0);
    }
  }
  return out;
}

double predict(const std::vector<std::vector<double>>& embeddings,
               const ModelState& state) {
  check_initialized(state);
  const std::size_t M = state.modalities();
  const std::size_t d = state.config.latent_dim;
  if (embeddings.size() != M) {
    throw std::invalid_argument("predict: embedding count mismatch");
  }
  for (const auto& z : embeddings) {
    if (z.size() != d) {
      throw std::invalid_argument("predict: embedding dimension mismatch");
    }
  }
  std::vector<double> fused;
  if (state.config.fusion_mode == FusionMode::concat) {
    fused.reserve(M * d);
    for (const auto& z : embeddings) {
      fused.insert(fused.end(), z.begin(), z.end());
    }
  } else {
    fused = embeddings[0];
    for (std::size_t m = 1; m < M; ++m) {
      for (std::size_t j = 0; j < d; ++j) fused[j] += embeddings[m][j];
    }
  }
  double acc = state.head_b.value[0];
  for (std::size_t j = 0; j < fused.size(); ++j) {
    acc += state.head_w.value[j] * fused[j];
  }
  return 1.0 / (1.0 + std::exp(-acc));
}

LossBreakdown loss_total(const std::vector<TrainItem>& batch,
                         ModelState& state) {
  check_initialized(state);
  Tape tape;
  GraphOut g = build_graph(tape, batch, state, state.noise_round);
  return {tape.scalar(g.total), g.task, g.dp, g.kl_sticks_raw};
}

LossBreakdown train_step(const std::vector<TrainItem>& batch,
                         ModelState& state) {
  check_initialized(state);
  const TrainConfig& cfg = state.config;
  Tape tape;
  const std::uint64_t round = state.noise_round;
  GraphOut g = build_graph(tape, batch, state, round);
  LossBreakdown loss{tape.scalar(g.total), g.task, g.dp, g.kl_sticks_raw};
  if (const char* component = diverged_component(loss)) {
    throw std::runtime_error(std::string("train_step: ") + component +
                             " loss is not finite");
  }

  state.optimizer.zero_grads();
  tape.backward(g.total);
  state.optimizer.step();

  if (cfg.gamma_step > 0.0 && cfg.weights_mode == WeightsMode::gamma &&
      !g.observed_entries.empty()) {
    // The responsibilities call evaluates the freshly updated component bank.
    // If the optimizer step blew the parameters up, the mixture densities
    // underflow to zero across the board and the call reports a degenerate
    // input. Reword that as divergence so callers can tell it apart from a
    // caller-side usage error.
    try {
      const Responsibilities phi =
          responsibilities(g.observed_entries, state.mixture);
      state.mixture.sticks =
          update_gamma(phi, state.mixture, batch.size() * state.modalities(),
                       cfg.gamma_step);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(
          std::string("train_step: mixture update diverged: ") + e.what());
    }
  }
  state.noise_round = round + 1;
  return loss;
}

ScoredSet score_dataset(const ModelState& state, const Dataset& data) {
  check_initialized(state);
  if (data.empty()) {
    throw std::invalid_argument("score_dataset: empty dataset");
  }
  ScoredSet out;
  out.scores.reserve(data.size());
  out.labels.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = Rng::stream(state.config.seed, "gumbel-eval", i);
    const AssembledSample a = assemble_embeddings(data[i], state, false, rng);
    out.scores.push_back(predict(a.z, state));
    out.labels.push_back(data[i].label);
  }
  return out;
}

namespace {

std::vector<std::size_t> infer_input_dims(const Dataset& train) {
  const std::size_t M = train.front().features.size();
  std::vector<std::size_t> dims(M, 0);
  std::vector<bool> seen(M, false);
  for (const MultimodalSample& sample : train) {
    if (sample.features.size() != M || sample.mask.size() != M) {
      throw std::invalid_argument("fit: inconsistent modality count");
    }
    for (std::size_t m = 0; m < M; ++m) {
      if (!sample.mask[m]) continue;
      if (!seen[m]) {
        dims[m] = sample.features[m].size();
        seen[m] = true;
      } else if (dims[m] != sample.features[m].size()) {
        throw std::invalid_argument("fit: inconsistent feature length");
      }
    }
  }
  for (std::size_t m = 0; m < M; ++m) {
    if (!seen[m]) {
      throw std::invalid_argument(
          "fit: modality " + std::to_string(m) +
          " is never observed in the train split");
    }
  }
  return dims;
}

}  // namespace

FitResult fit(ModelState& state, const TrainConfig& config,
              const Dataset& train, const Dataset& valid) {
  if (train.empty() || valid.empty()) {
    throw std::invalid_argument("fit: empty split");
  }
  const std::vector<std::size_t> dims = infer_input_dims(train);
  init_model(state, config, dims, train.size() * dims.size());

  FitResult result;
  result.best_val_auroc = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> best_snapshot;
  std::size_t bad_epochs = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(config.seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i-- > 1;) {
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    }

    double sum_total = 0.0;
    double sum_task = 0.0;
    double sum_dp = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      std::vector<TrainItem> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back({train[order[i]], order[i]});
      }
      const LossBreakdown loss = train_step(batch, state);
      sum_total += loss.total;
      sum_task += loss.task;
      sum_dp += loss.dp;
      ++steps;
    }

    const ScoredSet val = score_dataset(state, valid);
    const double val_auroc = auroc(val);
    result.history.push_back({epoch, sum_total / static_cast<double>(steps),
                              sum_task / static_cast<double>(steps),
                              sum_dp / static_cast<double>(steps), val_auroc});

    // NaN best (no epoch recorded yet) compares false, so the first epoch
    // always becomes the incumbent.
    if (!(val_auroc <= result.best_val_auroc)) {
      result.best_val_auroc = val_auroc;
      result.best_epoch = epoch;
      best_snapshot = snapshot_values(state);
      bad_epochs = 0;
    } else if (++bad_epochs > config.early_stop_patience) {
      break;
    }
  }

  if (result.best_epoch > 0) {
    restore_values(state, best_snapshot);
  }
  return result;
}

std::vector<std::vector<double>> snapshot_values(const ModelState& state) {
  // Traversal only reads; named_tensors needs a mutable ref for the pointers.
  ModelState& mutable_state = const_cast<ModelState&>(state);
  std::vector<std::vector<double>> out;
  for (auto& [name, tensor] : named_tensors(mutable_state)) {
    (void)name;
    out.push_back(tensor->value);
  }
  out.push_back(state.mixture.sticks.gamma1);
  out.push_back(state.mixture.sticks.gamma2);
  return out;
}

void restore_values(ModelState& state,
                    const std::vector<std::vector<double>>& snapshot) {
  auto tensors = named_tensors(state);
  if (snapshot.size() != tensors.size() + 2) {
    throw std::invalid_argument("restore_values: snapshot layout mismatch");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (snapshot[i].size() != tensors[i].second->value.size()) {
      throw std::invalid_argument("restore_values: tensor size mismatch");
    }
  }
  const std::size_t mk = state.mixture.sticks.gamma1.size();
  if (snapshot[tensors.size()].size() != mk ||
      snapshot[tensors.size() + 1].size() != mk) {
    throw std::invalid_argument("restore_values: gamma size mismatch");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    tensors[i].second->value = snapshot[i];
  }
  state.mixture.sticks.gamma1 = snapshot[tensors.size()];
  state.mixture.sticks.gamma2 = snapshot[tensors.size() + 1];
}

namespace {

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

class TokenReader {
 public:
  explicit TokenReader(std::string text) : text_(std::move(text)) {}

  std::string next(const char* what) {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    if (pos_ >= text_.size()) {
      throw ParseError(std::string("checkpoint: missing ") + what);
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  void expect(const char* literal) {
    const std::string tok = next(literal);
    if (tok != literal) {
      throw ParseError(std::string("checkpoint: expected '") + literal +
                       "', got '" + tok + "'");
    }
  }

  double number(const char* what) {
    const std::string tok = next(what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || tok.empty()) {
      throw ParseError(std::string("checkpoint: bad number for ") + what);
    }
    return v;
  }

  std::uint64_t integer(const char* what) {
    const std::string tok = next(what);
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw ParseError(std::string("checkpoint: bad integer for ") + what);
    }
  }

  bool done() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    return pos_ >= text_.size();
  }

 private:
  std::string text_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
  check_initialized(state);
  ModelState& mutable_state = const_cast<ModelState&>(state);
  const TrainConfig& cfg = state.config;

  std::ostringstream out;
  out << "dpmm-checkpoint 1\n";
  out << "fusion_mode " << to_string(cfg.fusion_mode) << '\n';
  out << "alignment_mode " << to_string(cfg.alignment_mode) << '\n';
  out << "weights_mode " << to_string(cfg.weights_mode) << '\n';
  out << "gps_enabled " << (cfg.gps_enabled ? 1 : 0) << '\n';
  out << "eta " << hex_double(cfg.eta) << '\n';
  out << "K " << cfg.K << '\n';
  out << "lambda_dp " << hex_double(cfg.lambda_dp) << '\n';
  out << "tau " << hex_double(cfg.tau) << '\n';
  out << "learning_rate " << hex_double(cfg.learning_rate) << '\n';
  out << "batch_size " << cfg.batch_size << '\n';
  out << "epochs " << cfg.epochs << '\n';
  out << "early_stop_patience " << cfg.early_stop_patience << '\n';
  out << "gamma_step " << hex_double(cfg.gamma_step) << '\n';
  out << "seed " << cfg.seed << '\n';
  out << "latent_dim " << cfg.latent_dim << '\n';
  out << "hidden_dim " << cfg.hidden_dim << '\n';
  out << "gps_draws " << cfg.gps_draws << '\n';
  out << "mu_init_scale " << hex_double(cfg.mu_init_scale) << '\n';
  out << "input_dims " << state.input_dims.size();
  for (std::size_t dim : state.input_dims) out << ' ' << dim;
  out << '\n';
  out << "n_total " << state.mixture.n_total << '\n';
  out << "noise_round " << state.noise_round << '\n';

  for (auto& [name, tensor] : named_tensors(mutable_state)) {
    out << "tensor " << name << ' ' << tensor->rows << ' ' << tensor->cols
        << '\n';
    for (std::size_t i = 0; i < tensor->value.size(); ++i) {
      out << (i ? " " : "") << hex_double(tensor->value[i]);
    }
    out << '\n';
  }
  const StickState& sticks = state.mixture.sticks;
  out << "gamma1 " << sticks.gamma1.size() << '\n';
  for (std::size_t i = 0; i < sticks.gamma1.size(); ++i) {
    out << (i ? " " : "") << hex_double(sticks.gamma1[i]);
  }
  out << '\n';
  out << "gamma2 " << sticks.gamma2.size() << '\n';
  for (std::size_t i = 0; i < sticks.gamma2.size(); ++i) {
    out << (i ? " " : "") << hex_double(sticks.gamma2[i]);
  }
  out << '\n';
  out << "end\n";

  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw std::runtime_error("save_checkpoint: cannot open " + path);
  }
  file << out.str();
  file.flush();
  if (!file) {
    throw std::runtime_error("save_checkpoint: write failed for " + path);
  }
}

void load_checkpoint(ModelState& state, const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw std::runtime_error("load_checkpoint: cannot open " + path);
  }
  std::ostringstream buffer;
  buffer << file.rdbuf();
  TokenReader reader(buffer.str());

  reader.expect("dpmm-checkpoint");
  reader.expect("1");

  TrainConfig cfg;
  reader.expect("fusion_mode");
  cfg.fusion_mode = fusion_mode_from_string(reader.next("fusion mode"));
  reader.expect("alignment_mode");
  cfg.alignment_mode = alignment_mode_from_string(reader.next("alignment mode"));
  reader.expect("weights_mode");
  cfg.weights_mode = weights_mode_from_string(reader.next("weights mode"));
  reader.expect("gps_enabled");
  cfg.gps_enabled = reader.integer("gps_enabled") != 0;
  reader.expect("eta");
  cfg.eta = reader.number("eta");
  reader.expect("K");
  cfg.K = reader.integer("K");
  reader.expect("lambda_dp");
  cfg.lambda_dp = reader.number("lambda_dp");
  reader.expect("tau");
  cfg.tau = reader.number("tau");
  reader.expect("learning_rate");
  cfg.learning_rate = reader.number("learning_rate");
  reader.expect("batch_size");
  cfg.batch_size = reader.integer("batch_size");
  reader.expect("epochs");
  cfg.epochs = reader.integer("epochs");
  reader.expect("early_stop_patience");
  cfg.early_stop_patience = reader.integer("early_stop_patience");
  reader.expect("gamma_step");
  cfg.gamma_step = reader.number("gamma_step");
  reader.expect("seed");
  cfg.seed = reader.integer("seed");
  reader.expect("latent_dim");
  cfg.latent_dim = reader.integer("latent_dim");
  reader.expect("hidden_dim");
  cfg.hidden_dim = reader.integer("hidden_dim");
  reader.expect("gps_draws");
  cfg.gps_draws = reader.integer("gps_draws");
  reader.expect("mu_init_scale");
  cfg.mu_init_scale = reader.number("mu_init_scale");

  reader.expect("input_dims");
  const std::uint64_t modality_count = reader.integer("modality count");
  if (modality_count == 0 || modality_count > 64) {
    throw ParseError("checkpoint: implausible modality count");
  }
  std::vector<std::size_t> dims(modality_count);
  for (auto& dim : dims) dim = reader.integer("input dim");
  reader.expect("n_total");
  const std::uint64_t n_total = reader.integer("n_total");
  reader.expect("noise_round");
  const std::uint64_t noise_round = reader.integer("noise_round");

  init_model(state, cfg, dims, n_total);
  state.noise_round = noise_round;

  for (auto& [name, tensor] : named_tensors(state)) {
    reader.expect("tensor");
    const std::string got = reader.next("tensor name");
    if (got != name) {
      throw ParseError("checkpoint: expected tensor '" + name + "', got '" +
                       got + "'");
    }
    const std::uint64_t rows = reader.integer("tensor rows");
    const std::uint64_t cols = reader.integer("tensor cols");
    if (rows != tensor->rows || cols != tensor->cols) {
      throw ParseError("checkpoint: shape mismatch for tensor '" + name + "'");
    }
    for (double& v : tensor->value) v = reader.number("tensor value");
  }
  StickState& sticks = state.mixture.sticks;
  reader.expect("gamma1");
  if (reader.integer("gamma1 size") != sticks.gamma1.size()) {
    throw ParseError("checkpoint: gamma1 size mismatch");
  }
  for (double& v : sticks.gamma1) v = reader.number("gamma1 value");
  reader.expect("gamma2");
  if (reader.integer("gamma2 size") != sticks.gamma2.size()) {
    throw ParseError("checkpoint: gamma2 size mismatch");
  }
  for (double& v : sticks.gamma2) v = reader.number("gamma2 value");
  reader.expect("end");
  if (!reader.done()) {
    throw ParseError("checkpoint: trailing content after end marker");
  }
}

}  // namespace dpmm
