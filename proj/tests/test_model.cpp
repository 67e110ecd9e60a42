#include "dpmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

using dpmm::AlignmentMode;
using dpmm::AssembledSample;
using dpmm::Dataset;
using dpmm::FitResult;
using dpmm::FusionMode;
using dpmm::LossBreakdown;
using dpmm::ModelState;
using dpmm::MultimodalSample;
using dpmm::Rng;
using dpmm::ScoredSet;
using dpmm::SynthConfig;
using dpmm::TrainConfig;
using dpmm::TrainItem;
using dpmm::WeightsMode;

namespace {

TrainConfig tiny_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.K = 2;
  cfg.latent_dim = 3;
  cfg.hidden_dim = 6;
  cfg.batch_size = 8;
  cfg.lambda_dp = 0.01;
  return cfg;
}

MultimodalSample make_sample(std::vector<std::vector<double>> xs, int label) {
  MultimodalSample s;
  s.mask.assign(xs.size(), 1);
  s.features = std::move(xs);
  s.label = label;
  return s;
}

// Deterministic little two-modality batch with both labels present.
std::vector<TrainItem> toy_batch(std::size_t n, std::size_t d0, std::size_t d1) {
  std::vector<TrainItem> items;
  Rng rng = Rng::stream(424242, "toy-batch", 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a(d0), b(d1);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    items.push_back({make_sample({std::move(a), std::move(b)}, int(i % 2)), i});
  }
  return items;
}

Dataset to_dataset(const std::vector<TrainItem>& items) {
  Dataset d;
  for (const auto& it : items) d.push_back(it.sample);
  return d;
}

// Bit-pattern equality, so planted NaNs do not defeat the comparison.
bool bits_equal(const std::vector<std::vector<double>>& a,
                const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mode names round-trip and reject unknowns") {
  for (auto m : {FusionMode::concat, FusionMode::sum}) {
    CHECK(dpmm::fusion_mode_from_string(dpmm::to_string(m)) == m);
  }
  for (auto m : {AlignmentMode::dp, AlignmentMode::cosine, AlignmentMode::kl,
                 AlignmentMode::none}) {
    CHECK(dpmm::alignment_mode_from_string(dpmm::to_string(m)) == m);
  }
  for (auto m : {WeightsMode::gamma, WeightsMode::learnable}) {
    CHECK(dpmm::weights_mode_from_string(dpmm::to_string(m)) == m);
  }
  CHECK_THROWS_AS(dpmm::fusion_mode_from_string("stack"), std::invalid_argument);
  CHECK_THROWS_AS(dpmm::alignment_mode_from_string(""), std::invalid_argument);
  CHECK_THROWS_AS(dpmm::weights_mode_from_string("fixed"), std::invalid_argument);
}

TEST_CASE("encode matches a hand-rolled forward pass") {
  ModelState state;
  dpmm::init_model(state, tiny_config(3), {4, 5});
  std::vector<double> x = {0.3, -1.2, 0.05, 2.0, -0.7};

  const auto& enc = state.encoders[1];
  std::vector<double> h(enc.b1.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double acc = enc.b1.value[i];
    for (std::size_t j = 0; j < x.size(); ++j)
      acc += enc.w1.value[i * x.size() + j] * x[j];
    h[i] = std::tanh(acc);
  }
  std::vector<double> want(enc.b2.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    double acc = enc.b2.value[i];
    for (std::size_t j = 0; j < h.size(); ++j)
      acc += enc.w2.value[i * h.size() + j] * h[j];
    want[i] = acc;
  }

  std::vector<double> got = dpmm::encode(x, 1, state);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);

  CHECK(dpmm::encode(x, 1, state) == got);
  CHECK_THROWS_AS(dpmm::encode({1.0, 2.0}, 1, state), std::invalid_argument);
  CHECK_THROWS_AS(dpmm::encode(x, 2, state), std::invalid_argument);
}

TEST_CASE("zeroed encoder maps everything to the origin") {
  ModelState state;
  dpmm::init_model(state, tiny_config(5), {4});
  auto& enc = state.encoders[0];
  std::fill(enc.w2.value.begin(), enc.w2.value.end(), 0.0);
  std::fill(enc.b2.value.begin(), enc.b2.value.end(), 0.0);
  std::vector<double> z = dpmm::encode({1.0, -2.0, 3.0, 4.0}, 0, state);
  for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("predict is 0.5 under a zero head and symmetric under sum fusion") {
  TrainConfig cfg = tiny_config(7);
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5});
  std::fill(state.head_w.value.begin(), state.head_w.value.end(), 0.0);
  std::fill(state.head_b.value.begin(), state.head_b.value.end(), 0.0);
  std::vector<std::vector<double>> z = {{0.1, -0.4, 0.9}, {1.0, 0.2, -0.3}};
  CHECK(dpmm::predict(z, state) == 0.5);

  TrainConfig sum_cfg = tiny_config(7);
  sum_cfg.fusion_mode = FusionMode::sum;
  ModelState sum_state;
  dpmm::init_model(sum_state, sum_cfg, {4, 5});
  std::vector<std::vector<double>> swapped = {z[1], z[0]};
  CHECK(dpmm::predict(z, sum_state) == dpmm::predict(swapped, sum_state));

  // Concatenation is position-sensitive, so the same swap must move the
  // probability for a generic head.
  ModelState cat_state;
  dpmm::init_model(cat_state, tiny_config(7), {4, 5});
  CHECK(dpmm::predict(z, cat_state) != dpmm::predict(swapped, cat_state));
}

TEST_CASE("assemble_embeddings routes observed, gps and zero-fill slots") {
  TrainConfig cfg = tiny_config(11);
  cfg.K = 1;  // single component makes the marginal draw replayable by hand
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5});
  const std::size_t d = cfg.latent_dim;
  for (std::size_t j = 0; j < d; ++j) {
    state.mixture.bank.means[1].value[j] = 0.25 * double(j + 1);
    state.mixture.bank.log_vars[1].value[j] = -0.5 + 0.1 * double(j);
  }

  MultimodalSample full = make_sample({{1, 2, 3, 4}, {5, 4, 3, 2, 1}}, 1);
  Rng rng_full = Rng::stream(9, "assemble", 0);
  AssembledSample a = dpmm::assemble_embeddings(full, state, true, rng_full);
  CHECK(a.observed == std::vector<std::uint8_t>{1, 1});
  CHECK(a.z[0] == dpmm::encode(full.features[0], 0, state));
  CHECK(a.z[1] == dpmm::encode(full.features[1], 1, state));

  MultimodalSample partial = full;
  partial.mask[1] = 0;
  partial.features[1].clear();

  Rng rng_draw = Rng::stream(9, "assemble", 1);
  AssembledSample g = dpmm::assemble_embeddings(partial, state, true, rng_draw);
  CHECK(g.observed == std::vector<std::uint8_t>{1, 0});
  // Replay: K gumbels then K*d normals, and with K = 1 the selection weight
  // is exactly 1 either way, leaving mu + sigma * eps.
  Rng replay = Rng::stream(9, "assemble", 1);
  (void)replay.gumbel();
  for (std::size_t j = 0; j < d; ++j) {
    double mu = state.mixture.bank.means[1].value[j];
    double sigma = std::exp(0.5 * state.mixture.bank.log_vars[1].value[j]);
    CHECK(g.z[1][j] == mu + sigma * replay.normal());
  }

  TrainConfig off_cfg = cfg;
  off_cfg.gps_enabled = false;
  ModelState off_state;
  dpmm::init_model(off_state, off_cfg, {4, 5});
  Rng rng_off = Rng::stream(9, "assemble", 2);
  AssembledSample zf = dpmm::assemble_embeddings(partial, off_state, true, rng_off);
  CHECK(zf.z[1] == std::vector<double>(d, 0.0));
  CHECK(zf.observed == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("loss_total agrees across alignment modes when lambda is zero") {
  std::vector<TrainItem> batch = toy_batch(10, 4, 5);
  double ref_total = 0.0, ref_task = 0.0;
  bool first = true;
  for (auto mode : {AlignmentMode::dp, AlignmentMode::cosine, AlignmentMode::kl,
                    AlignmentMode::none}) {
    TrainConfig cfg = tiny_config(13);
    cfg.lambda_dp = 0.0;
    cfg.alignment_mode = mode;
    ModelState state;
    dpmm::init_model(state, cfg, {4, 5}, batch.size() * 2);
    LossBreakdown loss = dpmm::loss_total(batch, state);
    if (first) {
      ref_total = loss.total;
      ref_task = loss.task;
      first = false;
    } else {
      CHECK(loss.total == ref_total);
      CHECK(loss.task == ref_task);
    }
    CHECK(loss.total == loss.task);
  }
}

TEST_CASE("identical embeddings zero out the pairwise alignment terms") {
  std::vector<TrainItem> batch;
  Rng rng = Rng::stream(77, "twin", 0);
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> x(5);
    for (auto& v : x) v = rng.normal();
    batch.push_back({make_sample({x, x}, int(i % 2)), i});
  }
  for (auto mode : {AlignmentMode::cosine, AlignmentMode::kl}) {
    TrainConfig cfg = tiny_config(17);
    cfg.alignment_mode = mode;
    ModelState state;
    dpmm::init_model(state, cfg, {5, 5}, batch.size() * 2);
    // Tie the second encoder to the first so twin inputs give twin outputs.
    state.encoders[1].w1.value = state.encoders[0].w1.value;
    state.encoders[1].b1.value = state.encoders[0].b1.value;
    state.encoders[1].w2.value = state.encoders[0].w2.value;
    state.encoders[1].b2.value = state.encoders[0].b2.value;
    LossBreakdown loss = dpmm::loss_total(batch, state);
    CHECK(std::abs(loss.dp) < 1e-9);
  }
}

TEST_CASE("dp mode reports total = task + lambda * dp and checks out against the scalar loss") {
  std::vector<TrainItem> batch = toy_batch(9, 4, 5);
  TrainConfig cfg = tiny_config(19);
  cfg.lambda_dp = 0.37;
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5}, batch.size() * 2);
  // Spread the means so the dp term is not symmetric noise around zero.
  Rng jit = Rng::stream(19, "jitter", 0);
  for (auto& mean : state.mixture.bank.means)
    for (auto& v : mean.value) v = 0.5 * jit.normal();

  LossBreakdown loss = dpmm::loss_total(batch, state);
  CHECK(loss.total == doctest::Approx(loss.task + cfg.lambda_dp * loss.dp).epsilon(1e-12));
  CHECK(loss.kl_sticks == dpmm::kl_sticks(state.mixture.sticks));

  // Recompute the alignment term from scratch through the scalar path.
  std::vector<dpmm::BatchEntry> entries;
  for (const auto& item : batch) {
    for (std::size_t m = 0; m < 2; ++m) {
      entries.push_back({dpmm::encode(item.sample.features[m], m, state), m, true});
    }
  }
  double want_dp = dpmm::dp_loss(entries, state.mixture);
  CHECK(loss.dp == doctest::Approx(want_dp).epsilon(1e-12));

  TrainConfig learn_cfg = cfg;
  learn_cfg.weights_mode = WeightsMode::learnable;
  ModelState learn_state;
  dpmm::init_model(learn_state, learn_cfg, {4, 5}, batch.size() * 2);
  LossBreakdown learn_loss = dpmm::loss_total(batch, learn_state);
  CHECK(learn_loss.kl_sticks == 0.0);
}

TEST_CASE("train_step with zero rates is a no-op on the parameters") {
  std::vector<TrainItem> batch = toy_batch(8, 4, 5);
  TrainConfig cfg = tiny_config(23);
  cfg.learning_rate = 0.0;
  cfg.gamma_step = 0.0;
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5}, batch.size() * 2);

  LossBreakdown before = dpmm::loss_total(batch, state);
  auto snap = dpmm::snapshot_values(state);
  LossBreakdown step = dpmm::train_step(batch, state);
  CHECK(step.total == before.total);
  CHECK(step.task == before.task);
  CHECK(step.dp == before.dp);
  CHECK(dpmm::snapshot_values(state) == snap);
  CHECK(state.noise_round == 1);
}

TEST_CASE("train_step is deterministic and order-invariant over the batch") {
  std::vector<TrainItem> batch = toy_batch(8, 4, 5);
  std::vector<TrainItem> reversed(batch.rbegin(), batch.rend());
  TrainConfig cfg = tiny_config(29);
  cfg.learning_rate = 0.05;

  ModelState s1, s2, s3;
  dpmm::init_model(s1, cfg, {4, 5}, batch.size() * 2);
  dpmm::init_model(s2, cfg, {4, 5}, batch.size() * 2);
  dpmm::init_model(s3, cfg, {4, 5}, batch.size() * 2);
  CHECK(dpmm::snapshot_values(s1) == dpmm::snapshot_values(s2));

  for (int t = 0; t < 3; ++t) {
    LossBreakdown a = dpmm::train_step(batch, s1);
    LossBreakdown b = dpmm::train_step(batch, s2);
    LossBreakdown c = dpmm::train_step(reversed, s3);
    CHECK(a.total == b.total);
    CHECK(a.total == c.total);
  }
  CHECK(dpmm::snapshot_values(s1) == dpmm::snapshot_values(s2));
  CHECK(dpmm::snapshot_values(s1) == dpmm::snapshot_values(s3));
}

TEST_CASE("train_step fits a separable toy problem") {
  std::vector<TrainItem> batch;
  Rng rng = Rng::stream(31, "separable", 0);
  for (std::size_t i = 0; i < 24; ++i) {
    int label = int(i % 2);
    double center = label == 1 ? 1.5 : -1.5;
    std::vector<double> a(3), b(4);
    for (auto& v : a) v = center + 0.1 * rng.normal();
    for (auto& v : b) v = center + 0.1 * rng.normal();
    batch.push_back({make_sample({std::move(a), std::move(b)}, label), i});
  }
  TrainConfig cfg = tiny_config(31);
  cfg.lambda_dp = 0.0;
  cfg.learning_rate = 0.05;
  ModelState state;
  dpmm::init_model(state, cfg, {3, 4}, batch.size() * 2);
  LossBreakdown last{};
  for (int t = 0; t < 200; ++t) last = dpmm::train_step(batch, state);
  CHECK(last.task < 0.1);
}

TEST_CASE("train_step reports the diverging component and leaves state intact") {
  std::vector<TrainItem> batch = toy_batch(6, 4, 5);
  TrainConfig cfg = tiny_config(37);
  cfg.lambda_dp = 1.0;
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5}, batch.size() * 2);
  state.mixture.bank.means[0].value[0] = std::numeric_limits<double>::quiet_NaN();
  auto snap = dpmm::snapshot_values(state);
  bool threw = false;
  try {
    dpmm::train_step(batch, state);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("dp") != std::string::npos);
  }
  CHECK(threw);
  CHECK(bits_equal(dpmm::snapshot_values(state), snap));
  CHECK(state.noise_round == 0);
}

TEST_CASE("gps draws feed gradients back into the mixture means") {
  std::vector<TrainItem> batch = toy_batch(6, 4, 5);
  for (auto& item : batch) {
    item.sample.mask[1] = 0;
    item.sample.features[1].clear();
  }
  for (bool gps : {true, false}) {
    TrainConfig cfg = tiny_config(41);
    cfg.lambda_dp = 0.0;  // cuts the dp path, isolating the imputation path
    cfg.learning_rate = 0.0;
    cfg.gamma_step = 0.0;
    cfg.gps_enabled = gps;
    ModelState state;
    dpmm::init_model(state, cfg, {4, 5}, batch.size() * 2);
    dpmm::train_step(batch, state);
    double grad_mass = 0.0;
    for (std::size_t k = 0; k < cfg.K; ++k) {
      const auto& g = state.mixture.bank.means[k * 2 + 1].grad;
      for (double v : g) grad_mass += std::abs(v);
    }
    if (gps) {
      CHECK(grad_mass > 0.0);
    } else {
      CHECK(grad_mass == 0.0);
    }
  }
}

TEST_CASE("gamma blending moves the sticks only when enabled") {
  std::vector<TrainItem> batch = toy_batch(8, 4, 5);
  TrainConfig cfg = tiny_config(43);
  cfg.learning_rate = 0.01;
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5}, batch.size() * 2);
  std::vector<double> gamma1_before = state.mixture.sticks.gamma1;
  dpmm::train_step(batch, state);
  CHECK(state.mixture.sticks.gamma1 != gamma1_before);

  TrainConfig frozen = cfg;
  frozen.gamma_step = 0.0;
  ModelState fstate;
  dpmm::init_model(fstate, frozen, {4, 5}, batch.size() * 2);
  dpmm::train_step(batch, fstate);
  CHECK(fstate.mixture.sticks.gamma1 == gamma1_before);

  TrainConfig learn = cfg;
  learn.weights_mode = WeightsMode::learnable;
  ModelState lstate;
  dpmm::init_model(lstate, learn, {4, 5}, batch.size() * 2);
  dpmm::train_step(batch, lstate);
  CHECK(lstate.mixture.sticks.gamma1 == gamma1_before);
}

TEST_CASE("score_dataset is stable under dataset reordering when fully observed") {
  std::vector<TrainItem> items = toy_batch(12, 4, 5);
  Dataset data = to_dataset(items);
  TrainConfig cfg = tiny_config(47);
  ModelState state;
  dpmm::init_model(state, cfg, {4, 5}, data.size() * 2);

  ScoredSet straight = dpmm::score_dataset(state, data);
  Dataset shuffled = data;
  std::reverse(shuffled.begin(), shuffled.end());
  ScoredSet reversed = dpmm::score_dataset(state, shuffled);
  REQUIRE(straight.scores.size() == reversed.scores.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(straight.scores[i] == reversed.scores[data.size() - 1 - i]);
    CHECK(straight.labels[i] == reversed.labels[data.size() - 1 - i]);
  }
}

TEST_CASE("fit handles zero epochs and zero patience") {
  SynthConfig dc;
  dc.input_dims = {4, 5};
  dc.n_train = 60;
  dc.n_valid = 30;
  dc.n_test = 0;
  dc.seed = 53;
  Dataset all = dpmm::generate(dc);
  Dataset train(all.begin(), all.begin() + 60);
  Dataset valid(all.begin() + 60, all.end());

  TrainConfig cfg = tiny_config(53);
  cfg.epochs = 0;
  ModelState state;
  FitResult r0 = dpmm::fit(state, cfg, train, valid);
  CHECK(r0.history.empty());
  CHECK((std::isnan(r0.best_val_auroc) || r0.best_val_auroc == 0.0));

  TrainConfig flat = tiny_config(53);
  flat.epochs = 10;
  flat.early_stop_patience = 0;
  flat.learning_rate = 0.0;
  flat.gamma_step = 0.0;
  ModelState fstate;
  FitResult r1 = dpmm::fit(fstate, flat, train, valid);
  // Epoch one sets the best; epoch two matches it exactly, which is not an
  // improvement, and patience zero ends the loop there.
  CHECK(r1.history.size() == 2);
  CHECK(r1.best_epoch == 1);
  CHECK(fstate.mixture.n_total == train.size() * 2);
}

TEST_CASE("fit restores the parameters of the best validation epoch") {
  SynthConfig dc;
  dc.input_dims = {4, 5};
  dc.n_train = 150;
  dc.n_valid = 60;
  dc.n_test = 0;
  dc.seed = 59;
  Dataset all = dpmm::generate(dc);
  Dataset train(all.begin(), all.begin() + 150);
  Dataset valid(all.begin() + 150, all.end());

  TrainConfig cfg = tiny_config(59);
  cfg.epochs = 6;
  cfg.learning_rate = 0.01;
  ModelState state;
  FitResult r = dpmm::fit(state, cfg, train, valid);
  REQUIRE(!r.history.empty());
  double best = -1.0;
  for (const auto& rec : r.history) best = std::max(best, rec.val_auroc);
  CHECK(r.best_val_auroc == best);
  CHECK(dpmm::auroc(dpmm::score_dataset(state, valid)) == r.best_val_auroc);
  CHECK(r.history[r.best_epoch - 1].val_auroc == r.best_val_auroc);
}

TEST_CASE("fit rejects empty splits and unseen modalities") {
  TrainConfig cfg = tiny_config(61);
  Dataset empty;
  Dataset one = {make_sample({{1, 2, 3, 4}, {1, 2, 3, 4, 5}}, 1)};
  ModelState state;
  CHECK_THROWS_AS(dpmm::fit(state, cfg, empty, one), std::invalid_argument);
  CHECK_THROWS_AS(dpmm::fit(state, cfg, one, empty), std::invalid_argument);

  // A modality that is missing everywhere leaves its input width unknowable.
  MultimodalSample hollow = make_sample({{1, 2, 3, 4}, {}}, 0);
  hollow.mask[1] = 0;
  Dataset bad = {hollow, hollow};
  ModelState s2;
  CHECK_THROWS_AS(dpmm::fit(s2, cfg, bad, bad), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  SynthConfig dc;
  dc.input_dims = {4, 5};
  dc.n_train = 80;
  dc.n_valid = 40;
  dc.n_test = 0;
  dc.seed = 67;
  Dataset all = dpmm::generate(dc);
  Dataset train(all.begin(), all.begin() + 80);
  Dataset valid(all.begin() + 80, all.end());

  TrainConfig cfg = tiny_config(67);
  cfg.epochs = 3;
  cfg.learning_rate = 0.02;
  cfg.weights_mode = WeightsMode::learnable;
  cfg.fusion_mode = FusionMode::sum;
  ModelState state;
  dpmm::fit(state, cfg, train, valid);

  const std::string path = "/tmp/dpmm_model_ckpt.txt";
  dpmm::save_checkpoint(state, path);

  ModelState loaded;
  dpmm::load_checkpoint(loaded, path);
  CHECK(loaded.config.K == cfg.K);
  CHECK(loaded.config.weights_mode == WeightsMode::learnable);
  CHECK(loaded.config.fusion_mode == FusionMode::sum);
  CHECK(loaded.config.learning_rate == cfg.learning_rate);
  CHECK(loaded.input_dims == state.input_dims);
  CHECK(loaded.noise_round == state.noise_round);
  CHECK(loaded.mixture.n_total == state.mixture.n_total);
  CHECK(dpmm::snapshot_values(loaded) == dpmm::snapshot_values(state));

  ScoredSet a = dpmm::score_dataset(state, valid);
  ScoredSet b = dpmm::score_dataset(loaded, valid);
  CHECK(a.scores == b.scores);

  // Saving the reloaded state must reproduce the file byte for byte.
  const std::string path2 = "/tmp/dpmm_model_ckpt2.txt";
  dpmm::save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(!s1.str().empty());
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("malformed checkpoints raise ParseError") {
  const std::string path = "/tmp/dpmm_model_ckpt_bad.txt";
  ModelState state;
  auto write_file = [&](const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
  };

  write_file("not-a-checkpoint 1\n");
  CHECK_THROWS_AS(dpmm::load_checkpoint(state, path), dpmm::ParseError);

  write_file("dpmm-checkpoint 1\neta nope\n");
  CHECK_THROWS_AS(dpmm::load_checkpoint(state, path), dpmm::ParseError);

  // A valid file with garbage appended must be rejected, not silently read.
  ModelState donor;
  dpmm::init_model(donor, tiny_config(71), {3, 3}, 12);
  dpmm::save_checkpoint(donor, path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  in.close();
  write_file(buf.str() + "trailing junk\n");
  CHECK_THROWS_AS(dpmm::load_checkpoint(state, path), dpmm::ParseError);

  // Truncation likewise.
  std::string text = buf.str();
  write_file(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(dpmm::load_checkpoint(state, path), dpmm::ParseError);

  // An unreadable path is an I/O failure rather than a parse failure.
  CHECK_THROWS_AS(dpmm::load_checkpoint(state, "/tmp/dpmm_no_such_ckpt.txt"),
                  std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("default benchmark run clears the sanity bar") {
  SynthConfig dc;
  dc.seed = 1;
  Dataset all = dpmm::generate(dc);
  double n = double(all.size());
  dpmm::SplitResult sp =
      dpmm::split(all, dc.n_train / n, dc.n_valid / n, dc.n_test / n, 78);

  TrainConfig cfg;
  cfg.seed = 101;
  cfg.lambda_dp = 0.01;
  ModelState state;
  FitResult r = dpmm::fit(state, cfg, sp.train, sp.valid);
  CHECK(r.best_val_auroc > 0.72);
  CHECK(dpmm::auroc(dpmm::score_dataset(state, sp.test)) > 0.72);
}
