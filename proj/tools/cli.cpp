#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpmm/data_harness.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/model.hpp"
#include "dpmm/stick_breaking.hpp"

#ifndef DPMM_VERSION_STRING
#define DPMM_VERSION_STRING "dpmm-dev"
#endif

namespace dpmm::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Config-content problem: wrong type, missing field, unknown field, bad path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint and data disagree on shapes. Mapped to exit_schema_mismatch.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  return j;
}

void check_allowed(const json& j, const std::set<std::string>& allowed) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError("unknown config field '" + item.key() + "'");
    }
  }
}

const json* find(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double req_double(const json& j, const std::string& key) {
  const json* v = find(j, key);
  if (!v) throw ConfigError("missing required field '" + key + "'");
  if (!v->is_number()) throw ConfigError("field '" + key + "' must be a number");
  return v->get<double>();
}

double opt_double(const json& j, const std::string& key, double fallback) {
  return find(j, key) ? req_double(j, key) : fallback;
}

std::uint64_t req_u64(const json& j, const std::string& key) {
  const json* v = find(j, key);
  if (!v) throw ConfigError("missing required field '" + key + "'");
  if (!v->is_number_unsigned()) {
    throw ConfigError("field '" + key + "' must be a nonnegative integer");
  }
  return v->get<std::uint64_t>();
}

std::uint64_t opt_u64(const json& j, const std::string& key, std::uint64_t fallback) {
  return find(j, key) ? req_u64(j, key) : fallback;
}

std::size_t opt_size(const json& j, const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(opt_u64(j, key, fallback));
}

bool opt_bool(const json& j, const std::string& key, bool fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError("field '" + key + "' must be a boolean");
  return v->get<bool>();
}

std::string req_string(const json& j, const std::string& key) {
  const json* v = find(j, key);
  if (!v) throw ConfigError("missing required field '" + key + "'");
  if (!v->is_string()) throw ConfigError("field '" + key + "' must be a string");
  return v->get<std::string>();
}

std::string opt_string(const json& j, const std::string& key,
                       const std::string& fallback) {
  return find(j, key) ? req_string(j, key) : fallback;
}

std::vector<double> req_double_list(const json& j, const std::string& key) {
  const json* v = find(j, key);
  if (!v) throw ConfigError("missing required field '" + key + "'");
  if (!v->is_array() || v->empty()) {
    throw ConfigError("field '" + key + "' must be a non-empty array");
  }
  std::vector<double> out;
  for (const auto& e : *v) {
    if (!e.is_number()) throw ConfigError("field '" + key + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<double> opt_double_list(const json& j, const std::string& key,
                                    std::vector<double> fallback) {
  return find(j, key) ? req_double_list(j, key) : std::move(fallback);
}

std::vector<std::size_t> opt_size_list(const json& j, const std::string& key,
                                       std::vector<std::size_t> fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_array() || v->empty()) {
    throw ConfigError("field '" + key + "' must be a non-empty array");
  }
  std::vector<std::size_t> out;
  for (const auto& e : *v) {
    if (!e.is_number_unsigned()) {
      throw ConfigError("field '" + key + "' must hold nonnegative integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

std::vector<std::uint64_t> req_u64_list(const json& j, const std::string& key) {
  const json* v = find(j, key);
  if (!v) throw ConfigError("missing required field '" + key + "'");
  if (!v->is_array() || v->empty()) {
    throw ConfigError("field '" + key + "' must be a non-empty array");
  }
  std::vector<std::uint64_t> out;
  for (const auto& e : *v) {
    if (!e.is_number_unsigned()) {
      throw ConfigError("field '" + key + "' must hold nonnegative integers");
    }
    out.push_back(e.get<std::uint64_t>());
  }
  return out;
}

std::vector<std::string> opt_string_list(const json& j, const std::string& key,
                                         std::vector<std::string> fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_array() || v->empty()) {
    throw ConfigError("field '" + key + "' must be a non-empty array");
  }
  std::vector<std::string> out;
  for (const auto& e : *v) {
    if (!e.is_string()) throw ConfigError("field '" + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<bool> opt_bool_list(const json& j, const std::string& key,
                                std::vector<bool> fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_array() || v->empty()) {
    throw ConfigError("field '" + key + "' must be a non-empty array");
  }
  std::vector<bool> out;
  for (const auto& e : *v) {
    if (!e.is_boolean()) throw ConfigError("field '" + key + "' must hold booleans");
    out.push_back(e.get<bool>());
  }
  return out;
}

// The seed is the one field --seed may supply, so it is resolved before the
// required-field check.
std::uint64_t resolve_seed(const json& j, std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  return req_u64(j, "seed");
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

fs::path ensure_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir);
  return p;
}

// Manifest block every result file embeds. Wall clock is deliberately not
// part of it: rerunning with the same inputs must reproduce the same bytes,
// so timing lives only in the standalone manifest.json.
json manifest_base(const std::string& command, std::uint64_t seed,
                   const json& resolved) {
  json m;
  m["command"] = command;
  m["version"] = DPMM_VERSION_STRING;
  m["seed"] = seed;
  m["config"] = resolved;
  return m;
}

std::string manifest_header_block(const json& manifest) {
  std::ostringstream out;
  out << "# command=" << manifest["command"].get<std::string>() << "\n";
  out << "# version=" << manifest["version"].get<std::string>() << "\n";
  out << "# seed=" << manifest["seed"].get<std::uint64_t>() << "\n";
  out << "# config=" << manifest["config"].dump() << "\n";
  return out.str();
}

void write_manifest_file(const fs::path& out_dir, const json& manifest,
                         double wall_seconds, const std::vector<std::string>& outputs) {
  json full = manifest;
  full["wall_clock_seconds"] = wall_seconds;
  full["outputs"] = outputs;
  write_text(out_dir / "manifest.json", full.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Shared config readers

SynthConfig synth_from_json(const json& j, std::uint64_t seed, bool sizes_required) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.modalities = opt_size(j, "modalities", cfg.modalities);
  cfg.clusters = opt_size(j, "clusters", cfg.clusters);
  cfg.input_dims = opt_size_list(j, "input_dims", cfg.input_dims);
  cfg.separation = opt_double(j, "separation", cfg.separation);
  cfg.noise_scale = opt_double(j, "noise_scale", cfg.noise_scale);
  cfg.label_noise = opt_double(j, "label_noise", cfg.label_noise);
  if (sizes_required) {
    cfg.n_train = static_cast<std::size_t>(req_u64(j, "n_train"));
    cfg.n_valid = static_cast<std::size_t>(req_u64(j, "n_valid"));
    cfg.n_test = static_cast<std::size_t>(req_u64(j, "n_test"));
  } else {
    cfg.n_train = opt_size(j, "n_train", cfg.n_train);
    cfg.n_valid = opt_size(j, "n_valid", cfg.n_valid);
    cfg.n_test = opt_size(j, "n_test", cfg.n_test);
  }
  cfg.missing_ratio =
      opt_double_list(j, "missing_ratio", std::vector<double>(cfg.modalities, 0.0));
  return cfg;
}

json synth_echo(const SynthConfig& cfg) {
  json e;
  e["modalities"] = cfg.modalities;
  e["clusters"] = cfg.clusters;
  e["input_dims"] = cfg.input_dims;
  e["separation"] = cfg.separation;
  e["noise_scale"] = cfg.noise_scale;
  e["label_noise"] = cfg.label_noise;
  e["n_train"] = cfg.n_train;
  e["n_valid"] = cfg.n_valid;
  e["n_test"] = cfg.n_test;
  e["missing_ratio"] = cfg.missing_ratio;
  e["seed"] = cfg.seed;
  return e;
}

const std::set<std::string> train_keys = {
    "eta",        "K",          "lambda_dp",     "tau",
    "learning_rate", "batch_size", "epochs",     "early_stop_patience",
    "gamma_step", "seed",       "fusion_mode",   "gps_enabled",
    "alignment_mode", "weights_mode", "latent_dim", "hidden_dim",
    "gps_draws",  "mu_init_scale"};

TrainConfig train_from_json(const json& j, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.eta = opt_double(j, "eta", cfg.eta);
  cfg.K = opt_size(j, "K", cfg.K);
  cfg.lambda_dp = opt_double(j, "lambda_dp", cfg.lambda_dp);
  cfg.tau = opt_double(j, "tau", cfg.tau);
  cfg.learning_rate = opt_double(j, "learning_rate", cfg.learning_rate);
  cfg.batch_size = opt_size(j, "batch_size", cfg.batch_size);
  cfg.epochs = opt_size(j, "epochs", cfg.epochs);
  cfg.early_stop_patience = opt_size(j, "early_stop_patience", cfg.early_stop_patience);
  cfg.gamma_step = opt_double(j, "gamma_step", cfg.gamma_step);
  cfg.latent_dim = opt_size(j, "latent_dim", cfg.latent_dim);
  cfg.hidden_dim = opt_size(j, "hidden_dim", cfg.hidden_dim);
  cfg.gps_draws = opt_size(j, "gps_draws", cfg.gps_draws);
  cfg.mu_init_scale = opt_double(j, "mu_init_scale", cfg.mu_init_scale);
  cfg.gps_enabled = opt_bool(j, "gps_enabled", cfg.gps_enabled);
  try {
    cfg.fusion_mode = fusion_mode_from_string(
        opt_string(j, "fusion_mode", to_string(cfg.fusion_mode)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("field 'fusion_mode': ") + e.what());
  }
  try {
    cfg.alignment_mode = alignment_mode_from_string(
        opt_string(j, "alignment_mode", to_string(cfg.alignment_mode)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("field 'alignment_mode': ") + e.what());
  }
  try {
    cfg.weights_mode = weights_mode_from_string(
        opt_string(j, "weights_mode", to_string(cfg.weights_mode)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("field 'weights_mode': ") + e.what());
  }
  return cfg;
}

json train_echo(const TrainConfig& cfg) {
  json e;
  e["eta"] = cfg.eta;
  e["K"] = cfg.K;
  e["lambda_dp"] = cfg.lambda_dp;
  e["tau"] = cfg.tau;
  e["learning_rate"] = cfg.learning_rate;
  e["batch_size"] = cfg.batch_size;
  e["epochs"] = cfg.epochs;
  e["early_stop_patience"] = cfg.early_stop_patience;
  e["gamma_step"] = cfg.gamma_step;
  e["seed"] = cfg.seed;
  e["fusion_mode"] = to_string(cfg.fusion_mode);
  e["gps_enabled"] = cfg.gps_enabled;
  e["alignment_mode"] = to_string(cfg.alignment_mode);
  e["weights_mode"] = to_string(cfg.weights_mode);
  e["latent_dim"] = cfg.latent_dim;
  e["hidden_dim"] = cfg.hidden_dim;
  e["gps_draws"] = cfg.gps_draws;
  e["mu_init_scale"] = cfg.mu_init_scale;
  return e;
}

// Applies per-modality MAR masks, then cuts the generated pool into the three
// splits by position. generate() draws samples i.i.d. by index, so consecutive
// slices are an exact-size unbiased split and need no extra shuffle seed.
SplitResult generate_splits(const SynthConfig& cfg) {
  Dataset all = generate(cfg);
  for (std::size_t m = 0; m < cfg.modalities; ++m) {
    if (m < cfg.missing_ratio.size() && cfg.missing_ratio[m] > 0.0) {
      all = apply_mar_mask(all, m, cfg.missing_ratio[m], cfg.seed).data;
    }
  }
  SplitResult out;
  auto train_end = all.begin() + static_cast<std::ptrdiff_t>(cfg.n_train);
  auto valid_end = train_end + static_cast<std::ptrdiff_t>(cfg.n_valid);
  out.train.assign(all.begin(), train_end);
  out.valid.assign(train_end, valid_end);
  out.test.assign(valid_end, all.end());
  return out;
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const json& cfg_json, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag) {
  std::set<std::string> allowed = {"modalities", "clusters",   "input_dims",
                                   "separation", "noise_scale", "label_noise",
                                   "n_train",    "n_valid",     "n_test",
                                   "missing_ratio", "seed"};
  check_allowed(cfg_json, allowed);
  const std::uint64_t seed = resolve_seed(cfg_json, seed_flag);
  SynthConfig cfg = synth_from_json(cfg_json, seed, true);

  Stopwatch clock;
  SplitResult splits = generate_splits(cfg);

  fs::path out = ensure_out_dir(out_dir);
  save_dataset(splits.train, (out / "train.jsonl").string());
  save_dataset(splits.valid, (out / "valid.jsonl").string());
  save_dataset(splits.test, (out / "test.jsonl").string());

  json manifest = manifest_base("generate", seed, synth_echo(cfg));
  write_manifest_file(out, manifest, clock.seconds(),
                      {"train.jsonl", "valid.jsonl", "test.jsonl"});
  std::printf("generate: wrote %zu/%zu/%zu samples to %s\n", splits.train.size(),
              splits.valid.size(), splits.test.size(), out.string().c_str());
  return exit_ok;
}

// ---------------------------------------------------------------------------
// fit

int cmd_fit(const json& cfg_json, const std::string& out_dir,
            std::optional<std::uint64_t> seed_flag) {
  std::set<std::string> allowed = train_keys;
  allowed.insert("data_dir");
  check_allowed(cfg_json, allowed);
  const std::uint64_t seed = resolve_seed(cfg_json, seed_flag);
  const std::string data_dir = req_string(cfg_json, "data_dir");
  TrainConfig cfg = train_from_json(cfg_json, seed);

  Dataset train = load_dataset((fs::path(data_dir) / "train.jsonl").string());
  Dataset valid = load_dataset((fs::path(data_dir) / "valid.jsonl").string());

  Stopwatch clock;
  ModelState state;
  FitResult result = fit(state, cfg, train, valid);

  fs::path out = ensure_out_dir(out_dir);
  save_checkpoint(state, (out / "checkpoint.txt").string());

  json echo = train_echo(cfg);
  echo["data_dir"] = data_dir;
  json manifest = manifest_base("fit", seed, echo);

  std::ostringstream csv;
  csv << manifest_header_block(manifest);
  csv << "epoch,train_loss,train_task,train_dp,val_auroc\n";
  for (const EpochRecord& r : result.history) {
    csv << r.epoch << ',' << fmt_double(r.train_loss) << ','
        << fmt_double(r.train_task) << ',' << fmt_double(r.train_dp) << ','
        << fmt_double(r.val_auroc) << "\n";
  }
  write_text(out / "history.csv", csv.str());

  json full = manifest;
  full["best_val_auroc"] = result.best_val_auroc;
  full["best_epoch"] = result.best_epoch;
  full["epochs_run"] = result.history.size();
  full["wall_clock_seconds"] = clock.seconds();
  full["outputs"] = json::array({"checkpoint.txt", "history.csv"});
  write_text(out / "manifest.json", full.dump(2) + "\n");

  std::printf("fit: %zu epochs, best val AUROC %.4f at epoch %zu, %s\n",
              result.history.size(), result.best_val_auroc, result.best_epoch,
              (out / "checkpoint.txt").string().c_str());
  return exit_ok;
}

// ---------------------------------------------------------------------------
// eval

void check_schema(const ModelState& state, const Dataset& data,
                  const std::string& data_file) {
  const std::size_t M = state.input_dims.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const MultimodalSample& s = data[i];
    if (s.mask.size() != M) {
      throw SchemaError("sample " + std::to_string(i) + " of " + data_file + " has " +
                        std::to_string(s.mask.size()) + " modalities, checkpoint has " +
                        std::to_string(M));
    }
    for (std::size_t m = 0; m < M; ++m) {
      if (s.mask[m] && s.features[m].size() != state.input_dims[m]) {
        throw SchemaError("sample " + std::to_string(i) + " modality " +
                          std::to_string(m) + " has dim " +
                          std::to_string(s.features[m].size()) + ", checkpoint expects " +
                          std::to_string(state.input_dims[m]));
      }
    }
  }
}

int cmd_eval(const json& cfg_json, const std::string& out_dir,
             std::optional<std::uint64_t> seed_flag) {
  check_allowed(cfg_json, {"checkpoint", "data_file", "seed",
                           "bootstrap_resamples", "f1_threshold"});
  const std::uint64_t seed = resolve_seed(cfg_json, seed_flag);
  const std::string ckpt_path = req_string(cfg_json, "checkpoint");
  const std::string data_file = req_string(cfg_json, "data_file");
  const std::size_t resamples = opt_size(cfg_json, "bootstrap_resamples", 1000);
  const double threshold = opt_double(cfg_json, "f1_threshold", 0.5);

  ModelState state;
  load_checkpoint(state, ckpt_path);
  Dataset data = load_dataset(data_file);
  check_schema(state, data, data_file);

  Stopwatch clock;
  ScoredSet scored = score_dataset(state, data);

  json metrics;
  metrics["auroc"] = auroc(scored);
  metrics["aupr"] = aupr(scored);
  metrics["f1"] = f1(scored, threshold);
  json ci;
  auto interval = [&](double (*metric)(const ScoredSet&)) {
    BootstrapResult r = bootstrap_ci(
        scored, [&](const ScoredSet& s) { return metric(s); }, resamples, seed);
    json e;
    e["lo"] = r.lo;
    e["hi"] = r.hi;
    e["skipped_resamples"] = r.skipped;
    return e;
  };
  ci["auroc"] = interval(+[](const ScoredSet& s) { return auroc(s); });
  ci["aupr"] = interval(+[](const ScoredSet& s) { return aupr(s); });
  ci["f1"] = interval(+[](const ScoredSet& s) { return f1(s, 0.5); });
  metrics["ci"] = ci;

  json echo;
  echo["checkpoint"] = ckpt_path;
  echo["data_file"] = data_file;
  echo["bootstrap_resamples"] = resamples;
  echo["f1_threshold"] = threshold;
  echo["seed"] = seed;
  json manifest = manifest_base("eval", seed, echo);

  json doc;
  doc["manifest"] = manifest;
  doc["metrics"] = metrics;
  fs::path out = ensure_out_dir(out_dir);
  write_text(out / "metrics.json", doc.dump(2) + "\n");
  write_manifest_file(out, manifest, clock.seconds(), {"metrics.json"});

  std::printf("eval: auroc %.4f aupr %.4f f1 %.4f on %zu samples, %s\n",
              metrics["auroc"].get<double>(), metrics["aupr"].get<double>(),
              metrics["f1"].get<double>(), data.size(),
              (out / "metrics.json").string().c_str());
  return exit_ok;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const json& cfg_json, const std::string& out_dir,
               std::optional<std::uint64_t> seed_flag) {
  std::set<std::string> allowed = {"modalities",      "clusters",
                                   "input_dims",      "separation",
                                   "noise_scale",     "label_noise",
                                   "n_train",         "n_valid",
                                   "n_test",          "eta",
                                   "K",               "lambda_dp",
                                   "tau",             "learning_rate",
                                   "batch_size",      "epochs",
                                   "early_stop_patience", "gamma_step",
                                   "latent_dim",      "hidden_dim",
                                   "gps_draws",       "mu_init_scale",
                                   "seeds",           "alignment_modes",
                                   "gps",             "fusion_modes",
                                   "weights_modes",   "missing_ratios"};
  check_allowed(cfg_json, allowed);

  std::vector<std::uint64_t> seeds;
  if (seed_flag) {
    seeds = {*seed_flag};
  } else {
    seeds = req_u64_list(cfg_json, "seeds");
  }
  auto alignment_modes = opt_string_list(cfg_json, "alignment_modes",
                                         {"dp", "cosine", "kl", "none"});
  auto gps_settings = opt_bool_list(cfg_json, "gps", {true, false});
  auto fusion_modes = opt_string_list(cfg_json, "fusion_modes", {"concat", "sum"});
  auto weights_modes = opt_string_list(cfg_json, "weights_modes",
                                       {"gamma", "learnable"});
  auto missing_ratios =
      opt_double_list(cfg_json, "missing_ratios", {0.0, 0.1, 0.4, 0.7});

  // Validate the enum lists up front so a typo fails the run, not a cell.
  for (const auto& s : alignment_modes) {
    try {
      alignment_mode_from_string(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("field 'alignment_modes': ") + e.what());
    }
  }
  for (const auto& s : fusion_modes) {
    try {
      fusion_mode_from_string(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("field 'fusion_modes': ") + e.what());
    }
  }
  for (const auto& s : weights_modes) {
    try {
      weights_mode_from_string(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("field 'weights_modes': ") + e.what());
    }
  }

  json echo = cfg_json;
  echo["seeds"] = seeds;
  echo["alignment_modes"] = alignment_modes;
  echo["gps"] = gps_settings;
  echo["fusion_modes"] = fusion_modes;
  echo["weights_modes"] = weights_modes;
  echo["missing_ratios"] = missing_ratios;
  json manifest = manifest_base("ablate", seeds.front(), echo);

  Stopwatch clock;
  std::ostringstream csv;
  csv << manifest_header_block(manifest);
  csv << "alignment_mode,gps_enabled,fusion_mode,weights_mode,missing_ratio,"
         "seed,best_epoch,val_auroc,test_auroc,test_aupr,test_f1,status,error\n";

  std::size_t cells = 0, failures = 0;
  for (double ratio : missing_ratios) {
    for (std::uint64_t seed : seeds) {
      // One benchmark instance per (ratio, seed), shared by all model cells.
      SynthConfig synth = synth_from_json(cfg_json, seed, false);
      synth.missing_ratio.assign(synth.modalities, ratio);
      SplitResult splits;
      bool data_ok = true;
      std::string data_error;
      try {
        splits = generate_splits(synth);
      } catch (const std::exception& e) {
        data_ok = false;
        data_error = e.what();
      }
      for (const auto& mode : alignment_modes) {
        for (bool gps : gps_settings) {
          for (const auto& fusion : fusion_modes) {
            for (const auto& weights : weights_modes) {
              ++cells;
              std::string prefix = mode + "," + (gps ? "true" : "false") + "," +
                                   fusion + "," + weights + "," +
                                   fmt_double(ratio) + "," + std::to_string(seed);
              if (!data_ok) {
                ++failures;
                csv << prefix << ",0,nan,nan,nan,nan,error,"
                    << csv_field(data_error) << "\n";
                continue;
              }
              try {
                TrainConfig cfg = train_from_json(cfg_json, seed);
                cfg.alignment_mode = alignment_mode_from_string(mode);
                cfg.gps_enabled = gps;
                cfg.fusion_mode = fusion_mode_from_string(fusion);
                cfg.weights_mode = weights_mode_from_string(weights);
                ModelState state;
                FitResult result = fit(state, cfg, splits.train, splits.valid);
                ScoredSet scored = score_dataset(state, splits.test);
                csv << prefix << ',' << result.best_epoch << ','
                    << fmt_double(result.best_val_auroc) << ','
                    << fmt_double(auroc(scored)) << ',' << fmt_double(aupr(scored))
                    << ',' << fmt_double(f1(scored, 0.5)) << ",ok,\n";
              } catch (const std::exception& e) {
                ++failures;
                csv << prefix << ",0,nan,nan,nan,nan,error," << csv_field(e.what())
                    << "\n";
              }
            }
          }
        }
      }
    }
  }

  fs::path out = ensure_out_dir(out_dir);
  write_text(out / "results.csv", csv.str());
  write_manifest_file(out, manifest, clock.seconds(), {"results.csv"});
  std::printf("ablate: %zu cells (%zu failed), %s\n", cells, failures,
              (out / "results.csv").string().c_str());
  return exit_ok;
}

// ---------------------------------------------------------------------------
// prior-sim

int cmd_prior_sim(const json& cfg_json, const std::string& out_dir,
                  std::optional<std::uint64_t> seed_flag) {
  check_allowed(cfg_json, {"eta_list", "mk", "draws", "seed"});
  const std::uint64_t seed = resolve_seed(cfg_json, seed_flag);
  std::vector<double> etas = req_double_list(cfg_json, "eta_list");
  const std::size_t mk = opt_size(cfg_json, "mk", 16);
  const std::size_t draws = opt_size(cfg_json, "draws", 100000);
  if (draws < 1000) throw ConfigError("field 'draws' must be at least 1000");
  if (mk == 0) throw ConfigError("field 'mk' must be positive");
  for (double eta : etas) {
    if (!(eta > 0.0)) throw ConfigError("field 'eta_list' must hold positive values");
  }

  json echo;
  echo["eta_list"] = etas;
  echo["mk"] = mk;
  echo["draws"] = draws;
  echo["seed"] = seed;
  json manifest = manifest_base("prior-sim", seed, echo);

  Stopwatch clock;
  std::ostringstream csv;
  csv << manifest_header_block(manifest);
  csv << "eta,r,e_pi,se\n";
  for (std::size_t ei = 0; ei < etas.size(); ++ei) {
    Rng rng = Rng::stream(seed, "prior-sim", ei);
    std::vector<double> sum(mk, 0.0), sumsq(mk, 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      std::vector<double> pi = sample_prior_weights(etas[ei], mk, rng);
      for (std::size_t r = 0; r < mk; ++r) {
        sum[r] += pi[r];
        sumsq[r] += pi[r] * pi[r];
      }
    }
    const double n = static_cast<double>(draws);
    for (std::size_t r = 0; r < mk; ++r) {
      const double mean = sum[r] / n;
      const double var = std::max(0.0, sumsq[r] / n - mean * mean);
      const double se = std::sqrt(var / n);
      csv << fmt_double(etas[ei]) << ',' << (r + 1) << ',' << fmt_double(mean)
          << ',' << fmt_double(se) << "\n";
    }
  }

  fs::path out = ensure_out_dir(out_dir);
  write_text(out / "prior_sim.csv", csv.str());
  write_manifest_file(out, manifest, clock.seconds(), {"prior_sim.csv"});
  std::printf("prior-sim: %zu etas x %zu positions, %s\n", etas.size(), mk,
              (out / "prior_sim.csv").string().c_str());
  return exit_ok;
}

int dispatch(const std::string& command, const std::string& config_path,
             const std::string& out_dir, std::optional<std::uint64_t> seed_flag) {
  try {
    json cfg = load_config(config_path);
    if (command == "generate") return cmd_generate(cfg, out_dir, seed_flag);
    if (command == "fit") return cmd_fit(cfg, out_dir, seed_flag);
    if (command == "eval") return cmd_eval(cfg, out_dir, seed_flag);
    if (command == "ablate") return cmd_ablate(cfg, out_dir, seed_flag);
    return cmd_prior_sim(cfg, out_dir, seed_flag);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "dpmm %s: %s\n", command.c_str(), e.what());
    return exit_config_error;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "dpmm %s: schema mismatch: %s\n", command.c_str(), e.what());
    return exit_schema_mismatch;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "dpmm %s: %s\n", command.c_str(), e.what());
    return exit_config_error;
  } catch (const UndefinedMetricError& e) {
    std::fprintf(stderr, "dpmm %s: undefined metric: %s\n", command.c_str(), e.what());
    return exit_config_error;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "dpmm %s: %s\n", command.c_str(), e.what());
    return exit_config_error;
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    if (what.find("not finite") != std::string::npos ||
        what.find("diverged") != std::string::npos) {
      std::fprintf(stderr, "dpmm %s: training diverged: %s\n", command.c_str(),
                   what.c_str());
      return exit_divergence;
    }
    std::fprintf(stderr, "dpmm %s: %s\n", command.c_str(), what.c_str());
    return 1;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Dirichlet-process multimodal mixture experiments"};
  app.require_subcommand(1);

  struct SubArgs {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
  };
  std::vector<std::pair<std::string, SubArgs>> subs;
  subs.reserve(5);
  const char* names[] = {"generate", "fit", "eval", "ablate", "prior-sim"};
  const char* descs[] = {
      "Generate a synthetic benchmark and write train/valid/test files",
      "Train a model on a generated dataset directory",
      "Score a checkpoint on a dataset file and write metrics with CIs",
      "Run the ablation grid (alignment x gps x fusion x weights x missing)",
      "Monte-Carlo the stick-breaking prior weight curves"};
  for (std::size_t i = 0; i < 5; ++i) {
    subs.emplace_back(names[i], SubArgs{});
  }
  for (std::size_t i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    SubArgs& dst = subs[i].second;
    sub->add_option("--config", dst.config, "JSON config file")
        ->required()
        ->type_name("PATH");
    sub->add_option("--out", dst.out, "Output directory (default .)")
        ->type_name("DIR");
    sub->add_option("--seed", dst.seed,
                    "Override the config seed (ablate: run this single seed)")
        ->type_name("U64");
  }

  std::vector<const char*> argv;
  argv.push_back("dpmm");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_config_error;
  }

  for (std::size_t i = 0; i < 5; ++i) {
    if (app.get_subcommand(subs[i].first)->parsed()) {
      const SubArgs& a = subs[i].second;
      return dispatch(subs[i].first, a.config, a.out, a.seed);
    }
  }
  return exit_config_error;
}

}  // namespace dpmm::cli
