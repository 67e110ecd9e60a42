#include "dpmm/data_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dpmm/rng.hpp"

namespace dpmm {

namespace {

void check_config(const SynthConfig& cfg) {
  if (cfg.modalities == 0) {
    throw std::invalid_argument("generate: needs at least one modality");
  }
  if (cfg.clusters < 2) {
    throw std::invalid_argument("generate: needs at least two clusters");
  }
  if (cfg.input_dims.size() != cfg.modalities) {
    throw std::invalid_argument("generate: one input dim per modality");
  }
  for (std::size_t d : cfg.input_dims) {
    if (d == 0) throw std::invalid_argument("generate: input dims must be >= 1");
    if (d < cfg.clusters) {
      throw std::invalid_argument(
          "generate: input dim smaller than cluster count");
    }
  }
  if (!cfg.missing_ratio.empty() &&
      cfg.missing_ratio.size() != cfg.modalities) {
    throw std::invalid_argument("generate: one missing ratio per modality");
  }
  for (double p : cfg.missing_ratio) {
    if (!(p >= 0.0 && p < 1.0)) {
      throw std::invalid_argument("generate: missing ratio must be in [0, 1)");
    }
  }
  if (!(cfg.separation >= 0.0) || !std::isfinite(cfg.separation)) {
    throw std::invalid_argument("generate: separation must be nonnegative");
  }
  if (!(cfg.noise_scale >= 0.0) || !std::isfinite(cfg.noise_scale)) {
    throw std::invalid_argument("generate: noise scale must be nonnegative");
  }
  if (!(cfg.label_noise >= 0.0 && cfg.label_noise <= 1.0)) {
    throw std::invalid_argument("generate: label noise must be in [0, 1]");
  }
}

// Orthonormal cluster directions for one modality: Gaussian columns made
// orthonormal by Gram-Schmidt. Columns c and c' then satisfy
// |u_c - u_c'| = sqrt(2), so scaling by separation / sqrt(2) places all
// cluster means pairwise `separation` apart.
std::vector<std::vector<double>> cluster_directions(std::uint64_t seed,
                                                    std::size_t modality,
                                                    std::size_t dim,
                                                    std::size_t clusters) {
  Rng rng = Rng::stream(seed, "loading", modality);
  std::vector<std::vector<double>> cols;
  cols.reserve(clusters);
  while (cols.size() < clusters) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& u : cols) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    cols.push_back(std::move(v));
  }
  return cols;
}

}  // namespace

Dataset generate(const SynthConfig& cfg) {
  check_config(cfg);
  const std::size_t n = cfg.n_train + cfg.n_valid + cfg.n_test;
  const std::size_t M = cfg.modalities;

  std::vector<std::vector<std::vector<double>>> means(M);
  for (std::size_t m = 0; m < M; ++m) {
    means[m] = cluster_directions(cfg.seed, m, cfg.input_dims[m], cfg.clusters);
    const double radius = cfg.separation / std::sqrt(2.0);
    for (auto& col : means[m])
      for (double& x : col) x *= radius;
  }

  Rng label_rng = Rng::stream(cfg.seed, "labels");
  std::vector<double> cluster_logit(cfg.clusters);
  for (double& w : cluster_logit) w = 2.5 * label_rng.normal();

  Dataset out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(cfg.seed, "data", i);
    const std::size_t c = rng.below(cfg.clusters);
    MultimodalSample& s = out[i];
    s.features.resize(M);
    s.mask.assign(M, 1);
    for (std::size_t m = 0; m < M; ++m) {
      s.features[m].resize(cfg.input_dims[m]);
      for (std::size_t j = 0; j < cfg.input_dims[m]; ++j) {
        s.features[m][j] = means[m][c][j] + cfg.noise_scale * rng.normal();
      }
    }
    const double p = 1.0 / (1.0 + std::exp(-cluster_logit[c]));
    s.label = rng.uniform() < p ? 1 : 0;
    // The flip draw is consumed even at zero label noise so that the per
    // sample draw sequence does not depend on the noise settings.
    const bool flip = rng.uniform() < cfg.label_noise;
    if (flip) s.label = 1 - s.label;
  }
  return out;
}

MaskOutcome apply_mar_mask(const Dataset& data, std::size_t m, double p,
                           std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("apply_mar_mask: ratio must be in [0, 1)");
  }
  for (const MultimodalSample& s : data) {
    if (m >= s.mask.size()) {
      throw std::invalid_argument("apply_mar_mask: modality out of range");
    }
  }
  MaskOutcome out;
  out.data = data;
  const std::size_t n = data.size();
  // Same epsilon as split: products like 0.3 * 1000 must not floor to 299.
  const auto target =
      static_cast<std::size_t>(p * static_cast<double>(n) + 1e-9);
  if (target == 0) return out;

  // Uniform k-subset by partial Fisher-Yates over the index array.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, "mask", m);
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(order[i], order[j]);
  }

  for (std::size_t i = 0; i < target; ++i) {
    MultimodalSample& s = out.data[order[i]];
    std::size_t observed = 0;
    for (std::uint8_t f : s.mask) observed += f != 0 ? 1 : 0;
    if (s.mask[m] != 0 && observed == 1) {
      ++out.skipped;
      continue;
    }
    s.mask[m] = 0;
    s.features[m].clear();
    ++out.masked;
  }
  return out;
}

SplitResult split(const Dataset& data, double train_fraction,
                  double valid_fraction, double test_fraction,
                  std::uint64_t seed) {
  const double fractions[3] = {train_fraction, valid_fraction, test_fraction};
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw std::invalid_argument("split: fractions must be nonnegative");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must sum to 1");
  }

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, "split");
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(order[i], order[j]);
  }

  // The epsilon keeps exact products like 0.7 * 1000 from landing a hair
  // under the integer they denote.
  const auto n_train = static_cast<std::size_t>(
      train_fraction * static_cast<double>(n) + 1e-9);
  const auto n_valid = static_cast<std::size_t>(
      valid_fraction * static_cast<double>(n) + 1e-9);

  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const MultimodalSample& s = data[order[i]];
    if (i < n_train) {
      out.train.push_back(s);
    } else if (i < n_train + n_valid) {
      out.valid.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const MultimodalSample& s : data) {
    nlohmann::json j;
    j["features"] = nlohmann::json::array();
    for (std::size_t m = 0; m < s.features.size(); ++m) {
      if (s.mask[m] != 0) {
        j["features"].push_back(s.features[m]);
      } else {
        j["features"].push_back(nullptr);
      }
    }
    j["label"] = s.label;
    j["mask"] = nlohmann::json::array();
    for (std::uint8_t f : s.mask) j["mask"].push_back(f != 0);
    file << j.dump() << '\n';
  }
  if (!file) throw std::runtime_error("save_dataset: write failed on " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("load_dataset: cannot open " + path);
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError("load_dataset: " + path + " line " +
                     std::to_string(line_no) + ": " + what);
  };
  while (std::getline(file, line)) {
    ++line_no;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
    if (!j.is_object() || !j.contains("features") || !j.contains("label") ||
        !j.contains("mask")) {
      fail("record must be an object with features, label and mask");
    }
    const auto& jf = j["features"];
    const auto& jm = j["mask"];
    if (!jf.is_array() || !jm.is_array() || jf.size() != jm.size()) {
      fail("features and mask must be arrays of equal length");
    }
    if (!j["label"].is_number_integer()) fail("label must be an integer");
    MultimodalSample s;
    s.label = j["label"].get<int>();
    if (s.label != 0 && s.label != 1) fail("label must be 0 or 1");
    s.features.resize(jf.size());
    s.mask.resize(jm.size());
    for (std::size_t m = 0; m < jf.size(); ++m) {
      if (!jm[m].is_boolean()) fail("mask entries must be booleans");
      const bool observed = jm[m].get<bool>();
      s.mask[m] = observed ? 1 : 0;
      if (observed) {
        if (!jf[m].is_array()) fail("observed modality must carry an array");
        s.features[m].reserve(jf[m].size());
        for (const auto& v : jf[m]) {
          if (!v.is_number()) fail("feature entries must be numbers");
          s.features[m].push_back(v.get<double>());
        }
        if (s.features[m].empty()) fail("observed modality must not be empty");
      } else if (!jf[m].is_null()) {
        fail("missing modality must store null features");
      }
    }
    bool any = false;
    for (std::uint8_t f : s.mask) any = any || f != 0;
    if (!any) fail("sample has no observed modality");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dpmm
