#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpmm {

// A dataset file or record could not be interpreted. The message carries the
// path and 1-based line number of the offending record.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One subject: per-modality feature vectors, observed flags and a binary
// label. A missing modality has mask false and an empty feature vector.
struct MultimodalSample {
  std::vector<std::vector<double>> features;
  std::vector<std::uint8_t> mask;
  int label = 0;

  bool operator==(const MultimodalSample&) const = default;
};

using Dataset = std::vector<MultimodalSample>;

// Generator settings. Cluster means are placed pairwise equidistant (distance
// `separation`) along seeded orthonormal directions in each modality, so with
// unit noise the separation reads directly as the Mahalanobis distance
// between cluster means.
struct SynthConfig {
  std::size_t modalities = 2;
  std::size_t clusters = 3;
  std::vector<std::size_t> input_dims = {20, 30};
  double separation = 4.0;
  double noise_scale = 1.0;
  double label_noise = 0.05;
  std::size_t n_train = 2000;
  std::size_t n_valid = 500;
  std::size_t n_test = 1000;
  std::vector<double> missing_ratio = {0.0, 0.0};
  std::uint64_t seed = 0;
};

// Draws n_train + n_valid + n_test fully observed samples. Each sample i is
// produced from the substream (seed, "data", i) with a fixed draw order
// (cluster, modality noise in modality order, label, flip), so any subset of
// samples is reproducible independently of the others, and changing only
// noise_scale or label_noise never re-deals clusters. Throws
// invalid_argument on malformed configs, including input dims smaller than
// the cluster count (the equidistant construction needs that much room).
Dataset generate(const SynthConfig& cfg);

struct MaskOutcome {
  Dataset data;
  // Samples actually flagged missing, and selected samples left untouched
  // because masking them would have removed their last observed modality.
  std::size_t masked = 0;
  std::size_t skipped = 0;
};

// Flags modality m missing on exactly floor(p * n) uniformly seeded samples,
// independent of features and labels. Selected samples whose only observed
// modality is m are skipped and counted instead of re-drawn.
MaskOutcome apply_mar_mask(const Dataset& data, std::size_t m, double p,
                           std::uint64_t seed);

struct SplitResult {
  Dataset train;
  Dataset valid;
  Dataset test;
};

// Seeded shuffle, then a disjoint exhaustive cut: the first two splits get
// floor(fraction * n) samples each and the third takes the remainder.
// Fractions must be nonnegative and sum to 1.
SplitResult split(const Dataset& data, double train_fraction,
                  double valid_fraction, double test_fraction,
                  std::uint64_t seed);

// Line-delimited JSON, one {"features", "label", "mask"} object per sample,
// missing modalities stored as null. save is byte-deterministic; load
// round-trips bit-exactly and throws ParseError with the line number on any
// malformed or inconsistent record.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace dpmm
