#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace dpmm {

// A metric that needs both classes (or at least one positive) was handed an
// input where it is mathematically undefined.
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by bootstrap_ci when more than half of the resamples had to be
// abandoned because the metric stayed undefined through every retry.
class CiFailureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Predicted probabilities paired with binary ground truth.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Probability that a random positive outranks a random negative, ties counted
// half. Computed from average ranks rather than pair enumeration. Throws
// UndefinedMetricError unless both classes are present, invalid_argument on
// malformed input.
double auroc(const ScoredSet& s);

// Average precision: precision at each distinct descending-score cutoff times
// the recall gained there, with tied scores treated as one cutoff. Throws
// UndefinedMetricError when there are no positives.
double aupr(const ScoredSet& s);

// Harmonic mean of precision and recall, predicting positive at
// score >= threshold. Returns 0 when there are no true positives, so empty
// prediction sets and all-negative truth are well defined.
double f1(const ScoredSet& s, double threshold = 0.5);

struct BootstrapResult {
  double lo = 0.0;
  double hi = 0.0;
  // Resamples abandoned after exhausting retries. Reported so callers can
  // surface partial coverage instead of silently narrowing the interval.
  std::size_t skipped = 0;
};

// Percentile 95% interval of metric over `resamples` bootstrap resamples
// drawn with replacement. Resample b draws from the substream
// (seed, "bootstrap", b), so intervals are reproducible and independent of
// evaluation order. A resample on which the metric throws
// UndefinedMetricError is redrawn from the same substream a bounded number of
// times, then dropped. Throws invalid_argument when resamples < 100 or the
// input is empty, CiFailureError when more than half the resamples are
// dropped.
BootstrapResult bootstrap_ci(const ScoredSet& s,
                             const std::function<double(const ScoredSet&)>& metric,
                             std::size_t resamples = 1000,
                             std::uint64_t seed = 0);

}  // namespace dpmm
