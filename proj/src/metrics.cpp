#include "dpmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpmm/rng.hpp"

namespace dpmm {

namespace {

void check_set(const ScoredSet& s) {
  if (s.scores.empty()) throw std::invalid_argument("metrics: empty input");
  if (s.scores.size() != s.labels.size()) {
    throw std::invalid_argument("metrics: scores and labels differ in length");
  }
  for (double v : s.scores) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("metrics: scores must lie in [0, 1]");
    }
  }
  for (int y : s.labels) {
    if (y != 0 && y != 1) {
      throw std::invalid_argument("metrics: labels must be 0 or 1");
    }
  }
}

std::vector<std::size_t> order_by_score_desc(const ScoredSet& s) {
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.scores[a] > s.scores[b];
  });
  return order;
}

}  // namespace

double auroc(const ScoredSet& s) {
  check_set(s);
  const std::size_t n = s.scores.size();
  const auto pos_count = static_cast<std::size_t>(
      std::count(s.labels.begin(), s.labels.end(), 1));
  const std::size_t neg_count = n - pos_count;
  if (pos_count == 0 || neg_count == 0) {
    throw UndefinedMetricError("auroc: needs at least one of each class");
  }

  // Ascending order; each tie group gets the average of its ranks, which
  // yields exactly the half-credit convention for tied pairs.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.scores[a] < s.scores[b];
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j averaged over the group.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (s.labels[order[t]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }

  const double np = static_cast<double>(pos_count);
  const double nn = static_cast<double>(neg_count);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

double aupr(const ScoredSet& s) {
  check_set(s);
  const auto total_pos = static_cast<std::size_t>(
      std::count(s.labels.begin(), s.labels.end(), 1));
  if (total_pos == 0) {
    throw UndefinedMetricError("aupr: needs at least one positive");
  }

  const std::vector<std::size_t> order = order_by_score_desc(s);
  const std::size_t n = order.size();
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t cum_tp = 0;
  std::size_t cum_fp = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      if (s.labels[order[t]] == 1) {
        ++cum_tp;
      } else {
        ++cum_fp;
      }
    }
    const double precision =
        static_cast<double>(cum_tp) / static_cast<double>(cum_tp + cum_fp);
    const double recall =
        static_cast<double>(cum_tp) / static_cast<double>(total_pos);
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double f1(const ScoredSet& s, double threshold) {
  check_set(s);
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool predicted = s.scores[i] >= threshold;
    if (predicted && s.labels[i] == 1) ++tp;
    if (predicted && s.labels[i] == 0) ++fp;
    if (!predicted && s.labels[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) /
         static_cast<double>(2 * tp + fp + fn);
}

namespace {

// Linear interpolation between order statistics, matching the common
// definition used by numerical packages.
double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo_idx = static_cast<std::size_t>(pos);
  if (lo_idx + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo_idx);
  return sorted[lo_idx] + frac * (sorted[lo_idx + 1] - sorted[lo_idx]);
}

}  // namespace

BootstrapResult bootstrap_ci(
    const ScoredSet& s,
    const std::function<double(const ScoredSet&)>& metric,
    std::size_t resamples, std::uint64_t seed) {
  check_set(s);
  if (resamples < 100) {
    throw std::invalid_argument("bootstrap_ci: needs at least 100 resamples");
  }
  constexpr int kMaxRetries = 16;
  const std::size_t n = s.scores.size();

  std::vector<double> values;
  values.reserve(resamples);
  std::size_t skipped = 0;
  ScoredSet resample;
  resample.scores.resize(n);
  resample.labels.resize(n);
  for (std::size_t b = 0; b < resamples; ++b) {
    Rng rng = Rng::stream(seed, "bootstrap", b);
    bool kept = false;
    for (int attempt = 0; attempt < kMaxRetries && !kept; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pick = rng.below(n);
        resample.scores[i] = s.scores[pick];
        resample.labels[i] = s.labels[pick];
      }
      try {
        values.push_back(metric(resample));
        kept = true;
      } catch (const UndefinedMetricError&) {
      }
    }
    if (!kept) ++skipped;
  }

  if (skipped * 2 > resamples) {
    throw CiFailureError("bootstrap_ci: metric undefined on most resamples");
  }
  std::sort(values.begin(), values.end());
  BootstrapResult out;
  out.lo = percentile(values, 0.025);
  out.hi = percentile(values, 0.975);
  out.skipped = skipped;
  return out;
}

}  // namespace dpmm
