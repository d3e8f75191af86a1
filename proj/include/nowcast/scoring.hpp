#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "nowcast/common.hpp"

namespace nowcast {

// Sample CRPS: mean|X - y| - 0.5 mean|X - X'| over all ordered draw pairs
// including self-pairs, computed through the sorted-draw identity.
inline double crps(std::span<const long> draws, long truth) {
  if (draws.empty()) throw Error("crps: empty draw vector");
  std::vector<long> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const double s = static_cast<double>(sorted.size());
  double mad = 0.0;    // mean |x_i - y|
  double spread = 0.0; // sum (2k - S + 1) x_(k)
  for (size_t k = 0; k < sorted.size(); ++k) {
    mad += std::abs(static_cast<double>(sorted[k] - truth));
    spread += (2.0 * static_cast<double>(k) - s + 1.0) * static_cast<double>(sorted[k]);
  }
  return mad / s - spread / (s * s);
}

// -log of the smoothed predictive mass at truth. The smoothing constant and
// support definition are artifact choices documented in the README; absolute
// values depend on them, model comparisons do not.
inline double log_score(std::span<const long> draws, long truth) {
  if (draws.empty()) throw Error("log_score: empty draw vector");
  long lo = draws[0], hi = draws[0], count = 0;
  for (long v : draws) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    if (v == truth) ++count;
  }
  double k = static_cast<double>(hi - lo + 1);
  if (truth < lo || truth > hi) k += 1.0;
  const double s = static_cast<double>(draws.size());
  return -std::log((static_cast<double>(count) + 0.5) / (s + 0.5 * k));
}

inline double rmse(std::span<const double> medians, std::span<const double> truths) {
  if (medians.size() != truths.size()) throw Error("rmse: length mismatch");
  if (medians.empty()) throw Error("rmse: empty input");
  double sum = 0.0;
  for (size_t i = 0; i < medians.size(); ++i) {
    const double d = medians[i] - truths[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(medians.size()));
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline double coverage(std::span<const Interval> intervals, std::span<const double> truths) {
  if (intervals.size() != truths.size()) throw Error("coverage: length mismatch");
  if (intervals.empty()) throw Error("coverage: empty input");
  long inside = 0;
  for (size_t i = 0; i < intervals.size(); ++i) {
    if (!(intervals[i].lo <= intervals[i].hi)) throw Error("coverage: interval with lo > hi");
    if (intervals[i].lo <= truths[i] && truths[i] <= intervals[i].hi) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(intervals.size());
}

}  // namespace nowcast
