#pragma once

#include <cstdint>
#include <vector>

#include "cmcm/errors.hpp"

namespace cmcm::metrics {

// Scores with binary labels; both classes must be present.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<double> labels;

  void validate() const;
};

enum class Metric { Auroc, Aupr };

// Mann-Whitney rank statistic, ties counted one half.
double auroc(const ScoredSet& s);

// Average precision over descending-score thresholds; ties broken by stable
// original index.
double aupr(const ScoredSet& s);

double evaluate(Metric m, const ScoredSet& s);

struct Interval {
  double point = 0;
  double lo = 0;
  double hi = 0;
  int redraws = 0;  // resamples that lacked a class and were redrawn
};

// Percentile interval over `iters` row resamples.
Interval bootstrap_ci(Metric metric, const ScoredSet& s, int iters = 1000,
                      double level = 0.95, uint64_t seed = 0);

// Two-sided p-value for metric(A) != metric(B) on paired rows (identical
// labels), from the studentized bootstrap distribution of the difference.
double bootstrap_t_test(const ScoredSet& a, const ScoredSet& b, Metric metric,
                        int iters = 1000, uint64_t seed = 0);

}  // namespace cmcm::metrics
