#include "cmcm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmcm/rng.hpp"
#include "cmcm/scalar_stats.hpp"

namespace cmcm::metrics {

void ScoredSet::validate() const {
  if (scores.size() != labels.size()) throw LengthMismatch("scores/labels length mismatch");
  if (scores.size() < 2) throw SingleClass("need at least two scored rows");
  bool pos = false, neg = false;
  for (double y : labels) {
    if (y == 1.0) pos = true;
    else if (y == 0.0) neg = true;
    else throw SingleClass("labels must be 0 or 1");
  }
  if (!pos || !neg) throw SingleClass("both classes must be present");
}

double auroc(const ScoredSet& s) {
  s.validate();
  const size_t n = s.scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return s.scores[a] < s.scores[b]; });

  // average ranks across tied scores
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && s.scores[order[j + 1]] == s.scores[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0;
  int64_t n_pos = 0;
  for (size_t k = 0; k < n; ++k)
    if (s.labels[k] == 1.0) {
      rank_sum += rank[k];
      ++n_pos;
    }
  int64_t n_neg = static_cast<int64_t>(n) - n_pos;
  double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double aupr(const ScoredSet& s) {
  s.validate();
  const size_t n = s.scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return s.scores[a] > s.scores[b]; });
  double total_pos = 0;
  for (double y : s.labels) total_pos += y;

  double ap = 0, tp = 0;
  for (size_t k = 0; k < n; ++k) {
    if (s.labels[order[k]] == 1.0) {
      tp += 1.0;
      double precision = tp / static_cast<double>(k + 1);
      ap += precision / total_pos;  // recall step is 1/total_pos
    }
  }
  return ap;
}

double evaluate(Metric m, const ScoredSet& s) { return m == Metric::Auroc ? auroc(s) : aupr(s); }

namespace {

bool resample(const ScoredSet& src, RngStream& rng, ScoredSet& dst,
              const ScoredSet* paired_src = nullptr, ScoredSet* paired_dst = nullptr) {
  const int64_t n = static_cast<int64_t>(src.scores.size());
  dst.scores.resize(src.scores.size());
  dst.labels.resize(src.labels.size());
  if (paired_dst) {
    paired_dst->scores.resize(src.scores.size());
    paired_dst->labels.resize(src.labels.size());
  }
  bool pos = false, neg = false;
  for (int64_t i = 0; i < n; ++i) {
    int64_t j = rng.index(n);
    dst.scores[static_cast<size_t>(i)] = src.scores[static_cast<size_t>(j)];
    dst.labels[static_cast<size_t>(i)] = src.labels[static_cast<size_t>(j)];
    if (paired_dst) {
      paired_dst->scores[static_cast<size_t>(i)] = paired_src->scores[static_cast<size_t>(j)];
      paired_dst->labels[static_cast<size_t>(i)] = paired_src->labels[static_cast<size_t>(j)];
    }
    (dst.labels[static_cast<size_t>(i)] == 1.0 ? pos : neg) = true;
  }
  return pos && neg;
}

double percentile(std::vector<double> sorted_vals, double p) {
  std::sort(sorted_vals.begin(), sorted_vals.end());
  double pos = p * static_cast<double>(sorted_vals.size() - 1);
  size_t lo = static_cast<size_t>(std::floor(pos));
  size_t hi = static_cast<size_t>(std::ceil(pos));
  double frac = pos - static_cast<double>(lo);
  return sorted_vals[lo] * (1.0 - frac) + sorted_vals[hi] * frac;
}

}  // namespace

Interval bootstrap_ci(Metric metric, const ScoredSet& s, int iters, double level,
                      uint64_t seed) {
  s.validate();
  Interval out;
  out.point = evaluate(metric, s);
  std::vector<double> stats;
  stats.reserve(static_cast<size_t>(iters));
  ScoredSet draw;
  for (int it = 0; it < iters; ++it) {
    for (uint64_t attempt = 0;; ++attempt) {
      RngStream rng = RngStream::derive(seed, {0xB007u, static_cast<uint64_t>(it), attempt});
      if (resample(s, rng, draw)) break;
      ++out.redraws;
    }
    stats.push_back(evaluate(metric, draw));
  }
  double tail = 0.5 * (1.0 - level);
  out.lo = percentile(stats, tail);
  out.hi = percentile(stats, 1.0 - tail);
  return out;
}

double bootstrap_t_test(const ScoredSet& a, const ScoredSet& b, Metric metric, int iters,
                        uint64_t seed) {
  a.validate();
  b.validate();
  if (a.scores.size() != b.scores.size() || a.labels != b.labels)
    throw LengthMismatch("bootstrap_t_test requires paired rows with identical labels");

  double observed = evaluate(metric, a) - evaluate(metric, b);
  std::vector<double> diffs;
  diffs.reserve(static_cast<size_t>(iters));
  ScoredSet da, db;
  for (int it = 0; it < iters; ++it) {
    for (uint64_t attempt = 0;; ++attempt) {
      RngStream rng = RngStream::derive(seed, {0x77E57u, static_cast<uint64_t>(it), attempt});
      if (resample(a, rng, da, &b, &db)) break;
    }
    diffs.push_back(evaluate(metric, da) - evaluate(metric, db));
  }
  double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
  double var = 0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= static_cast<double>(diffs.size() - 1);
  double se = std::sqrt(var);
  if (se == 0.0) return observed == 0.0 ? 1.0 : 0.0;
  double t = observed / se;
  return 2.0 * (1.0 - std_normal_cdf(std::abs(t)));
}

}  // namespace cmcm::metrics
