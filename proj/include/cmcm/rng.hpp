#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace cmcm {

double std_normal_quantile(double p);  // scalar_stats.hpp owns the declaration

// Deterministic splitmix64 stream. Substreams are derived by hashing a path of
// integers into the seed, so independent components never share state and the
// draw sequence is identical across runs and platforms.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : state_(seed) {}

  static uint64_t mix(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }

  static RngStream derive(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t h = seed;
    for (uint64_t v : path) h = mix(h, v);
    return RngStream(h);
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on the open interval (0,1).
  double uniform() {
    double u;
    do {
      u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    } while (u <= 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return std_normal_quantile(uniform()); }

  double gumbel() { return -std::log(-std::log(uniform())); }

  // Index in [0, weights.size()) proportional to nonnegative weights.
  int64_t categorical(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    double acc = 0;
    for (size_t k = 0; k + 1 < weights.size(); ++k) {
      acc += weights[k];
      if (r < acc) return static_cast<int64_t>(k);
    }
    return static_cast<int64_t>(weights.size()) - 1;
  }

  int64_t index(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace cmcm
