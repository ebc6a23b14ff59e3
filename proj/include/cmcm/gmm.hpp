#pragma once

#include <cstdint>
#include <vector>

#include "cmcm/rng.hpp"
#include "cmcm/tape.hpp"
#include "cmcm/tensor.hpp"

namespace cmcm::gmm {

// Mixture weights either come from one global trainable logit vector or from
// a linear head mapping the modality embedding to K logits.
enum class WeightSource { GlobalLogits, Head };

// K-component diagonal-covariance Gaussian mixture over a D-dimensional
// embedding space.
struct GmmMarginal {
  int components = 1;  // K
  int dim = 1;         // D
  WeightSource weight_source = WeightSource::GlobalLogits;
  std::vector<std::vector<double>> means;     // K x D
  std::vector<std::vector<double>> log_stds;  // K x D
  std::vector<double> logits;                 // K (GlobalLogits)
  std::vector<double> head_w;                 // D x K row-major (Head)
  std::vector<double> head_b;                 // K (Head)

  static GmmMarginal make(int components, int dim);
};

// Softmax mixture weights for one embedding (the embedding only matters for
// the Head source).
std::vector<double> mixture_weights(const GmmMarginal& m, const std::vector<double>& z);

double gmm_log_density(const std::vector<double>& z, const GmmMarginal& m,
                       const std::vector<double>& pi);

// Exact under diagonal covariance: sum_k pi_k prod_d Phi((z_d-mu_kd)/sigma_kd).
double gmm_cdf(const std::vector<double>& z, const GmmMarginal& m,
               const std::vector<double>& pi);

std::vector<std::vector<double>> gmm_sample(const GmmMarginal& m,
                                            const std::vector<double>& pi, int64_t n,
                                            uint64_t seed);

// --- tape paths (training) ---

// Parameter leaves for one modality's mixture, created by the caller.
struct GmmNodes {
  ad::NodeId means;     // [K, D]
  ad::NodeId log_stds;  // [K, D]
  ad::NodeId logits;    // [K]   (GlobalLogits)
  ad::NodeId head_w;    // [D, K] (Head)
  ad::NodeId head_b;    // [K]
  WeightSource weight_source = WeightSource::GlobalLogits;
};

// Leaf bindings for a plain marginal (tests and scratch evaluations).
GmmNodes bind_marginal(ad::Tape& t, const GmmMarginal& m);

// Per-row mixture logits as a [B, K] node.
ad::NodeId logits_node(ad::Tape& t, const GmmNodes& g, ad::NodeId z, int64_t batch);

// log f(z) per row: [B].
ad::NodeId log_density_node(ad::Tape& t, const GmmNodes& g, ad::NodeId z);

// F(z) per row: [B].
ad::NodeId cdf_node(ad::Tape& t, const GmmNodes& g, ad::NodeId z);

// Gradient-preserving sample: softmax((logits + Gumbel noise)/tau) combination
// of reparameterized component draws, one row per batch element: [B, D].
// Throws DomainError unless tau > 0.
ad::NodeId gps_sample_node(ad::Tape& t, const GmmNodes& g, int64_t batch,
                           double temperature, RngStream& rng);

}  // namespace cmcm::gmm
