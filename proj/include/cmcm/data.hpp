#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmcm/copula.hpp"
#include "cmcm/model.hpp"
#include "cmcm/tensor.hpp"

namespace cmcm::data {

// Per-coordinate monotone map from the scalar latent uniform to a feature:
// x_d = scale_d * tanh(shape_d * (u - center_d)) + offset_d (+ Gaussian noise).
// Monotonicity keeps the latent Kendall tau visible in feature space.
struct ModalityTransform {
  std::vector<double> scale;
  std::vector<double> shape;
  std::vector<double> center;
  std::vector<double> offset;
};

struct SynthSpec {
  int modalities = 2;
  std::vector<int> dims{8, 8};
  copula::Family family = copula::Family::Gumbel;
  std::vector<double> copula_params{2.0};      // constrained values
  std::vector<ModalityTransform> transforms;   // seeded defaults when empty
  std::vector<double> label_w{4.0, -4.0};      // y ~ Bernoulli(sigmoid(w.u + b))
  double label_b = 0.0;
  double noise_sigma = 0.05;
  int64_t n_train = 4000;
  int64_t n_valid = 500;
  int64_t n_test = 1000;
  double missing_rate = 0.3;
  std::vector<int> at_risk{1};  // 0-based modality indices that may go missing
  uint64_t seed = 7;
};

// The standard synthetic dataset used throughout the acceptance suite.
SynthSpec default_spec();

SynthSpec spec_from_json(const std::string& text);
std::string spec_to_json(const SynthSpec& spec);

struct Dataset {
  std::vector<int64_t> ids;
  std::vector<Tensor> features;               // per modality [n, D_m]
  std::vector<std::vector<uint8_t>> present;  // per modality, length n
  std::vector<double> labels;

  int64_t rows() const { return static_cast<int64_t>(labels.size()); }
  std::vector<model::MultimodalBatch> batches(int64_t batch_size, uint64_t shuffle_seed,
                                              bool shuffle) const;
};

// Writes train/, valid/, test/ split directories plus manifest.txt under
// out_dir. Byte-identical for identical specs.
void generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

// Draws the latent rows and assembles one split in memory.
Dataset synthesize_split(const SynthSpec& spec, int64_t n, uint64_t split_tag);

// Masks each at-risk modality row independently with the given probability;
// labels untouched. At least one modality must stay off the list.
void apply_mar_mask(Dataset& ds, double rate, const std::vector<int>& at_risk,
                    uint64_t seed);

Dataset load_dataset(const std::string& dir);
void write_split(const Dataset& ds, const std::string& dir);

}  // namespace cmcm::data
