#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmcm/copula.hpp"
#include "cmcm/gmm.hpp"
#include "cmcm/rng.hpp"
#include "cmcm/tape.hpp"
#include "cmcm/tensor.hpp"

namespace cmcm::model {

// Desk-scale network of the fusion pipeline: per-modality 2-hidden-layer tanh
// MLP encoders with a linear projection into a shared latent space, a 2-layer
// LSTM over the modality sequence, and a linear-sigmoid classifier.
struct ModelConfig {
  int modalities = 2;
  std::vector<int> feature_dims;  // per modality
  int hidden = 32;
  int latent = 16;
  int gmm_components = 3;
  gmm::WeightSource weight_source = gmm::WeightSource::GlobalLogits;
  copula::Family family = copula::Family::Gumbel;
  bool gps = true;            // gradient-preserving sampling for absent rows in training
  double temperature = 0.05;  // GPS softmax temperature
  double dropout = 0.0;       // after encoder hidden layers, train mode only
};

// Named tensors plus Adam moment buffers, in fixed creation order.
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor moment1;
    Tensor moment2;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, size_t> index;
  int64_t adam_step_count = 0;

  void add(const std::string& name, Tensor value);
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has(const std::string& name) const { return index.count(name) > 0; }
};

ParamStore init_params(const ModelConfig& cfg, uint64_t seed);

struct MultimodalBatch {
  std::vector<Tensor> features;               // per modality [B, D_m]
  std::vector<std::vector<uint8_t>> present;  // per modality, length B
  std::vector<double> labels;                 // length B, values in {0, 1}
  int64_t rows() const { return features.empty() ? 0 : features[0].dim(0); }
};

enum class Mode { Train, Eval };

// Every parameter as a leaf on a tape, addressable by name.
struct TapeBindings {
  std::unordered_map<std::string, ad::NodeId> nodes;
  ad::NodeId at(const std::string& name) const;
};
TapeBindings bind_params(ad::Tape& t, const ParamStore& params);

gmm::GmmNodes gmm_nodes(const ModelConfig& cfg, const TapeBindings& b, int modality);

ad::NodeId encode_node(ad::Tape& t, const ModelConfig& cfg, const TapeBindings& b,
                       int modality, ad::NodeId x, Mode mode, RngStream* rng);
ad::NodeId fuse_node(ad::Tape& t, const ModelConfig& cfg, const TapeBindings& b,
                     std::span<const ad::NodeId> embeddings);
ad::NodeId classify_node(ad::Tape& t, const ModelConfig& cfg, const TapeBindings& b,
                         ad::NodeId fused);

struct ForwardNodes {
  ad::NodeId yhat;                     // [B], strictly inside (0,1)
  std::vector<ad::NodeId> embeddings;  // per modality [B, latent], imputed where absent
};

// Absent modalities are replaced before fusion by GPS draws (train) or plain
// mixture draws (eval). `rng` may be null only if nothing on the path needs
// randomness; with a full presence mask in Eval mode no RNG is consumed.
ForwardNodes model_forward(ad::Tape& t, const ModelConfig& cfg, const TapeBindings& b,
                           const MultimodalBatch& batch, Mode mode, RngStream* rng);

// Single-vector conveniences used by tests and tooling (Eval mode, no dropout).
std::vector<double> encode(const ModelConfig& cfg, const ParamStore& p, int modality,
                           const std::vector<double>& x);
std::vector<double> fuse(const ModelConfig& cfg, const ParamStore& p,
                         const std::vector<std::vector<double>>& embeddings);
double classify(const ModelConfig& cfg, const ParamStore& p, const std::vector<double>& fused);

// Extracts modality m's mixture as a plain GmmMarginal (for sampling paths).
gmm::GmmMarginal extract_gmm(const ModelConfig& cfg, const ParamStore& p, int modality);

// Checkpoint container: "CMCM-CKPT-1" magic, config echo, then every named
// tensor with shape at full double precision.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_json);
struct Checkpoint {
  ParamStore params;
  std::string config_json;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cmcm::model
