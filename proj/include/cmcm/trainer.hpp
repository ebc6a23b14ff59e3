#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmcm/data.hpp"
#include "cmcm/gmm.hpp"
#include "cmcm/model.hpp"
#include "cmcm/objective.hpp"

namespace cmcm::trainer {

struct TrainConfig {
  model::ModelConfig model;
  objective::ObjectiveConfig objective;
  int epochs = 100;
  int64_t batch_size = 32;
  double learning_rate = 1e-4;
  int patience = 15;
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double valid_auroc = 0;
  double tau = 0;  // dependence measure of the current copula parameters
};

struct TrainResult {
  model::ParamStore best_params;
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_valid_auroc = 0;
  bool diverged = false;  // non-finite loss; best_params holds the last good state
};

// Standard bias-corrected Adam over every entry of the store. Gradients are
// keyed by parameter name; missing keys mean zero gradient.
void adam_step(model::ParamStore& params,
               const std::unordered_map<std::string, Tensor>& grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

enum class EarlyStop { Continue, Stop };

// Stop once the best entry is `patience` or more epochs old.
EarlyStop early_stop_check(const std::vector<double>& valid_metric_history, int patience);

TrainResult train(const TrainConfig& cfg, const data::Dataset& train_set,
                  const data::Dataset& valid_set);

// Eval-mode scores for every row of the dataset, deterministic per seed.
std::vector<double> predict(const model::ModelConfig& cfg, const model::ParamStore& params,
                            const data::Dataset& ds, uint64_t seed);

// Embedding-space batch with presence bookkeeping.
struct EmbeddingBatch {
  std::vector<Tensor> embeddings;             // per modality [B, latent]
  std::vector<std::vector<uint8_t>> present;  // per modality
};

// Replaces exactly the absent slots by mixture draws (Train mode uses the
// tempered GPS combination, Eval a plain draw); everything else bit-identical.
EmbeddingBatch impute_missing(const EmbeddingBatch& batch,
                              std::span<const gmm::GmmMarginal> gmms, model::Mode mode,
                              uint64_t seed, double temperature = 0.05);

}  // namespace cmcm::trainer
