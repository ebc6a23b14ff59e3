#include "cmcm/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "cmcm/metrics.hpp"

namespace cmcm::trainer {

void adam_step(model::ParamStore& params,
               const std::unordered_map<std::string, Tensor>& grads, double lr,
               double beta1, double beta2, double eps) {
  params.adam_step_count += 1;
  double t = static_cast<double>(params.adam_step_count);
  double corr1 = 1.0 - std::pow(beta1, t);
  double corr2 = 1.0 - std::pow(beta2, t);
  for (auto& e : params.entries) {
    auto it = grads.find(e.name);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    if (g && !g->same_shape(e.value))
      throw ShapeMismatch("adam_step: gradient shape mismatch for " + e.name);
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      double gi = g ? (*g)[i] : 0.0;
      e.moment1[i] = beta1 * e.moment1[i] + (1.0 - beta1) * gi;
      e.moment2[i] = beta2 * e.moment2[i] + (1.0 - beta2) * gi * gi;
      double m_hat = e.moment1[i] / corr1;
      double v_hat = e.moment2[i] / corr2;
      e.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

EarlyStop early_stop_check(const std::vector<double>& history, int patience) {
  if (history.empty()) throw DomainError("early_stop_check: empty history");
  size_t best = 0;
  for (size_t i = 1; i < history.size(); ++i)
    if (history[i] > history[best]) best = i;
  size_t age = history.size() - 1 - best;
  return age >= static_cast<size_t>(patience) ? EarlyStop::Stop : EarlyStop::Continue;
}

std::vector<double> predict(const model::ModelConfig& cfg, const model::ParamStore& params,
                            const data::Dataset& ds, uint64_t seed) {
  std::vector<double> scores;
  scores.reserve(static_cast<size_t>(ds.rows()));
  auto batches = ds.batches(256, 0, false);
  RngStream rng = RngStream::derive(seed, {0xE7A1u});
  for (const auto& batch : batches) {
    ad::Tape t;
    model::TapeBindings b = model::bind_params(t, params);
    auto fwd = model::model_forward(t, cfg, b, batch, model::Mode::Eval, &rng);
    const Tensor& y = t.value(fwd.yhat);
    for (int64_t i = 0; i < y.numel(); ++i) scores.push_back(y[i]);
  }
  return scores;
}

namespace {

double current_tau(const model::ModelConfig& cfg, const model::ParamStore& params) {
  if (cfg.modalities != 2) return 0.0;
  copula::CopulaModel cm;
  cm.family = cfg.family;
  cm.dim = cfg.modalities;
  cm.raw_params = params.param("copula.raw").vec();
  return copula::dependence_measure(cm);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::Dataset& train_set,
                  const data::Dataset& valid_set) {
  if (train_set.rows() == 0 || valid_set.rows() == 0)
    throw DataFormatError("train: empty dataset");
  if (static_cast<int>(train_set.features.size()) != cfg.model.modalities)
    throw DataFormatError("train: dataset modality count does not match config");
  for (int m = 0; m < cfg.model.modalities; ++m)
    if (train_set.features[static_cast<size_t>(m)].dim(1) !=
        cfg.model.feature_dims[static_cast<size_t>(m)])
      throw DataFormatError("train: feature width mismatch for modality " + std::to_string(m + 1));

  model::ParamStore params = model::init_params(cfg.model, cfg.seed);

  TrainResult result;
  result.best_params = params;
  result.best_valid_auroc = -1.0;
  std::vector<double> auroc_history;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    uint64_t epoch_tag = static_cast<uint64_t>(epoch);
    auto batches = train_set.batches(cfg.batch_size,
                                     RngStream::mix(cfg.seed, 0x5u + epoch_tag), true);
    double loss_sum = 0;
    int64_t row_count = 0;
    bool blew_up = false;

    for (size_t bi = 0; bi < batches.size(); ++bi) {
      RngStream rng = RngStream::derive(cfg.seed, {0xF0u, epoch_tag, static_cast<uint64_t>(bi)});
      try {
        ad::Tape t;
        model::TapeBindings bind = model::bind_params(t, params);
        auto fwd = model::model_forward(t, cfg.model, bind, batches[bi], model::Mode::Train, &rng);
        std::vector<gmm::GmmNodes> gnodes;
        for (int m = 0; m < cfg.model.modalities; ++m)
          gnodes.push_back(model::gmm_nodes(cfg.model, bind, m));
        ad::NodeId loss =
            objective::loss_node(t, cfg.objective, fwd, batches[bi].labels, gnodes,
                                 bind.at("copula.raw"));
        double loss_value = t.value(loss)[0];
        if (!std::isfinite(loss_value)) throw DivergenceError("non-finite loss");
        t.backward(loss);

        std::unordered_map<std::string, Tensor> grads;
        for (const auto& [name, id] : bind.nodes) grads.emplace(name, t.adjoint(id));
        for (const auto& [name, g] : grads)
          for (int64_t i = 0; i < g.numel(); ++i)
            if (!std::isfinite(g[i])) throw DivergenceError("non-finite gradient in " + name);

        adam_step(params, grads, cfg.learning_rate);
        loss_sum += loss_value * static_cast<double>(batches[bi].rows());
        row_count += batches[bi].rows();
      } catch (const DivergenceError&) {
        blew_up = true;
        break;
      } catch (const DomainError&) {
        // a non-finite intermediate on the tape counts as divergence
        blew_up = true;
        break;
      }
    }

    if (blew_up) {
      result.diverged = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(row_count);

    auto scores = predict(cfg.model, params, valid_set,
                          RngStream::mix(cfg.seed, 0xE0u + epoch_tag));
    metrics::ScoredSet scored{scores, valid_set.labels};
    try {
      stats.valid_auroc = metrics::auroc(scored);
    } catch (const SingleClass&) {
      stats.valid_auroc = 0.5;  // degenerate validation labels rank nothing
    }
    stats.tau = current_tau(cfg.model, params);
    result.history.push_back(stats);

    if (stats.valid_auroc > result.best_valid_auroc) {
      result.best_valid_auroc = stats.valid_auroc;
      result.best_epoch = epoch;
      result.best_params = params;
      result.best_params.adam_step_count = params.adam_step_count;
    }

    auroc_history.push_back(stats.valid_auroc);
    if (early_stop_check(auroc_history, cfg.patience) == EarlyStop::Stop) break;
  }

  return result;
}

EmbeddingBatch impute_missing(const EmbeddingBatch& batch,
                              std::span<const gmm::GmmMarginal> gmms, model::Mode mode,
                              uint64_t seed, double temperature) {
  if (batch.embeddings.size() != batch.present.size())
    throw DimMismatch("impute_missing: embeddings/present modality count mismatch");
  if (gmms.size() < batch.embeddings.size())
    throw MissingGmm("impute_missing: a marginal is required per modality");

  EmbeddingBatch out = batch;
  RngStream rng = RngStream::derive(seed, {0x1423u});
  for (size_t m = 0; m < batch.embeddings.size(); ++m) {
    const auto& pres = batch.present[m];
    const gmm::GmmMarginal& marginal = gmms[m];
    int64_t rows = batch.embeddings[m].dim(0);
    if (static_cast<int64_t>(pres.size()) != rows)
      throw DimMismatch("impute_missing: presence length mismatch");
    for (int64_t r = 0; r < rows; ++r) {
      if (pres[static_cast<size_t>(r)]) continue;
      std::vector<double> draw;
      if (mode == model::Mode::Eval) {
        auto pi = gmm::mixture_weights(marginal, {});
        draw = gmm::gmm_sample(marginal, pi, 1, rng.next_u64())[0];
      } else {
        // tempered softmax combination of reparameterized component draws
        if (!(temperature > 0)) throw DomainError("impute_missing: temperature must be positive");
        std::vector<double> logits(marginal.logits);
        if (marginal.weight_source == gmm::WeightSource::Head) logits = marginal.head_b;
        double mx = -1e300;
        for (auto& l : logits) {
          l = (l + rng.gumbel()) / temperature;
          mx = std::max(mx, l);
        }
        double z = 0;
        for (auto& l : logits) {
          l = std::exp(l - mx);
          z += l;
        }
        draw.assign(static_cast<size_t>(marginal.dim), 0.0);
        for (int k = 0; k < marginal.components; ++k) {
          double w = logits[static_cast<size_t>(k)] / z;
          for (int d = 0; d < marginal.dim; ++d)
            draw[static_cast<size_t>(d)] +=
                w * (marginal.means[static_cast<size_t>(k)][static_cast<size_t>(d)] +
                     std::exp(marginal.log_stds[static_cast<size_t>(k)][static_cast<size_t>(d)]) *
                         rng.normal());
        }
      }
      for (int d = 0; d < marginal.dim; ++d)
        out.embeddings[m].at(r, d) = draw[static_cast<size_t>(d)];
    }
  }
  return out;
}

}  // namespace cmcm::trainer
