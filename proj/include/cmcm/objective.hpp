#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmcm/copula.hpp"
#include "cmcm/gmm.hpp"
#include "cmcm/model.hpp"
#include "cmcm/tape.hpp"

namespace cmcm::objective {

enum class AlignmentKind { Copula, Cosine, Kl, None };

AlignmentKind alignment_from_string(const std::string& s);
const char* to_string(AlignmentKind k);

struct ObjectiveConfig {
  double lambda_cop = 1e-5;
  AlignmentKind alignment = AlignmentKind::Copula;
  copula::Family family = copula::Family::Gumbel;
  // The printed objective subtracts the marginal log densities inside the
  // regularizer; joint_nll = true flips that inner sign to the joint
  // log-likelihood log c + sum_m log f_m.
  bool joint_nll = false;
};

double bce_loss(const std::vector<double>& yhat, const std::vector<double>& y);

// Mean of -[y log yhat + (1-y) log(1-yhat)] over the batch; yhat clamped away
// from {0,1}. labels enters as a constant.
ad::NodeId bce_node(ad::Tape& t, ad::NodeId yhat, const std::vector<double>& labels);

// sum_i [ log c(F_1(z_1), ..., F_M(z_M)) - sum_m log f_m(z_m) ] (the printed
// inner sign), or with + when joint_nll is set. Differentiable to the copula
// raw parameters, the mixtures, and the embeddings.
ad::NodeId copula_alignment_node(ad::Tape& t, const ObjectiveConfig& cfg,
                                 std::span<const ad::NodeId> embeddings,
                                 std::span<const gmm::GmmNodes> gmms, ad::NodeId copula_raw);

// -lambda_cop * alignment + bce for the copula kind; for cosine/kl the
// baseline loss enters with +lambda_cop; for None this is plain bce.
ad::NodeId loss_node(ad::Tape& t, const ObjectiveConfig& cfg,
                     const model::ForwardNodes& fwd, const std::vector<double>& labels,
                     std::span<const gmm::GmmNodes> gmms, ad::NodeId copula_raw);

// Table-style baselines: cosine -> mean over rows (and modality pairs) of
// 1 - cos(z_a, z_b); kl -> symmetrized diagonal-Gaussian KL between batch
// moment fits, variances floored at 1e-6.
ad::NodeId baseline_alignment_node(ad::Tape& t, AlignmentKind kind,
                                   std::span<const ad::NodeId> embeddings);

// Plain-value conveniences (scratch tape inside).
double copula_alignment_term(const ObjectiveConfig& cfg,
                             const std::vector<std::vector<std::vector<double>>>& z_rows,
                             std::span<const gmm::GmmMarginal> gmms,
                             const copula::CopulaModel& copula_model);
double baseline_alignment_loss(AlignmentKind kind,
                               const std::vector<std::vector<std::vector<double>>>& z_rows);

}  // namespace cmcm::objective
