#include "cmcm/objective.hpp"

#include <cmath>

#include "cmcm/scalar_stats.hpp"

namespace cmcm::objective {

using ad::NodeId;
using ad::Tape;

AlignmentKind alignment_from_string(const std::string& s) {
  if (s == "copula") return AlignmentKind::Copula;
  if (s == "cosine") return AlignmentKind::Cosine;
  if (s == "kl") return AlignmentKind::Kl;
  if (s == "none") return AlignmentKind::None;
  throw DomainError("unknown alignment kind: " + s);
}

const char* to_string(AlignmentKind k) {
  switch (k) {
    case AlignmentKind::Copula: return "copula";
    case AlignmentKind::Cosine: return "cosine";
    case AlignmentKind::Kl: return "kl";
    case AlignmentKind::None: return "none";
  }
  return "?";
}

double bce_loss(const std::vector<double>& yhat, const std::vector<double>& y) {
  if (yhat.size() != y.size()) throw LengthMismatch("bce_loss: length mismatch");
  if (yhat.empty()) throw LengthMismatch("bce_loss: empty batch");
  double acc = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    double p = std::clamp(yhat[i], 1e-7, 1.0 - 1e-7);
    acc -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(y.size());
}

NodeId bce_node(Tape& t, NodeId yhat, const std::vector<double>& labels) {
  const Tensor& yv = t.value(yhat);
  if (yv.numel() != static_cast<int64_t>(labels.size()))
    throw LengthMismatch("bce_node: label length mismatch");
  NodeId y = t.constant(Tensor(yv.shape(), labels));
  NodeId p = t.clamp(yhat, 1e-7, 1.0 - 1e-7);
  NodeId pos = t.mul(y, t.log(p));
  NodeId neg = t.mul(t.sub(t.constant(1.0), y), t.log(t.sub(t.constant(1.0), p)));
  return t.neg(t.mean(t.add(pos, neg)));
}

NodeId copula_alignment_node(Tape& t, const ObjectiveConfig& cfg,
                             std::span<const NodeId> embeddings,
                             std::span<const gmm::GmmNodes> gmms, NodeId copula_raw) {
  if (embeddings.size() != gmms.size())
    throw DimMismatch("copula_alignment: one mixture per modality required");
  const int m = static_cast<int>(embeddings.size());

  std::vector<NodeId> us, logfs;
  for (int i = 0; i < m; ++i) {
    us.push_back(gmm::cdf_node(t, gmms[i], embeddings[i]));
    logfs.push_back(gmm::log_density_node(t, gmms[i], embeddings[i]));
  }
  NodeId logc = copula::log_density_node(t, cfg.family, m, copula_raw, us);

  NodeId sum_logf = logfs[0];
  for (int i = 1; i < m; ++i) sum_logf = t.add(sum_logf, logfs[static_cast<size_t>(i)]);
  NodeId inner = cfg.joint_nll ? t.add(logc, sum_logf) : t.sub(logc, sum_logf);
  return t.sum(inner);
}

NodeId baseline_alignment_node(Tape& t, AlignmentKind kind,
                               std::span<const NodeId> embeddings) {
  const int m = static_cast<int>(embeddings.size());
  if (m < 2) throw DimMismatch("baseline alignment needs at least two modalities");
  int64_t batch = t.value(embeddings[0]).dim(0);

  NodeId acc{-1};
  int pairs = 0;
  for (int a = 0; a < m; ++a)
    for (int bdx = a + 1; bdx < m; ++bdx) {
      NodeId za = embeddings[static_cast<size_t>(a)];
      NodeId zb = embeddings[static_cast<size_t>(bdx)];
      NodeId pair_loss;
      if (kind == AlignmentKind::Cosine) {
        NodeId sq_a = t.sum(t.mul(za, za), 1);
        NodeId sq_b = t.sum(t.mul(zb, zb), 1);
        const Tensor& na = t.value(sq_a);
        const Tensor& nb = t.value(sq_b);
        for (int64_t r = 0; r < batch; ++r)
          if (na[r] < 1e-24 || nb[r] < 1e-24)
            throw ZeroVector("cosine alignment undefined for a zero embedding");
        NodeId dots = t.sum(t.mul(za, zb), 1);
        NodeId denom = t.mul(t.pow(sq_a, 0.5), t.pow(sq_b, 0.5));
        pair_loss = t.mean(t.sub(t.constant(1.0), t.div(dots, denom)));
      } else if (kind == AlignmentKind::Kl) {
        auto moments = [&](NodeId z) {
          NodeId mu = t.mean(z, 0);  // [L]
          NodeId mu_b = t.broadcast(mu, t.value(z).shape());
          NodeId diff = t.sub(z, mu_b);
          NodeId var = t.clamp(t.mean(t.mul(diff, diff), 0), 1e-6, 1e30);
          return std::pair<NodeId, NodeId>(mu, var);
        };
        auto [mu1, var1] = moments(za);
        auto [mu2, var2] = moments(zb);
        auto kl = [&](NodeId ma, NodeId va, NodeId mb, NodeId vb) {
          NodeId dm = t.sub(mb, ma);
          NodeId terms = t.sub(t.log(vb), t.log(va));
          terms = t.sub(terms, t.constant(1.0));
          terms = t.add(terms, t.div(va, vb));
          terms = t.add(terms, t.div(t.mul(dm, dm), vb));
          return t.mul(t.sum(terms), t.constant(0.5));
        };
        pair_loss = t.mul(t.add(kl(mu1, var1, mu2, var2), kl(mu2, var2, mu1, var1)),
                          t.constant(0.5));
      } else {
        throw DomainError("baseline alignment covers cosine and kl only");
      }
      acc = pairs == 0 ? pair_loss : t.add(acc, pair_loss);
      ++pairs;
    }
  return t.mul(acc, t.constant(1.0 / pairs));
}

NodeId loss_node(Tape& t, const ObjectiveConfig& cfg, const model::ForwardNodes& fwd,
                 const std::vector<double>& labels, std::span<const gmm::GmmNodes> gmms,
                 NodeId copula_raw) {
  NodeId bce = bce_node(t, fwd.yhat, labels);
  switch (cfg.alignment) {
    case AlignmentKind::None:
      return bce;
    case AlignmentKind::Copula: {
      NodeId term = copula_alignment_node(t, cfg, fwd.embeddings, gmms, copula_raw);
      return t.add(bce, t.mul(t.constant(-cfg.lambda_cop), term));
    }
    case AlignmentKind::Cosine:
    case AlignmentKind::Kl: {
      NodeId term = baseline_alignment_node(t, cfg.alignment, fwd.embeddings);
      return t.add(bce, t.mul(t.constant(cfg.lambda_cop), term));
    }
  }
  throw DomainError("unreachable");
}

namespace {

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  int64_t n = static_cast<int64_t>(rows.size());
  int64_t d = n > 0 ? static_cast<int64_t>(rows[0].size()) : 0;
  Tensor t(Shape{n, d});
  for (int64_t i = 0; i < n; ++i) {
    if (static_cast<int64_t>(rows[static_cast<size_t>(i)].size()) != d)
      throw DimMismatch("ragged embedding rows");
    for (int64_t j = 0; j < d; ++j) t.at(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  return t;
}

}  // namespace

double copula_alignment_term(const ObjectiveConfig& cfg,
                             const std::vector<std::vector<std::vector<double>>>& z_rows,
                             std::span<const gmm::GmmMarginal> gmms,
                             const copula::CopulaModel& copula_model) {
  Tape t;
  NodeId raw = t.leaf(Tensor::vector(copula_model.raw_params));
  std::vector<NodeId> embeddings;
  std::vector<gmm::GmmNodes> gnodes;
  for (size_t m = 0; m < z_rows.size(); ++m) {
    embeddings.push_back(t.constant(rows_to_tensor(z_rows[m])));
    gnodes.push_back(gmm::bind_marginal(t, gmms[m]));
  }
  NodeId term = copula_alignment_node(t, cfg, embeddings, gnodes, raw);
  return t.value(term)[0];
}

double baseline_alignment_loss(AlignmentKind kind,
                               const std::vector<std::vector<std::vector<double>>>& z_rows) {
  Tape t;
  std::vector<NodeId> embeddings;
  for (const auto& rows : z_rows) embeddings.push_back(t.constant(rows_to_tensor(rows)));
  return t.value(baseline_alignment_node(t, kind, embeddings))[0];
}

}  // namespace cmcm::objective
