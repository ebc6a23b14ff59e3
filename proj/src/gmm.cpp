#include "cmcm/gmm.hpp"

#include <algorithm>
#include <cmath>

#include "cmcm/scalar_stats.hpp"

namespace cmcm::gmm {

namespace {
constexpr double kLog2Pi = 1.8378770664093455;

std::vector<double> softmax_vec(std::vector<double> v) {
  double mx = *std::max_element(v.begin(), v.end());
  double z = 0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    z += x;
  }
  for (auto& x : v) x /= z;
  return v;
}

void check_z(const GmmMarginal& m, const std::vector<double>& z) {
  if (static_cast<int>(z.size()) != m.dim)
    throw DimMismatch("gmm: embedding dimension does not match marginal");
}

void check_pi(const GmmMarginal& m, const std::vector<double>& pi) {
  if (static_cast<int>(pi.size()) != m.components)
    throw DimMismatch("gmm: weight vector length does not match K");
}
}  // namespace

GmmMarginal GmmMarginal::make(int components, int dim) {
  GmmMarginal m;
  m.components = components;
  m.dim = dim;
  m.means.assign(static_cast<size_t>(components), std::vector<double>(static_cast<size_t>(dim), 0.0));
  m.log_stds.assign(static_cast<size_t>(components), std::vector<double>(static_cast<size_t>(dim), 0.0));
  m.logits.assign(static_cast<size_t>(components), 0.0);
  m.head_w.assign(static_cast<size_t>(dim) * static_cast<size_t>(components), 0.0);
  m.head_b.assign(static_cast<size_t>(components), 0.0);
  return m;
}

std::vector<double> mixture_weights(const GmmMarginal& m, const std::vector<double>& z) {
  if (m.weight_source == WeightSource::GlobalLogits) return softmax_vec(m.logits);
  check_z(m, z);
  std::vector<double> logits(m.head_b);
  for (int d = 0; d < m.dim; ++d)
    for (int k = 0; k < m.components; ++k)
      logits[static_cast<size_t>(k)] +=
          z[static_cast<size_t>(d)] * m.head_w[static_cast<size_t>(d * m.components + k)];
  return softmax_vec(std::move(logits));
}

double gmm_log_density(const std::vector<double>& z, const GmmMarginal& m,
                       const std::vector<double>& pi) {
  check_z(m, z);
  check_pi(m, pi);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(static_cast<size_t>(m.components));
  for (int k = 0; k < m.components; ++k) {
    double acc = 0;
    for (int d = 0; d < m.dim; ++d) {
      double ls = m.log_stds[static_cast<size_t>(k)][static_cast<size_t>(d)];
      double r = (z[static_cast<size_t>(d)] - m.means[static_cast<size_t>(k)][static_cast<size_t>(d)]) *
                 std::exp(-ls);
      acc += r * r + 2.0 * ls + kLog2Pi;
    }
    terms[static_cast<size_t>(k)] = std::log(pi[static_cast<size_t>(k)]) - 0.5 * acc;
    best = std::max(best, terms[static_cast<size_t>(k)]);
  }
  double s = 0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

double gmm_cdf(const std::vector<double>& z, const GmmMarginal& m,
               const std::vector<double>& pi) {
  check_z(m, z);
  check_pi(m, pi);
  double acc = 0;
  for (int k = 0; k < m.components; ++k) {
    double prod = pi[static_cast<size_t>(k)];
    for (int d = 0; d < m.dim; ++d) {
      double sd = std::exp(m.log_stds[static_cast<size_t>(k)][static_cast<size_t>(d)]);
      prod *= std_normal_cdf(
          (z[static_cast<size_t>(d)] - m.means[static_cast<size_t>(k)][static_cast<size_t>(d)]) / sd);
    }
    acc += prod;
  }
  return acc;
}

std::vector<std::vector<double>> gmm_sample(const GmmMarginal& m,
                                            const std::vector<double>& pi, int64_t n,
                                            uint64_t seed) {
  check_pi(m, pi);
  RngStream rng = RngStream::derive(seed, {0x63A11u});
  std::vector<std::vector<double>> out(static_cast<size_t>(n));
  for (auto& row : out) {
    int64_t k = rng.categorical(pi);
    row.resize(static_cast<size_t>(m.dim));
    for (int d = 0; d < m.dim; ++d)
      row[static_cast<size_t>(d)] =
          m.means[static_cast<size_t>(k)][static_cast<size_t>(d)] +
          std::exp(m.log_stds[static_cast<size_t>(k)][static_cast<size_t>(d)]) * rng.normal();
  }
  return out;
}

// ---- tape paths ----

namespace {

using ad::NodeId;
using ad::Tape;

// mu_k, sigma_k broadcast against a [B, D] block.
struct ComponentNodes {
  NodeId mean_b;     // [B, D]
  NodeId inv_sd_b;   // [B, D]
  NodeId sd_b;       // [B, D]
  NodeId sum_ls;     // [] sum of log stds of this component
};

ComponentNodes component_nodes(Tape& t, const GmmNodes& g, int k, int64_t batch) {
  const Tensor& mv = t.value(g.means);
  int64_t dim = mv.dim(1);
  NodeId mu = t.slice(g.means, 0, k, 1);                     // [1, D]
  NodeId ls = t.slice(g.log_stds, 0, k, 1);                  // [1, D]
  ComponentNodes c;
  c.mean_b = t.broadcast(mu, {batch, dim});
  c.sd_b = t.broadcast(t.exp(ls), {batch, dim});
  c.inv_sd_b = t.broadcast(t.exp(t.neg(ls)), {batch, dim});
  c.sum_ls = t.sum(ls);
  return c;
}

}  // namespace

GmmNodes bind_marginal(Tape& t, const GmmMarginal& m) {
  auto flatten = [&](const std::vector<std::vector<double>>& rows) {
    Tensor out(Shape{m.components, m.dim});
    for (int k = 0; k < m.components; ++k)
      for (int d = 0; d < m.dim; ++d)
        out.at(k, d) = rows[static_cast<size_t>(k)][static_cast<size_t>(d)];
    return out;
  };
  GmmNodes g;
  g.weight_source = m.weight_source;
  g.means = t.leaf(flatten(m.means));
  g.log_stds = t.leaf(flatten(m.log_stds));
  g.logits = t.leaf(Tensor::vector(m.logits));
  g.head_w = t.leaf(Tensor(Shape{m.dim, m.components}, m.head_w));
  g.head_b = t.leaf(Tensor::vector(m.head_b));
  return g;
}

NodeId logits_node(Tape& t, const GmmNodes& g, NodeId z, int64_t batch) {
  int64_t k = t.value(g.weight_source == WeightSource::GlobalLogits ? g.logits : g.head_b).numel();
  if (g.weight_source == WeightSource::GlobalLogits)
    return t.broadcast(g.logits, {batch, k});
  NodeId lin = t.matmul(z, g.head_w);  // [B, K]
  return t.add(lin, t.broadcast(g.head_b, {batch, k}));
}

NodeId log_density_node(Tape& t, const GmmNodes& g, NodeId z) {
  const Tensor& zv = t.value(z);
  int64_t batch = zv.dim(0), dim = zv.dim(1);
  int64_t kc = t.value(g.means).dim(0);

  NodeId log_pi = t.log(t.softmax(logits_node(t, g, z, batch)));  // [B, K]

  std::vector<NodeId> comp_terms;  // each [B, 1]
  for (int k = 0; k < kc; ++k) {
    ComponentNodes c = component_nodes(t, g, k, batch);
    NodeId r = t.mul(t.sub(z, c.mean_b), c.inv_sd_b);
    NodeId quad = t.sum(t.mul(r, r), 1);  // [B]
    NodeId log_det = t.mul(c.sum_ls, t.constant(2.0));
    NodeId acc = t.add(quad, t.add(log_det, t.constant(static_cast<double>(dim) * kLog2Pi)));
    NodeId log_n = t.mul(acc, t.constant(-0.5));                     // [B]
    NodeId lp_k = t.broadcast(t.slice(log_pi, 1, k, 1), {batch});    // [B]
    comp_terms.push_back(t.broadcast(t.add(lp_k, log_n), Shape{batch, 1}));
  }
  NodeId a = t.concat(comp_terms, 1);  // [B, K]

  // log-sum-exp with a constant per-row shift; the shift drops out of both the
  // value and the gradient.
  const Tensor& av = t.value(a);
  Tensor shift(Shape{batch, 1});
  for (int64_t b = 0; b < batch; ++b) {
    double mx = av.at(b, 0);
    for (int64_t k = 1; k < kc; ++k) mx = std::max(mx, av.at(b, k));
    shift[b] = mx;
  }
  NodeId shift_b = t.broadcast(t.constant(shift), {batch, kc});
  NodeId se = t.sum(t.exp(t.sub(a, shift_b)), 1);  // [B]
  return t.add(t.broadcast(t.constant(std::move(shift)), Shape{batch}), t.log(se));
}

NodeId cdf_node(Tape& t, const GmmNodes& g, NodeId z) {
  const Tensor& zv = t.value(z);
  int64_t batch = zv.dim(0);
  int64_t kc = t.value(g.means).dim(0);
  int64_t dim = zv.dim(1);

  NodeId pi = t.softmax(logits_node(t, g, z, batch));  // [B, K]

  NodeId total = ad::NodeId{-1};
  for (int k = 0; k < kc; ++k) {
    ComponentNodes c = component_nodes(t, g, k, batch);
    NodeId phi = ad::normal_cdf_node(t, t.mul(t.sub(z, c.mean_b), c.inv_sd_b));  // [B, D]
    NodeId prod = t.slice(phi, 1, 0, 1);  // [B, 1]
    for (int64_t d = 1; d < dim; ++d) prod = t.mul(prod, t.slice(phi, 1, d, 1));
    NodeId weighted = t.mul(prod, t.slice(pi, 1, k, 1));  // [B, 1]
    total = k == 0 ? weighted : t.add(total, weighted);
  }
  return t.broadcast(total, Shape{batch});
}

NodeId gps_sample_node(Tape& t, const GmmNodes& g, int64_t batch, double temperature,
                       RngStream& rng) {
  if (!(temperature > 0)) throw DomainError("gps sample: temperature must be positive");
  int64_t kc = t.value(g.means).dim(0);
  int64_t dim = t.value(g.means).dim(1);

  Tensor gumbel_noise(Shape{batch, kc});
  for (int64_t i = 0; i < gumbel_noise.numel(); ++i) gumbel_noise[i] = rng.gumbel();

  // A sampled row has no embedding to feed a head, so the Head source falls
  // back to its bias logits here.
  NodeId base = g.weight_source == WeightSource::GlobalLogits ? g.logits : g.head_b;
  NodeId perturbed = t.add(t.broadcast(base, {batch, kc}), t.constant(std::move(gumbel_noise)));
  NodeId w = t.softmax(t.mul(perturbed, t.constant(1.0 / temperature)));  // [B, K]

  NodeId out = ad::NodeId{-1};
  for (int k = 0; k < kc; ++k) {
    ComponentNodes c = component_nodes(t, g, k, batch);
    Tensor eps(Shape{batch, dim});
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
    NodeId draw = t.add(c.mean_b, t.mul(c.sd_b, t.constant(std::move(eps))));  // [B, D]
    NodeId wk = t.broadcast(t.slice(w, 1, k, 1), {batch, dim});
    NodeId weighted = t.mul(wk, draw);
    out = k == 0 ? weighted : t.add(out, weighted);
  }
  return out;
}

}  // namespace cmcm::gmm
