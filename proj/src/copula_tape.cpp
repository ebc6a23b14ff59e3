#include <cmath>

#include "cmcm/copula.hpp"
#include "cmcm/scalar_stats.hpp"

namespace cmcm::copula {

namespace {

using ad::NodeId;
using ad::Tape;

NodeId softplus_node(Tape& t, NodeId x) {
  // mirror of the plain constrain path, raw clamped to [-30, 30]
  NodeId c = t.clamp(x, -30.0, 30.0);
  return t.log(t.add(t.constant(1.0), t.exp(c)));
}

NodeId clamp_unit_node(Tape& t, NodeId u) {
  return t.clamp(u, kUnitEps, 1.0 - kUnitEps);
}

NodeId gumbel_node(Tape& t, NodeId raw, std::span<const NodeId> us) {
  const size_t m = us.size();
  NodeId alpha = t.add(t.constant(1.0), softplus_node(t, raw));
  NodeId am1 = t.sub(alpha, t.constant(1.0));

  std::vector<NodeId> lu(m), lx(m);
  for (size_t i = 0; i < m; ++i) {
    lu[i] = t.log(clamp_unit_node(t, us[i]));
    lx[i] = t.log(t.neg(lu[i]));
  }
  NodeId sum_lu = lu[0], sum_lx = lx[0];
  for (size_t i = 1; i < m; ++i) {
    sum_lu = t.add(sum_lu, lu[i]);
    sum_lx = t.add(sum_lx, lx[i]);
  }
  NodeId s = t.exp(t.mul(alpha, lx[0]));
  for (size_t i = 1; i < m; ++i) s = t.add(s, t.exp(t.mul(alpha, lx[i])));
  NodeId ls = t.log(s);
  NodeId big_t = t.exp(t.div(ls, alpha));  // s^{1/alpha}

  NodeId out = t.sub(t.mul(am1, sum_lx), sum_lu);
  out = t.sub(out, big_t);
  if (m == 2) {
    NodeId coef = t.div(t.mul(t.constant(-2.0), am1), alpha);
    out = t.add(out, t.mul(coef, ls));
    out = t.add(out, t.log(t.add(t.constant(1.0), t.div(am1, big_t))));
  } else if (m == 3) {
    NodeId coef = t.sub(t.div(t.constant(1.0), alpha), t.constant(3.0));
    out = t.add(out, t.mul(coef, ls));
    NodeId poly = t.mul(big_t, big_t);
    poly = t.add(poly, t.mul(t.mul(t.constant(3.0), am1), big_t));
    poly = t.add(poly, t.mul(am1, t.sub(t.mul(t.constant(2.0), alpha), t.constant(1.0))));
    out = t.add(out, t.log(poly));
  } else {
    throw UnsupportedDim("Gumbel density closed form covers M in {2,3}");
  }
  return out;
}

NodeId clayton_node(Tape& t, NodeId raw, std::span<const NodeId> us) {
  NodeId alpha = t.add(softplus_node(t, raw), t.constant(1e-4));
  NodeId lu = t.log(clamp_unit_node(t, us[0]));
  NodeId lv = t.log(clamp_unit_node(t, us[1]));
  NodeId big_t = t.sub(t.add(t.exp(t.neg(t.mul(alpha, lu))), t.exp(t.neg(t.mul(alpha, lv)))),
                       t.constant(1.0));
  NodeId out = t.log(t.add(t.constant(1.0), alpha));
  out = t.sub(out, t.mul(t.add(t.constant(1.0), alpha), t.add(lu, lv)));
  NodeId coef = t.add(t.constant(2.0), t.div(t.constant(1.0), alpha));
  return t.sub(out, t.mul(coef, t.log(big_t)));
}

NodeId frank_node(Tape& t, NodeId raw, std::span<const NodeId> us) {
  // |alpha| floor applied as a constant shift so the gradient stays identity
  // and the parameter can escape the floor.
  double raw_value = t.value(raw)[0];
  NodeId alpha = t.add(raw, t.constant(detail::frank_floor(raw_value) - raw_value));
  NodeId u = clamp_unit_node(t, us[0]);
  NodeId v = clamp_unit_node(t, us[1]);
  NodeId one = t.constant(1.0);
  NodeId a = t.sub(t.exp(t.neg(t.mul(alpha, u))), one);
  NodeId b = t.sub(t.exp(t.neg(t.mul(alpha, v))), one);
  NodeId d = t.sub(t.exp(t.neg(alpha)), one);
  NodeId denom = t.add(d, t.mul(a, b));
  NodeId out = t.log(t.mul(t.neg(alpha), d));
  out = t.sub(out, t.mul(alpha, t.add(u, v)));
  return t.sub(out, t.log(t.mul(denom, denom)));
}

NodeId gaussian_node(Tape& t, int dim, NodeId raw, std::span<const NodeId> us) {
  const int m = dim;
  // Cholesky rows from tanh partial terms; every entry is a [1] node.
  std::vector<std::vector<NodeId>> L(static_cast<size_t>(m));
  NodeId one = t.constant(1.0);
  L[0] = {one};
  int64_t idx = 0;
  for (int i = 1; i < m; ++i) {
    L[static_cast<size_t>(i)].resize(static_cast<size_t>(i) + 1);
    NodeId rem = one;
    for (int j = 0; j < i; ++j) {
      NodeId z = t.tanh(t.slice(raw, 0, idx++, 1));
      NodeId lij = t.mul(z, t.pow(rem, 0.5));
      L[static_cast<size_t>(i)][static_cast<size_t>(j)] = lij;
      rem = t.sub(rem, t.mul(lij, lij));
    }
    L[static_cast<size_t>(i)][static_cast<size_t>(i)] = t.pow(rem, 0.5);
  }

  std::vector<NodeId> zeta(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i)
    zeta[static_cast<size_t>(i)] =
        ad::normal_quantile_node(t, clamp_unit_node(t, us[static_cast<size_t>(i)]));

  // forward substitution w = L^{-1} zeta
  std::vector<NodeId> w(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    NodeId acc = zeta[static_cast<size_t>(i)];
    for (int j = 0; j < i; ++j)
      acc = t.sub(acc, t.mul(L[static_cast<size_t>(i)][static_cast<size_t>(j)],
                             w[static_cast<size_t>(j)]));
    w[static_cast<size_t>(i)] = t.div(acc, L[static_cast<size_t>(i)][static_cast<size_t>(i)]);
  }

  NodeId quad = t.sub(t.mul(w[0], w[0]), t.mul(zeta[0], zeta[0]));
  for (int i = 1; i < m; ++i)
    quad = t.add(quad, t.sub(t.mul(w[static_cast<size_t>(i)], w[static_cast<size_t>(i)]),
                             t.mul(zeta[static_cast<size_t>(i)], zeta[static_cast<size_t>(i)])));
  NodeId out = t.mul(t.constant(-0.5), quad);
  for (int i = 1; i < m; ++i)
    out = t.sub(out, t.log(L[static_cast<size_t>(i)][static_cast<size_t>(i)]));
  return out;
}

}  // namespace

NodeId log_density_node(Tape& t, Family f, int dim, NodeId raw,
                        std::span<const NodeId> us) {
  if (static_cast<int>(us.size()) != dim)
    throw UnsupportedDim("log_density_node: margin count does not match dim");
  if (t.value(raw).numel() != static_cast<int64_t>(param_arity(f, dim)))
    throw ArityMismatch("log_density_node: raw parameter node has wrong arity");

  switch (f) {
    case Family::Independence: {
      Tensor zeros(t.value(us[0]).shape());
      return t.constant(std::move(zeros));
    }
    case Family::Gumbel:
      return gumbel_node(t, raw, us);
    case Family::Clayton:
      if (dim != 2) throw UnsupportedDim("Clayton density is bivariate");
      return clayton_node(t, raw, us);
    case Family::Frank:
      if (dim != 2) throw UnsupportedDim("Frank density is bivariate");
      return frank_node(t, raw, us);
    case Family::Gaussian:
      return gaussian_node(t, dim, raw, us);
    case Family::StudentT:
      throw UnsupportedFamily(
          "Student t has no tape path (its quantile is not expressible with tape ops); "
          "it is available for evaluation via copula_log_density/_grad");
  }
  throw UnsupportedFamily("unreachable");
}

}  // namespace cmcm::copula
