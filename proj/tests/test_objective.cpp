#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmcm/objective.hpp"
#include "cmcm/rng.hpp"
#include "cmcm/scalar_stats.hpp"
#include "oracles.hpp"

using namespace cmcm;
using namespace cmcm::objective;

namespace {

gmm::GmmMarginal random_marginal(int k, int dim, uint64_t seed) {
  gmm::GmmMarginal m = gmm::GmmMarginal::make(k, dim);
  RngStream rng(seed);
  for (int c = 0; c < k; ++c)
    for (int d = 0; d < dim; ++d) {
      m.means[static_cast<size_t>(c)][static_cast<size_t>(d)] = rng.uniform(-1, 1);
      m.log_stds[static_cast<size_t>(c)][static_cast<size_t>(d)] = rng.uniform(-0.4, 0.3);
    }
  return m;
}

std::vector<std::vector<std::vector<double>>> random_rows(int modalities, int rows, int dim,
                                                          uint64_t seed) {
  RngStream rng(seed);
  std::vector<std::vector<std::vector<double>>> z(static_cast<size_t>(modalities));
  for (auto& mod : z) {
    mod.resize(static_cast<size_t>(rows));
    for (auto& r : mod) {
      r.resize(static_cast<size_t>(dim));
      for (auto& v : r) v = rng.uniform(-1.5, 1.5);
    }
  }
  return z;
}

}  // namespace

TEST_CASE("bce examples") {
  CHECK(bce_loss({0.5, 0.5, 0.5}, {1, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss({1.0 - 1e-9, 1e-9}, {1, 0}) == doctest::Approx(0.0).epsilon(1e-5));
  double want = (-std::log(0.9) - std::log(0.8)) / 2.0;
  CHECK(bce_loss({0.9, 0.2}, {1, 0}) == doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(bce_loss({0.5}, {1, 0}), LengthMismatch);

  ad::Tape t;
  ad::NodeId yhat = t.leaf(Tensor::vector({0.9, 0.2}));
  ad::NodeId node = bce_node(t, yhat, {1, 0});
  CHECK(t.value(node)[0] == doctest::Approx(want).epsilon(1e-12));
  t.backward(node);
  // d/dp mean(-[y log p + (1-y) log(1-p)]) = (-y/p + (1-y)/(1-p)) / n
  CHECK(t.adjoint(yhat)[0] == doctest::Approx(-1.0 / 0.9 / 2.0).epsilon(1e-10));
  CHECK(t.adjoint(yhat)[1] == doctest::Approx(1.0 / 0.8 / 2.0).epsilon(1e-10));
}

TEST_CASE("copula alignment reduces to the marginal term under independence") {
  ObjectiveConfig cfg;
  cfg.family = copula::Family::Independence;
  auto z = random_rows(2, 4, 3, 5);
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(2, 3, 6), random_marginal(2, 3, 7)};
  auto cop = copula::CopulaModel::make(copula::Family::Independence, 2);

  double term = copula_alignment_term(cfg, z, gmms, cop);
  double want = 0;
  for (int m = 0; m < 2; ++m) {
    auto pi = gmm::mixture_weights(gmms[static_cast<size_t>(m)], {});
    for (int r = 0; r < 4; ++r)
      want -= gmm::gmm_log_density(z[static_cast<size_t>(m)][static_cast<size_t>(r)],
                                   gmms[static_cast<size_t>(m)], pi);
  }
  CHECK(term == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("single row, K=1, Gaussian rho=0 matches the scalar oracle") {
  ObjectiveConfig cfg;
  cfg.family = copula::Family::Gaussian;
  auto z = random_rows(2, 1, 2, 8);
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(1, 2, 9), random_marginal(1, 2, 10)};
  auto cop = copula::CopulaModel::make(copula::Family::Gaussian, 2);  // raw 0 -> rho 0

  double term = copula_alignment_term(cfg, z, gmms, cop);
  double want = 0;
  for (int m = 0; m < 2; ++m) {
    DiagGaussian g(gmms[static_cast<size_t>(m)].means[0], gmms[static_cast<size_t>(m)].log_stds[0]);
    want -= mvn_log_density(z[static_cast<size_t>(m)][0], g);
  }
  CHECK(term == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("alignment term is permutation equivariant over rows") {
  ObjectiveConfig cfg;
  cfg.family = copula::Family::Gumbel;
  auto z = random_rows(2, 5, 2, 11);
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(2, 2, 12), random_marginal(2, 2, 13)};
  auto cop = copula::CopulaModel::from_constrained(copula::Family::Gumbel, 2, {1.7});

  double before = copula_alignment_term(cfg, z, gmms, cop);
  for (auto& mod : z) std::swap(mod[0], mod[3]);
  CHECK(copula_alignment_term(cfg, z, gmms, cop) == doctest::Approx(before).epsilon(1e-11));
}

TEST_CASE("alignment gradient w.r.t. the copula raw parameter") {
  ObjectiveConfig cfg;
  cfg.family = copula::Family::Gumbel;
  auto z = random_rows(2, 3, 2, 14);
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(2, 2, 15), random_marginal(2, 2, 16)};

  auto term_at = [&](double raw, double* grad) {
    ad::Tape t;
    ad::NodeId raw_node = t.leaf(Tensor::vector({raw}));
    std::vector<ad::NodeId> embeddings;
    std::vector<gmm::GmmNodes> gnodes;
    for (int m = 0; m < 2; ++m) {
      Tensor zm(Shape{3, 2});
      for (int64_t r = 0; r < 3; ++r)
        for (int64_t d = 0; d < 2; ++d)
          zm.at(r, d) = z[static_cast<size_t>(m)][static_cast<size_t>(r)][static_cast<size_t>(d)];
      embeddings.push_back(t.constant(std::move(zm)));
      gnodes.push_back(gmm::bind_marginal(t, gmms[static_cast<size_t>(m)]));
    }
    ad::NodeId term = copula_alignment_node(t, cfg, embeddings, gnodes, raw_node);
    if (grad) {
      t.backward(term);
      *grad = t.adjoint(raw_node)[0];
    }
    return t.value(term)[0];
  };

  double analytic = 0;
  term_at(0.4, &analytic);
  double h = 1e-5;
  double numeric = (term_at(0.4 + h, nullptr) - term_at(0.4 - h, nullptr)) / (2 * h);
  CHECK(oracles::rel_err(analytic, numeric) < 1e-3);
}

TEST_CASE("loss composition follows the printed objective") {
  auto z = random_rows(2, 2, 2, 17);
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(1, 2, 18), random_marginal(1, 2, 19)};
  std::vector<double> labels{1, 0};

  auto loss_with = [&](double lambda, AlignmentKind kind, bool joint_nll) {
    ObjectiveConfig cfg;
    cfg.lambda_cop = lambda;
    cfg.alignment = kind;
    cfg.family = copula::Family::Gumbel;
    cfg.joint_nll = joint_nll;
    ad::Tape t;
    ad::NodeId raw = t.leaf(Tensor::vector({0.3}));
    model::ForwardNodes fwd;
    std::vector<gmm::GmmNodes> gnodes;
    for (int m = 0; m < 2; ++m) {
      Tensor zm(Shape{2, 2});
      for (int64_t r = 0; r < 2; ++r)
        for (int64_t d = 0; d < 2; ++d)
          zm.at(r, d) = z[static_cast<size_t>(m)][static_cast<size_t>(r)][static_cast<size_t>(d)];
      fwd.embeddings.push_back(t.constant(std::move(zm)));
      gnodes.push_back(gmm::bind_marginal(t, gmms[static_cast<size_t>(m)]));
    }
    fwd.yhat = t.constant(Tensor::vector({0.7, 0.4}));
    return t.value(loss_node(t, cfg, fwd, labels, gnodes, raw))[0];
  };

  double bce = bce_loss({0.7, 0.4}, labels);
  double at0 = loss_with(0.0, AlignmentKind::Copula, false);
  CHECK(at0 == doctest::Approx(bce).epsilon(1e-12));
  CHECK(loss_with(0.0, AlignmentKind::None, false) == doctest::Approx(bce).epsilon(1e-12));

  // doubling lambda doubles the regularizer part
  double l1 = loss_with(2e-3, AlignmentKind::Copula, false);
  double l2 = loss_with(4e-3, AlignmentKind::Copula, false);
  CHECK(l2 - bce == doctest::Approx(2.0 * (l1 - bce)).epsilon(1e-9));

  // printed sign vs joint likelihood variant differ by 2 lambda sum(log f)
  double printed = loss_with(1e-3, AlignmentKind::Copula, false);
  double joint = loss_with(1e-3, AlignmentKind::Copula, true);
  ObjectiveConfig icfg;
  icfg.family = copula::Family::Independence;
  double sum_logf = -copula_alignment_term(icfg, z, gmms,
                                           copula::CopulaModel::make(copula::Family::Independence, 2));
  CHECK(printed - joint == doctest::Approx(2e-3 * sum_logf).epsilon(1e-9));
}

TEST_CASE("one-row loss assembles the two derived pieces") {
  // lambda = 1: loss = bce - (log c + (-sum log f)) with rho = 0 making log c = 0
  auto z = random_rows(2, 1, 2, 20);
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(1, 2, 21), random_marginal(1, 2, 22)};
  ObjectiveConfig cfg;
  cfg.lambda_cop = 1.0;
  cfg.family = copula::Family::Gaussian;

  ad::Tape t;
  ad::NodeId raw = t.leaf(Tensor::vector({0.0}));
  model::ForwardNodes fwd;
  std::vector<gmm::GmmNodes> gnodes;
  for (int m = 0; m < 2; ++m) {
    Tensor zm = Tensor::matrix(1, 2, z[static_cast<size_t>(m)][0]);
    fwd.embeddings.push_back(t.constant(std::move(zm)));
    gnodes.push_back(gmm::bind_marginal(t, gmms[static_cast<size_t>(m)]));
  }
  fwd.yhat = t.constant(Tensor::vector({0.6}));
  double loss = t.value(loss_node(t, cfg, fwd, {1.0}, gnodes, raw))[0];

  double logf = 0;
  for (int m = 0; m < 2; ++m) {
    DiagGaussian g(gmms[static_cast<size_t>(m)].means[0], gmms[static_cast<size_t>(m)].log_stds[0]);
    logf += mvn_log_density(z[static_cast<size_t>(m)][0], g);
  }
  CHECK(loss == doctest::Approx(bce_loss({0.6}, {1.0}) + logf).epsilon(1e-9));
}

TEST_CASE("baseline alignments") {
  // identical embeddings: cosine loss 0, kl loss 0
  std::vector<std::vector<std::vector<double>>> same = {
      {{0.5, 0.2}, {-0.3, 0.8}}, {{0.5, 0.2}, {-0.3, 0.8}}};
  CHECK(baseline_alignment_loss(AlignmentKind::Cosine, same) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(baseline_alignment_loss(AlignmentKind::Kl, same) == doctest::Approx(0.0).epsilon(1e-9));

  // orthogonal rows: cosine loss 1
  std::vector<std::vector<std::vector<double>>> ortho = {
      {{1.0, 0.0}, {0.0, 1.0}}, {{0.0, 1.0}, {1.0, 0.0}}};
  CHECK(baseline_alignment_loss(AlignmentKind::Cosine, ortho) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::vector<std::vector<double>>> zero = {{{0.0, 0.0}}, {{1.0, 0.0}}};
  CHECK_THROWS_AS(baseline_alignment_loss(AlignmentKind::Cosine, zero), ZeroVector);

  // kl baseline gradient sanity
  auto z = random_rows(2, 6, 3, 23);
  auto value_of = [&](const std::vector<std::vector<std::vector<double>>>& rows,
                      std::vector<double>* grad) {
    ad::Tape t;
    std::vector<ad::NodeId> embeddings;
    for (const auto& mod : rows) {
      Tensor zm(Shape{6, 3});
      for (int64_t r = 0; r < 6; ++r)
        for (int64_t d = 0; d < 3; ++d)
          zm.at(r, d) = mod[static_cast<size_t>(r)][static_cast<size_t>(d)];
      embeddings.push_back(t.leaf(std::move(zm)));
    }
    ad::NodeId node = baseline_alignment_node(t, AlignmentKind::Kl, embeddings);
    if (grad) {
      t.backward(node);
      grad->assign(t.adjoint(embeddings[0]).vec().begin(), t.adjoint(embeddings[0]).vec().end());
    }
    return t.value(node)[0];
  };
  std::vector<double> analytic;
  value_of(z, &analytic);
  std::vector<double> packed;
  for (const auto& r : z[0]) packed.insert(packed.end(), r.begin(), r.end());
  auto fn = [&](const std::vector<double>& q) {
    auto rows = z;
    size_t off = 0;
    for (auto& r : rows[0])
      for (auto& v : r) v = q[off++];
    return value_of(rows, nullptr);
  };
  auto numeric = oracles::central_diff(fn, packed, 1e-5);
  CHECK(oracles::max_rel_err(analytic, numeric) < 1e-4);
}

TEST_CASE("alignment term stays finite on extreme embeddings") {
  ObjectiveConfig cfg;
  cfg.family = copula::Family::Gumbel;
  std::vector<std::vector<std::vector<double>>> z = {
      {{50.0, -50.0}, {1e3, 1e3}}, {{-40.0, 40.0}, {-1e3, 1e3}}};
  std::vector<gmm::GmmMarginal> gmms = {random_marginal(2, 2, 30), random_marginal(2, 2, 31)};
  auto cop = copula::CopulaModel::from_constrained(copula::Family::Gumbel, 2, {2.0});
  double term = copula_alignment_term(cfg, z, gmms, cop);
  CHECK(std::isfinite(term));
}
