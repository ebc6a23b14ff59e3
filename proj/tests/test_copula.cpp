#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cmcm/copula.hpp"
#include "cmcm/rng.hpp"
#include "cmcm/scalar_stats.hpp"
#include "cmcm/special.hpp"
#include "oracles.hpp"

using namespace cmcm;
using namespace cmcm::copula;

namespace {

CopulaModel model_of(Family f, std::vector<double> constrained, int dim = 2) {
  return CopulaModel::from_constrained(f, dim, constrained);
}

double cdf2(const CopulaModel& m, double u, double v) { return copula_cdf(m, {u, v}); }

double mixed_difference(const CopulaModel& m, double u, double v, double h) {
  return (cdf2(m, u + h, v + h) - cdf2(m, u + h, v - h) - cdf2(m, u - h, v + h) +
          cdf2(m, u - h, v - h)) /
         (4.0 * h * h);
}

struct FamilyCase {
  Family family;
  std::vector<std::vector<double>> params;  // three settings each
};

const std::vector<FamilyCase>& family_cases() {
  static const std::vector<FamilyCase> cases = {
      {Family::Gumbel, {{1.2}, {1.5}, {2.0}}},
      {Family::Clayton, {{0.5}, {1.0}, {2.0}}},
      {Family::Frank, {{-4.0}, {1.0}, {4.0}}},
      {Family::Gaussian, {{-0.5}, {0.2}, {0.6}}},
      {Family::StudentT, {{0.3, 4.0}, {-0.4, 6.0}, {0.0, 3.0}}},
  };
  return cases;
}

std::vector<double> random_constrained(Family f, RngStream& rng) {
  switch (f) {
    case Family::Gumbel: return {rng.uniform(1.05, 6.0)};
    case Family::Clayton: return {rng.uniform(0.1, 6.0)};
    case Family::Frank: {
      double a = rng.uniform(0.2, 9.0);
      return {rng.uniform(0, 1) < 0.5 ? -a : a};
    }
    case Family::Gaussian: return {rng.uniform(-0.9, 0.9)};
    case Family::StudentT: return {rng.uniform(-0.85, 0.85), rng.uniform(2.5, 12.0)};
    case Family::Independence: return {};
  }
  return {};
}

}  // namespace

TEST_CASE("constrain_params documented values") {
  CopulaModel g = CopulaModel::make(Family::Gumbel, 2);
  CHECK(constrain_params(g).alpha == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-12));

  CopulaModel n = CopulaModel::make(Family::Gaussian, 2);
  CHECK(constrain_params(n).rho == doctest::Approx(0.0));

  CopulaModel c = CopulaModel::make(Family::Clayton, 2);
  c.raw_params[0] = 5.0;
  CHECK(constrain_params(c).alpha ==
        doctest::Approx(std::log1p(std::exp(5.0)) + 1e-4).epsilon(1e-12));

  CopulaModel bad = CopulaModel::make(Family::Gaussian, 3);
  bad.raw_params.pop_back();
  CHECK_THROWS_AS(constrain_params(bad), ArityMismatch);
}

TEST_CASE("from_constrained round trips") {
  RngStream rng(3);
  for (const auto& fc : family_cases())
    for (const auto& p : fc.params) {
      CopulaModel m = model_of(fc.family, p);
      ConstrainedParams c = constrain_params(m);
      if (fc.family == Family::Gaussian) {
        CHECK(c.rho == doctest::Approx(p[0]).epsilon(1e-9));
      } else if (fc.family == Family::StudentT) {
        CHECK(c.rho == doctest::Approx(p[0]).epsilon(1e-9));
        CHECK(c.nu == doctest::Approx(p[1]).epsilon(1e-9));
      } else {
        CHECK(c.alpha == doctest::Approx(p[0]).epsilon(1e-9));
      }
    }
  // three margins: random correlation matrix from partial terms round-trips
  CopulaModel m3 = CopulaModel::make(Family::Gaussian, 3);
  for (auto& r : m3.raw_params) r = rng.uniform(-1.0, 1.0);
  ConstrainedParams c3 = constrain_params(m3);
  std::vector<double> rho_lower = {c3.chol[3 * 1 + 0] * c3.chol[0],
                                   c3.chol[3 * 2 + 0] * c3.chol[0],
                                   c3.chol[3 * 2 + 0] * c3.chol[3 * 1 + 0] +
                                       c3.chol[3 * 2 + 1] * c3.chol[3 * 1 + 1]};
  CopulaModel back = CopulaModel::from_constrained(Family::Gaussian, 3, rho_lower);
  for (size_t i = 0; i < 3; ++i)
    CHECK(back.raw_params[i] == doctest::Approx(m3.raw_params[i]).epsilon(1e-7));
}

TEST_CASE("cdf closed-form examples") {
  CHECK(cdf2(model_of(Family::Gumbel, {1.0}), 0.5, 0.5) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(cdf2(model_of(Family::Gumbel, {2.0}), 0.5, 0.5) ==
        doctest::Approx(std::exp2(-std::sqrt(2.0))).epsilon(1e-12));
  CHECK(cdf2(model_of(Family::Gumbel, {2.0}), 0.5, 0.5) == doctest::Approx(0.3752).epsilon(1e-3));
  CHECK(cdf2(model_of(Family::Clayton, {1.0}), 0.5, 0.5) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("elliptical cdfs agree with the quadrant identity at the median") {
  // C(1/2, 1/2) = 1/4 + asin(rho)/(2 pi) for both elliptical families
  for (double rho : {-0.7, -0.2, 0.3, 0.8}) {
    double want = 0.25 + std::asin(rho) / (2.0 * M_PI);
    CHECK(cdf2(model_of(Family::Gaussian, {rho}), 0.5, 0.5) ==
          doctest::Approx(want).epsilon(1e-10));
    CHECK(cdf2(model_of(Family::StudentT, {rho, 5.0}), 0.5, 0.5) ==
          doctest::Approx(want).epsilon(1e-8));
  }
}

TEST_CASE("trivariate Gaussian cdf matches the orthant identity") {
  // P(Z1<=0, Z2<=0, Z3<=0) = 1/8 + (asin r12 + asin r13 + asin r23)/(4 pi)
  std::vector<double> rho = {0.5, 0.2, -0.3};  // r21, r31, r32
  CopulaModel m3 = CopulaModel::from_constrained(Family::Gaussian, 3, rho);
  double want = 0.125 +
                (std::asin(rho[0]) + std::asin(rho[1]) + std::asin(rho[2])) / (4.0 * M_PI);
  double got = copula_cdf(m3, {0.5, 0.5, 0.5});
  CHECK(std::fabs(got - want) < 2e-3);  // quasi-Monte Carlo path
}

TEST_CASE("margin conditions across families") {
  RngStream rng(17);
  for (const auto& fc : family_cases()) {
    for (int draw = 0; draw < 20; ++draw) {
      CopulaModel m = model_of(fc.family, random_constrained(fc.family, rng));
      for (int i = 0; i < 50; ++i) {
        double u = (i + 0.5) / 50.0;
        CHECK(std::fabs(cdf2(m, u, 1.0 - kUnitEps) - u) < 1e-5);
        CHECK(std::fabs(cdf2(m, 1.0 - kUnitEps, u) - u) < 1e-5);
        CHECK(std::fabs(cdf2(m, kUnitEps, u)) < 1e-5);
        CHECK(std::fabs(cdf2(m, u, kUnitEps)) < 1e-5);
      }
    }
  }
}

TEST_CASE("two-increasing on random rectangles") {
  RngStream rng(29);
  for (const auto& fc : family_cases()) {
    CopulaModel m = model_of(fc.family, fc.params[2]);
    for (int rep = 0; rep < 1000; ++rep) {
      double u1 = rng.uniform(0.001, 0.999), u2 = rng.uniform(0.001, 0.999);
      double v1 = rng.uniform(0.001, 0.999), v2 = rng.uniform(0.001, 0.999);
      if (u1 > u2) std::swap(u1, u2);
      if (v1 > v2) std::swap(v1, v2);
      double mass = cdf2(m, u2, v2) - cdf2(m, u2, v1) - cdf2(m, u1, v2) + cdf2(m, u1, v1);
      CHECK(mass >= -1e-10);
    }
  }
}

TEST_CASE("density equals the mixed difference of the cdf") {
  for (const auto& fc : family_cases()) {
    CopulaModel m = model_of(fc.family, fc.params[1]);
    double h = 5e-4;
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        double u = 0.05 + 0.9 * i / 19.0;
        double v = 0.05 + 0.9 * j / 19.0;
        double density = std::exp(copula_log_density(m, {u, v}));
        double numeric = mixed_difference(m, u, v, h);
        INFO(to_string(fc.family) << " at (" << u << "," << v << ")");
        CHECK(oracles::rel_err(density, numeric) < 1e-3);
      }
  }
}

TEST_CASE("documented density spot values") {
  CHECK(copula_log_density(model_of(Family::Gaussian, {0.0}), {0.31, 0.77}) ==
        doctest::Approx(0.0).epsilon(1e-9));

  double lc = copula_log_density(model_of(Family::Gumbel, {2.0}), {0.5, 0.5});
  CHECK(std::exp(lc) == doctest::Approx(1.51602).epsilon(5e-4));
  CHECK(oracles::rel_err(std::exp(lc),
                         mixed_difference(model_of(Family::Gumbel, {2.0}), 0.5, 0.5, 1e-5)) <
        1e-3);

  CHECK(std::fabs(copula_log_density(model_of(Family::Frank, {1e-3}), {0.3, 0.7})) < 1e-3);

  CHECK(copula_log_density(CopulaModel::make(Family::Independence, 2), {0.2, 0.9}) == 0.0);
}

TEST_CASE("density normalizes over the unit square") {
  // composite panels resolve the boundary layers
  special::Quadrature inner = special::gauss_legendre(40, 0.01, 0.99);
  special::Quadrature left = special::gauss_legendre(40, kUnitEps, 0.01);
  special::Quadrature right = special::gauss_legendre(40, 0.99, 1.0 - kUnitEps);
  std::vector<double> nodes, weights;
  for (const auto* q : {&left, &inner, &right}) {
    nodes.insert(nodes.end(), q->nodes.begin(), q->nodes.end());
    weights.insert(weights.end(), q->weights.begin(), q->weights.end());
  }
  for (const auto& fc : family_cases())
    for (const auto& p : fc.params) {
      CopulaModel m = model_of(fc.family, p);
      double acc = 0;
      for (size_t i = 0; i < nodes.size(); ++i)
        for (size_t j = 0; j < nodes.size(); ++j)
          acc += weights[i] * weights[j] * std::exp(copula_log_density(m, {nodes[i], nodes[j]}));
      INFO(to_string(fc.family) << " param " << p[0]);
      CHECK(acc > 0.99);
      CHECK(acc < 1.01);
    }
}

TEST_CASE("independence limits") {
  std::vector<CopulaModel> near = {
      model_of(Family::Gumbel, {1.001}),
      model_of(Family::Clayton, {1e-3}),
      model_of(Family::Frank, {1e-3}),
      model_of(Family::Gaussian, {1e-3}),
  };
  for (const auto& m : near) {
    double worst = 0;
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        double u = 0.05 + 0.9 * i / 19.0;
        double v = 0.05 + 0.9 * j / 19.0;
        worst = std::max(worst, std::fabs(std::exp(copula_log_density(m, {u, v})) - 1.0));
      }
    CHECK(worst < 1e-2);
  }
}

TEST_CASE("archimedean generators") {
  for (Family f : {Family::Gumbel, Family::Clayton, Family::Frank}) {
    double alpha = f == Family::Gumbel ? 2.0 : 1.7;
    CHECK(archimedean_generator(f, alpha, 1.0).value == doctest::Approx(0.0).epsilon(1e-12));
    // strictly decreasing, slopes rising toward zero (convexity)
    double prev = archimedean_generator(f, alpha, 0.05).value;
    double prev_slope = 0;
    bool first = true;
    for (double t = 0.1; t <= 0.95; t += 0.05) {
      double cur = archimedean_generator(f, alpha, t).value;
      CHECK(cur < prev);
      double slope = cur - prev;
      if (!first) CHECK(slope >= prev_slope - 1e-12);
      prev_slope = slope;
      prev = cur;
      first = false;
    }
    for (double t : {0.07, 0.37, 0.81}) {
      auto gen = archimedean_generator(f, alpha, t);
      auto inv = archimedean_generator_inverse(f, alpha, gen.value);
      CHECK(inv.value == doctest::Approx(t).epsilon(1e-10));
      CHECK(inv.deriv * gen.deriv == doctest::Approx(1.0).epsilon(1e-8));
      double h = 1e-6;
      double numeric = (archimedean_generator(f, alpha, t + h).value -
                        archimedean_generator(f, alpha, t - h).value) /
                       (2 * h);
      CHECK(gen.deriv == doctest::Approx(numeric).epsilon(1e-6));
    }
  }
  CHECK(archimedean_generator(Family::Gumbel, 2.0, std::exp(-1.0)).value ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(archimedean_generator(Family::Gumbel, 2.0, 0.0), DomainError);
  CHECK_THROWS_AS(archimedean_generator_inverse(Family::Gumbel, 2.0, -1.0), DomainError);
}

TEST_CASE("generator identity reproduces the closed-form Gumbel density") {
  RngStream rng(41);
  for (int rep = 0; rep < 50; ++rep) {
    double alpha = rng.uniform(1.05, 5.0);
    double u = rng.uniform(0.02, 0.98), v = rng.uniform(0.02, 0.98);
    double via_gen = gumbel_density_via_generator(alpha, u, v);
    double closed = std::exp(copula_log_density(model_of(Family::Gumbel, {alpha}), {u, v}));
    CHECK(oracles::rel_err(via_gen, closed) < 1e-8);
  }
}

TEST_CASE("trivariate Gumbel density") {
  CHECK(trivariate_gumbel_log_density(1.0, 0.3, 0.6, 0.8) == doctest::Approx(0.0).epsilon(1e-9));

  double a = trivariate_gumbel_log_density(2.0, 0.2, 0.5, 0.7);
  CHECK(a == doctest::Approx(trivariate_gumbel_log_density(2.0, 0.7, 0.2, 0.5)).epsilon(1e-12));
  CHECK(a == doctest::Approx(trivariate_gumbel_log_density(2.0, 0.5, 0.7, 0.2)).epsilon(1e-12));

  // third mixed difference of the closed-form trivariate cdf, step 1e-3
  auto cdf3 = [](double alpha, double u, double v, double w) {
    return copula_cdf(model_of(Family::Gumbel, {alpha}, 3), {u, v, w});
  };
  RngStream rng(53);
  for (double alpha : {1.5, 2.0, 3.0}) {
    for (int rep = 0; rep < 40; ++rep) {
      double u = rng.uniform(0.1, 0.9), v = rng.uniform(0.1, 0.9), w = rng.uniform(0.1, 0.9);
      double h = 1e-3;
      double acc = 0;
      for (int su : {-1, 1})
        for (int sv : {-1, 1})
          for (int sw : {-1, 1})
            acc += su * sv * sw * cdf3(alpha, u + su * h, v + sv * h, w + sw * h);
      double numeric = acc / (8.0 * h * h * h);
      double closed = std::exp(trivariate_gumbel_log_density(alpha, u, v, w));
      INFO("alpha=" << alpha << " at (" << u << "," << v << "," << w << ")");
      CHECK(oracles::rel_err(closed, numeric) < 1e-3);
    }
  }

  // integrates to roughly one over the cube
  special::Quadrature q = special::gauss_legendre(48, kUnitEps, 1.0 - kUnitEps);
  double acc = 0;
  for (size_t i = 0; i < q.nodes.size(); ++i)
    for (size_t j = 0; j < q.nodes.size(); ++j)
      for (size_t k = 0; k < q.nodes.size(); ++k)
        acc += q.weights[i] * q.weights[j] * q.weights[k] *
               std::exp(trivariate_gumbel_log_density(1.8, q.nodes[i], q.nodes[j], q.nodes[k]));
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("matrix-form Gaussian copula density") {
  std::vector<double> eye = {1, 0, 0, 1};
  CHECK(gaussian_copula_log_density_m(eye, {0.3, 0.8}) == doctest::Approx(0.0).epsilon(1e-12));

  // bivariate closed form with the 1/sqrt(1-rho^2) normalizer
  double rho = 0.6;
  std::vector<double> chol2 = {1, 0, rho, std::sqrt(1 - rho * rho)};
  for (double u : {0.2, 0.5, 0.85})
    for (double v : {0.15, 0.5, 0.9}) {
      double av = std_normal_quantile(u), bv = std_normal_quantile(v);
      double want = -0.5 * std::log(1 - rho * rho) -
                    (rho * rho * (av * av + bv * bv) - 2 * rho * av * bv) /
                        (2 * (1 - rho * rho));
      CHECK(gaussian_copula_log_density_m(chol2, {u, v}) == doctest::Approx(want).epsilon(1e-10));
    }

  // Sklar route: copula density x standard normal marginals == trivariate
  // normal density from an explicit inverse
  CopulaModel m3 = CopulaModel::make(Family::Gaussian, 3);
  m3.raw_params = {0.4, -0.3, 0.6};
  ConstrainedParams cp = constrain_params(m3);
  auto L = [&](int i, int j) { return cp.chol[static_cast<size_t>(3 * i + j)]; };
  double sig[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      sig[i][j] = 0;
      for (int k = 0; k < 3; ++k) sig[i][j] += L(i, k) * L(j, k);
    }
  double det = sig[0][0] * (sig[1][1] * sig[2][2] - sig[1][2] * sig[2][1]) -
               sig[0][1] * (sig[1][0] * sig[2][2] - sig[1][2] * sig[2][0]) +
               sig[0][2] * (sig[1][0] * sig[2][1] - sig[1][1] * sig[2][0]);
  double inv[3][3];
  inv[0][0] = (sig[1][1] * sig[2][2] - sig[1][2] * sig[2][1]) / det;
  inv[0][1] = (sig[0][2] * sig[2][1] - sig[0][1] * sig[2][2]) / det;
  inv[0][2] = (sig[0][1] * sig[1][2] - sig[0][2] * sig[1][1]) / det;
  inv[1][0] = inv[0][1];
  inv[1][1] = (sig[0][0] * sig[2][2] - sig[0][2] * sig[2][0]) / det;
  inv[1][2] = (sig[0][2] * sig[1][0] - sig[0][0] * sig[1][2]) / det;
  inv[2][0] = inv[0][2];
  inv[2][1] = inv[1][2];
  inv[2][2] = (sig[0][0] * sig[1][1] - sig[0][1] * sig[1][0]) / det;

  RngStream rng(67);
  for (int rep = 0; rep < 30; ++rep) {
    double z[3];
    std::vector<double> u(3);
    for (int i = 0; i < 3; ++i) {
      z[i] = rng.uniform(-2, 2);
      u[static_cast<size_t>(i)] = std_normal_cdf(z[i]);
    }
    double quad = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) quad += z[i] * inv[i][j] * z[j];
    double dense = -0.5 * (3 * std::log(2 * M_PI) + std::log(det) + quad);
    double marginals = 0;
    for (int i = 0; i < 3; ++i) marginals += std::log(std_normal_pdf(z[i]));
    double sklar = gaussian_copula_log_density_m(cp.chol, u) + marginals;
    CHECK(oracles::rel_err(std::exp(sklar), std::exp(dense)) < 1e-8);
  }

  std::vector<double> not_corr = {2, 0, 0, 2};
  CHECK_THROWS_AS(gaussian_copula_log_density_m(not_corr, {0.5, 0.5}), NotPositiveDefinite);
}

TEST_CASE("dependence measures") {
  CHECK(dependence_measure(model_of(Family::Gumbel, {2.0})) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(dependence_measure(model_of(Family::Gumbel, {1.0})) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(dependence_measure(model_of(Family::Gaussian, {0.8})) ==
        doctest::Approx(2.0 / M_PI * std::asin(0.8)).epsilon(1e-12));
  CHECK(dependence_measure(model_of(Family::Clayton, {2.0})) == doctest::Approx(0.5).epsilon(1e-9));
  double t4 = dependence_measure(model_of(Family::Frank, {4.0}));
  CHECK(dependence_measure(model_of(Family::Frank, {-4.0})) == doctest::Approx(-t4).epsilon(1e-12));
  CHECK(t4 == doctest::Approx(0.3889).epsilon(1e-3));
  CHECK(dependence_measure(CopulaModel::make(Family::Independence, 2)) == 0.0);
}

TEST_CASE("sampling: uniform margins and concordance match") {
  const int64_t n = 100000;
  const double ks_bound = 1.63 / std::sqrt(static_cast<double>(n));

  auto check_samples = [&](const CopulaModel& m, double want_tau, double tau_tol) {
    auto rows = sample_copula(m, n, 99);
    std::vector<double> u(static_cast<size_t>(n)), v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      u[static_cast<size_t>(i)] = rows[static_cast<size_t>(i)][0];
      v[static_cast<size_t>(i)] = rows[static_cast<size_t>(i)][1];
    }
    CHECK(oracles::ks_uniform(u) < ks_bound);
    CHECK(oracles::ks_uniform(v) < ks_bound);
    CHECK(std::fabs(oracles::kendall_tau_fast(u, v) - want_tau) < tau_tol);
  };

  check_samples(CopulaModel::make(Family::Independence, 2), 0.0, 0.01);
  check_samples(model_of(Family::Gaussian, {0.8}), 2.0 / M_PI * std::asin(0.8), 0.02);
  check_samples(model_of(Family::Gumbel, {2.0}), 0.5, 0.02);
  check_samples(model_of(Family::Clayton, {2.0}), 0.5, 0.02);
  check_samples(model_of(Family::Frank, {4.0}),
                dependence_measure(model_of(Family::Frank, {4.0})), 0.02);

  auto a = sample_copula(model_of(Family::Gumbel, {2.0}), 100, 7);
  auto b = sample_copula(model_of(Family::Gumbel, {2.0}), 100, 7);
  CHECK(a == b);

  CHECK_THROWS_AS(sample_copula(model_of(Family::StudentT, {0.3, 4.0}), 10, 1), UnsupportedDim);
  CHECK_THROWS_AS(sample_copula(model_of(Family::Gumbel, {2.0}, 3), 10, 1), UnsupportedDim);
}

TEST_CASE("three-margin Gaussian sampling keeps pairwise concordance") {
  CopulaModel m3 = CopulaModel::from_constrained(Family::Gaussian, 3, {0.5, 0.2, -0.3});
  auto rows = sample_copula(m3, 60000, 5);
  std::vector<double> u0, u1, u2;
  for (const auto& r : rows) {
    u0.push_back(r[0]);
    u1.push_back(r[1]);
    u2.push_back(r[2]);
  }
  CHECK(std::fabs(oracles::kendall_tau_fast(u0, u1) - 2.0 / M_PI * std::asin(0.5)) < 0.02);
  CHECK(std::fabs(oracles::kendall_tau_fast(u0, u2) - 2.0 / M_PI * std::asin(0.2)) < 0.02);
  CHECK(std::fabs(oracles::kendall_tau_fast(u1, u2) - 2.0 / M_PI * std::asin(-0.3)) < 0.02);
}

TEST_CASE("gradients match finite differences across families") {
  RngStream rng(71);
  std::vector<Family> fams = {Family::Gumbel, Family::Clayton, Family::Frank,
                              Family::Gaussian, Family::StudentT, Family::Independence};
  for (int done = 0; done < 200; ++done) {
    Family f = fams[static_cast<size_t>(rng.index(static_cast<int64_t>(fams.size())))];
    CopulaModel m = CopulaModel::make(f, 2);
    switch (f) {
      case Family::Gumbel: m.raw_params[0] = rng.uniform(-2.5, 2.5); break;
      case Family::Clayton: m.raw_params[0] = rng.uniform(-1.5, 2.5); break;
      case Family::Frank: {
        double a = rng.uniform(0.2, 8.0);
        m.raw_params[0] = rng.uniform(0, 1) < 0.5 ? -a : a;
        break;
      }
      case Family::Gaussian: m.raw_params[0] = rng.uniform(-1.3, 1.3); break;
      case Family::StudentT:
        m.raw_params[0] = rng.uniform(-1.2, 1.2);
        m.raw_params[1] = rng.uniform(-1.0, 3.0);
        break;
      case Family::Independence: break;
    }
    std::vector<double> u = {rng.uniform(0.03, 0.97), rng.uniform(0.03, 0.97)};

    LogDensityGrad g = copula_log_density_grad(m, u);
    CHECK(g.value == doctest::Approx(copula_log_density(m, u)).epsilon(1e-9));

    std::vector<double> packed(m.raw_params);
    packed.insert(packed.end(), u.begin(), u.end());
    std::vector<double> analytic(g.d_raw);
    analytic.insert(analytic.end(), g.d_u.begin(), g.d_u.end());
    auto fn = [&](const std::vector<double>& p) {
      CopulaModel mm = m;
      for (size_t i = 0; i < mm.raw_params.size(); ++i) mm.raw_params[i] = p[i];
      std::vector<double> uu(p.begin() + static_cast<long>(mm.raw_params.size()), p.end());
      return copula_log_density(mm, uu);
    };
    auto numeric = oracles::central_diff(fn, packed, 1e-5);
    INFO(to_string(f));
    CHECK(oracles::max_rel_err(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("documented gradient examples") {
  LogDensityGrad g0 =
      copula_log_density_grad(CopulaModel::make(Family::Independence, 2), {0.3, 0.7});
  CHECK(g0.value == 0.0);
  CHECK(g0.d_u[0] == 0.0);
  CHECK(g0.d_u[1] == 0.0);

  CopulaModel g = model_of(Family::Gumbel, {2.0});
  LogDensityGrad gg = copula_log_density_grad(g, {0.5, 0.5});
  auto fn_alpha = [&](const std::vector<double>& p) {
    CopulaModel mm = g;
    mm.raw_params[0] = p[0];
    return copula_log_density(mm, {0.5, 0.5});
  };
  auto numeric = oracles::central_diff(fn_alpha, {g.raw_params[0]}, 1e-5);
  CHECK(oracles::rel_err(gg.d_raw[0], numeric[0]) < 1e-4);

  CopulaModel n = model_of(Family::Gaussian, {0.5});
  LogDensityGrad gn = copula_log_density_grad(n, {0.4, 0.6});
  auto fn_u = [&](const std::vector<double>& p) { return copula_log_density(n, p); };
  auto num_u = oracles::central_diff(fn_u, {0.4, 0.6}, 1e-5);
  CHECK(oracles::rel_err(gn.d_u[0], num_u[0]) < 1e-4);
  CHECK(oracles::rel_err(gn.d_u[1], num_u[1]) < 1e-4);
}

TEST_CASE("density grid export format") {
  std::ostringstream ss;
  write_density_grid(model_of(Family::Gaussian, {0.0}), ss);
  std::istringstream is(ss.str());
  std::string line;
  CHECK(std::getline(is, line));
  CHECK(line == "u,v,density");
  int rows = 0;
  bool all_one = true;
  while (std::getline(is, line)) {
    ++rows;
    double u, v, d;
    CHECK(std::sscanf(line.c_str(), "%lf,%lf,%lf", &u, &v, &d) == 3);
    if (std::fabs(d - 1.0) > 1e-10) all_one = false;
  }
  CHECK(rows == 101 * 101);
  CHECK(all_one);

  // Frank grid is symmetric under (u,v) -> (1-u, 1-v)
  std::ostringstream fs;
  write_density_grid(model_of(Family::Frank, {3.0}), fs);
  std::istringstream fis(fs.str());
  std::getline(fis, line);
  std::vector<double> dens;
  while (std::getline(fis, line)) {
    double u, v, d;
    std::sscanf(line.c_str(), "%lf,%lf,%lf", &u, &v, &d);
    dens.push_back(d);
  }
  auto at = [&](int i, int j) { return dens[static_cast<size_t>(i * 101 + j)]; };
  for (int i = 0; i < 101; i += 7)
    for (int j = 0; j < 101; j += 7)
      CHECK(at(i, j) == doctest::Approx(at(100 - i, 100 - j)).epsilon(1e-9));
}

TEST_CASE("dimension and support errors") {
  CHECK_THROWS_AS(copula_cdf(model_of(Family::Clayton, {1.0}), {0.5, 0.5, 0.5}), UnsupportedDim);
  CHECK_THROWS_AS(copula_log_density(model_of(Family::Gumbel, {2.0}, 4), {0.5, 0.5, 0.5, 0.5}),
                  UnsupportedDim);
  CHECK_THROWS_AS(dependence_measure(model_of(Family::Gaussian, {0.1, 0.1, 0.1}, 3)),
                  UnsupportedDim);
}
