#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmcm/rng.hpp"
#include "cmcm/scalar_stats.hpp"
#include "oracles.hpp"

using namespace cmcm;

TEST_CASE("normal cdf basics and erf-series oracle") {
  CHECK(std_normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  for (double x : {0.3, 1.0, 2.5, 4.0, -1.7}) {
    CHECK(std_normal_cdf(x) + std_normal_cdf(-x) == doctest::Approx(1.0).epsilon(1e-13));
    double want = 0.5 * (1.0 + oracles::erf_series(x / std::sqrt(2.0)));
    CHECK(std::fabs(std_normal_cdf(x) - want) <= 1e-10);
  }
  CHECK(std_normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-6));
}

TEST_CASE("normal cdf monotone within double resolution") {
  // Strict increase when the true increment phi(x)*h clears a few ulps of the
  // value; nondecreasing always. Near the saturated right tail the increment
  // falls below one ulp of numbers near 1, where strictness is unrepresentable.
  const double h = 1e-6;
  for (double x = -8.0; x <= 8.0; x += 0.137) {
    double lo = std_normal_cdf(x), hi = std_normal_cdf(x + h);
    CHECK(hi >= lo);
    double increment = std_normal_pdf(x) * h;
    double ulp = std::nextafter(lo, 2.0) - lo;
    if (increment > 4.0 * ulp) CHECK(hi > lo);
  }
}

TEST_CASE("quantile inverts the cdf") {
  CHECK(std_normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std_normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-5));
  CHECK_THROWS_AS(std_normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(std_normal_quantile(1.0), DomainError);

  for (double x = -5.0; x <= 5.0; x += 0.25)
    CHECK(std::fabs(std_normal_quantile(std_normal_cdf(x)) - x) < 1e-7);
  for (double p : {1e-9, 1e-4, 0.37, 0.9999, 1.0 - 1e-9})
    CHECK(std::fabs(std_normal_cdf(std_normal_quantile(p)) - p) < 1e-9);

  // bisection oracle on the cdf
  double lo = -10, hi = 10;
  while (hi - lo > 1e-12) {
    double mid = 0.5 * (lo + hi);
    (std_normal_cdf(mid) < 0.975 ? lo : hi) = mid;
  }
  CHECK(std_normal_quantile(0.975) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-10));
}

TEST_CASE("mvn log density") {
  DiagGaussian std1({0.0}, {0.0});
  CHECK(mvn_log_density({0.0}, std1) == doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-12));

  // independent coordinates factorize
  DiagGaussian g2({0.3, -1.0}, {0.1, -0.4});
  double joint = mvn_log_density({0.5, 0.2}, g2);
  double split = mvn_log_density({0.5}, DiagGaussian({0.3}, {0.1})) +
                 mvn_log_density({0.2}, DiagGaussian({-1.0}, {-0.4}));
  CHECK(joint == doctest::Approx(split).epsilon(1e-12));

  CHECK_THROWS_AS(mvn_log_density({1.0}, g2), DimMismatch);

  // dense-matrix oracle with explicit diagonal inverse, random D=4 case
  RngStream rng(5);
  std::vector<double> mu(4), ls(4), z(4);
  for (int i = 0; i < 4; ++i) {
    mu[static_cast<size_t>(i)] = rng.uniform(-1, 1);
    ls[static_cast<size_t>(i)] = rng.uniform(-0.5, 0.5);
    z[static_cast<size_t>(i)] = rng.uniform(-2, 2);
  }
  double quad = 0, logdet = 0;
  for (int i = 0; i < 4; ++i) {
    double var = std::exp(2 * ls[static_cast<size_t>(i)]);
    double d = z[static_cast<size_t>(i)] - mu[static_cast<size_t>(i)];
    quad += d * d / var;
    logdet += std::log(var);
  }
  double want = -0.5 * (quad + logdet + 4 * std::log(2 * M_PI));
  CHECK(mvn_log_density(z, DiagGaussian(mu, ls)) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("mvn kl closed form and Monte Carlo oracle") {
  DiagGaussian a({0.2, -0.5}, {0.0, 0.3});
  CHECK(mvn_kl(a, a) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(mvn_kl(DiagGaussian({0.0}, {0.0}), DiagGaussian({1.0}, {0.0})) ==
        doctest::Approx(0.5).epsilon(1e-12));

  DiagGaussian g1({0.4, -0.2}, {-0.2, 0.25});
  DiagGaussian g2({-0.1, 0.3}, {0.1, -0.15});
  double kl = mvn_kl(g1, g2);
  CHECK(kl >= 0.0);

  RngStream rng(77);
  const int64_t n = 1000000;
  double acc = 0, acc2 = 0;
  std::vector<double> z(2);
  for (int64_t i = 0; i < n; ++i) {
    for (int d = 0; d < 2; ++d)
      z[static_cast<size_t>(d)] =
          g1.mean[static_cast<size_t>(d)] + std::exp(g1.log_std[static_cast<size_t>(d)]) * rng.normal();
    double v = mvn_log_density(z, g1) - mvn_log_density(z, g2);
    acc += v;
    acc2 += v * v;
  }
  double mean = acc / static_cast<double>(n);
  double se = std::sqrt((acc2 / static_cast<double>(n) - mean * mean) / static_cast<double>(n));
  CHECK(std::fabs(kl - mean) < 3.0 * se);
}

TEST_CASE("kl is zero only at equal parameters") {
  DiagGaussian g1({0.1, 0.2}, {0.0, 0.1});
  RngStream rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    DiagGaussian g2 = g1;
    g2.mean[static_cast<size_t>(rep % 2)] += rng.uniform(0.01, 0.5) * (rep % 3 == 0 ? -1 : 1);
    CHECK(mvn_kl(g1, g2) > 1e-12);
  }
  CHECK(mvn_kl(g1, g1) < 1e-12);
}

TEST_CASE("unit integral by importance check up to D=4") {
  // E_{q}[p/q] with q a wider diagonal Gaussian; checks exp(log density)
  // integrates to one.
  RngStream rng(31);
  for (int dim = 1; dim <= 4; ++dim) {
    std::vector<double> mu(static_cast<size_t>(dim)), ls(static_cast<size_t>(dim));
    for (int d = 0; d < dim; ++d) {
      mu[static_cast<size_t>(d)] = rng.uniform(-0.5, 0.5);
      ls[static_cast<size_t>(d)] = rng.uniform(-0.3, 0.3);
    }
    DiagGaussian target(mu, ls);
    std::vector<double> wide_ls(static_cast<size_t>(dim));
    for (int d = 0; d < dim; ++d) wide_ls[static_cast<size_t>(d)] = ls[static_cast<size_t>(d)] + 0.7;
    DiagGaussian proposal(mu, wide_ls);

    const int64_t n = 400000;
    double acc = 0;
    std::vector<double> z(static_cast<size_t>(dim));
    for (int64_t i = 0; i < n; ++i) {
      for (int d = 0; d < dim; ++d)
        z[static_cast<size_t>(d)] = proposal.mean[static_cast<size_t>(d)] +
                                    std::exp(proposal.log_std[static_cast<size_t>(d)]) * rng.normal();
      acc += std::exp(mvn_log_density(z, target) - mvn_log_density(z, proposal));
    }
    CHECK(acc / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("tape nodes for cdf and quantile carry correct derivatives") {
  ad::Tape t;
  ad::NodeId x = t.leaf(Tensor::vector({0.3, -1.2}));
  ad::NodeId c = ad::normal_cdf_node(t, x);
  t.backward(t.sum(c));
  CHECK(t.adjoint(x)[0] == doctest::Approx(std_normal_pdf(0.3)).epsilon(1e-10));
  CHECK(t.adjoint(x)[1] == doctest::Approx(std_normal_pdf(-1.2)).epsilon(1e-10));

  ad::Tape t2;
  ad::NodeId p = t2.leaf(Tensor::vector({0.7}));
  ad::NodeId q = ad::normal_quantile_node(t2, p);
  CHECK(t2.value(q)[0] == doctest::Approx(std_normal_quantile(0.7)).epsilon(1e-12));
  t2.backward(t2.sum(q));
  double want = 1.0 / std_normal_pdf(std_normal_quantile(0.7));
  CHECK(t2.adjoint(p)[0] == doctest::Approx(want).epsilon(1e-9));
}
