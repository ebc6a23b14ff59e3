#include "cmcm/special.hpp"

#include <cmath>
#include <limits>

#include "cmcm/errors.hpp"

namespace cmcm::special {

Quadrature gauss_legendre(int n, double a, double b) {
  Quadrature q;
  q.nodes.resize(static_cast<size_t>(n));
  q.weights.resize(static_cast<size_t>(n));
  // Newton on Legendre polynomials from the Chebyshev initial guess.
  int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; ++j) {
        double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double xm = 0.5 * (b + a), xl = 0.5 * (b - a);
    q.nodes[static_cast<size_t>(i)] = xm - xl * x;
    q.nodes[static_cast<size_t>(n - 1 - i)] = xm + xl * x;
    double w = 2.0 * xl / ((1.0 - x * x) * pp * pp);
    q.weights[static_cast<size_t>(i)] = w;
    q.weights[static_cast<size_t>(n - 1 - i)] = w;
  }
  return q;
}

double log_gamma(double x) { return std::lgamma(x); }

namespace {

// Continued fraction for the incomplete beta (Lentz's algorithm).
double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const int max_iter = 300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw DomainError("incomplete_beta: a,b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_pdf(double x, double nu) {
  double lp = log_gamma(0.5 * (nu + 1.0)) - log_gamma(0.5 * nu) -
              0.5 * std::log(nu * M_PI) -
              0.5 * (nu + 1.0) * std::log1p(x * x / nu);
  return std::exp(lp);
}

double student_t_cdf(double x, double nu) {
  if (!(nu > 0)) throw DomainError("student_t_cdf: nu must be positive");
  if (x == 0.0) return 0.5;
  double z = nu / (nu + x * x);
  double p = 0.5 * incomplete_beta(0.5 * nu, 0.5, z);
  return x > 0 ? 1.0 - p : p;
}

double student_t_quantile(double p, double nu) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("student_t_quantile: p outside (0,1)");
  if (p == 0.5) return 0.0;
  // Expanding bisection bracket, then Newton polish.
  double lo = -1.0, hi = 1.0;
  while (student_t_cdf(lo, nu) > p) lo *= 2.0;
  while (student_t_cdf(hi, nu) < p) hi *= 2.0;
  double x = 0.0;
  for (int i = 0; i < 80; ++i) {
    x = 0.5 * (lo + hi);
    if (student_t_cdf(x, nu) < p)
      lo = x;
    else
      hi = x;
  }
  for (int i = 0; i < 3; ++i) {
    double f = student_t_cdf(x, nu) - p;
    double d = student_t_pdf(x, nu);
    if (d <= 0) break;
    x -= f / d;
  }
  return x;
}

double debye1(double x) {
  if (!(x > 0)) throw DomainError("debye1: x must be positive");
  // Integrand t/(e^t - 1) is smooth with limit 1 at t = 0.
  Quadrature q = gauss_legendre(64, 0.0, x);
  double acc = 0;
  for (size_t i = 0; i < q.nodes.size(); ++i) {
    double t = q.nodes[i];
    double f = t < 1e-8 ? 1.0 - 0.5 * t : t / std::expm1(t);
    acc += q.weights[i] * f;
  }
  return acc / x;
}

}  // namespace cmcm::special
