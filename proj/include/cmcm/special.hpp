#pragma once

#include <vector>

namespace cmcm::special {

// Gauss-Legendre nodes and weights on [a, b].
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};
Quadrature gauss_legendre(int n, double a, double b);

// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

// Student's t distribution with nu degrees of freedom.
double student_t_pdf(double x, double nu);
double student_t_cdf(double x, double nu);
double student_t_quantile(double p, double nu);

double log_gamma(double x);

// First Debye function D1(x) = (1/x) * int_0^x t/(e^t - 1) dt, x > 0.
double debye1(double x);

}  // namespace cmcm::special
