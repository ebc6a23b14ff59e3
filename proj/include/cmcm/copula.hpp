#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cmcm/tape.hpp"
#include "cmcm/tensor.hpp"

namespace cmcm::copula {

enum class Family { Clayton, Frank, Gumbel, Gaussian, StudentT, Independence };

Family family_from_string(const std::string& name);
const char* to_string(Family f);

// CDF arguments are clamped into [kUnitEps, 1-kUnitEps] before any log; the
// Archimedean densities are singular on the boundary.
constexpr double kUnitEps = 1e-6;
double clamp_unit(double u);

// Unconstrained parameterization of a copula. constrain_params maps
// raw_params into the family's valid domain:
//   Gumbel    alpha = 1 + softplus(raw)
//   Clayton   alpha = softplus(raw) + 1e-4
//   Frank     alpha = raw, |alpha| floored at 1e-3 preserving sign
//   Gaussian  correlation via tanh partial terms -> normalized Cholesky rows
//   StudentT  rho = tanh(raw0), nu = 2 + softplus(raw1)
// Archimedean raws are clamped to [-30, 30] so softplus stays in range.
struct CopulaModel {
  Family family = Family::Independence;
  std::vector<double> raw_params;
  int dim = 2;

  static CopulaModel make(Family f, int dim);
  // Builds raw_params so that constrain_params reproduces the given
  // constrained values (alpha for Archimedean, rho/nu, correlations rho_ij in
  // row-major lower-triangle order for Gaussian).
  static CopulaModel from_constrained(Family f, int dim, const std::vector<double>& values);
};

size_t param_arity(Family f, int dim);

struct ConstrainedParams {
  double alpha = 0.0;        // Archimedean
  double rho = 0.0;          // StudentT / bivariate Gaussian shortcut
  double nu = 0.0;           // StudentT
  std::vector<double> chol;  // Gaussian: row-major MxM lower-triangular factor
};

ConstrainedParams constrain_params(const CopulaModel& m);

double copula_cdf(const CopulaModel& m, const std::vector<double>& u);
double copula_log_density(const CopulaModel& m, const std::vector<double>& u);

struct LogDensityGrad {
  double value = 0.0;
  std::vector<double> d_raw;  // w.r.t. raw_params (chain rule through constrain)
  std::vector<double> d_u;    // w.r.t. each margin
};
LogDensityGrad copula_log_density_grad(const CopulaModel& m, const std::vector<double>& u);

// Archimedean generators phi and their inverses psi = phi^{-1}, with first
// derivatives. phi is strictly decreasing and convex with phi(1) = 0.
struct GeneratorEval {
  double value;
  double deriv;
};
GeneratorEval archimedean_generator(Family f, double alpha, double t);
GeneratorEval archimedean_generator_inverse(Family f, double alpha, double s);

// Bivariate Gumbel density assembled from psi'' and phi' rather than the
// closed form; used to cross-check the two routes.
double gumbel_density_via_generator(double alpha, double u, double v);

double trivariate_gumbel_log_density(double alpha, double u, double v, double w);

// log c(u; Sigma) = -log|L| - 1/2 (||L^{-1} zeta||^2 - ||zeta||^2) with
// zeta_m = Phi^{-1}(u_m). `chol` is the row-major lower-triangular factor of a
// correlation matrix (rows of unit norm); throws NotPositiveDefinite else.
double gaussian_copula_log_density_m(const std::vector<double>& chol,
                                     const std::vector<double>& u);

// Kendall-tau-style concordance in [-1, 1].
double dependence_measure(const CopulaModel& m);

// n rows of M margins each. Archimedean families sample by conditional
// inversion (bisection to 1e-10, bivariate only); Gaussian via correlated
// normals for any M.
std::vector<std::vector<double>> sample_copula(const CopulaModel& m, int64_t n, uint64_t seed);

// 101x101 grid over [0.005, 0.995]^2, header "u,v,density", 9 significant
// digits (the plotting interchange format).
void write_density_grid(const CopulaModel& m, std::ostream& os);

// Tape builder: log c as a differentiable node. `raw` is the raw-parameter
// leaf (shape [arity]); `us` holds one node of shape [B] per margin. StudentT
// has no tape path and is rejected.
ad::NodeId log_density_node(ad::Tape& t, Family f, int dim, ad::NodeId raw,
                            std::span<const ad::NodeId> us);

namespace detail {
double softplus(double x);
double inv_softplus(double y);
double frank_floor(double alpha);
// Bivariate normal CDF by integrating the density over the correlation.
double bivariate_normal_cdf(double x, double y, double rho);
// Bivariate Student t CDF via the conditional-CDF integral.
double bivariate_t_cdf(double x, double y, double rho, double nu);
}  // namespace detail

}  // namespace cmcm::copula
