#include "cmcm/copula.hpp"

#include <algorithm>
#include <cmath>

#include "cmcm/rng.hpp"
#include "cmcm/scalar_stats.hpp"
#include "cmcm/special.hpp"

namespace cmcm::copula {

namespace detail {

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double inv_softplus(double y) {
  if (!(y > 0)) throw DomainError("inv_softplus: argument must be positive");
  return y + std::log1p(-std::exp(-y));
}

double frank_floor(double alpha) {
  if (std::abs(alpha) >= 1e-3) return alpha;
  return alpha < 0 ? -1e-3 : 1e-3;
}

double bivariate_normal_cdf(double x, double y, double rho) {
  // Integrate d Phi2 / d rho = phi2(x, y; r) from independence up to rho.
  double base = std_normal_cdf(x) * std_normal_cdf(y);
  if (rho == 0.0) return base;
  static const special::Quadrature q = special::gauss_legendre(96, 0.0, 1.0);
  double acc = 0;
  for (size_t i = 0; i < q.nodes.size(); ++i) {
    double r = rho * q.nodes[i];
    double om = 1.0 - r * r;
    acc += rho * q.weights[i] *
           std::exp(-0.5 * (x * x - 2.0 * r * x * y + y * y) / om) /
           (2.0 * M_PI * std::sqrt(om));
  }
  return base + acc;
}

double bivariate_t_cdf(double x, double y, double rho, double nu) {
  // Conditional decomposition with the substitution s = sqrt(nu) tan(theta):
  // the weight becomes c_nu sqrt(nu) cos(theta)^{nu-1}, smooth on the closed
  // interval, so Gauss-Legendre converges spectrally.
  double cnu = std::exp(special::log_gamma(0.5 * (nu + 1.0)) -
                        special::log_gamma(0.5 * nu)) /
               std::sqrt(nu * M_PI);
  double upper = std::atan(x / std::sqrt(nu));
  static const special::Quadrature q = special::gauss_legendre(160, 0.0, 1.0);
  double lo = -0.5 * M_PI;
  double scale = upper - lo;
  double omr = 1.0 - rho * rho;
  double acc = 0;
  for (size_t i = 0; i < q.nodes.size(); ++i) {
    double theta = lo + scale * q.nodes[i];
    double c = std::cos(theta);
    double s = std::sqrt(nu) * std::tan(theta);
    double cond = (y - rho * s) * std::sqrt((nu + 1.0) / (omr * (nu + s * s)));
    acc += scale * q.weights[i] * std::pow(c, nu - 1.0) *
           special::student_t_cdf(cond, nu + 1.0);
  }
  return cnu * std::sqrt(nu) * acc;
}

// Genz-style quasi-Monte Carlo for the M-variate normal CDF, M >= 3.
// Deterministic (fixed shift); absolute accuracy around 1e-4 at this size.
double mvn_cdf_qmc(const std::vector<double>& chol, const std::vector<double>& upper) {
  const int m = static_cast<int>(upper.size());
  auto L = [&](int i, int j) { return chol[static_cast<size_t>(i * m + j)]; };
  static const double primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  const int64_t n_points = 1 << 14;
  RngStream shift_rng(0x9E2Fu);
  std::vector<double> shift(static_cast<size_t>(m - 1));
  for (auto& s : shift) s = shift_rng.uniform();

  double total = 0;
  std::vector<double> y(static_cast<size_t>(m - 1));
  for (int64_t k = 1; k <= n_points; ++k) {
    double f = std_normal_cdf(upper[0] / L(0, 0));
    double e_prev = f;
    for (int i = 1; i < m; ++i) {
      double w = std::fmod(static_cast<double>(k) * std::sqrt(primes[i - 1]) +
                               shift[static_cast<size_t>(i - 1)],
                           1.0);
      double p = std::clamp(w * e_prev, 1e-15, 1.0 - 1e-15);
      y[static_cast<size_t>(i - 1)] = std_normal_quantile(p);
      double num = upper[static_cast<size_t>(i)];
      for (int j = 0; j < i; ++j) num -= L(i, j) * y[static_cast<size_t>(j)];
      e_prev = std_normal_cdf(num / L(i, i));
      f *= e_prev;
    }
    total += f;
  }
  return total / static_cast<double>(n_points);
}

}  // namespace detail

using detail::frank_floor;
using detail::inv_softplus;
using detail::softplus;

double clamp_unit(double u) { return std::clamp(u, kUnitEps, 1.0 - kUnitEps); }

Family family_from_string(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(c)));
  if (s == "clayton") return Family::Clayton;
  if (s == "frank") return Family::Frank;
  if (s == "gumbel") return Family::Gumbel;
  if (s == "gaussian") return Family::Gaussian;
  if (s == "studentt" || s == "student_t" || s == "t") return Family::StudentT;
  if (s == "independence" || s == "independent") return Family::Independence;
  throw DomainError("unknown copula family: " + name);
}

const char* to_string(Family f) {
  switch (f) {
    case Family::Clayton: return "clayton";
    case Family::Frank: return "frank";
    case Family::Gumbel: return "gumbel";
    case Family::Gaussian: return "gaussian";
    case Family::StudentT: return "studentt";
    case Family::Independence: return "independence";
  }
  return "?";
}

size_t param_arity(Family f, int dim) {
  size_t pairs = static_cast<size_t>(dim) * (static_cast<size_t>(dim) - 1) / 2;
  switch (f) {
    case Family::Clayton:
    case Family::Frank:
    case Family::Gumbel: return 1;
    case Family::Gaussian: return pairs;
    case Family::StudentT: return pairs + 1;
    case Family::Independence: return 0;
  }
  return 0;
}

CopulaModel CopulaModel::make(Family f, int dim) {
  if (dim < 2) throw UnsupportedDim("copula needs at least two margins");
  CopulaModel m;
  m.family = f;
  m.dim = dim;
  m.raw_params.assign(param_arity(f, dim), 0.0);
  return m;
}

CopulaModel CopulaModel::from_constrained(Family f, int dim,
                                          const std::vector<double>& values) {
  CopulaModel m = make(f, dim);
  if (values.size() != m.raw_params.size())
    throw ArityMismatch("from_constrained: wrong number of parameter values");
  switch (f) {
    case Family::Independence:
      break;
    case Family::Gumbel:
      m.raw_params[0] = inv_softplus(std::max(values[0] - 1.0, 1e-9));
      break;
    case Family::Clayton:
      m.raw_params[0] = inv_softplus(std::max(values[0] - 1e-4, 1e-9));
      break;
    case Family::Frank:
      m.raw_params[0] = values[0];
      break;
    case Family::StudentT:
      m.raw_params[0] = std::atanh(values[0]);
      m.raw_params[1] = inv_softplus(std::max(values[1] - 2.0, 1e-9));
      break;
    case Family::Gaussian: {
      // Rebuild the partial terms from the target correlation matrix.
      int n = dim;
      std::vector<double> sigma(static_cast<size_t>(n * n), 0.0);
      for (int i = 0; i < n; ++i) sigma[static_cast<size_t>(i * n + i)] = 1.0;
      size_t idx = 0;
      for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) {
          sigma[static_cast<size_t>(i * n + j)] = values[idx];
          sigma[static_cast<size_t>(j * n + i)] = values[idx];
          ++idx;
        }
      // Cholesky
      std::vector<double> L(static_cast<size_t>(n * n), 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
          double s = sigma[static_cast<size_t>(i * n + j)];
          for (int k = 0; k < j; ++k)
            s -= L[static_cast<size_t>(i * n + k)] * L[static_cast<size_t>(j * n + k)];
          if (i == j) {
            if (s <= 0) throw NotPositiveDefinite("correlation matrix not PD");
            L[static_cast<size_t>(i * n + j)] = std::sqrt(s);
          } else {
            L[static_cast<size_t>(i * n + j)] = s / L[static_cast<size_t>(j * n + j)];
          }
        }
      idx = 0;
      for (int i = 1; i < n; ++i) {
        double rem = 1.0;
        for (int j = 0; j < i; ++j) {
          double z = L[static_cast<size_t>(i * n + j)] / std::sqrt(rem);
          m.raw_params[idx++] = std::atanh(std::clamp(z, -1.0 + 1e-12, 1.0 - 1e-12));
          rem -= L[static_cast<size_t>(i * n + j)] * L[static_cast<size_t>(i * n + j)];
        }
      }
      break;
    }
  }
  return m;
}

ConstrainedParams constrain_params(const CopulaModel& m) {
  if (m.raw_params.size() != param_arity(m.family, m.dim))
    throw ArityMismatch("raw_params length does not match family arity");
  ConstrainedParams out;
  auto clamp_raw = [](double r) { return std::clamp(r, -30.0, 30.0); };
  switch (m.family) {
    case Family::Independence:
      break;
    case Family::Gumbel:
      out.alpha = 1.0 + softplus(clamp_raw(m.raw_params[0]));
      break;
    case Family::Clayton:
      out.alpha = softplus(clamp_raw(m.raw_params[0])) + 1e-4;
      break;
    case Family::Frank:
      out.alpha = frank_floor(m.raw_params[0]);
      break;
    case Family::StudentT:
      out.rho = std::tanh(m.raw_params[0]);
      out.nu = 2.0 + softplus(clamp_raw(m.raw_params[1]));
      break;
    case Family::Gaussian: {
      int n = m.dim;
      out.chol.assign(static_cast<size_t>(n * n), 0.0);
      out.chol[0] = 1.0;
      size_t idx = 0;
      for (int i = 1; i < n; ++i) {
        double rem = 1.0;
        for (int j = 0; j < i; ++j) {
          double z = std::tanh(m.raw_params[idx++]);
          double l = z * std::sqrt(rem);
          out.chol[static_cast<size_t>(i * n + j)] = l;
          rem -= l * l;
        }
        out.chol[static_cast<size_t>(i * n + i)] = std::sqrt(rem);
      }
      if (n == 2) out.rho = out.chol[2];
      break;
    }
  }
  return out;
}

namespace {

void check_dim(const CopulaModel& m, const std::vector<double>& u) {
  if (static_cast<int>(u.size()) != m.dim)
    throw UnsupportedDim("argument dimension does not match copula dim");
}

double gumbel_cdf_m(double alpha, const std::vector<double>& u) {
  double s = 0;
  for (double ui : u) s += std::pow(-std::log(clamp_unit(ui)), alpha);
  return std::exp(-std::pow(s, 1.0 / alpha));
}

double gumbel_log_density2(double alpha, double u, double v) {
  double lu = std::log(u), lv = std::log(v);
  double x = -lu, y = -lv;
  double lx = std::log(x), ly = std::log(y);
  double s = std::exp(alpha * lx) + std::exp(alpha * ly);
  double ls = std::log(s);
  double s_inv_a = std::exp(-ls / alpha);
  return -lu - lv + (alpha - 1.0) * (lx + ly) - std::exp(ls / alpha) +
         (2.0 * (1.0 - alpha) / alpha) * ls + std::log1p((alpha - 1.0) * s_inv_a);
}

double clayton_log_density2(double alpha, double u, double v) {
  double lu = std::log(u), lv = std::log(v);
  double t = std::exp(-alpha * lu) + std::exp(-alpha * lv) - 1.0;
  return std::log1p(alpha) - (1.0 + alpha) * (lu + lv) -
         (2.0 + 1.0 / alpha) * std::log(t);
}

double frank_log_density2(double alpha, double u, double v) {
  double a = std::expm1(-alpha * u), b = std::expm1(-alpha * v);
  double d = std::expm1(-alpha);
  double denom = d + a * b;
  return std::log(-alpha * d) - alpha * (u + v) - 2.0 * std::log(std::abs(denom));
}

double student_t_log_density2(double rho, double nu, double u, double v) {
  double x = special::student_t_quantile(u, nu);
  double y = special::student_t_quantile(v, nu);
  double omr = 1.0 - rho * rho;
  double q = (x * x - 2.0 * rho * x * y + y * y) / omr;
  return special::log_gamma(0.5 * (nu + 2.0)) + special::log_gamma(0.5 * nu) -
         2.0 * special::log_gamma(0.5 * (nu + 1.0)) - 0.5 * std::log(omr) -
         0.5 * (nu + 2.0) * std::log1p(q / nu) +
         0.5 * (nu + 1.0) * (std::log1p(x * x / nu) + std::log1p(y * y / nu));
}

}  // namespace

double copula_cdf(const CopulaModel& m, const std::vector<double>& u) {
  check_dim(m, u);
  ConstrainedParams p = constrain_params(m);
  std::vector<double> uc(u.size());
  std::transform(u.begin(), u.end(), uc.begin(), clamp_unit);

  switch (m.family) {
    case Family::Independence: {
      double prod = 1;
      for (double ui : uc) prod *= ui;
      return prod;
    }
    case Family::Gumbel:
      return gumbel_cdf_m(p.alpha, uc);
    case Family::Clayton: {
      if (m.dim != 2) throw UnsupportedDim("Clayton CDF is bivariate");
      double t = std::pow(uc[0], -p.alpha) + std::pow(uc[1], -p.alpha) - 1.0;
      return std::pow(t, -1.0 / p.alpha);
    }
    case Family::Frank: {
      if (m.dim != 2) throw UnsupportedDim("Frank CDF is bivariate");
      double a = std::expm1(-p.alpha * uc[0]);
      double b = std::expm1(-p.alpha * uc[1]);
      double d = std::expm1(-p.alpha);
      return -std::log1p(a * b / d) / p.alpha;
    }
    case Family::Gaussian: {
      std::vector<double> zeta(uc.size());
      for (size_t i = 0; i < uc.size(); ++i) zeta[i] = std_normal_quantile(uc[i]);
      if (m.dim == 2) return detail::bivariate_normal_cdf(zeta[0], zeta[1], p.rho);
      return detail::mvn_cdf_qmc(p.chol, zeta);
    }
    case Family::StudentT: {
      if (m.dim != 2) throw UnsupportedDim("Student t CDF is bivariate");
      double x = special::student_t_quantile(uc[0], p.nu);
      double y = special::student_t_quantile(uc[1], p.nu);
      return detail::bivariate_t_cdf(x, y, p.rho, p.nu);
    }
  }
  throw UnsupportedDim("unreachable");
}

double copula_log_density(const CopulaModel& m, const std::vector<double>& u) {
  check_dim(m, u);
  ConstrainedParams p = constrain_params(m);
  std::vector<double> uc(u.size());
  std::transform(u.begin(), u.end(), uc.begin(), clamp_unit);

  double out = 0;
  switch (m.family) {
    case Family::Independence:
      out = 0;
      break;
    case Family::Gumbel:
      if (m.dim == 2)
        out = gumbel_log_density2(p.alpha, uc[0], uc[1]);
      else if (m.dim == 3)
        out = trivariate_gumbel_log_density(p.alpha, uc[0], uc[1], uc[2]);
      else
        throw UnsupportedDim("Gumbel density closed form covers M in {2,3}");
      break;
    case Family::Clayton:
      if (m.dim != 2) throw UnsupportedDim("Clayton density is bivariate");
      out = clayton_log_density2(p.alpha, uc[0], uc[1]);
      break;
    case Family::Frank:
      if (m.dim != 2) throw UnsupportedDim("Frank density is bivariate");
      out = frank_log_density2(p.alpha, uc[0], uc[1]);
      break;
    case Family::Gaussian:
      out = gaussian_copula_log_density_m(p.chol, uc);
      break;
    case Family::StudentT:
      if (m.dim != 2) throw UnsupportedDim("Student t density is bivariate");
      out = student_t_log_density2(p.rho, p.nu, uc[0], uc[1]);
      break;
  }
  if (!std::isfinite(out))
    throw BoundaryError("copula log density not finite after clamping");
  return out;
}

GeneratorEval archimedean_generator(Family f, double alpha, double t) {
  if (!(t > 0.0 && t <= 1.0)) throw DomainError("generator: t must lie in (0,1]");
  switch (f) {
    case Family::Gumbel: {
      double x = -std::log(t);
      if (x == 0.0) return {0.0, alpha == 1.0 ? -1.0 : 0.0};
      return {std::pow(x, alpha), -alpha * std::pow(x, alpha - 1.0) / t};
    }
    case Family::Clayton:
      return {(std::pow(t, -alpha) - 1.0) / alpha, -std::pow(t, -alpha - 1.0)};
    case Family::Frank: {
      double num = std::expm1(-alpha * t);
      double den = std::expm1(-alpha);
      return {-std::log(num / den), alpha * std::exp(-alpha * t) / num};
    }
    default:
      throw DomainError("generator defined for Archimedean families only");
  }
}

GeneratorEval archimedean_generator_inverse(Family f, double alpha, double s) {
  if (!(s >= 0.0)) throw DomainError("generator inverse: s must be nonnegative");
  switch (f) {
    case Family::Gumbel: {
      double v = std::exp(-std::pow(s, 1.0 / alpha));
      double dv = s == 0.0 ? (alpha == 1.0 ? -1.0 : 0.0)
                           : -v * std::pow(s, 1.0 / alpha - 1.0) / alpha;
      return {v, dv};
    }
    case Family::Clayton: {
      double v = std::pow(1.0 + alpha * s, -1.0 / alpha);
      return {v, -std::pow(1.0 + alpha * s, -1.0 / alpha - 1.0)};
    }
    case Family::Frank: {
      double d = std::expm1(-alpha);
      double w = std::exp(-s) * d;
      return {-std::log1p(w) / alpha, w / (alpha * (1.0 + w))};
    }
    default:
      throw DomainError("generator defined for Archimedean families only");
  }
}

double gumbel_density_via_generator(double alpha, double u, double v) {
  // c = psi''(phi(u) + phi(v)) * phi'(u) * phi'(v), psi(s) = exp(-s^{1/alpha}).
  double uc = clamp_unit(u), vc = clamp_unit(v);
  double s = std::pow(-std::log(uc), alpha) + std::pow(-std::log(vc), alpha);
  double beta = 1.0 / alpha;
  double psi = std::exp(-std::pow(s, beta));
  double psi_dd = psi * (beta * beta * std::pow(s, 2.0 * beta - 2.0) -
                         beta * (beta - 1.0) * std::pow(s, beta - 2.0));
  double dphi_u = archimedean_generator(Family::Gumbel, alpha, uc).deriv;
  double dphi_v = archimedean_generator(Family::Gumbel, alpha, vc).deriv;
  return psi_dd * dphi_u * dphi_v;
}

double trivariate_gumbel_log_density(double alpha, double u, double v, double w) {
  if (!(alpha >= 1.0)) throw DomainError("trivariate Gumbel requires alpha >= 1");
  double uc = clamp_unit(u), vc = clamp_unit(v), wc = clamp_unit(w);
  double lu = std::log(uc), lv = std::log(vc), lw = std::log(wc);
  double lx = std::log(-lu), ly = std::log(-lv), lz = std::log(-lw);
  double s = std::exp(alpha * lx) + std::exp(alpha * ly) + std::exp(alpha * lz);
  double ls = std::log(s);
  double t = std::exp(ls / alpha);  // s^{1/alpha}
  double poly = t * t + 3.0 * (alpha - 1.0) * t + (alpha - 1.0) * (2.0 * alpha - 1.0);
  double out = -(lu + lv + lw) + (alpha - 1.0) * (lx + ly + lz) - t +
               (1.0 / alpha - 3.0) * ls + std::log(poly);
  if (!std::isfinite(out)) throw BoundaryError("trivariate Gumbel log density not finite");
  return out;
}

double gaussian_copula_log_density_m(const std::vector<double>& chol,
                                     const std::vector<double>& u) {
  const int m = static_cast<int>(u.size());
  if (chol.size() != static_cast<size_t>(m) * static_cast<size_t>(m))
    throw DimMismatch("cholesky factor size does not match argument dimension");
  auto L = [&](int i, int j) { return chol[static_cast<size_t>(i * m + j)]; };
  for (int i = 0; i < m; ++i) {
    if (!(L(i, i) > 0)) throw NotPositiveDefinite("non-positive Cholesky diagonal");
    double row = 0;
    for (int j = 0; j <= i; ++j) row += L(i, j) * L(i, j);
    if (std::abs(row - 1.0) > 1e-8)
      throw NotPositiveDefinite("factor rows must have unit norm (correlation matrix)");
  }
  std::vector<double> zeta(static_cast<size_t>(m)), wvec(static_cast<size_t>(m));
  double log_det_half = 0, q_w = 0, q_z = 0;
  for (int i = 0; i < m; ++i) {
    zeta[static_cast<size_t>(i)] = std_normal_quantile(clamp_unit(u[static_cast<size_t>(i)]));
    q_z += zeta[static_cast<size_t>(i)] * zeta[static_cast<size_t>(i)];
  }
  for (int i = 0; i < m; ++i) {
    double acc = zeta[static_cast<size_t>(i)];
    for (int j = 0; j < i; ++j) acc -= L(i, j) * wvec[static_cast<size_t>(j)];
    wvec[static_cast<size_t>(i)] = acc / L(i, i);
    q_w += wvec[static_cast<size_t>(i)] * wvec[static_cast<size_t>(i)];
    log_det_half += std::log(L(i, i));
  }
  return -log_det_half - 0.5 * (q_w - q_z);
}

double dependence_measure(const CopulaModel& m) {
  if (m.dim != 2) throw UnsupportedDim("dependence_measure is defined for bivariate models");
  ConstrainedParams p = constrain_params(m);
  switch (m.family) {
    case Family::Independence: return 0.0;
    case Family::Gumbel: return (p.alpha - 1.0) / p.alpha;
    case Family::Clayton: return p.alpha / (p.alpha + 2.0);
    case Family::Frank: {
      double a = std::abs(p.alpha);
      double tau = 1.0 - 4.0 / a * (1.0 - special::debye1(a));
      return p.alpha < 0 ? -tau : tau;
    }
    case Family::Gaussian:
    case Family::StudentT:
      return 2.0 / M_PI * std::asin(p.rho);
  }
  return 0.0;
}

namespace {

// dC/du, the conditional CDF of the second margin given the first.
double conditional_cdf(Family f, double alpha, double u, double v) {
  switch (f) {
    case Family::Gumbel: {
      double x = -std::log(u), y = -std::log(v);
      double s = std::pow(x, alpha) + std::pow(y, alpha);
      double c = std::exp(-std::pow(s, 1.0 / alpha));
      return c * std::pow(s, 1.0 / alpha - 1.0) * std::pow(x, alpha - 1.0) / u;
    }
    case Family::Clayton: {
      double t = std::pow(u, -alpha) + std::pow(v, -alpha) - 1.0;
      return std::pow(u, -alpha - 1.0) * std::pow(t, -1.0 / alpha - 1.0);
    }
    case Family::Frank: {
      double b = std::expm1(-alpha * v);
      double d = std::expm1(-alpha);
      double a = std::expm1(-alpha * u);
      return std::exp(-alpha * u) * b / (d + a * b);
    }
    default:
      throw UnsupportedDim("conditional inversion covers Archimedean families");
  }
}

}  // namespace

std::vector<std::vector<double>> sample_copula(const CopulaModel& m, int64_t n,
                                               uint64_t seed) {
  if (n < 0) throw DomainError("sample_copula: negative count");
  ConstrainedParams p = constrain_params(m);
  RngStream rng = RngStream::derive(seed, {0x5A3Cu, static_cast<uint64_t>(m.family)});
  std::vector<std::vector<double>> out(static_cast<size_t>(n));

  switch (m.family) {
    case Family::Independence:
      for (auto& row : out) {
        row.resize(static_cast<size_t>(m.dim));
        for (auto& x : row) x = rng.uniform();
      }
      break;
    case Family::Gaussian: {
      const int d = m.dim;
      auto L = [&](int i, int j) { return p.chol[static_cast<size_t>(i * d + j)]; };
      std::vector<double> eps(static_cast<size_t>(d));
      for (auto& row : out) {
        row.resize(static_cast<size_t>(d));
        for (auto& e : eps) e = rng.normal();
        for (int i = 0; i < d; ++i) {
          double z = 0;
          for (int j = 0; j <= i; ++j) z += L(i, j) * eps[static_cast<size_t>(j)];
          row[static_cast<size_t>(i)] = std_normal_cdf(z);
        }
      }
      break;
    }
    case Family::Gumbel:
    case Family::Clayton:
    case Family::Frank: {
      if (m.dim != 2)
        throw UnsupportedDim("conditional-inversion sampling is bivariate");
      for (auto& row : out) {
        double u = rng.uniform();
        double target = rng.uniform();
        double lo = 1e-12, hi = 1.0 - 1e-12;
        // conditional CDF is increasing in v; bisect to 1e-10
        while (hi - lo > 1e-10) {
          double mid = 0.5 * (lo + hi);
          if (conditional_cdf(m.family, p.alpha, u, mid) < target)
            lo = mid;
          else
            hi = mid;
        }
        row = {u, 0.5 * (lo + hi)};
      }
      break;
    }
    case Family::StudentT:
      throw UnsupportedDim("Student t sampling is not provided");
  }
  return out;
}

void write_density_grid(const CopulaModel& m, std::ostream& os) {
  if (m.dim != 2) throw UnsupportedDim("density grid is bivariate");
  os << "u,v,density\n";
  char buf[80];
  for (int i = 0; i < 101; ++i) {
    double u = 0.005 + 0.0099 * i;
    for (int j = 0; j < 101; ++j) {
      double v = 0.005 + 0.0099 * j;
      double dens = std::exp(copula_log_density(m, {u, v}));
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", u, v, dens);
      os << buf;
    }
  }
}

LogDensityGrad copula_log_density_grad(const CopulaModel& m, const std::vector<double>& u) {
  check_dim(m, u);
  LogDensityGrad g;
  g.d_raw.assign(m.raw_params.size(), 0.0);
  g.d_u.assign(u.size(), 0.0);

  if (m.family == Family::Independence) {
    g.value = 0.0;
    return g;
  }

  if (m.family == Family::StudentT) {
    // rho and the margins analytically; nu by a central difference of the
    // closed-form log density (the quantile's nu-dependence has no elementary
    // derivative).
    ConstrainedParams p = constrain_params(m);
    double uc = clamp_unit(u[0]), vc = clamp_unit(u[1]);
    double x = special::student_t_quantile(uc, p.nu);
    double y = special::student_t_quantile(vc, p.nu);
    double omr = 1.0 - p.rho * p.rho;
    double q = (x * x - 2.0 * p.rho * x * y + y * y) / omr;
    g.value = student_t_log_density2(p.rho, p.nu, uc, vc);

    double dq_drho =
        (-2.0 * x * y + 2.0 * p.rho * (x * x + y * y) - 2.0 * p.rho * p.rho * x * y) /
        (omr * omr);
    double dlc_drho = p.rho / omr - 0.5 * (p.nu + 2.0) * dq_drho / (p.nu + q);
    g.d_raw[0] = dlc_drho * omr;  // d rho / d raw = 1 - rho^2

    double h = 1e-6 * (1.0 + p.nu);
    double dlc_dnu = (student_t_log_density2(p.rho, p.nu + h, uc, vc) -
                      student_t_log_density2(p.rho, p.nu - h, uc, vc)) /
                     (2.0 * h);
    double sig = 1.0 / (1.0 + std::exp(-std::clamp(m.raw_params[1], -30.0, 30.0)));
    g.d_raw[1] = dlc_dnu * sig;  // d nu / d raw = sigmoid(raw)

    auto dlc_dx = [&](double a, double b) {
      return -(p.nu + 2.0) * (a - p.rho * b) / (omr * (p.nu + q)) +
             (p.nu + 1.0) * a / (p.nu + a * a);
    };
    g.d_u[0] = dlc_dx(x, y) / special::student_t_pdf(x, p.nu);
    g.d_u[1] = dlc_dx(y, x) / special::student_t_pdf(y, p.nu);
    return g;
  }

  // Remaining families share the tape path.
  ad::Tape t;
  ad::NodeId raw = t.leaf(Tensor::vector(m.raw_params));
  std::vector<ad::NodeId> us;
  us.reserve(u.size());
  for (double ui : u) us.push_back(t.leaf(Tensor::vector({ui})));
  ad::NodeId lc = log_density_node(t, m.family, m.dim, raw, us);
  t.backward(t.sum(lc));
  g.value = t.value(lc)[0];
  for (size_t i = 0; i < m.raw_params.size(); ++i) g.d_raw[i] = t.adjoint(raw)[static_cast<int64_t>(i)];
  for (size_t i = 0; i < u.size(); ++i) g.d_u[i] = t.adjoint(us[i])[0];
  return g;
}

}  // namespace cmcm::copula
