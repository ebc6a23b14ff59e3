#include "cmcm/scalar_stats.hpp"

#include <cmath>

namespace cmcm {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kLog2Pi = 1.8378770664093455;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

double std_normal_cdf(double x) {
  // erfc form avoids cancellation in the left tail; right tail by symmetry.
  return 0.5 * std::erfc(-x / kSqrt2);
}

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("std_normal_quantile: p outside (0,1)");

  // Acklam's rational approximation, |relative error| < 1.15e-9.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // One Halley step against the exact CDF.
  double e = std_normal_cdf(x) - p;
  double u = e / std_normal_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double mvn_log_density(const std::vector<double>& z, const DiagGaussian& g) {
  if (z.size() != g.dim()) throw DimMismatch("mvn_log_density: dimension mismatch");
  double acc = 0;
  for (size_t d = 0; d < z.size(); ++d) {
    double sigma = std::exp(g.log_std[d]);
    double r = (z[d] - g.mean[d]) / sigma;
    acc += r * r + 2.0 * g.log_std[d] + kLog2Pi;
  }
  return -0.5 * acc;
}

double mvn_kl(const DiagGaussian& g1, const DiagGaussian& g2) {
  if (g1.dim() != g2.dim()) throw DimMismatch("mvn_kl: dimension mismatch");
  double acc = 0;
  for (size_t d = 0; d < g1.dim(); ++d) {
    double dls = g2.log_std[d] - g1.log_std[d];
    double ratio = std::exp(2.0 * (g1.log_std[d] - g2.log_std[d]));
    double dm = g2.mean[d] - g1.mean[d];
    acc += 2.0 * dls - 1.0 + ratio + dm * dm * std::exp(-2.0 * g2.log_std[d]);
  }
  return 0.5 * acc;
}

namespace ad {

NodeId normal_cdf_node(Tape& t, NodeId x) {
  NodeId scaled = t.mul(x, t.constant(1.0 / kSqrt2));
  return t.mul(t.add(t.erf(scaled), t.constant(1.0)), t.constant(0.5));
}

NodeId normal_pdf_node(Tape& t, NodeId x) {
  NodeId q = t.mul(t.mul(x, x), t.constant(-0.5));
  return t.mul(t.exp(q), t.constant(kInvSqrt2Pi));
}

NodeId normal_quantile_node(Tape& t, NodeId p) {
  const Tensor& pv = t.value(p);
  Tensor z0(pv.shape());
  for (int64_t i = 0; i < pv.numel(); ++i) z0[i] = std_normal_quantile(pv[i]);
  // z = z0 - (Phi(z0) - p)/phi(z0): value already converged, derivative
  // dz/dp = 1/phi(z0) carried by the correction term.
  NodeId z0n = t.constant(std::move(z0));
  NodeId resid = t.sub(normal_cdf_node(t, z0n), p);
  return t.sub(z0n, t.div(resid, normal_pdf_node(t, z0n)));
}

}  // namespace ad

}  // namespace cmcm
