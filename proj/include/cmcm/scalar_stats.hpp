#pragma once

#include <vector>

#include "cmcm/tape.hpp"
#include "cmcm/tensor.hpp"

namespace cmcm {

// Diagonal multivariate Gaussian. Standard deviations are stored as log_std so
// positivity holds by construction under unconstrained optimization.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> m, std::vector<double> ls)
      : mean(std::move(m)), log_std(std::move(ls)) {
    if (mean.size() != log_std.size())
      throw DimMismatch("DiagGaussian: mean/log_std length mismatch");
  }
  size_t dim() const { return mean.size(); }
};

// Standard normal CDF, accurate to better than 1e-10 absolute everywhere.
double std_normal_cdf(double x);

// Standard normal density.
double std_normal_pdf(double x);

// Inverse of std_normal_cdf on (0,1); rational initial guess refined by
// Halley's method. Throws DomainError outside (0,1).
double std_normal_quantile(double p);

double mvn_log_density(const std::vector<double>& z, const DiagGaussian& g);

// KL(g1 || g2) in nats for diagonal Gaussians of equal dimension.
double mvn_kl(const DiagGaussian& g1, const DiagGaussian& g2);

namespace ad {

// Tape versions; elementwise over the node's tensor.
NodeId normal_cdf_node(Tape& t, NodeId x);
NodeId normal_pdf_node(Tape& t, NodeId x);

// Inverse normal CDF as a tape node: the value is computed to double
// precision off-tape and wired through one on-tape Newton correction, so the
// local derivative 1/phi(z) flows exactly.
NodeId normal_quantile_node(Tape& t, NodeId p);

}  // namespace ad

}  // namespace cmcm
