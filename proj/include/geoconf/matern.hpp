#pragma once

#include "geoconf/mesh.hpp"

#include <Eigen/Dense>

#include <span>

namespace geoconf {

/// Modified Bessel function of the second kind K_n(x) for integer order
/// n >= 0 and x > 0. Power series below x = 2, Steed/Temme continued
/// fraction above; K_n for n >= 2 by upward recurrence.
double bessel_k(int order, double x);

struct MaternParams {
  double sigma = 1.0;  // marginal standard deviation
  double rho = 1.0;    // range: correlation ~0.14 at distance rho when nu = 1
  double nu = 1.0;     // smoothness

  void validate() const;
};

/// sigma^2 * 2^(1-nu)/Gamma(nu) * (sqrt(8 nu) d / rho)^nu * K_nu(sqrt(8 nu) d / rho)
double matern_cov(double d, const MaternParams& p);

/// Relative diagonal jitter applied before factorising dense covariances.
inline constexpr double kCovarianceJitter = 1e-8;

struct DenseCovariance {
  Eigen::MatrixXd matrix;
  bool jittered = false;  // duplicates were found and 1e-8 sigma^2 was added
};

/// Pairwise Matern covariance. Exact when all points are distinct; when
/// duplicates are present a warning is logged and the diagonal receives
/// kCovarianceJitter * sigma^2.
DenseCovariance dense_cov_matrix(std::span<const Point> points, const MaternParams& p);

}  // namespace geoconf
