#include "geoconf/matern.hpp"

#include "geoconf/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>

namespace geoconf {

namespace {

constexpr double kEulerGamma = 0.57721566490153286060651209;

// A&S 9.6.10/9.6.11 power series, used for x < 2.
void bessel_k01_series(double x, double& k0, double& k1) {
  const double half = 0.5 * x;
  const double q = half * half;
  const double log_half = std::log(half);

  // I0, I1 and the psi-weighted sums in one pass
  double i0 = 0.0, i1 = 0.0, s0 = 0.0, s1 = 0.0;
  double term0 = 1.0;          // q^k / (k!)^2
  double term1 = 1.0;          // q^k / (k! (k+1)!)
  double psi_k1 = -kEulerGamma;  // psi(k+1)
  for (int k = 0; k < 60; ++k) {
    const double psi_k2 = psi_k1 + 1.0 / (k + 1);  // psi(k+2)
    i0 += term0;
    i1 += term1;
    s0 += psi_k1 * term0;
    s1 += (psi_k1 + psi_k2) * term1;
    if (term0 < 1e-18 * std::abs(i0) && k > 2) break;
    term0 *= q / ((k + 1.0) * (k + 1.0));
    term1 *= q / ((k + 1.0) * (k + 2.0));
    psi_k1 = psi_k2;
  }
  i1 *= half;
  k0 = -log_half * i0 + s0;
  k1 = 1.0 / x + log_half * i1 - 0.5 * half * s1;
}

// Steed's continued fraction CF2 with Temme's normalisation, order 0.
void bessel_k01_continued_fraction(double x, double& k0, double& k1) {
  constexpr double eps = 1e-16;
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 1; i < 100000; ++i) {
    a -= 2 * i;
    c = -a * c / (i + 1.0);
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < eps) break;
  }
  h = a1 * h;
  k0 = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
  k1 = k0 * (x + 0.5 - h) / x;
}

}  // namespace

double bessel_k(int order, double x) {
  if (!(x > 0.0)) throw InvalidInput("bessel_k: argument must be positive");
  if (order < 0) order = -order;  // K_{-n} = K_n
  double k0 = 0.0, k1 = 0.0;
  if (x < 2.0) {
    bessel_k01_series(x, k0, k1);
  } else {
    bessel_k01_continued_fraction(x, k0, k1);
  }
  if (order == 0) return k0;
  double prev = k0, cur = k1;
  for (int n = 1; n < order; ++n) {
    const double next = prev + 2.0 * n / x * cur;
    prev = cur;
    cur = next;
  }
  return cur;
}

void MaternParams::validate() const {
  if (!(sigma > 0.0) || !(rho > 0.0) || !(nu > 0.0)) {
    throw InvalidInput("Matern parameters must be positive");
  }
}

double matern_cov(double d, const MaternParams& p) {
  p.validate();
  if (d < 0.0) throw InvalidInput("matern_cov: negative distance");
  const double var = p.sigma * p.sigma;
  if (d == 0.0) return var;
  // scaled so that the correlation at d = rho is about 0.14 for nu = 1,
  // consistent with kappa = sqrt(8 nu) / rho in the SPDE precision
  const double scaled = std::sqrt(8.0 * p.nu) * d / p.rho;
  const double rounded = std::round(p.nu);
  double kv;
  if (std::abs(p.nu - rounded) < 1e-14) {
    kv = bessel_k(static_cast<int>(rounded), scaled);
  } else {
    kv = std::cyl_bessel_k(p.nu, scaled);
  }
  if (kv == 0.0) return 0.0;  // underflow far beyond the range
  const double log_norm = (1.0 - p.nu) * std::log(2.0) - std::lgamma(p.nu);
  return var * std::exp(log_norm + p.nu * std::log(scaled)) * kv;
}

DenseCovariance dense_cov_matrix(std::span<const Point> points, const MaternParams& p) {
  p.validate();
  const auto n = static_cast<Eigen::Index>(points.size());
  DenseCovariance out;
  out.matrix.resize(n, n);
  bool duplicates = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.matrix(i, i) = p.sigma * p.sigma;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = distance(points[i], points[j]);
      if (d == 0.0) duplicates = true;
      const double c = matern_cov(d, p);
      out.matrix(i, j) = c;
      out.matrix(j, i) = c;
    }
  }
  if (duplicates) {
    spdlog::warn("dense_cov_matrix: duplicate locations make the covariance "
                 "singular; adding {:.1e} sigma^2 to the diagonal",
                 kCovarianceJitter);
    out.matrix.diagonal().array() += kCovarianceJitter * p.sigma * p.sigma;
    out.jittered = true;
  }
  return out;
}

}  // namespace geoconf
