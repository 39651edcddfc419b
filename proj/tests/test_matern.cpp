#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "geoconf/errors.hpp"
#include "geoconf/matern.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>

#include <random>

using namespace geoconf;

TEST_CASE("K0 and K1 agree with the extended-precision series on [1e-6, 50]") {
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = std::pow(10.0, -6.0 + (std::log10(50.0) + 6.0) * i / 999.0);
    double k0, k1;
    oracle::bessel_k01(x, k0, k1);
    worst = std::max(worst, std::abs(bessel_k(0, x) / k0 - 1.0));
    worst = std::max(worst, std::abs(bessel_k(1, x) / k1 - 1.0));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("small- and large-argument limits") {
  CHECK(bessel_k(1, 1e-6) * 1e-6 == doctest::Approx(1.0).epsilon(1e-4));
  const double asym = oracle::bessel_k_asymptotic(1.0, 30.0);
  CHECK(std::abs(bessel_k(1, 30.0) / asym - 1.0) < 1e-9);
  CHECK(std::abs(bessel_k(0, 40.0) / oracle::bessel_k_asymptotic(0.0, 40.0) - 1.0) < 1e-9);
}

TEST_CASE("higher orders follow the recurrence") {
  for (double x : {0.1, 1.0, 3.7, 20.0}) {
    CHECK(bessel_k(2, x) == doctest::Approx(std::cyl_bessel_k(2.0, x)).epsilon(1e-10));
    CHECK(bessel_k(3, x) == doctest::Approx(std::cyl_bessel_k(3.0, x)).epsilon(1e-10));
  }
}

TEST_CASE("bessel_k rejects non-positive arguments") {
  CHECK_THROWS_AS(bessel_k(0, 0.0), InvalidInput);
  CHECK_THROWS_AS(bessel_k(1, -2.0), InvalidInput);
}

TEST_CASE("Matern covariance at zero, at the range, and monotone in between") {
  const MaternParams p{1.7, 2.3, 1.0};
  CHECK(matern_cov(0.0, p) == p.sigma * p.sigma);
  double k0, k1;
  oracle::bessel_k01(std::sqrt(8.0), k0, k1);
  const double expected = std::sqrt(8.0) * k1;
  CHECK(expected == doctest::Approx(0.139).epsilon(0.01));
  CHECK(std::abs(matern_cov(p.rho, p) / (p.sigma * p.sigma) - expected) < 1e-6);
  double prev = matern_cov(0.0, p);
  for (int i = 1; i <= 100; ++i) {
    const double c = matern_cov(0.1 * i, p);
    CHECK(c < prev);
    prev = c;
  }
  CHECK_THROWS_AS(matern_cov(-1.0, p), InvalidInput);
  CHECK_THROWS_AS(matern_cov(1.0, MaternParams{-1.0, 1.0, 1.0}), InvalidInput);
}

TEST_CASE("correlation is independent of sigma") {
  for (double d : {0.01, 0.5, 2.0, 7.5}) {
    const double a = matern_cov(d, {1.0, 1.3, 1.0});
    const double b = matern_cov(d, {4.0, 1.3, 1.0}) / 16.0;
    CHECK(std::abs(a - b) <= 1e-15 * std::abs(a));
  }
}

TEST_CASE("non-integer smoothness uses the general Bessel function") {
  const MaternParams half{1.0, 1.0, 0.5};
  // nu = 1/2 is the exponential covariance exp(-2 d / rho) in this scaling
  for (double d : {0.1, 1.0, 3.0}) {
    CHECK(matern_cov(d, half) == doctest::Approx(std::exp(-2.0 * d)).epsilon(1e-12));
  }
}

TEST_CASE("dense covariance: definition, symmetry, positive definiteness") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<Point> pts(20);
  for (auto& p : pts) p = {u(rng), u(rng)};
  const MaternParams par{1.2, 1.5, 1.0};
  const auto cov = dense_cov_matrix(pts, par);
  CHECK_FALSE(cov.jittered);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(cov.matrix(i, j) == matern_cov(distance(pts[i], pts[j]), par));
    }
  }
  CHECK((cov.matrix - cov.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.matrix);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("duplicate locations trigger jitter") {
  const std::vector<Point> pts{{0, 0}, {1, 1}, {0, 0}};
  const MaternParams par{2.0, 1.0, 1.0};
  const auto cov = dense_cov_matrix(pts, par);
  CHECK(cov.jittered);
  CHECK(cov.matrix(0, 0) == doctest::Approx(4.0 * (1.0 + kCovarianceJitter)).epsilon(1e-15));
  CHECK(cov.matrix(0, 2) == 4.0);
  Eigen::LLT<Eigen::MatrixXd> llt(cov.matrix);
  CHECK(llt.info() == Eigen::Success);
}
