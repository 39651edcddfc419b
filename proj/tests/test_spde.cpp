#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "geoconf/errors.hpp"
#include "geoconf/matern.hpp"
#include "geoconf/spde.hpp"

#include <random>

using namespace geoconf;

namespace {

// Element stiffness by brute force: each basis is the affine function equal
// to one at its vertex, found by solving a 3x3 system; its gradient is
// constant, so the integral is area * grad_i . grad_j.
Eigen::Matrix3d element_stiffness_oracle(const std::array<Point, 3>& v) {
  Eigen::Matrix3d sys;
  for (int i = 0; i < 3; ++i) sys.row(i) << 1.0, v[i].x, v[i].y;
  const Eigen::Matrix3d coef = sys.inverse();  // column i: basis i = c0 + c1 x + c2 y
  const double area =
      0.5 * std::abs((v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[2].x - v[0].x) * (v[1].y - v[0].y));
  Eigen::Matrix3d k;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      k(i, j) = area * (coef(1, i) * coef(1, j) + coef(2, i) * coef(2, j));
    }
  }
  return k;
}

std::size_t nearest_vertex(const TriMesh& mesh, Point p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < mesh.num_vertices(); ++i) {
    if (distance(mesh.vertices()[i], p) < distance(mesh.vertices()[best], p)) best = i;
  }
  return best;
}

}  // namespace

TEST_CASE("single right triangle matches the analytic element matrix") {
  const TriMesh mesh({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}});
  const FemMatrices fem = assemble_fem(mesh);
  const Eigen::MatrixXd g(fem.g);
  Eigen::Matrix3d expected;
  expected << 2, -1, -1, -1, 1, 0, -1, 0, 1;
  expected *= 0.5;
  const Eigen::Matrix3d brute = element_stiffness_oracle({Point{0, 0}, Point{1, 0}, Point{0, 1}});
  CHECK((g - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((brute - expected).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd c(fem.c);
  for (int i = 0; i < 3; ++i) CHECK(c(i, i) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("general triangles match the brute-force element oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::array<Point, 3> v{Point{u(rng), u(rng)}, Point{u(rng), u(rng)}, Point{u(rng), u(rng)}};
    const double cross =
        (v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[2].x - v[0].x) * (v[1].y - v[0].y);
    if (std::abs(cross) < 1e-2) continue;
    const TriMesh mesh({v[0], v[1], v[2]}, {{0, 1, 2}});
    const Eigen::MatrixXd g(assemble_fem(mesh).g);
    CHECK((g - element_stiffness_oracle(v)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("stiffness annihilates constants and the mass matrix integrates to the area") {
  const Domain d{0, 4, 0, 3};
  const TriMesh mesh = build_mesh(d, 0.37, default_extension(d));
  const FemMatrices fem = assemble_fem(mesh);
  const Eigen::VectorXd g1 = fem.g * Eigen::VectorXd::Ones(fem.size());
  CHECK(g1.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(Eigen::VectorXd(fem.c.diagonal()).sum() == doctest::Approx(mesh.total_area()).epsilon(1e-12));
  CHECK(Eigen::VectorXd(fem.c.diagonal()).minCoeff() > 0.0);
  const SparseMatrix gt = fem.g.transpose();
  CHECK((Eigen::MatrixXd(fem.g) - Eigen::MatrixXd(gt)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("degenerate triangles are named") {
  const TriMesh good({{0, 0}, {1, 0}, {0, 1}, {2, 0}}, {{0, 1, 2}});
  CHECK_NOTHROW(assemble_fem(good));
  // collinear vertices: the constructor orients, assembly rejects the zero area
  try {
    const TriMesh bad({{0, 0}, {1, 0}, {0, 1}, {2, 0}}, {{0, 1, 2}, {0, 1, 3}});
    assemble_fem(bad);
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("triangle 1") != std::string::npos);
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("triangle 1") != std::string::npos);
  }
}

TEST_CASE("parameter round trip through (kappa, tau)") {
  for (double rho : {0.05, 1.0, 2.7, 6e4}) {
    for (double sigma : {0.01, 1.0, 7.389}) {
      HyperParams hp;
      hp.rho = rho;
      hp.sigma = sigma;
      const HyperParams back = HyperParams::from_kappa_tau(hp.kappa(), hp.tau());
      CHECK(std::abs(back.rho / rho - 1.0) < 1e-12);
      CHECK(std::abs(back.sigma / sigma - 1.0) < 1e-12);
      const HyperParams th = HyperParams::from_theta(hp.theta1(0.5), hp.theta2(2.0), 0.5, 2.0);
      CHECK(std::abs(th.rho / rho - 1.0) < 1e-12);
      CHECK(std::abs(th.sigma / sigma - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("precision scales as 1/sigma^2 and stays inside the (C+G)^2 pattern") {
  const Domain d{0, 2, 0, 2};
  const TriMesh mesh = build_mesh(d, 0.4, 0.4);
  const FemMatrices fem = assemble_fem(mesh);
  HyperParams hp;
  hp.rho = 0.8;
  hp.sigma = 1.3;
  const SparseMatrix q1 = build_precision(fem, hp).q;
  hp.sigma *= 2.0;
  const SparseMatrix q2 = build_precision(fem, hp).q;
  CHECK((Eigen::MatrixXd(q1) / 4.0 - Eigen::MatrixXd(q2)).cwiseAbs().maxCoeff() <
        1e-12 * Eigen::MatrixXd(q1).cwiseAbs().maxCoeff());
  const SparseMatrix cg = fem.c + fem.g;
  const Eigen::MatrixXd cg2 = Eigen::MatrixXd(cg) * Eigen::MatrixXd(cg);
  const Eigen::MatrixXd dq(q1);
  for (Eigen::Index i = 0; i < dq.rows(); ++i) {
    for (Eigen::Index j = 0; j < dq.cols(); ++j) {
      if (dq(i, j) != 0.0) CHECK(cg2(i, j) != 0.0);
    }
  }
  CHECK((dq - dq.transpose()).cwiseAbs().maxCoeff() == 0.0);
  HyperParams bad = hp;
  bad.nu = 1.5;
  CHECK_THROWS_AS(build_precision(fem, bad), InvalidInput);
}

TEST_CASE("precision is SPD over a 5x5 hyperparameter grid") {
  const Domain d{0, 10, 0, 10};
  const TriMesh mesh = build_mesh(d, 0.6, 2.0);
  const FemMatrices fem = assemble_fem(mesh);
  for (double rho : {0.1, 0.5, 1.5, 4.0, 12.0}) {
    for (double sigma : {0.05, 0.3, 1.0, 3.0, 10.0}) {
      HyperParams hp;
      hp.rho = rho;
      hp.sigma = sigma;
      CHECK_NOTHROW(SparseCholesky(build_precision(fem, hp).q));
    }
  }
}

TEST_CASE("sparse Cholesky agrees with dense algebra") {
  const TriMesh mesh = build_mesh({0, 1, 0, 1}, 0.24, 0.2);
  const FemMatrices fem = assemble_fem(mesh);
  HyperParams hp;
  hp.rho = 0.4;
  hp.sigma = 0.7;
  const SparseMatrix q = build_precision(fem, hp).q;
  REQUIRE(q.rows() <= 60);
  const Eigen::MatrixXd dq(q);
  SparseCholesky chol(q);
  const Eigen::VectorXd b = standard_normal(q.rows(), 99);
  const Eigen::VectorXd xs = chol.solve(b);
  const Eigen::VectorXd xd = dq.ldlt().solve(b);
  CHECK((xs - xd).norm() / xd.norm() < 1e-8);
  const Eigen::MatrixXd bm = Eigen::MatrixXd::Random(q.rows(), 3);
  CHECK((chol.solve(bm) - dq.ldlt().solve(bm)).norm() / bm.norm() < 1e-6);
  Eigen::LLT<Eigen::MatrixXd> dllt(dq);
  const double dense_logdet = 2.0 * Eigen::MatrixXd(dllt.matrixL()).diagonal().array().log().sum();
  CHECK(chol.log_determinant() == doctest::Approx(dense_logdet).epsilon(1e-10));
}

TEST_CASE("marginal variance and correlation at the range match the Matern target") {
  // fine lattice with a wide extension; interior nodes only
  const Domain d{0, 6, 0, 6};
  const TriMesh mesh = build_mesh(d, 0.25, 3.0);
  const FemMatrices fem = assemble_fem(mesh);
  HyperParams hp;
  hp.rho = 1.5;
  hp.sigma = 1.0;
  const Eigen::MatrixXd cov = Eigen::MatrixXd(build_precision(fem, hp).q)
                                  .ldlt()
                                  .solve(Eigen::MatrixXd::Identity(fem.size(), fem.size()));
  for (Point p : {Point{3, 3}, Point{1, 1}, Point{5, 2}}) {
    const std::size_t i = nearest_vertex(mesh, p);
    CHECK(std::abs(cov(i, i) - 1.0) < 0.15);
  }
  const std::size_t a = nearest_vertex(mesh, {2.25, 3.0});
  const std::size_t b = nearest_vertex(mesh, {3.75, 3.0});
  const double corr = cov(a, b) / std::sqrt(cov(a, a) * cov(b, b));
  CHECK(std::abs(corr - 0.14) < 0.05);
}

TEST_CASE("field draws: determinism, scaling and Monte Carlo covariance") {
  const TriMesh mesh = build_mesh({0, 1, 0, 1}, 0.34, 0.0);
  const FemMatrices fem = assemble_fem(mesh);
  HyperParams hp;
  hp.rho = 0.6;
  hp.sigma = 1.0;
  const SparsePrecision q = build_precision(fem, hp);
  const Eigen::VectorXd u1 = sample_field(q, 2024);
  const Eigen::VectorXd u2 = sample_field(q, 2024);
  CHECK((u1 - u2).cwiseAbs().maxCoeff() == 0.0);

  SparsePrecision q4 = q;
  q4.q *= 4.0;
  const Eigen::VectorXd half = sample_field(q4, 2024);
  CHECK((half - 0.5 * u1).cwiseAbs().maxCoeff() < 1e-12 * u1.cwiseAbs().maxCoeff());

  const Eigen::Index m = fem.size();
  const Eigen::MatrixXd sigma = Eigen::MatrixXd(q.q).inverse();
  const int draws = 2000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
  SparseCholesky chol(q.q);
  for (int k = 0; k < draws; ++k) {
    const Eigen::VectorXd u = chol.colour(standard_normal(m, 1000 + k));
    acc += u * u.transpose();
  }
  acc /= draws;
  int violations = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double se = std::sqrt((sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) / draws);
      if (std::abs(acc(i, j) - sigma(i, j)) > 5.0 * se) ++violations;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("small mesh: interior marginal variances within 15% of sigma^2") {
  const TriMesh mesh = build_mesh({0, 1, 0, 1}, 0.5, 1.0);
  REQUIRE(mesh.num_vertices() <= 60);
  const FemMatrices fem = assemble_fem(mesh);
  HyperParams hp;
  hp.rho = 0.8;
  hp.sigma = 1.7;
  const Eigen::MatrixXd cov = Eigen::MatrixXd(build_precision(fem, hp).q).inverse();
  int interior = 0;
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    const Point p = mesh.vertices()[i];
    if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0) continue;
    ++interior;
    CHECK(std::abs(cov(i, i) / (hp.sigma * hp.sigma) - 1.0) < 0.15);
  }
  CHECK(interior >= 4);
}
