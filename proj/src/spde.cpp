#include "geoconf/spde.hpp"

#include "geoconf/errors.hpp"

#include <Eigen/OrderingMethods>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace geoconf {

namespace {

constexpr double kMinTriangleArea = 1e-14;

}  // namespace

FemMatrices assemble_fem(const TriMesh& mesh) {
  const auto m = static_cast<Eigen::Index>(mesh.num_vertices());
  std::vector<Eigen::Triplet<double>> g_entries;
  g_entries.reserve(mesh.num_triangles() * 9);
  Eigen::VectorXd lumped = Eigen::VectorXd::Zero(m);
  double total_area = 0.0;

  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.signed_area(t);
    if (!(area >= kMinTriangleArea)) {
      std::ostringstream msg;
      msg << "assemble_fem: triangle " << t << " is degenerate (area " << area << ")";
      throw NumericalError(msg.str());
    }
    total_area += area;
    const auto& tri = mesh.triangles()[t];
    const auto& v = mesh.vertices();
    // edge vectors opposite each vertex; grad phi_i = rot(e_i) / (2 area)
    double ex[3], ey[3];
    for (int i = 0; i < 3; ++i) {
      const Point& a = v[tri[(i + 1) % 3]];
      const Point& b = v[tri[(i + 2) % 3]];
      ex[i] = b.x - a.x;
      ey[i] = b.y - a.y;
    }
    for (int i = 0; i < 3; ++i) {
      lumped[tri[i]] += area / 3.0;
      for (int j = 0; j < 3; ++j) {
        const double gij = (ex[i] * ex[j] + ey[i] * ey[j]) / (4.0 * area);
        g_entries.emplace_back(tri[i], tri[j], gij);
      }
    }
  }

  FemMatrices fem;
  fem.area = total_area;
  fem.g.resize(m, m);
  fem.g.setFromTriplets(g_entries.begin(), g_entries.end());
  fem.g.makeCompressed();
  fem.c.resize(m, m);
  std::vector<Eigen::Triplet<double>> c_entries;
  c_entries.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) c_entries.emplace_back(i, i, lumped[i]);
  fem.c.setFromTriplets(c_entries.begin(), c_entries.end());
  fem.c.makeCompressed();

  Eigen::VectorXd c_inv = lumped.cwiseInverse();
  SparseMatrix g_scaled = c_inv.asDiagonal() * fem.g;
  fem.gcg = (fem.g * g_scaled).pruned(0.0);
  // symmetrise away round-off so that Q is exactly symmetric
  SparseMatrix gcg_t = fem.gcg.transpose();
  fem.gcg = 0.5 * (fem.gcg + gcg_t);
  fem.gcg.makeCompressed();
  return fem;
}

double HyperParams::kappa() const { return std::sqrt(8.0 * nu) / rho; }

double HyperParams::tau() const {
  const double k = kappa();
  return 1.0 / (std::sqrt(4.0 * std::numbers::pi) * k * sigma);
}

HyperParams HyperParams::from_kappa_tau(double kappa, double tau, double sigma_eps) {
  HyperParams hp;
  hp.rho = std::sqrt(8.0 * hp.nu) / kappa;
  hp.sigma = 1.0 / (std::sqrt(4.0 * std::numbers::pi) * kappa * tau);
  hp.sigma_eps = sigma_eps;
  return hp;
}

double HyperParams::theta1(double sigma0) const { return std::log(sigma) - std::log(sigma0); }
double HyperParams::theta2(double rho0) const { return std::log(rho) - std::log(rho0); }

HyperParams HyperParams::from_theta(double theta1, double theta2, double sigma0,
                                    double rho0) {
  HyperParams hp;
  hp.sigma = sigma0 * std::exp(theta1);
  hp.rho = rho0 * std::exp(theta2);
  return hp;
}

void HyperParams::validate() const {
  if (!(rho > 0.0) || !(sigma > 0.0) || !(sigma_eps > 0.0) || !(nu > 0.0)) {
    throw InvalidInput("hyperparameters must be positive");
  }
  if (nu != 1.0) throw InvalidInput("only nu = 1 (alpha = 2) is supported");
}

SparsePrecision build_precision(const FemMatrices& fem, const HyperParams& hp) {
  hp.validate();
  const double k2 = hp.kappa() * hp.kappa();
  const double t2 = hp.tau() * hp.tau();
  // C and G are sub-patterns of G C^-1 G, so the sum keeps that pattern
  SparseMatrix q = (t2 * k2 * k2) * fem.c + (2.0 * t2 * k2) * fem.g + t2 * fem.gcg;
  q.makeCompressed();
  return {std::move(q), hp};
}

// ---------------------------------------------------------------------------

struct SparseCholesky::Impl {
  Permutation perm;
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>> llt;
};

SparseCholesky::Permutation SparseCholesky::amd_ordering(const SparseMatrix& a) {
  // AMDOrdering yields the inverse permutation, as in SimplicialCholeskyBase
  Eigen::AMDOrdering<int> amd;
  Permutation perm_inv;
  SparseMatrix full = a;
  amd(full, perm_inv);
  return perm_inv.inverse();
}

SparseCholesky::SparseCholesky(const SparseMatrix& a) : impl_(std::make_unique<Impl>()) {
  factorize(a, amd_ordering(a));
}

SparseCholesky::SparseCholesky(const SparseMatrix& a, const Permutation& perm)
    : impl_(std::make_unique<Impl>()) {
  factorize(a, perm);
}

SparseCholesky::~SparseCholesky() = default;
SparseCholesky::SparseCholesky(SparseCholesky&&) noexcept = default;
SparseCholesky& SparseCholesky::operator=(SparseCholesky&&) noexcept = default;

void SparseCholesky::factorize(const SparseMatrix& a, const Permutation& perm) {
  if (a.rows() != a.cols()) throw InvalidInput("SparseCholesky: matrix not square");
  impl_->perm = perm;
  // permuted = P A P^T; Eigen's twistedBy applies the permutation to both sides
  SparseMatrix permuted(a.rows(), a.cols());
  permuted.selfadjointView<Eigen::Lower>() =
      a.selfadjointView<Eigen::Lower>().twistedBy(perm);
  impl_->llt.compute(permuted);
  if (impl_->llt.info() != Eigen::Success) {
    throw NumericalError("sparse Cholesky failed: matrix is not positive definite");
  }
}

Eigen::Index SparseCholesky::size() const { return impl_->perm.size(); }

double SparseCholesky::log_determinant() const {
  const SparseMatrix& l = impl_->llt.matrixL().nestedExpression();
  double acc = 0.0;
  for (Eigen::Index j = 0; j < l.outerSize(); ++j) {
    SparseMatrix::InnerIterator it(l, j);
    // lower-triangular compressed column storage: diagonal comes first
    acc += std::log(it.value());
  }
  return 2.0 * acc;
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd pb = impl_->perm * b;
  Eigen::VectorXd x = impl_->llt.solve(pb);
  return impl_->perm.transpose() * x;
}

Eigen::MatrixXd SparseCholesky::solve(const Eigen::MatrixXd& b) const {
  Eigen::MatrixXd pb = impl_->perm * b;
  Eigen::MatrixXd x = impl_->llt.solve(pb);
  return impl_->perm.transpose() * x;
}

Eigen::VectorXd SparseCholesky::colour(const Eigen::VectorXd& z) const {
  // P A P^T = L L^T, so A^{-1} = P^T L^{-T} L^{-1} P
  Eigen::VectorXd w = impl_->llt.matrixU().solve(z);
  return impl_->perm.transpose() * w;
}

Eigen::VectorXd standard_normal(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

Eigen::VectorXd sample_field(const SparsePrecision& q, std::uint64_t seed) {
  SparseCholesky chol(q.q);
  return chol.colour(standard_normal(q.q.rows(), seed));
}

}  // namespace geoconf
