#pragma once

#include "geoconf/mesh.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <cstdint>
#include <memory>

namespace geoconf {

/// P1 finite-element matrices on a TriMesh.
struct FemMatrices {
  SparseMatrix c;    // lumped (diagonal) mass matrix
  SparseMatrix g;    // stiffness matrix
  SparseMatrix gcg;  // G C^-1 G, cached because every precision needs it
  double area = 0.0;

  Eigen::Index size() const { return c.rows(); }
};

/// Standard P1 stiffness and lumped mass. Throws NumericalError naming the
/// first triangle whose area is below 1e-14.
FemMatrices assemble_fem(const TriMesh& mesh);

/// Matern field parameters for the nu = 1 (alpha = 2) SPDE in two
/// dimensions, plus the observation noise sd.
struct HyperParams {
  double rho = 1.0;
  double sigma = 1.0;
  double sigma_eps = 1.0;
  double nu = 1.0;

  /// kappa = sqrt(8 nu) / rho
  double kappa() const;
  /// tau such that sigma^2 = 1 / (4 pi kappa^2 tau^2)
  double tau() const;
  static HyperParams from_kappa_tau(double kappa, double tau, double sigma_eps = 1.0);

  /// theta1 = log sigma - log sigma0, theta2 = log rho - log rho0
  double theta1(double sigma0 = 1.0) const;
  double theta2(double rho0 = 1.0) const;
  static HyperParams from_theta(double theta1, double theta2, double sigma0 = 1.0,
                                double rho0 = 1.0);

  void validate() const;
};

struct SparsePrecision {
  SparseMatrix q;
  HyperParams params;
};

/// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^-1 G). The result is stored on
/// the sparsity pattern of G C^-1 G so that repeated builds share one pattern.
SparsePrecision build_precision(const FemMatrices& fem, const HyperParams& hp);

/// Sparse LL^T factorisation behind a fill-reducing permutation. The
/// permutation may be computed once and shared between matrices with the
/// same pattern.
class SparseCholesky {
 public:
  using Permutation = Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int>;

  /// Approximate-minimum-degree ordering of the symmetric pattern of a.
  static Permutation amd_ordering(const SparseMatrix& a);

  explicit SparseCholesky(const SparseMatrix& a);
  SparseCholesky(const SparseMatrix& a, const Permutation& perm);
  ~SparseCholesky();
  SparseCholesky(SparseCholesky&&) noexcept;
  SparseCholesky& operator=(SparseCholesky&&) noexcept;

  Eigen::Index size() const;
  double log_determinant() const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  /// Given white noise z, returns x with covariance A^{-1}.
  Eigen::VectorXd colour(const Eigen::VectorXd& z) const;

 private:
  void factorize(const SparseMatrix& a, const Permutation& perm);

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Standard-normal vector from a seeded generator (mt19937_64).
Eigen::VectorXd standard_normal(Eigen::Index n, std::uint64_t seed);

/// One draw u ~ N(0, Q^{-1}); bit-identical for identical (Q, seed).
Eigen::VectorXd sample_field(const SparsePrecision& q, std::uint64_t seed);

}  // namespace geoconf
