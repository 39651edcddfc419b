#pragma once

#include "geoconf/spde.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace geoconf {

/// Penalised-complexity prior on (range, sd) of a d = 2 Matern field,
/// calibrated by P(rho < rho0) = alpha_rho and P(sigma > sigma0) = alpha_sigma.
struct PCPrior {
  double rho0 = 1.0;
  double alpha_rho = 0.05;
  double sigma0 = 1.0;
  double alpha_sigma = 0.05;

  void validate() const;
  double lambda_range() const;  // -log(alpha_rho) * rho0
  double lambda_sd() const;     // -log(alpha_sigma) / sigma0
  double log_density_range(double rho) const;
  double log_density_sd(double sigma) const;
  double log_density(double rho, double sigma) const {
    return log_density_range(rho) + log_density_sd(sigma);
  }
};

/// Exponential (PC) prior on the noise sd with P(sigma_eps > sigma0) = alpha.
struct NoisePrior {
  double sigma0 = 1.0;
  double alpha = 0.01;

  void validate() const;
  double log_density(double sigma_eps) const;
};

/// Joint log prior density of the hyperparameters (field prior ignored when
/// the model has no latent field).
double pc_prior_logdensity(const HyperParams& hp, const PCPrior& prior);

/// Default fixed-effect prior precision: N(0, 1000^2) per coefficient.
inline constexpr double kVagueBetaPrecision = 1e-6;

/// A linear latent Gaussian model at fixed hyperparameters:
///   y = F beta + A~ u + eps,  u ~ N(0, Q_u^{-1}),  eps ~ N(0, sigma_eps^2 I)
/// where A~ = A, or (I - P_F) A when `orthogonal_field` is set.
struct LinearLGM {
  Eigen::VectorXd y;
  Eigen::MatrixXd fixed;                       // n x p
  std::optional<SparseMatrix> projector;       // n x m
  std::optional<SparseMatrix> field_precision; // m x m
  double sigma_eps = 1.0;
  bool orthogonal_field = false;
  double beta_precision = kVagueBetaPrecision;

  void validate() const;
};

/// Joint Gaussian posterior of (beta, u) at fixed hyperparameters.
struct GaussianPosterior {
  Eigen::VectorXd mean;       // beta first, then u
  Eigen::MatrixXd beta_cov;   // p x p block of the posterior covariance
  Eigen::VectorXd predictor;  // F beta_hat + A~ u_hat at the data locations
  double log_marginal = 0.0;  // log p(y | hyperparameters)
};

/// Reusable description of a model family whose latent precision depends on
/// HyperParams through the SPDE. Holds the fixed-pattern structures and the
/// fill-reducing orderings so that evaluating many hyperparameter values
/// only costs numerical factorisations.
class LatentModel {
 public:
  /// Fixed effects only.
  LatentModel(Eigen::VectorXd y, Eigen::MatrixXd fixed,
              double beta_precision = kVagueBetaPrecision);
  /// Fixed effects plus an SPDE field observed through `projector`.
  LatentModel(Eigen::VectorXd y, Eigen::MatrixXd fixed,
              std::shared_ptr<const FemMatrices> fem, SparseMatrix projector,
              bool orthogonal_field, double beta_precision = kVagueBetaPrecision);
  ~LatentModel();
  LatentModel(LatentModel&&) noexcept;
  LatentModel& operator=(LatentModel&&) noexcept;

  bool has_field() const;
  bool orthogonal_field() const;
  Eigen::Index num_obs() const;
  Eigen::Index num_fixed() const;
  Eigen::Index num_field() const;
  const Eigen::VectorXd& response() const;
  const Eigen::MatrixXd& fixed() const;
  const SparseMatrix& projector() const;

  class Conditional;
  /// Condition on hyperparameters: factorises and solves once.
  Conditional condition(const HyperParams& hp) const;
  /// Materialise the explicit LinearLGM at hp.
  LinearLGM at(const HyperParams& hp) const;

  /// Coefficients c(u) = (F'F)^{-1} F' A u removed from the field by the
  /// orthogonal restriction (p-vector); zero-size when not orthogonal.
  Eigen::VectorXd restriction_coefficients(const Eigen::VectorXd& field) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// The factorised conditional posterior at one hyperparameter value.
class LatentModel::Conditional {
 public:
  ~Conditional();
  Conditional(Conditional&&) noexcept;
  Conditional& operator=(Conditional&&) noexcept;

  const HyperParams& params() const { return hp_; }
  const GaussianPosterior& posterior() const { return post_; }
  /// F beta + A~ u for a latent vector (beta, u).
  Eigen::VectorXd predictor(const Eigen::VectorXd& latent) const;
  /// One exact draw of (beta, u).
  Eigen::VectorXd draw(std::mt19937_64& rng) const;

 private:
  friend class LatentModel;
  Conditional();
  struct Factor;
  const LatentModel* model_ = nullptr;
  HyperParams hp_;
  GaussianPosterior post_;
  std::unique_ptr<Factor> factor_;
};

/// Exact conjugate posterior of an explicit LinearLGM.
GaussianPosterior conditional_posterior(const LinearLGM& model);

struct HyperPriors {
  std::optional<PCPrior> field;
  NoisePrior noise;
};

struct GridSpec {
  int points = 5;                 // per dimension on the final grid
  int coarse_points = 3;          // per dimension for mode localisation
  double coarse_half_width = 2.5; // log units around the starting value
  double z_half_width = 2.5;      // final grid extent in posterior sd units
  std::optional<HyperParams> start;
  bool skip_coarse = false;       // trust `start` and go straight to the optimiser
  /// Further optimiser starts (no coarse stage); the highest local mode wins.
  std::vector<HyperParams> extra_starts;
  bool fixed = false;             // condition on `start` alone (weight one, no search)

  void validate() const;
};

struct GridPoint {
  HyperParams params;
  double log_posterior = 0.0;
  double weight = 0.0;
  double log_marginal = 0.0;
  Eigen::VectorXd beta_mean;
  Eigen::MatrixXd beta_cov;
  Eigen::VectorXd field_mean;      // at mesh nodes (empty without a field)
  Eigen::VectorXd predictor_mean;  // at data locations
};

struct HyperPosterior {
  std::vector<GridPoint> points;  // weights sum to one
  std::size_t mode_index = 0;     // highest log posterior on the final grid
  HyperParams mode;               // optimiser mode (may lie between grid nodes)
  int evaluations = 0;
  bool coarse_expanded = false;

  const GridPoint& at_mode() const { return points[mode_index]; }
  Eigen::VectorXd beta_mean() const;
  Eigen::VectorXd field_mean() const;
  Eigen::VectorXd predictor_mean() const;
  double mean_sigma_eps() const;
};

/// Log posterior (up to a constant) of the log-hyperparameters: log marginal
/// plus log priors plus the log-scale Jacobian.
double log_hyper_posterior(const LatentModel& model, const HyperPriors& priors,
                           const HyperParams& hp, double* log_marginal = nullptr);

/// Mode-centred grid integration over (log rho, log sigma, log sigma_eps),
/// or over log sigma_eps alone for fixed-effect-only models.
HyperPosterior fit_hyperparameters(const LatentModel& model, const HyperPriors& priors,
                                   const GridSpec& grid);

/// Single-point posterior (weights = [1]) at fixed hyperparameters.
HyperPosterior fixed_hyperparameters(const LatentModel& model, const HyperParams& hp);

struct EffectSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

/// Mixture-of-Gaussians quantile by bisection on the CDF.
double mixture_quantile(const std::vector<double>& weights, const std::vector<double>& means,
                        const std::vector<double>& sds, double p);
double mixture_cdf(const std::vector<double>& weights, const std::vector<double>& means,
                   const std::vector<double>& sds, double x);

/// Mean, sd and equal-tailed 95% interval of fixed effect `index`.
EffectSummary posterior_summary(const HyperPosterior& post, Eigen::Index index);

/// Posterior draws from the hyperparameter mixture: pick a grid point by
/// weight, then draw the conditional Gaussian. Draws are grouped by grid point.
struct PosteriorDraws {
  Eigen::MatrixXd predictor;        // n x draws
  Eigen::VectorXd sigma_eps;        // per draw
  Eigen::MatrixXd latent;           // (p+m) x kept draws (first `keep_latent`)
  Eigen::MatrixXd restriction;      // p x kept draws, orthogonal models only
};

PosteriorDraws sample_posterior(const LatentModel& model, const HyperPosterior& post,
                                int draws, std::uint64_t seed, int keep_latent = 0);

}  // namespace geoconf
