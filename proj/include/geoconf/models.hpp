#pragma once

#include "geoconf/criteria.hpp"
#include "geoconf/inference.hpp"
#include "geoconf/mesh.hpp"
#include "geoconf/spde.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geoconf {

/// Observations: locations, response y and a single covariate x.
struct Dataset {
  std::vector<Point> locations;
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  bool intercept = true;

  Eigen::Index size() const { return y.size(); }
  /// Throws InvalidInput on length mismatch, non-finite values, an empty set
  /// or an identically zero covariate.
  void validate() const;
  /// [1, c] with an intercept, [c] without.
  Eigen::MatrixXd design(const Eigen::VectorXd& covariate) const;
  Eigen::MatrixXd design() const { return design(x); }
  Eigen::Index covariate_index() const { return intercept ? 1 : 0; }
};

enum class ModelKind { Null, Spatial, RSR, SpatialPlus, SpatialPlus2 };

/// "Null", "Spatial", "RSR", "Spatial+", "Spatial+2.0".
std::string model_name(ModelKind kind);
/// Accepts the display names and snake_case aliases (spatial_plus, ...).
ModelKind parse_model(std::string_view name);
inline constexpr ModelKind kAllModels[] = {ModelKind::Null, ModelKind::Spatial, ModelKind::RSR,
                                           ModelKind::SpatialPlus, ModelKind::SpatialPlus2};

/// Priors for one latent-field regression. The noise prior defaults to
/// P(sigma_eps > 10 sd(y)) = 0.01 when unset.
struct ModelPriors {
  PCPrior field;
  std::optional<NoisePrior> noise;
};

/// Prior settings used for each model family in the two reference scenarios.
enum class Scenario { Simulation, CaseStudy };
struct PriorSet {
  ModelPriors spatial;
  ModelPriors rsr;
  ModelPriors spatial_plus_stage1;
  ModelPriors spatial_plus_stage2;
  ModelPriors spatial_plus2;
};
PriorSet default_priors(Scenario scenario);

struct FitOptions {
  GridSpec grid;
  int draws = 1000;              // posterior draws for WAIC / DIC
  std::uint64_t seed = 1;
  double beta_precision = kVagueBetaPrecision;
};

/// Mesh-level quantities shared by every spatial fit on one dataset.
struct SpatialContext {
  std::shared_ptr<const TriMesh> mesh;
  std::shared_ptr<const FemMatrices> fem;
  SparseMatrix projector;  // data locations -> mesh nodes
};
SpatialContext make_spatial_context(std::span<const Point> locations,
                                    std::shared_ptr<const TriMesh> mesh);

struct FitResult {
  ModelKind model = ModelKind::Null;
  bool intercept = true;
  std::vector<EffectSummary> beta;  // intercept first when present
  Eigen::Index covariate_index = 0;
  const EffectSummary& effect() const { return beta[static_cast<std::size_t>(covariate_index)]; }

  HyperParams mode;
  HyperPosterior hyper;
  Eigen::VectorXd field_mean;      // mesh nodes; empty for Null
  Eigen::VectorXd fitted;          // predictor mean at data locations
  Eigen::VectorXd covariate_used;  // x, r^X or Z at data locations
  WaicResult waic;
  double dic = 0.0;
  double p_d = 0.0;

  // Spatial+: stage-1 smooth of the covariate
  Eigen::VectorXd stage1_field_mean;
  double stage1_intercept = 0.0;
  // Spatial+ 2.0: removed and kept eigenvector counts, plug-in range
  std::optional<int> k_removed;
  std::optional<int> k_kept;
  double reference_range = 0.0;

  /// The conditioned model family, kept for prediction.
  std::shared_ptr<const LatentModel> latent;
};

/// (I - P_basis) u. Throws NumericalError when the basis is rank deficient.
Eigen::VectorXd project_out(const Eigen::VectorXd& u, const Eigen::MatrixXd& basis);

FitResult fit_null(const Dataset& data, const FitOptions& options,
                   std::optional<NoisePrior> noise = std::nullopt);
FitResult fit_spatial(const Dataset& data, const SpatialContext& ctx, const ModelPriors& priors,
                      const FitOptions& options);
FitResult fit_rsr(const Dataset& data, const SpatialContext& ctx, const ModelPriors& priors,
                  const FitOptions& options);
FitResult fit_spatial_plus(const Dataset& data, const SpatialContext& ctx,
                           const ModelPriors& stage1, const ModelPriors& stage2,
                           const FitOptions& options);

/// Eigenpairs of the dense data-level Matern precision (sigma = 1, nu = 1)
/// at a plug-in range, eigenvalues ascending.
struct SpectralBasis {
  Eigen::MatrixXd vectors;  // S, n x n, orthonormal columns
  Eigen::VectorXd values;   // Delta, ascending
  double range = 0.0;
};
SpectralBasis spectral_basis(std::span<const Point> locations, double range);

struct SpectralSplit {
  Eigen::VectorXd coefficients;  // a = S' x
  int k = 0;                     // removed low-eigenvalue eigenvectors
  Eigen::VectorXd z;             // spatially decorrelated part, x - z_star
  Eigen::VectorXd z_star;        // span of the k lowest-eigenvalue eigenvectors
};
SpectralSplit spectral_split(const SpectralBasis& basis, const Eigen::VectorXd& x, int k);
SpectralSplit spectral_split(const Dataset& data, double range, int k);

FitResult fit_spatial_plus2(const Dataset& data, const SpatialContext& ctx,
                            const ModelPriors& priors, const SpectralBasis& basis, int k,
                            const FitOptions& options);

struct KSweepRow {
  int k_removed = 0;
  int k_kept = 0;
  double waic = 0.0;
  bool admissible = false;  // kept count above the exclusion threshold
};

/// Index into `table` of the smallest WAIC among rows with n - k > min_keep.
/// Throws ConfigError when every row is excluded.
std::size_t select_k_from_table(const std::vector<KSweepRow>& table);

struct KSelection {
  int k_removed = 0;
  int k_kept = 0;
  std::vector<KSweepRow> table;
  FitResult best;
};

/// Fits Spatial+ 2.0 for every k in `k_grid` (removed counts) and returns the
/// WAIC-optimal admissible one. Excluded rows are fitted too (NaN WAIC when
/// that fit fails). options.grid.start, typically the Spatial mode, seeds
/// every hyperparameter search.
KSelection select_k(const Dataset& data, const SpatialContext& ctx, const ModelPriors& priors,
                    const SpectralBasis& basis, const std::vector<int>& k_grid, int min_keep,
                    const FitOptions& options);

/// Default sweep: removed counts 0, step, 2 step, ... up to n - min_keep - 1.
std::vector<int> default_k_grid(Eigen::Index n, int min_keep, int points);

struct PredictOptions {
  int draws = 500;
  std::uint64_t seed = 7;
  bool exponentiate = false;  // response was log transformed
  std::size_t max_cells = 5'000'000;
};

/// Posterior median of the predictor at `points` with the covariate taken
/// from `covariate` (values at those points). The RSR field is projected
/// off [1, x] over the prediction points themselves. Refuses Spatial+ 2.0.
Eigen::VectorXd predict_grid(const FitResult& fit, const SpatialContext* ctx,
                             std::span<const Point> points, const Eigen::VectorXd& covariate,
                             const PredictOptions& options);

/// Fills waic, dic and p_d from posterior draws of a fitted family.
void attach_criteria(FitResult& fit, const LatentModel& model, const FitOptions& options);

}  // namespace geoconf
