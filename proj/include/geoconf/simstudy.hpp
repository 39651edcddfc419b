#pragma once

#include "geoconf/criteria.hpp"
#include "geoconf/models.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace geoconf {

/// Data-generating settings for the confounded replicate study.
/// Field parameters are log range (theta1) and log sd (theta2).
struct SimConfig {
  int n = 500;
  int replicates = 50;
  double beta_true = 3.0;
  double loading = 0.35;       // x = loading * z_x + eps_x
  double sigma_x2 = 0.1;       // covariate noise variance
  double sigma_y = 1.0;        // response noise sd
  double short_theta1 = 2.0;   // z_x
  double short_theta2 = 0.4;
  double long_theta1 = 0.0;    // z_u
  double long_theta2 = 1.0;
  double domain_size = 10.0;   // locations uniform on [0, size]^2
  std::size_t mesh_nodes = 1283;
  std::uint64_t seed = 20240501;

  /// Throws ConfigError on n < 10, replicates < 1 or non-positive scales.
  void validate() const;
  HyperParams short_field() const;
  HyperParams long_field() const;
  Domain domain() const { return {0.0, domain_size, 0.0, domain_size}; }
};

/// The shared generation mesh (both fields use one mesh of identical
/// construction).
std::shared_ptr<const TriMesh> simulation_mesh(const SimConfig& cfg);

/// Deterministic per-replicate seed.
std::uint64_t replicate_seed(std::uint64_t master, int rep_index);

/// One replicate. The dataset has no intercept column: y = beta x + u + eps.
Dataset generate_replicate(const SimConfig& cfg, int rep_index, const TriMesh& mesh);
Dataset generate_replicate(const SimConfig& cfg, int rep_index);

/// Synthetic stand-in for a real survey dataset: n sites in projected
/// metres, one smooth trend-scale field z driving both the covariate and the
/// log response, and no direct covariate effect (beta_true = 0).
///   x = x0 + a z + N(0, sx^2),  log y = y0 + beta x + b z + N(0, sy^2)
/// The covariate noise is small enough that the evidence for a field stays
/// within reach of the Spatial priors but below that of the RSR priors.
struct CaseStudyConfig {
  int n = 445;
  double width = 1.2e6;
  double height = 1.0e6;
  double field_range = 3.0e6;
  double field_sd = 1.0;
  double covariate_intercept = 1.0;
  double covariate_loading = 0.5;
  double covariate_noise_sd = 0.07;
  double response_intercept = 2.0;
  double response_loading = 1.0;
  double response_noise_sd = 0.7;
  double beta_true = 0.0;
  std::size_t mesh_nodes = 1283;
  std::uint64_t seed = 445;

  void validate() const;
};

/// Dataset with an intercept and the response on its positive (exp) scale.
Dataset generate_case_study(const CaseStudyConfig& cfg);

/// Noise-free covariate surface x0 + a z at `points` (the gridded product a
/// covariate raster would carry); NaN outside the generator mesh.
Eigen::VectorXd case_study_covariate_surface(const CaseStudyConfig& cfg,
                                             std::span<const Point> points);

struct StudyOptions {
  std::vector<ModelKind> models{std::begin(kAllModels), std::end(kAllModels)};
  PriorSet priors = default_priors(Scenario::Simulation);
  FitOptions fit;
  int k_points = 15;   // Spatial+ 2.0 sweep size
  int min_keep = 20;   // k_kept <= min_keep is excluded
  int threads = 1;
  /// Called after each replicate finishes (from worker threads).
  std::function<void(int replicate)> progress;
};

struct ReplicateOutcome {
  int replicate = 0;
  std::vector<ReplicateRecord> records;  // one per requested model
  double null_residual_moran_p = 1.0;    // Moran's I of Null residuals
  double null_residual_moran_i = 0.0;
  double corr_x_u = 0.0;                 // empirical corr(x, u) of the replicate
};

struct StudyResult {
  std::vector<ReplicateOutcome> replicates;  // in replicate order
  std::vector<ModelSummary> summary;         // model order as requested
  std::vector<ReplicateRecord> records() const;
};

/// Fits every requested model to one replicate. Failures are recorded in
/// the cell, never thrown.
ReplicateOutcome fit_replicate(const SimConfig& cfg, int rep_index, const Dataset& data,
                               std::shared_ptr<const TriMesh> mesh, const StudyOptions& options);

StudyResult run_study(const SimConfig& cfg, const StudyOptions& options);

/// model,replicates,failed,mean_beta,esd,mean_se,dic,waic,coverage
void write_summary_csv(std::ostream& out, const std::vector<ModelSummary>& summary);
/// replicate,model,beta_mean,beta_sd,q025,q975,dic,waic,k_selected
void write_raw_csv(std::ostream& out, const std::vector<ReplicateRecord>& records);

}  // namespace geoconf
