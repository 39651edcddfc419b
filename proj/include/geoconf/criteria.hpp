#pragma once

#include "geoconf/inference.hpp"
#include "geoconf/mesh.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geoconf {

struct WaicResult {
  double waic = 0.0;
  double p_waic = 0.0;
  double lppd = 0.0;
};

/// ll is n x d: rows are observations, columns posterior draws (d >= 2).
WaicResult waic(const Eigen::MatrixXd& ll);

/// DIC = D(mean) + 2 p_D with p_D = mean(D draws) - D(mean).
double dic(const Eigen::VectorXd& deviance_draws, double deviance_at_mean);

/// Gaussian log densities log N(y_i; eta_ij, sigma_j^2).
Eigen::MatrixXd pointwise_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& predictor,
                                 const Eigen::VectorXd& sigma_eps);

struct NeighbourRule {
  enum class Kind { KNearest, Distance };
  Kind kind = Kind::KNearest;
  int k = 8;
  double threshold = 0.0;

  static NeighbourRule nearest(int k) { return {Kind::KNearest, k, 0.0}; }
  static NeighbourRule within(double d) { return {Kind::Distance, 0, d}; }
};

struct MoranResult {
  double i = 0.0;
  double expected = 0.0;
  double variance = 0.0;  // under the normality assumption
  double z = 0.0;
  double p_value = 1.0;   // two-sided
};

/// Binary neighbour weights (before row standardisation).
SparseMatrix neighbour_weights(std::span<const Point> locations, const NeighbourRule& rule);

/// Moran's I with row-standardised weights built from `rule`.
MoranResult morans_i(const Eigen::VectorXd& values, std::span<const Point> locations,
                     const NeighbourRule& rule = NeighbourRule::nearest(8));
/// Moran's I for explicit non-negative weights (row-standardised here).
MoranResult morans_i(const Eigen::VectorXd& values, const SparseMatrix& weights);

/// One fitted (replicate, model) cell of a study.
struct ReplicateRecord {
  int replicate = 0;
  std::string model;
  bool ok = false;
  EffectSummary beta;
  double dic = 0.0;
  double waic = 0.0;
  std::optional<int> k_kept;
  std::string error;
};

struct ModelSummary {
  std::string model;
  int replicates = 0;   // successful cells
  int failed = 0;
  double mean_beta = 0.0;
  double esd = 0.0;     // sd of posterior means across replicates (NaN below 2)
  double mean_se = 0.0;
  double mean_dic = 0.0;
  double mean_waic = 0.0;
  double coverage = 0.0;  // percent of intervals containing the true effect
};

/// Ensemble summary per model, rows in order of first appearance.
std::vector<ModelSummary> summarize_study(const std::vector<ReplicateRecord>& records,
                                          double true_beta);

}  // namespace geoconf
