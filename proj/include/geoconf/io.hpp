#pragma once

#include "geoconf/models.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace geoconf {

/// Reads `x_coord,y_coord,response,covariate` (extra columns ignored, any
/// order). Schema problems throw ConfigError naming the file and line. With
/// `log_response` the response must be positive and is log transformed.
Dataset read_dataset_csv(const std::filesystem::path& path, bool log_response,
                         bool intercept = true);
/// Writes the four schema columns; `response` is written as given.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Regular raster geometry. Cell (row, col) has its centre at
/// (x_min + (col + 0.5) cellsize, y_min + (nrows - row - 0.5) cellsize):
/// row 0 is the northern edge, as in ESRI ASCII grids.
struct GridDef {
  double x_min = 0.0;
  double y_min = 0.0;
  double cellsize = 1.0;
  int ncols = 1;
  int nrows = 1;

  void validate() const;
  std::size_t cells() const { return static_cast<std::size_t>(ncols) * nrows; }
  std::vector<Point> centres() const;  // row-major, north row first
  /// Cell index holding p, if any.
  std::optional<std::size_t> cell_of(const Point& p) const;
};

struct AsciiGrid {
  GridDef def;
  double nodata = -9999.0;
  Eigen::VectorXd values;  // row-major, north row first; NaN for no data
};

void write_ascii_grid(const std::filesystem::path& path, const AsciiGrid& grid);
AsciiGrid read_ascii_grid(const std::filesystem::path& path);

/// Everything needed to rebuild a fitted model family for prediction.
struct FitArtifact {
  ModelKind model = ModelKind::Null;
  bool intercept = true;
  bool log_response = false;
  std::string dataset;  // path of the data the model was fitted to
  std::vector<HyperParams> points;
  std::vector<double> weights;
  HyperParams mode;
  Eigen::VectorXd covariate_used;
  double stage1_intercept = 0.0;
  Eigen::VectorXd stage1_field_mean;
  std::optional<int> k_removed;
  std::optional<int> k_kept;
  double reference_range = 0.0;
  std::vector<EffectSummary> beta;
  double waic = 0.0;
  double dic = 0.0;
};

FitArtifact make_artifact(const FitResult& fit, const std::string& dataset, bool log_response);
void write_fit_artifact(const std::filesystem::path& path, const FitArtifact& artifact);
FitArtifact read_fit_artifact(const std::filesystem::path& path);

/// Rebuilds the conditioned model family on the stored hyperparameter grid.
/// `ctx` is required for models with a spatial field.
FitResult restore_fit(const FitArtifact& artifact, const Dataset& data, const SpatialContext* ctx);

}  // namespace geoconf
