#pragma once

#include "geoconf/io.hpp"
#include "geoconf/models.hpp"
#include "geoconf/simstudy.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace geoconf {

struct MeshSettings {
  std::optional<std::size_t> nodes;   // target vertex count
  std::optional<double> max_edge;     // overrides `nodes`
  std::optional<double> extension;    // default: 20% of the shorter side
  std::optional<Domain> domain;       // default: bounding box of the data
};

struct KSweepSettings {
  std::vector<int> k_kept;  // explicit kept counts; empty = evenly spaced
  int points = 15;
  int min_keep = 20;
};

struct PredictionSettings {
  std::vector<ModelKind> models{ModelKind::Null};
  std::optional<GridDef> grid;
  std::optional<std::filesystem::path> covariate_raster;
  int draws = 500;
};

/// Declarative run description loaded from YAML. Relative paths are
/// resolved against the directory of the configuration file.
struct RunConfig {
  std::optional<std::filesystem::path> dataset;
  bool log_response = false;
  bool intercept = true;
  Scenario scenario = Scenario::CaseStudy;
  std::vector<ModelKind> models{std::begin(kAllModels), std::end(kAllModels)};
  PriorSet priors = default_priors(Scenario::CaseStudy);
  MeshSettings mesh;
  GridSpec grid;
  int draws = 1000;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  int threads = 0;  // 0: all cores
  int moran_neighbours = 8;
  std::optional<SimConfig> simulation;
  bool save_datasets = true;
  KSweepSettings ksweep;
  PredictionSettings prediction;
};

/// Parses and validates; every schema violation (unknown key, wrong type,
/// out-of-range value) throws ConfigError as "source:line:column: message".
RunConfig parse_config(const std::string& text, const std::string& source,
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

}  // namespace geoconf
