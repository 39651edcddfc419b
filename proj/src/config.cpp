#include "geoconf/config.hpp"

#include "geoconf/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace geoconf {

namespace fs = std::filesystem;

namespace {

class Reader {
 public:
  Reader(std::string source, fs::path base) : source_(std::move(source)), base_(std::move(base)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
    const YAML::Mark m = n.Mark();
    std::ostringstream s;
    s << source_;
    if (m.line >= 0) s << ':' << m.line + 1 << ':' << m.column + 1;
    s << ": " << msg;
    throw ConfigError(s.str());
  }

  void expect_map(const YAML::Node& n, const std::string& what) const {
    if (!n.IsMap()) fail(n, what + " must be a mapping");
  }

  void check_keys(const YAML::Node& map, const std::set<std::string>& allowed,
                  const std::string& section) const {
    expect_map(map, section.empty() ? "configuration" : "'" + section + "'");
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) {
        fail(kv.first, "unknown key '" + key + "'" + (section.empty() ? "" : " in '" + section + "'"));
      }
    }
  }

  template <typename T>
  T scalar(const YAML::Node& n, const std::string& key) const {
    if (!n.IsScalar()) fail(n, "'" + key + "' must be a scalar");
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, "'" + key + "' has the wrong type: '" + n.Scalar() + "'");
    }
  }

  template <typename T>
  void read(const YAML::Node& map, const std::string& key, T& target) const {
    if (const auto n = map[key]) target = scalar<T>(n, key);
  }

  template <typename T>
  void read(const YAML::Node& map, const std::string& key, std::optional<T>& target) const {
    if (const auto n = map[key]) target = scalar<T>(n, key);
  }

  double positive(const YAML::Node& map, const std::string& key, double fallback) const {
    double v = fallback;
    read(map, key, v);
    if (map[key] && !(v > 0.0)) fail(map[key], "'" + key + "' must be positive");
    return v;
  }

  int at_least(const YAML::Node& map, const std::string& key, int fallback, int lo) const {
    int v = fallback;
    read(map, key, v);
    if (map[key] && v < lo) fail(map[key], "'" + key + "' must be at least " + std::to_string(lo));
    return v;
  }

  fs::path path(const YAML::Node& n, const std::string& key) const {
    const fs::path p = scalar<std::string>(n, key);
    return p.is_absolute() || base_.empty() ? p : base_ / p;
  }

  std::vector<ModelKind> models(const YAML::Node& n, const std::string& key) const {
    std::vector<ModelKind> out;
    auto one = [&](const YAML::Node& item) {
      // a bare `Null` is YAML's null literal
      if (item.IsNull()) {
        out.push_back(ModelKind::Null);
        return;
      }
      try {
        out.push_back(parse_model(scalar<std::string>(item, key)));
      } catch (const InvalidInput& e) {
        fail(item, e.what());
      }
    };
    if (n.IsSequence()) {
      for (const auto& item : n) one(item);
    } else {
      one(n);
    }
    if (out.empty()) fail(n, "'" + key + "' must name at least one model");
    return out;
  }

  void model_priors(const YAML::Node& n, const std::string& name, ModelPriors& p) const {
    check_keys(n, {"rho0", "alpha_rho", "sigma0", "alpha_sigma", "noise_sigma0", "noise_alpha"},
               "priors." + name);
    read(n, "rho0", p.field.rho0);
    read(n, "alpha_rho", p.field.alpha_rho);
    read(n, "sigma0", p.field.sigma0);
    read(n, "alpha_sigma", p.field.alpha_sigma);
    try {
      p.field.validate();
    } catch (const std::exception& e) {
      fail(n, e.what());
    }
    if (n["noise_sigma0"] || n["noise_alpha"]) {
      NoisePrior noise;
      read(n, "noise_sigma0", noise.sigma0);
      read(n, "noise_alpha", noise.alpha);
      try {
        noise.validate();
      } catch (const std::exception& e) {
        fail(n, e.what());
      }
      p.noise = noise;
    }
  }

 private:
  std::string source_;
  fs::path base_;
};

Scenario parse_scenario(const Reader& r, const YAML::Node& n) {
  const auto s = r.scalar<std::string>(n, "scenario");
  if (s == "simulation") return Scenario::Simulation;
  if (s == "case_study") return Scenario::CaseStudy;
  r.fail(n, "'scenario' must be 'simulation' or 'case_study'");
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    std::ostringstream s;
    s << source << ':' << e.mark.line + 1 << ':' << e.mark.column + 1 << ": " << e.msg;
    throw ConfigError(s.str());
  }
  const Reader r(source, base_dir);
  RunConfig cfg;
  if (root.IsNull()) return cfg;
  r.check_keys(root,
               {"dataset", "log_response", "intercept", "scenario", "models", "priors", "mesh",
                "grid", "draws", "seed", "out", "threads", "moran_neighbours", "simulation",
                "ksweep", "prediction"},
               "");

  if (root["dataset"]) cfg.dataset = r.path(root["dataset"], "dataset");
  r.read(root, "log_response", cfg.log_response);
  r.read(root, "intercept", cfg.intercept);
  if (root["scenario"]) {
    cfg.scenario = parse_scenario(r, root["scenario"]);
  } else if (root["simulation"]) {
    cfg.scenario = Scenario::Simulation;
  }
  cfg.priors = default_priors(cfg.scenario);
  if (root["models"]) cfg.models = r.models(root["models"], "models");
  cfg.draws = r.at_least(root, "draws", cfg.draws, 2);
  r.read(root, "seed", cfg.seed);
  if (root["out"]) cfg.out = r.path(root["out"], "out");
  cfg.threads = r.at_least(root, "threads", cfg.threads, 0);
  cfg.moran_neighbours = r.at_least(root, "moran_neighbours", cfg.moran_neighbours, 1);

  if (const auto p = root["priors"]) {
    r.check_keys(p, {"spatial", "rsr", "spatial_plus_stage1", "spatial_plus_stage2", "spatial_plus2"},
                 "priors");
    if (p["spatial"]) r.model_priors(p["spatial"], "spatial", cfg.priors.spatial);
    if (p["rsr"]) r.model_priors(p["rsr"], "rsr", cfg.priors.rsr);
    if (p["spatial_plus_stage1"]) {
      r.model_priors(p["spatial_plus_stage1"], "spatial_plus_stage1", cfg.priors.spatial_plus_stage1);
    }
    if (p["spatial_plus_stage2"]) {
      r.model_priors(p["spatial_plus_stage2"], "spatial_plus_stage2", cfg.priors.spatial_plus_stage2);
    }
    if (p["spatial_plus2"]) r.model_priors(p["spatial_plus2"], "spatial_plus2", cfg.priors.spatial_plus2);
  }

  if (const auto m = root["mesh"]) {
    r.check_keys(m, {"nodes", "max_edge", "extension", "domain"}, "mesh");
    if (m["nodes"]) cfg.mesh.nodes = static_cast<std::size_t>(r.at_least(m, "nodes", 0, 9));
    if (m["max_edge"]) cfg.mesh.max_edge = r.positive(m, "max_edge", 1.0);
    if (m["extension"]) {
      double e = 0.0;
      r.read(m, "extension", e);
      if (e < 0.0) r.fail(m["extension"], "'extension' must be non-negative");
      cfg.mesh.extension = e;
    }
    if (const auto d = m["domain"]) {
      if (!d.IsSequence() || d.size() != 4) {
        r.fail(d, "'domain' must be [x_min, x_max, y_min, y_max]");
      }
      Domain dom{r.scalar<double>(d[0], "domain"), r.scalar<double>(d[1], "domain"),
                 r.scalar<double>(d[2], "domain"), r.scalar<double>(d[3], "domain")};
      try {
        dom.validate();
      } catch (const std::exception& e) {
        r.fail(d, e.what());
      }
      cfg.mesh.domain = dom;
    }
  }

  if (const auto g = root["grid"]) {
    r.check_keys(g, {"points", "coarse_points", "coarse_half_width", "z_half_width"}, "grid");
    cfg.grid.points = r.at_least(g, "points", cfg.grid.points, 1);
    cfg.grid.coarse_points = r.at_least(g, "coarse_points", cfg.grid.coarse_points, 3);
    cfg.grid.coarse_half_width = r.positive(g, "coarse_half_width", cfg.grid.coarse_half_width);
    cfg.grid.z_half_width = r.positive(g, "z_half_width", cfg.grid.z_half_width);
    try {
      cfg.grid.validate();
    } catch (const std::exception& e) {
      r.fail(g, e.what());
    }
  }

  if (const auto s = root["simulation"]) {
    r.check_keys(s,
                 {"n", "replicates", "beta_true", "loading", "sigma_x2", "sigma_y", "short_theta1",
                  "short_theta2", "long_theta1", "long_theta2", "domain_size", "mesh_nodes",
                  "save_datasets"},
                 "simulation");
    SimConfig sim;
    sim.n = r.at_least(s, "n", sim.n, 10);
    sim.replicates = r.at_least(s, "replicates", sim.replicates, 1);
    r.read(s, "beta_true", sim.beta_true);
    r.read(s, "loading", sim.loading);
    sim.sigma_x2 = r.positive(s, "sigma_x2", sim.sigma_x2);
    sim.sigma_y = r.positive(s, "sigma_y", sim.sigma_y);
    r.read(s, "short_theta1", sim.short_theta1);
    r.read(s, "short_theta2", sim.short_theta2);
    r.read(s, "long_theta1", sim.long_theta1);
    r.read(s, "long_theta2", sim.long_theta2);
    sim.domain_size = r.positive(s, "domain_size", sim.domain_size);
    sim.mesh_nodes = static_cast<std::size_t>(
        r.at_least(s, "mesh_nodes", static_cast<int>(sim.mesh_nodes), 9));
    r.read(s, "save_datasets", cfg.save_datasets);
    sim.seed = cfg.seed;
    try {
      sim.validate();
    } catch (const std::exception& e) {
      r.fail(s, e.what());
    }
    cfg.simulation = sim;
  }

  if (const auto k = root["ksweep"]) {
    r.check_keys(k, {"k_kept", "points", "min_keep"}, "ksweep");
    cfg.ksweep.points = r.at_least(k, "points", cfg.ksweep.points, 1);
    cfg.ksweep.min_keep = r.at_least(k, "min_keep", cfg.ksweep.min_keep, 0);
    if (const auto list = k["k_kept"]) {
      if (!list.IsSequence() || list.size() == 0) r.fail(list, "'k_kept' must be a non-empty list");
      for (const auto& item : list) {
        const int v = r.scalar<int>(item, "k_kept");
        if (v < 0) r.fail(item, "'k_kept' entries must be non-negative");
        cfg.ksweep.k_kept.push_back(v);
      }
    }
  }

  if (const auto p = root["prediction"]) {
    r.check_keys(p, {"models", "grid", "covariate_raster", "draws"}, "prediction");
    if (p["models"]) cfg.prediction.models = r.models(p["models"], "prediction.models");
    cfg.prediction.draws = r.at_least(p, "draws", cfg.prediction.draws, 1);
    if (p["covariate_raster"]) cfg.prediction.covariate_raster = r.path(p["covariate_raster"], "covariate_raster");
    if (const auto g = p["grid"]) {
      r.check_keys(g, {"x_min", "y_min", "cellsize", "ncols", "nrows"}, "prediction.grid");
      for (const char* key : {"x_min", "y_min", "cellsize", "ncols", "nrows"}) {
        if (!g[key]) r.fail(g, std::string("'prediction.grid' needs '") + key + "'");
      }
      GridDef def;
      r.read(g, "x_min", def.x_min);
      r.read(g, "y_min", def.y_min);
      def.cellsize = r.positive(g, "cellsize", 1.0);
      def.ncols = r.at_least(g, "ncols", 1, 1);
      def.nrows = r.at_least(g, "nrows", 1, 1);
      cfg.prediction.grid = def;
    }
  }
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string(), path.parent_path());
}

}  // namespace geoconf
