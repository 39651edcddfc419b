#include "geoconf/cli.hpp"

#include "geoconf/config.hpp"
#include "geoconf/errors.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace geoconf {

namespace fs = std::filesystem;

namespace {

/// Some fits failed; the message lists every failed cell.
class FitFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> data;
  std::optional<std::string> fit_dir;
  std::optional<std::string> grid;
  std::vector<std::string> models;
};

std::optional<long long> env_integer(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long long parsed = std::strtoll(v, &end, 10);
  if (*end != '\0' || parsed < 0) {
    throw ConfigError(std::string("environment variable ") + name + " must be a non-negative integer");
  }
  return parsed;
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = load_config(o.config);
  if (const auto s = env_integer("GEOCONFOUND_SEED")) cfg.seed = static_cast<std::uint64_t>(*s);
  if (const auto t = env_integer("GEOCONFOUND_THREADS")) cfg.threads = static_cast<int>(*t);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.out) cfg.out = *o.out;
  if (o.data) cfg.dataset = fs::path(*o.data);
  if (cfg.simulation) cfg.simulation->seed = cfg.seed;
  if (cfg.threads == 0) cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return cfg;
}

FitOptions fit_options(const RunConfig& cfg) {
  FitOptions o;
  o.grid = cfg.grid;
  o.draws = cfg.draws;
  o.seed = cfg.seed;
  return o;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.dataset) throw ConfigError("no dataset: set 'dataset' in the configuration or pass --data");
  return read_dataset_csv(*cfg.dataset, cfg.log_response, cfg.intercept);
}

std::shared_ptr<const TriMesh> fit_mesh(const RunConfig& cfg, const Dataset& data) {
  const Domain dom = cfg.mesh.domain.value_or(bounding_domain(data.locations));
  const double ext = cfg.mesh.extension.value_or(default_extension(dom));
  const double edge = cfg.mesh.max_edge.value_or(
      max_edge_for_node_count(dom, ext, cfg.mesh.nodes.value_or(1283)));
  auto mesh = std::make_shared<const TriMesh>(build_mesh(dom, edge, ext));
  std::vector<std::size_t> outside;
  for (std::size_t i = 0; i < data.locations.size(); ++i) {
    if (!mesh->locate(data.locations[i])) outside.push_back(i);
  }
  if (!outside.empty()) {
    std::ostringstream msg;
    msg << outside.size() << " location(s) fall outside the mesh hull; data rows";
    for (std::size_t k = 0; k < std::min<std::size_t>(outside.size(), 20); ++k) {
      msg << ' ' << outside[k] + 1;
    }
    if (outside.size() > 20) msg << " ...";
    throw OutOfDomain(msg.str(), outside.front());
  }
  spdlog::info("mesh: {} nodes, {} triangles, max edge {:.6g}, extension {:.6g}",
               mesh->num_vertices(), mesh->num_triangles(), edge, ext);
  return mesh;
}

std::vector<int> k_grid_removed(const RunConfig& cfg, Eigen::Index n) {
  if (cfg.ksweep.k_kept.empty()) return default_k_grid(n, cfg.ksweep.min_keep, cfg.ksweep.points);
  std::vector<int> removed;
  for (int kept : cfg.ksweep.k_kept) {
    if (kept > n) {
      throw ConfigError("ksweep.k_kept value " + std::to_string(kept) + " exceeds n = " +
                        std::to_string(n));
    }
    removed.push_back(static_cast<int>(n) - kept);
  }
  return removed;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

void put(std::ostream& out, double v) {
  if (std::isfinite(v)) {
    out << v;
  } else {
    out << "NA";
  }
}

// Null fit plus Moran's I of its residuals, reported before the spatial fits.
FitResult null_with_prescreen(const RunConfig& cfg, const Dataset& data) {
  FitResult null = fit_null(data, fit_options(cfg));
  const Eigen::VectorXd resid = data.y - null.fitted;
  const MoranResult m =
      morans_i(resid, data.locations, NeighbourRule::nearest(std::min<int>(cfg.moran_neighbours,
                                                                           static_cast<int>(data.size()) - 1)));
  spdlog::info("Moran's I of Null residuals: I = {:.4f} (E = {:.4f}), z = {:.2f}, p = {:.3g}", m.i,
               m.expected, m.z, m.p_value);
  auto out = open_out(cfg.out / "moran_prescreen.csv");
  out << "statistic,expected,variance,z,p_value,neighbours\n";
  out << m.i << ',' << m.expected << ',' << m.variance << ',' << m.z << ',' << m.p_value << ','
      << cfg.moran_neighbours << '\n';
  return null;
}

int cmd_fit(const RunConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const auto mesh = fit_mesh(cfg, data);
  ensure_dir(cfg.out);
  {
    std::ofstream m(cfg.out / "mesh.txt");
    write_mesh(m, *mesh);
  }
  const SpatialContext ctx = make_spatial_context(data.locations, mesh);
  const FitOptions opts = fit_options(cfg);
  const std::string dataset_name = fs::absolute(*cfg.dataset).string();

  std::map<ModelKind, FitResult> fits;
  std::vector<std::string> failures;
  auto attempt = [&](ModelKind kind, auto&& fn) {
    try {
      fits.emplace(kind, fn());
      spdlog::info("{}: beta = {:.4f} [{:.4f}, {:.4f}], WAIC = {:.3f}", model_name(kind),
                   fits.at(kind).effect().mean, fits.at(kind).effect().q025,
                   fits.at(kind).effect().q975, fits.at(kind).waic.waic);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      failures.push_back(model_name(kind) + ": " + e.what());
      spdlog::error("{} failed: {}", model_name(kind), e.what());
    }
  };
  auto wants = [&](ModelKind k) {
    return std::find(cfg.models.begin(), cfg.models.end(), k) != cfg.models.end();
  };

  attempt(ModelKind::Null, [&] { return null_with_prescreen(cfg, data); });
  if (wants(ModelKind::Spatial) || wants(ModelKind::SpatialPlus2)) {
    attempt(ModelKind::Spatial, [&] { return fit_spatial(data, ctx, cfg.priors.spatial, opts); });
  }
  if (wants(ModelKind::RSR)) {
    attempt(ModelKind::RSR, [&] { return fit_rsr(data, ctx, cfg.priors.rsr, opts); });
  }
  if (wants(ModelKind::SpatialPlus)) {
    attempt(ModelKind::SpatialPlus, [&] {
      return fit_spatial_plus(data, ctx, cfg.priors.spatial_plus_stage1,
                              cfg.priors.spatial_plus_stage2, opts);
    });
  }
  if (wants(ModelKind::SpatialPlus2)) {
    attempt(ModelKind::SpatialPlus2, [&] {
      if (!fits.count(ModelKind::Spatial)) throw NumericalError("needs the Spatial fit for its plug-in range");
      const FitResult& sp = fits.at(ModelKind::Spatial);
      const SpectralBasis basis = spectral_basis(data.locations, sp.mode.rho);
      FitOptions warm = opts;
      warm.grid.start = sp.mode;
      warm.grid.skip_coarse = true;
      KSelection sel = select_k(data, ctx, cfg.priors.spatial_plus2, basis,
                                k_grid_removed(cfg, data.size()), cfg.ksweep.min_keep, warm);
      spdlog::info("Spatial+2.0: {} eigenvectors kept", sel.k_kept);
      return std::move(sel.best);
    });
  }

  auto out = open_out(cfg.out / "fits.csv");
  out << "model,beta_mean,q025,q975,DIC,WAIC,SE\n";
  for (ModelKind kind : cfg.models) {
    out << model_name(kind) << ',';
    const auto it = fits.find(kind);
    if (it == fits.end()) {
      out << "NA,NA,NA,NA,NA,NA\n";
      continue;
    }
    const EffectSummary& b = it->second.effect();
    put(out, b.mean);
    out << ',';
    put(out, b.q025);
    out << ',';
    put(out, b.q975);
    out << ',';
    put(out, it->second.dic);
    out << ',';
    put(out, it->second.waic.waic);
    out << ',';
    put(out, b.sd);
    out << '\n';
    write_fit_artifact(cfg.out / ("fit_" + model_slug(model_name(kind)) + ".json"),
                       make_artifact(it->second, dataset_name, cfg.log_response));
  }
  if (!failures.empty()) {
    std::string msg = "model fits failed:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw FitFailure(msg);
  }
  return kExitOk;
}

int cmd_sweep_k(const RunConfig& cfg) {
  const Dataset data = load_dataset(cfg);
  const auto mesh = fit_mesh(cfg, data);
  const auto grid = k_grid_removed(cfg, data.size());
  ensure_dir(cfg.out);
  const SpatialContext ctx = make_spatial_context(data.locations, mesh);
  const FitOptions opts = fit_options(cfg);
  const FitResult sp = fit_spatial(data, ctx, cfg.priors.spatial, opts);
  spdlog::info("plug-in range from the Spatial fit: {:.6g}", sp.mode.rho);
  const SpectralBasis basis = spectral_basis(data.locations, sp.mode.rho);
  FitOptions warm = opts;
  warm.grid.start = sp.mode;
  warm.grid.skip_coarse = true;
  const KSelection sel = select_k(data, ctx, cfg.priors.spatial_plus2, basis, grid,
                                  cfg.ksweep.min_keep, warm);
  auto out = open_out(cfg.out / "ksweep.csv");
  out << "k_kept,waic\n";
  for (const auto& row : sel.table) {
    out << row.k_kept << ',';
    put(out, row.waic);
    out << '\n';
  }
  auto k = open_out(cfg.out / "k_selected.txt");
  k << sel.k_kept << '\n';
  spdlog::info("selected {} kept eigenvectors (WAIC {:.3f})", sel.k_kept, sel.best.waic.waic);
  return kExitOk;
}

GridDef parse_grid_flag(const std::string& text) {
  std::vector<double> v;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--grid expects x_min,y_min,cellsize,ncols,nrows; got '" + text + "'");
    }
  }
  if (v.size() != 5) throw ConfigError("--grid expects x_min,y_min,cellsize,ncols,nrows");
  GridDef g{v[0], v[1], v[2], static_cast<int>(v[3]), static_cast<int>(v[4])};
  g.validate();
  return g;
}

// Covariate at each cell centre: from a raster when configured, otherwise
// the value at the nearest observation.
Eigen::VectorXd cell_covariate(const RunConfig& cfg, const Dataset& data,
                               std::span<const Point> centres) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(centres.size()));
  if (cfg.prediction.covariate_raster) {
    const AsciiGrid raster = read_ascii_grid(*cfg.prediction.covariate_raster);
    for (std::size_t c = 0; c < centres.size(); ++c) {
      const auto cell = raster.def.cell_of(centres[c]);
      out[static_cast<Eigen::Index>(c)] =
          cell ? raster.values[static_cast<Eigen::Index>(*cell)] : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
  }
  spdlog::info("no covariate raster configured; using the nearest observation's covariate");
  for (std::size_t c = 0; c < centres.size(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (std::size_t i = 0; i < data.locations.size(); ++i) {
      const double d = distance(centres[c], data.locations[i]);
      if (d < best) {
        best = d;
        arg = static_cast<Eigen::Index>(i);
      }
    }
    out[static_cast<Eigen::Index>(c)] = data.x[arg];
  }
  return out;
}

int cmd_predict(const RunConfig& cfg, const Overrides& o) {
  std::vector<ModelKind> models = cfg.prediction.models;
  if (!o.models.empty()) {
    models.clear();
    for (const auto& m : o.models) {
      try {
        models.push_back(parse_model(m));
      } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
      }
    }
  }
  std::optional<GridDef> grid = cfg.prediction.grid;
  if (o.grid) grid = parse_grid_flag(*o.grid);
  if (!grid) throw ConfigError("no prediction grid: set 'prediction.grid' or pass --grid");
  for (ModelKind kind : models) {
    if (kind == ModelKind::SpatialPlus2) {
      throw UnsupportedOperation(
          "Spatial+2.0 cannot produce prediction maps: its covariate split needs the "
          "eigendecomposition of a dense precision matrix over all prediction locations, "
          "which cannot be obtained numerically at map scale");
    }
  }
  if (grid->cells() > PredictOptions{}.max_cells) {
    std::ostringstream msg;
    msg << "prediction grid has " << grid->cells() << " cells (" << grid->ncols << " x "
        << grid->nrows << "), above the limit of " << PredictOptions{}.max_cells;
    throw UnsupportedOperation(msg.str());
  }

  const fs::path fit_dir = o.fit_dir ? fs::path(*o.fit_dir) : cfg.out;
  const Dataset data = load_dataset(cfg);
  std::shared_ptr<const TriMesh> mesh;
  {
    std::ifstream m(fit_dir / "mesh.txt");
    if (!m) throw ConfigError("no mesh.txt in " + fit_dir.string() + "; run 'fit' first");
    mesh = std::make_shared<const TriMesh>(read_mesh(m));
  }
  const SpatialContext ctx = make_spatial_context(data.locations, mesh);
  const std::vector<Point> centres = grid->centres();
  std::vector<std::size_t> inside;
  std::vector<Point> pts;
  for (std::size_t c = 0; c < centres.size(); ++c) {
    if (mesh->locate(centres[c])) {
      inside.push_back(c);
      pts.push_back(centres[c]);
    }
  }
  if (inside.size() < centres.size()) {
    spdlog::warn("{} of {} cells lie outside the mesh and are written as no data",
                 centres.size() - inside.size(), centres.size());
  }
  Eigen::VectorXd cov = cell_covariate(cfg, data, pts);
  std::vector<std::size_t> usable;
  std::vector<Point> usable_pts;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (std::isfinite(cov[static_cast<Eigen::Index>(j)])) {
      usable.push_back(inside[j]);
      usable_pts.push_back(pts[j]);
    }
  }
  Eigen::VectorXd usable_cov(static_cast<Eigen::Index>(usable.size()));
  for (std::size_t j = 0, u = 0; j < pts.size(); ++j) {
    if (std::isfinite(cov[static_cast<Eigen::Index>(j)])) usable_cov[static_cast<Eigen::Index>(u++)] = cov[static_cast<Eigen::Index>(j)];
  }

  ensure_dir(cfg.out);
  for (ModelKind kind : models) {
    const std::string slug = model_slug(model_name(kind));
    const FitArtifact art = read_fit_artifact(fit_dir / ("fit_" + slug + ".json"));
    if (art.model != kind) throw ConfigError("artifact fit_" + slug + ".json holds another model");
    const FitResult fit = restore_fit(art, data, &ctx);
    PredictOptions po;
    po.draws = cfg.prediction.draws;
    po.seed = cfg.seed;
    po.exponentiate = art.log_response;
    const Eigen::VectorXd med = predict_grid(fit, &ctx, usable_pts, usable_cov, po);
    AsciiGrid out;
    out.def = *grid;
    out.values = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid->cells()),
                                           std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < usable.size(); ++j) out.values[static_cast<Eigen::Index>(usable[j])] = med[static_cast<Eigen::Index>(j)];
    const fs::path path = cfg.out / ("predict_" + slug + ".asc");
    write_ascii_grid(path, out);
    if (med.size() > 0) {
      spdlog::info("{}: posterior median range [{:.6g}, {:.6g}] over {} cells -> {}", model_name(kind),
                   med.minCoeff(), med.maxCoeff(), med.size(), path.string());
    }
  }
  return kExitOk;
}

int cmd_simulate(const RunConfig& cfg) {
  if (!cfg.simulation) throw ConfigError("the 'simulation' block is required for simulate");
  const SimConfig& sim = *cfg.simulation;
  StudyOptions so;
  so.models = cfg.models;
  so.priors = cfg.priors;
  so.fit = fit_options(cfg);
  so.k_points = cfg.ksweep.points;
  so.min_keep = cfg.ksweep.min_keep;
  so.threads = cfg.threads;
  so.progress = [](int r) { spdlog::info("replicate {} done", r); };
  ensure_dir(cfg.out);
  const StudyResult res = run_study(sim, so);

  if (cfg.save_datasets) {
    ensure_dir(cfg.out / "datasets");
    const auto mesh = simulation_mesh(sim);
    for (int r = 0; r < sim.replicates; ++r) {
      std::ostringstream name;
      name << "replicate_" << std::setw(3) << std::setfill('0') << r << ".csv";
      write_dataset_csv(cfg.out / "datasets" / name.str(), generate_replicate(sim, r, *mesh));
    }
  }
  {
    std::ofstream s(cfg.out / "study_summary.csv");
    write_summary_csv(s, res.summary);
    std::ofstream raw(cfg.out / "study_raw.csv");
    write_raw_csv(raw, res.records());
  }
  std::string failed;
  for (const auto& rec : res.records()) {
    if (!rec.ok) failed += "\n  replicate " + std::to_string(rec.replicate) + " " + rec.model + ": " + rec.error;
  }
  if (!failed.empty()) throw FitFailure("some fits failed:" + failed);
  return kExitOk;
}

std::vector<ReplicateRecord> read_raw_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<ReplicateRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream s(line);
    std::vector<std::string> f;
    std::string item;
    while (std::getline(s, item, ',')) f.push_back(item);
    if (f.size() != 9) throw ConfigError(path.string() + ": malformed row '" + line + "'");
    ReplicateRecord r;
    r.replicate = std::stoi(f[0]);
    r.model = f[1];
    r.ok = f[2] != "NA";
    if (r.ok) {
      r.beta = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
      r.dic = std::stod(f[6]);
      r.waic = std::stod(f[7]);
    }
    if (f[8] != "NA") r.k_kept = std::stoi(f[8]);
    out.push_back(r);
  }
  return out;
}

int cmd_report(const RunConfig& cfg) {
  std::ostringstream rep;
  rep << std::fixed;
  bool any = false;
  if (fs::exists(cfg.out / "study_raw.csv")) {
    const double truth = cfg.simulation ? cfg.simulation->beta_true : SimConfig{}.beta_true;
    const auto summary = summarize_study(read_raw_csv(cfg.out / "study_raw.csv"), truth);
    rep << "Simulation study (true effect " << std::setprecision(3) << truth << ")\n";
    rep << std::left << std::setw(13) << "model" << std::right << std::setw(6) << "reps"
        << std::setw(10) << "mean" << std::setw(10) << "ESD" << std::setw(10) << "mean SE"
        << std::setw(12) << "DIC" << std::setw(12) << "WAIC" << std::setw(10) << "coverage" << '\n';
    for (const auto& s : summary) {
      rep << std::left << std::setw(13) << s.model << std::right << std::setw(6) << s.replicates
          << std::setprecision(3) << std::setw(10) << s.mean_beta << std::setw(10) << s.esd
          << std::setw(10) << s.mean_se << std::setw(12) << s.mean_dic << std::setw(12)
          << s.mean_waic << std::setprecision(0) << std::setw(9) << s.coverage << "%\n";
    }
    any = true;
  }
  if (fs::exists(cfg.out / "fits.csv")) {
    std::ifstream in(cfg.out / "fits.csv");
    std::string line;
    std::getline(in, line);
    rep << (any ? "\n" : "") << "Model fits\n";
    rep << std::left << std::setw(13) << "model" << std::right << std::setw(10) << "beta"
        << std::setw(22) << "95% interval" << std::setw(12) << "DIC" << std::setw(12) << "WAIC"
        << std::setw(9) << "SE" << '\n';
    while (std::getline(in, line)) {
      std::stringstream s(line);
      std::vector<std::string> f;
      std::string item;
      while (std::getline(s, item, ',')) f.push_back(item);
      if (f.size() != 7) continue;
      rep << std::left << std::setw(13) << f[0] << std::right << std::setw(10) << f[1]
          << std::setw(22) << ("[" + f[2] + ", " + f[3] + "]") << std::setw(12) << f[4]
          << std::setw(12) << f[5] << std::setw(9) << f[6] << '\n';
    }
    any = true;
  }
  if (fs::exists(cfg.out / "k_selected.txt")) {
    std::ifstream in(cfg.out / "k_selected.txt");
    std::string k;
    in >> k;
    rep << "\nSpatial+2.0 eigenvectors kept: " << k << '\n';
    any = true;
  }
  if (!any) throw ConfigError("nothing to report in " + cfg.out.string());
  std::cout << rep.str();
  std::ofstream(cfg.out / "report.txt") << rep.str();
  return kExitOk;
}

}  // namespace

std::string model_slug(const std::string& display_name) {
  switch (parse_model(display_name)) {
    case ModelKind::Null: return "null";
    case ModelKind::Spatial: return "spatial";
    case ModelKind::RSR: return "rsr";
    case ModelKind::SpatialPlus: return "spatial_plus";
    case ModelKind::SpatialPlus2: return "spatial_plus2";
  }
  return "model";
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  if (!spdlog::get("geoconfound")) {
    auto logger = spdlog::stderr_color_mt("geoconfound");
    spdlog::set_default_logger(logger);
  }

  CLI::App app{"Spatial confounding toolkit: simulate, fit, sweep-k, predict, report"};
  app.require_subcommand(1);
  Overrides o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "YAML run configuration")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  };
  auto* simulate = app.add_subcommand("simulate", "run the replicate study");
  auto* fit = app.add_subcommand("fit", "fit the configured models to a dataset");
  auto* sweep = app.add_subcommand("sweep-k", "WAIC sweep over kept eigenvectors");
  auto* predict = app.add_subcommand("predict", "posterior median maps");
  auto* report = app.add_subcommand("report", "summarise outputs in the output directory");
  for (auto* sub : {simulate, fit, sweep, predict, report}) common(sub);
  for (auto* sub : {fit, sweep, predict}) sub->add_option("--data", o.data, "dataset CSV");
  predict->add_option("--fit", o.fit_dir, "directory holding the fit artifacts");
  predict->add_option("--grid", o.grid, "x_min,y_min,cellsize,ncols,nrows");
  predict->add_option("--model", o.models, "model(s) to map");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const RunConfig cfg = resolve(o);
    if (*simulate) return cmd_simulate(cfg);
    if (*fit) return cmd_fit(cfg);
    if (*sweep) return cmd_sweep_k(cfg);
    if (*predict) return cmd_predict(cfg, o);
    return cmd_report(cfg);
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const InvalidInput& e) {
    spdlog::error("invalid input: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
}

}  // namespace geoconf
