#include "geoconf/simstudy.hpp"

#include "geoconf/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <thread>

namespace geoconf {

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix(seed ^ splitmix(stream + 0x51ED270B27ULL));
}

void put(std::ostream& out, double v) {
  if (std::isfinite(v)) {
    out << v;
  } else {
    out << "NA";
  }
}

Dataset generate(const SimConfig& cfg, int rep_index, const TriMesh& mesh, Eigen::VectorXd* u_out) {
  cfg.validate();
  const std::uint64_t seed = replicate_seed(cfg.seed, rep_index);
  std::mt19937_64 rng(sub_seed(seed, 0));
  std::uniform_real_distribution<double> unif(0.0, cfg.domain_size);
  Dataset d;
  d.intercept = false;
  d.locations.resize(static_cast<std::size_t>(cfg.n));
  for (auto& p : d.locations) {
    p.x = unif(rng);
    p.y = unif(rng);
  }

  const FemMatrices fem = assemble_fem(mesh);
  const Eigen::VectorXd zx_mesh = sample_field(build_precision(fem, cfg.short_field()), sub_seed(seed, 1));
  const Eigen::VectorXd zu_mesh = sample_field(build_precision(fem, cfg.long_field()), sub_seed(seed, 2));
  const SparseMatrix a = project(mesh, d.locations);
  const Eigen::VectorXd zx = a * zx_mesh;
  const Eigen::VectorXd zu = a * zu_mesh;
  const Eigen::VectorXd ex = standard_normal(cfg.n, sub_seed(seed, 3));
  const Eigen::VectorXd ey = standard_normal(cfg.n, sub_seed(seed, 4));

  d.x = cfg.loading * zx + std::sqrt(cfg.sigma_x2) * ex;
  const Eigen::VectorXd u = zu - zx;
  d.y = cfg.beta_true * d.x + u + cfg.sigma_y * ey;
  if (u_out) *u_out = u;
  return d;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

ReplicateRecord record_from(int rep, ModelKind kind, const FitResult& fit) {
  ReplicateRecord r;
  r.replicate = rep;
  r.model = model_name(kind);
  r.ok = true;
  r.beta = fit.effect();
  r.dic = fit.dic;
  r.waic = fit.waic.waic;
  r.k_kept = fit.k_kept;
  return r;
}

}  // namespace

void SimConfig::validate() const {
  if (n < 10) throw ConfigError("simulation: n must be at least 10");
  if (replicates < 1) throw ConfigError("simulation: replicates must be at least 1");
  if (!(sigma_x2 > 0.0) || !(sigma_y > 0.0)) {
    throw ConfigError("simulation: noise variances must be positive");
  }
  if (!(domain_size > 0.0)) throw ConfigError("simulation: domain size must be positive");
  if (mesh_nodes < 9) throw ConfigError("simulation: mesh needs at least 9 nodes");
  for (double t : {short_theta1, short_theta2, long_theta1, long_theta2, beta_true, loading}) {
    if (!std::isfinite(t)) throw ConfigError("simulation: parameters must be finite");
  }
}

// theta1 is the log range and theta2 the log sd, both against unit references.
HyperParams SimConfig::short_field() const {
  HyperParams hp;
  hp.rho = std::exp(short_theta1);
  hp.sigma = std::exp(short_theta2);
  return hp;
}

HyperParams SimConfig::long_field() const {
  HyperParams hp;
  hp.rho = std::exp(long_theta1);
  hp.sigma = std::exp(long_theta2);
  return hp;
}

std::shared_ptr<const TriMesh> simulation_mesh(const SimConfig& cfg) {
  cfg.validate();
  const Domain dom = cfg.domain();
  const double ext = default_extension(dom);
  const double edge = max_edge_for_node_count(dom, ext, cfg.mesh_nodes);
  return std::make_shared<const TriMesh>(build_mesh(dom, edge, ext));
}

std::uint64_t replicate_seed(std::uint64_t master, int rep_index) {
  return sub_seed(splitmix(master), static_cast<std::uint64_t>(rep_index) + 1000);
}

Dataset generate_replicate(const SimConfig& cfg, int rep_index, const TriMesh& mesh) {
  return generate(cfg, rep_index, mesh, nullptr);
}

Dataset generate_replicate(const SimConfig& cfg, int rep_index) {
  return generate_replicate(cfg, rep_index, *simulation_mesh(cfg));
}

void CaseStudyConfig::validate() const {
  if (n < 10) throw ConfigError("case study: n must be at least 10");
  if (!(width > 0.0) || !(height > 0.0)) throw ConfigError("case study: extent must be positive");
  if (!(field_range > 0.0) || !(field_sd > 0.0)) {
    throw ConfigError("case study: field range and sd must be positive");
  }
  if (!(covariate_noise_sd > 0.0) || !(response_noise_sd > 0.0)) {
    throw ConfigError("case study: noise sds must be positive");
  }
}

namespace {

// The shared field z at the mesh nodes of the case-study generator.
struct CaseStudyField {
  TriMesh mesh;
  Eigen::VectorXd nodes;
};

CaseStudyField case_study_field(const CaseStudyConfig& cfg) {
  cfg.validate();
  const Domain dom{0.0, cfg.width, 0.0, cfg.height};
  const double ext = default_extension(dom);
  CaseStudyField f{build_mesh(dom, max_edge_for_node_count(dom, ext, cfg.mesh_nodes), ext), {}};
  HyperParams hp;
  hp.rho = cfg.field_range;
  hp.sigma = cfg.field_sd;
  f.nodes = sample_field(build_precision(assemble_fem(f.mesh), hp), sub_seed(cfg.seed, 1));
  return f;
}

}  // namespace

Dataset generate_case_study(const CaseStudyConfig& cfg) {
  const CaseStudyField field = case_study_field(cfg);
  std::mt19937_64 rng(sub_seed(cfg.seed, 0));
  std::uniform_real_distribution<double> ux(0.0, cfg.width), uy(0.0, cfg.height);
  Dataset d;
  d.intercept = true;
  d.locations.resize(static_cast<std::size_t>(cfg.n));
  for (auto& p : d.locations) {
    p.x = ux(rng);
    p.y = uy(rng);
  }
  const Eigen::VectorXd z = project(field.mesh, d.locations) * field.nodes;
  const Eigen::VectorXd ex = standard_normal(cfg.n, sub_seed(cfg.seed, 2));
  const Eigen::VectorXd ey = standard_normal(cfg.n, sub_seed(cfg.seed, 3));
  d.x = (cfg.covariate_intercept + cfg.covariate_loading * z.array() + cfg.covariate_noise_sd * ex.array()).matrix();
  d.y = (cfg.response_intercept + cfg.beta_true * d.x.array() + cfg.response_loading * z.array() +
         cfg.response_noise_sd * ey.array())
            .exp()
            .matrix();
  return d;
}

Eigen::VectorXd case_study_covariate_surface(const CaseStudyConfig& cfg,
                                             std::span<const Point> points) {
  const CaseStudyField field = case_study_field(cfg);
  Eigen::VectorXd out(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    double v = std::numeric_limits<double>::quiet_NaN();
    if (const auto t = field.mesh.locate(points[i])) {
      const auto w = field.mesh.barycentric(*t, points[i]);
      const Triangle& tri = field.mesh.triangles()[*t];
      const double z = w[0] * field.nodes[tri[0]] + w[1] * field.nodes[tri[1]] + w[2] * field.nodes[tri[2]];
      v = cfg.covariate_intercept + cfg.covariate_loading * z;
    }
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

std::vector<ReplicateRecord> StudyResult::records() const {
  std::vector<ReplicateRecord> out;
  for (const auto& r : replicates) out.insert(out.end(), r.records.begin(), r.records.end());
  return out;
}

ReplicateOutcome fit_replicate(const SimConfig& cfg, int rep_index, const Dataset& data,
                               std::shared_ptr<const TriMesh> mesh, const StudyOptions& options) {
  ReplicateOutcome out;
  out.replicate = rep_index;
  const std::uint64_t seed = replicate_seed(cfg.seed, rep_index);
  FitOptions fo = options.fit;
  fo.seed = sub_seed(seed, 7);

  auto wants = [&](ModelKind k) {
    return std::find(options.models.begin(), options.models.end(), k) != options.models.end();
  };
  auto failed = [&](ModelKind k, const std::string& why) {
    ReplicateRecord r;
    r.replicate = rep_index;
    r.model = model_name(k);
    r.error = why;
    spdlog::warn("replicate {} {}: {}", rep_index, r.model, why);
    return r;
  };

  std::optional<SpatialContext> ctx;
  std::optional<FitResult> null_fit, spatial_fit;
  std::string ctx_error, null_error, spatial_error;
  try {
    ctx = make_spatial_context(data.locations, std::move(mesh));
  } catch (const std::exception& e) {
    ctx_error = e.what();
  }
  try {
    null_fit = fit_null(data, fo);
    const Eigen::VectorXd resid = data.y - null_fit->fitted;
    const MoranResult m = morans_i(resid, data.locations);
    out.null_residual_moran_i = m.i;
    out.null_residual_moran_p = m.p_value;
  } catch (const std::exception& e) {
    null_error = e.what();
  }
  if (ctx && (wants(ModelKind::Spatial) || wants(ModelKind::SpatialPlus2))) {
    try {
      spatial_fit = fit_spatial(data, *ctx, options.priors.spatial, fo);
    } catch (const std::exception& e) {
      spatial_error = e.what();
    }
  }

  for (ModelKind kind : options.models) {
    if (kind == ModelKind::Null) {
      out.records.push_back(null_fit ? record_from(rep_index, kind, *null_fit) : failed(kind, null_error));
      continue;
    }
    if (!ctx) {
      out.records.push_back(failed(kind, ctx_error));
      continue;
    }
    try {
      switch (kind) {
        case ModelKind::Spatial:
          if (!spatial_fit) throw NumericalError(spatial_error);
          out.records.push_back(record_from(rep_index, kind, *spatial_fit));
          break;
        case ModelKind::RSR:
          out.records.push_back(
              record_from(rep_index, kind, fit_rsr(data, *ctx, options.priors.rsr, fo)));
          break;
        case ModelKind::SpatialPlus:
          out.records.push_back(record_from(
              rep_index, kind,
              fit_spatial_plus(data, *ctx, options.priors.spatial_plus_stage1,
                               options.priors.spatial_plus_stage2, fo)));
          break;
        case ModelKind::SpatialPlus2: {
          if (!spatial_fit) throw NumericalError("no Spatial fit for the plug-in range: " + spatial_error);
          const SpectralBasis basis = spectral_basis(data.locations, spatial_fit->mode.rho);
          FitOptions warm = fo;
          warm.grid.start = spatial_fit->mode;
          warm.grid.skip_coarse = true;
          const auto grid = default_k_grid(data.size(), options.min_keep, options.k_points);
          const KSelection sel =
              select_k(data, *ctx, options.priors.spatial_plus2, basis, grid, options.min_keep, warm);
          out.records.push_back(record_from(rep_index, kind, sel.best));
          break;
        }
        case ModelKind::Null:
          break;
      }
    } catch (const std::exception& e) {
      out.records.push_back(failed(kind, e.what()));
    }
  }
  return out;
}

StudyResult run_study(const SimConfig& cfg, const StudyOptions& options) {
  cfg.validate();
  if (options.models.empty()) throw ConfigError("simulation: no models requested");
  const auto mesh = simulation_mesh(cfg);
  spdlog::info("simulation mesh: {} nodes, {} triangles", mesh->num_vertices(),
               mesh->num_triangles());

  StudyResult result;
  result.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int r = next++; r < cfg.replicates; r = next++) {
      Eigen::VectorXd u;
      const Dataset data = generate(cfg, r, *mesh, &u);
      ReplicateOutcome outcome = fit_replicate(cfg, r, data, mesh, options);
      outcome.corr_x_u = correlation(data.x, u);
      result.replicates[static_cast<std::size_t>(r)] = std::move(outcome);
      if (options.progress) options.progress(r);
    }
  };
  const int threads = std::max(1, std::min(options.threads, cfg.replicates));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  result.summary = summarize_study(result.records(), cfg.beta_true);
  return result;
}

void write_summary_csv(std::ostream& out, const std::vector<ModelSummary>& summary) {
  out << "model,replicates,failed,mean_beta,esd,mean_se,dic,waic,coverage\n";
  out << std::setprecision(10);
  for (const auto& s : summary) {
    out << s.model << ',' << s.replicates << ',' << s.failed << ',';
    put(out, s.mean_beta);
    out << ',';
    put(out, s.esd);
    out << ',';
    put(out, s.mean_se);
    out << ',';
    put(out, s.mean_dic);
    out << ',';
    put(out, s.mean_waic);
    out << ',';
    put(out, s.coverage);
    out << '\n';
  }
}

void write_raw_csv(std::ostream& out, const std::vector<ReplicateRecord>& records) {
  out << "replicate,model,beta_mean,beta_sd,q025,q975,dic,waic,k_selected\n";
  out << std::setprecision(10);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : records) {
    out << r.replicate << ',' << r.model << ',';
    put(out, r.ok ? r.beta.mean : nan);
    out << ',';
    put(out, r.ok ? r.beta.sd : nan);
    out << ',';
    put(out, r.ok ? r.beta.q025 : nan);
    out << ',';
    put(out, r.ok ? r.beta.q975 : nan);
    out << ',';
    put(out, r.ok ? r.dic : nan);
    out << ',';
    put(out, r.ok ? r.waic : nan);
    out << ',';
    if (r.k_kept) {
      out << *r.k_kept;
    } else {
      out << "NA";
    }
    out << '\n';
  }
}

}  // namespace geoconf
