#include "geoconf/models.hpp"

#include "geoconf/errors.hpp"
#include "geoconf/matern.hpp"

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

namespace geoconf {

namespace {

double sample_sd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

NoisePrior resolve_noise(const std::optional<NoisePrior>& noise, const Eigen::VectorXd& y) {
  if (noise) return *noise;
  const double sd = sample_sd(y);
  return {10.0 * (sd > 0.0 ? sd : 1.0), 0.01};
}

// Starting hyperparameters for a field model: a quarter of the data extent
// for the range and the response variance split evenly between field and
// noise.
HyperParams field_start(std::span<const Point> locations, const Eigen::VectorXd& response) {
  const Domain box = bounding_domain(locations);
  const double extent = std::max(box.width(), box.height());
  const double sd = std::max(sample_sd(response), 1e-8);
  HyperParams hp;
  hp.rho = 0.25 * (extent > 0.0 ? extent : 1.0);
  hp.sigma = sd / std::sqrt(2.0);
  hp.sigma_eps = sd / std::sqrt(2.0);
  return hp;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

FitResult summarise(ModelKind kind, const Dataset& data, std::shared_ptr<const LatentModel> model,
                    HyperPosterior post, const Eigen::VectorXd& covariate,
                    const FitOptions& options) {
  FitResult fit;
  fit.model = kind;
  fit.intercept = data.intercept;
  fit.covariate_index = data.covariate_index();
  for (Eigen::Index j = 0; j < model->num_fixed(); ++j) {
    fit.beta.push_back(posterior_summary(post, j));
  }
  fit.mode = post.mode;
  if (model->has_field()) fit.field_mean = post.field_mean();
  fit.fitted = post.predictor_mean();
  fit.covariate_used = covariate;
  fit.hyper = std::move(post);
  attach_criteria(fit, *model, options);
  fit.latent = std::move(model);
  return fit;
}

GridSpec grid_with_start(const FitOptions& options, const HyperParams& fallback) {
  GridSpec grid = options.grid;
  if (!grid.start) grid.start = fallback;
  return grid;
}

HyperParams covariate_free_mode(const Dataset& data, const SpatialContext& ctx,
                                const HyperPriors& priors, GridSpec grid) {
  const LatentModel aux(data.y, Eigen::MatrixXd::Ones(data.size(), 1), ctx.fem, ctx.projector,
                        false, kVagueBetaPrecision);
  grid.points = 1;
  try {
    return fit_hyperparameters(aux, priors, grid).mode;
  } catch (const NumericalError&) {
    return *grid.start;
  }
}

FitResult fit_field_model(ModelKind kind, const Dataset& data, const SpatialContext& ctx,
                          const ModelPriors& priors, const FitOptions& options, bool orthogonal) {
  data.validate();
  if (ctx.projector.rows() != data.size()) {
    throw InvalidInput("spatial context was built for a different set of locations");
  }
  auto model = std::make_shared<LatentModel>(data.y, data.design(), ctx.fem, ctx.projector,
                                             orthogonal, options.beta_precision);
  const HyperPriors hp{priors.field, resolve_noise(priors.noise, data.y)};
  GridSpec grid = grid_with_start(options, field_start(data.locations, data.y));
  if (!orthogonal && !options.grid.start) {
    // A smooth covariate can capture the field through beta and leave a
    // competing local mode; the covariate-free fit starts the other basin.
    grid.extra_starts.push_back(covariate_free_mode(data, ctx, hp, grid));
  }
  HyperPosterior post = fit_hyperparameters(*model, hp, grid);
  return summarise(kind, data, std::move(model), std::move(post), data.x, options);
}

}  // namespace

// ---------------------------------------------------------------------------

void Dataset::validate() const {
  const auto n = static_cast<Eigen::Index>(locations.size());
  if (n == 0) throw InvalidInput("dataset is empty");
  if (y.size() != n || x.size() != n) {
    throw InvalidInput("dataset columns differ in length");
  }
  if (!y.allFinite() || !x.allFinite()) throw InvalidInput("dataset has non-finite values");
  for (const auto& p : locations) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw InvalidInput("dataset has non-finite coordinates");
    }
  }
  if (x.cwiseAbs().maxCoeff() == 0.0) throw InvalidInput("covariate is identically zero");
}

Eigen::MatrixXd Dataset::design(const Eigen::VectorXd& covariate) const {
  Eigen::MatrixXd f(covariate.size(), intercept ? 2 : 1);
  if (intercept) {
    f.col(0).setOnes();
    f.col(1) = covariate;
  } else {
    f.col(0) = covariate;
  }
  return f;
}

std::string model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Null: return "Null";
    case ModelKind::Spatial: return "Spatial";
    case ModelKind::RSR: return "RSR";
    case ModelKind::SpatialPlus: return "Spatial+";
    case ModelKind::SpatialPlus2: return "Spatial+2.0";
  }
  return "?";
}

ModelKind parse_model(std::string_view name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "null") return ModelKind::Null;
  if (s == "spatial") return ModelKind::Spatial;
  if (s == "rsr") return ModelKind::RSR;
  if (s == "spatial+" || s == "spatial_plus" || s == "spatialplus") return ModelKind::SpatialPlus;
  if (s == "spatial+2.0" || s == "spatial+2" || s == "spatial_plus2" || s == "spatialplus2") {
    return ModelKind::SpatialPlus2;
  }
  throw InvalidInput("unknown model '" + std::string(name) + "'");
}

PriorSet default_priors(Scenario scenario) {
  PriorSet p;
  if (scenario == Scenario::Simulation) {
    p.spatial.field = {0.05, 0.05, 3.0, 0.05};
    p.rsr.field = {15.0, 0.9999, 1.5, 0.0001};
    p.spatial_plus_stage1.field = {0.01, 0.01, 0.15, 0.01};
    p.spatial_plus_stage2.field = {0.05, 0.05, 3.0, 0.05};
    p.spatial_plus2.field = {0.05, 0.05, 3.0, 0.05};
  } else {
    p.spatial.field = {6e4, 0.05, 5.0, 0.05};
    p.rsr.field = {18e6, 0.9999, 2.5, 0.0001};
    p.spatial_plus_stage1.field = {13e4, 0.05, 13.0, 0.05};
    p.spatial_plus_stage2.field = {6e4, 0.05, 5.0, 0.05};
    p.spatial_plus2.field = {6e4, 0.05, 5.0, 0.05};
  }
  return p;
}

SpatialContext make_spatial_context(std::span<const Point> locations,
                                    std::shared_ptr<const TriMesh> mesh) {
  SpatialContext ctx;
  ctx.fem = std::make_shared<const FemMatrices>(assemble_fem(*mesh));
  ctx.projector = project(*mesh, locations);
  ctx.mesh = std::move(mesh);
  return ctx;
}

Eigen::VectorXd project_out(const Eigen::VectorXd& u, const Eigen::MatrixXd& basis) {
  if (basis.rows() != u.size()) throw InvalidInput("project_out: length mismatch");
  if (basis.cols() == 0) return u;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
  if (qr.rank() < basis.cols()) throw NumericalError("project_out: basis is rank deficient");
  const Eigen::VectorXd coef = qr.solve(u);
  return u - basis * coef;
}

void attach_criteria(FitResult& fit, const LatentModel& model, const FitOptions& options) {
  if (options.draws < 2) throw InvalidInput("need at least two posterior draws for WAIC/DIC");
  const PosteriorDraws draws = sample_posterior(
      model, fit.hyper, options.draws, mix_seed(options.seed, static_cast<std::uint64_t>(fit.model)));
  const Eigen::VectorXd& y = model.response();
  const Eigen::MatrixXd ll = pointwise_loglik(y, draws.predictor, draws.sigma_eps);
  fit.waic = waic(ll);
  const Eigen::VectorXd deviance = -2.0 * ll.colwise().sum().transpose();
  const Eigen::VectorXd eta = fit.hyper.predictor_mean();
  const double s = fit.hyper.mean_sigma_eps();
  Eigen::VectorXd sigma(1);
  sigma[0] = s;
  const double dev_mean = -2.0 * pointwise_loglik(y, eta, sigma).sum();
  fit.dic = dic(deviance, dev_mean);
  fit.p_d = deviance.mean() - dev_mean;
}

FitResult fit_null(const Dataset& data, const FitOptions& options,
                   std::optional<NoisePrior> noise) {
  data.validate();
  auto model = std::make_shared<LatentModel>(data.y, data.design(), options.beta_precision);
  HyperPriors priors;
  priors.noise = resolve_noise(noise, data.y);
  GridSpec grid = options.grid;
  if (!grid.fixed) grid.start.reset();  // field starts do not apply; use the response scale
  HyperPosterior post = fit_hyperparameters(*model, priors, grid);
  return summarise(ModelKind::Null, data, std::move(model), std::move(post), data.x, options);
}

FitResult fit_spatial(const Dataset& data, const SpatialContext& ctx, const ModelPriors& priors,
                      const FitOptions& options) {
  return fit_field_model(ModelKind::Spatial, data, ctx, priors, options, false);
}

FitResult fit_rsr(const Dataset& data, const SpatialContext& ctx, const ModelPriors& priors,
                  const FitOptions& options) {
  return fit_field_model(ModelKind::RSR, data, ctx, priors, options, true);
}

FitResult fit_spatial_plus(const Dataset& data, const SpatialContext& ctx,
                           const ModelPriors& stage1, const ModelPriors& stage2,
                           const FitOptions& options) {
  data.validate();
  // stage 1: the covariate on space alone
  Eigen::MatrixXd f1(data.size(), data.intercept ? 1 : 0);
  if (data.intercept) f1.col(0).setOnes();
  LatentModel model1(data.x, f1, ctx.fem, ctx.projector, false, options.beta_precision);
  const HyperPriors hp1{stage1.field, resolve_noise(stage1.noise, data.x)};
  GridSpec grid1 = options.grid;
  if (!grid1.fixed) {  // fixed hyperparameters apply to both stages
    grid1.start = field_start(data.locations, data.x);
    grid1.skip_coarse = false;
  }
  const HyperPosterior post1 = fit_hyperparameters(model1, hp1, grid1);
  const Eigen::VectorXd residual = data.x - post1.predictor_mean();
  const double scale = std::max(data.x.cwiseAbs().maxCoeff(), 1e-300);
  if (residual.cwiseAbs().maxCoeff() < 1e-6 * scale) {
    throw NumericalError(
        "Spatial+ stage 1 absorbed the whole covariate (residual numerically zero); "
        "tighten the stage-1 priors on the field range and sd");
  }

  Dataset second = data;
  second.x = residual;
  FitResult fit = fit_field_model(ModelKind::SpatialPlus, second, ctx, stage2, options, false);
  fit.stage1_field_mean = post1.field_mean();
  fit.stage1_intercept = data.intercept ? post1.beta_mean()[0] : 0.0;
  return fit;
}

SpectralBasis spectral_basis(std::span<const Point> locations, double range) {
  if (!(range > 0.0)) throw InvalidInput("spectral_basis: reference range must be positive");
  const MaternParams par{1.0, range, 1.0};
  DenseCovariance dense = dense_cov_matrix(locations, par);
  Eigen::MatrixXd& cov = dense.matrix;
  if (!dense.jittered) cov.diagonal().array() += kCovarianceJitter;
  // Q = cov^{-1} shares the eigenvectors; its ascending eigenvalues are the
  // reciprocals of the covariance eigenvalues taken in descending order
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericalError("spectral_basis: eigendecomposition failed");
  const Eigen::Index n = cov.rows();
  if (es.eigenvalues()[0] <= 0.0) {
    throw NumericalError("spectral_basis: covariance is not positive definite");
  }
  SpectralBasis basis;
  basis.range = range;
  basis.vectors.resize(n, n);
  basis.values.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    basis.vectors.col(j) = es.eigenvectors().col(n - 1 - j);
    basis.values[j] = 1.0 / es.eigenvalues()[n - 1 - j];
  }
  return basis;
}

SpectralSplit spectral_split(const SpectralBasis& basis, const Eigen::VectorXd& x, int k) {
  const Eigen::Index n = basis.vectors.rows();
  if (x.size() != n) throw InvalidInput("spectral_split: covariate length differs from basis");
  if (k < 0 || k > n) throw InvalidInput("spectral_split: k must lie in [0, n]");
  if (!x.allFinite()) throw InvalidInput("spectral_split: covariate is not finite");
  SpectralSplit s;
  s.k = k;
  s.coefficients = basis.vectors.transpose() * x;
  s.z_star = basis.vectors.leftCols(k) * s.coefficients.head(k);
  s.z = x - s.z_star;
  return s;
}

SpectralSplit spectral_split(const Dataset& data, double range, int k) {
  return spectral_split(spectral_basis(data.locations, range), data.x, k);
}

FitResult fit_spatial_plus2(const Dataset& data, const SpatialContext& ctx,
                            const ModelPriors& priors, const SpectralBasis& basis, int k,
                            const FitOptions& options) {
  data.validate();
  const SpectralSplit split = spectral_split(basis, data.x, k);
  Dataset decorrelated = data;
  decorrelated.x = split.z;
  FitResult fit = fit_field_model(ModelKind::SpatialPlus2, decorrelated, ctx, priors, options, false);
  fit.k_removed = k;
  fit.k_kept = static_cast<int>(data.size()) - k;
  fit.reference_range = basis.range;
  return fit;
}

std::size_t select_k_from_table(const std::vector<KSweepRow>& table) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table[i].admissible || !std::isfinite(table[i].waic)) continue;
    if (!best || table[i].waic < table[*best].waic) best = i;
  }
  if (!best) {
    throw ConfigError("every candidate eigenvector count falls in the excluded low-count zone");
  }
  return *best;
}

KSelection select_k(const Dataset& data, const SpatialContext& ctx, const ModelPriors& priors,
                    const SpectralBasis& basis, const std::vector<int>& k_grid, int min_keep,
                    const FitOptions& options) {
  if (k_grid.empty()) throw InvalidInput("select_k: empty k grid");
  const auto n = static_cast<int>(data.size());
  KSelection sel;
  std::optional<FitResult> best;
  for (int k : k_grid) {
    KSweepRow row;
    row.k_removed = k;
    row.k_kept = n - k;
    row.admissible = row.k_kept > min_keep;
    row.waic = std::numeric_limits<double>::quiet_NaN();
    // excluded counts are still fitted for the sweep table, but may fail
    // once almost nothing of the covariate is left
    try {
      FitResult fit = fit_spatial_plus2(data, ctx, priors, basis, k, options);
      row.waic = fit.waic.waic;
      if (row.admissible && (!best || row.waic < best->waic.waic)) best = std::move(fit);
    } catch (const std::exception& e) {
      if (row.admissible) throw;
      spdlog::warn("Spatial+ 2.0 with {} kept eigenvectors failed: {}", row.k_kept, e.what());
    }
    sel.table.push_back(row);
  }
  const std::size_t idx = select_k_from_table(sel.table);
  sel.k_removed = sel.table[idx].k_removed;
  sel.k_kept = sel.table[idx].k_kept;
  sel.best = std::move(*best);
  return sel;
}

std::vector<int> default_k_grid(Eigen::Index n, int min_keep, int points) {
  const int top = static_cast<int>(n) - min_keep - 1;
  if (top < 0) throw ConfigError("min_keep leaves no admissible eigenvector count");
  std::vector<int> grid;
  if (points <= 1 || top == 0) return {0};
  for (int i = 0; i < points; ++i) {
    const int k = static_cast<int>(std::lround(static_cast<double>(top) * i / (points - 1)));
    if (grid.empty() || grid.back() != k) grid.push_back(k);
  }
  return grid;
}

// ---------------------------------------------------------------------------

namespace {

double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  }
  return m;
}

}  // namespace

Eigen::VectorXd predict_grid(const FitResult& fit, const SpatialContext* ctx,
                             std::span<const Point> points, const Eigen::VectorXd& covariate,
                             const PredictOptions& options) {
  if (fit.model == ModelKind::SpatialPlus2) {
    throw UnsupportedOperation(
        "Spatial+ 2.0 cannot predict on a map grid: its covariate split needs the "
        "eigendecomposition of a dense precision matrix over every prediction location, "
        "and this decomposition cannot be obtained numerically at map scale");
  }
  if (!fit.latent) throw InvalidInput("predict_grid: fit carries no model");
  const auto cells = points.size();
  if (static_cast<Eigen::Index>(cells) != covariate.size()) {
    throw InvalidInput("predict_grid: covariate length differs from the number of cells");
  }
  if (cells > options.max_cells) {
    std::ostringstream msg;
    msg << "prediction grid has " << cells << " cells, above the limit of " << options.max_cells
        << " (about " << (cells * 8 * 64) / (1024 * 1024) << " MiB of working memory)";
    throw UnsupportedOperation(msg.str());
  }
  const LatentModel& model = *fit.latent;
  const bool field = model.has_field();
  if (field && !ctx) throw InvalidInput("predict_grid: spatial fits need the mesh context");

  SparseMatrix a_new;
  if (field || fit.model == ModelKind::SpatialPlus) a_new = project(*ctx->mesh, points);

  Eigen::VectorXd cov = covariate;
  if (fit.model == ModelKind::SpatialPlus) {
    cov = covariate.array() - fit.stage1_intercept - (a_new * fit.stage1_field_mean).array();
  }
  Dataset shape;
  shape.intercept = fit.intercept;
  const Eigen::MatrixXd f_new = shape.design(cov);
  Eigen::VectorXd out(static_cast<Eigen::Index>(cells));

  if (!field) {
    // fixed effects only: exact Gaussian-mixture median per cell
    std::vector<double> w, mu, sd;
    for (std::size_t c = 0; c < cells; ++c) {
      w.clear();
      mu.clear();
      sd.clear();
      const Eigen::VectorXd row = f_new.row(static_cast<Eigen::Index>(c)).transpose();
      for (const auto& gp : fit.hyper.points) {
        w.push_back(gp.weight);
        mu.push_back(row.dot(gp.beta_mean));
        sd.push_back(std::sqrt(std::max(row.dot(gp.beta_cov * row), 0.0)));
      }
      out[static_cast<Eigen::Index>(c)] = mixture_quantile(w, mu, sd, 0.5);
    }
  } else {
    const PosteriorDraws draws =
        sample_posterior(model, fit.hyper, options.draws, options.seed, options.draws);
    const Eigen::Index p = model.num_fixed();
    const Eigen::MatrixXd beta = draws.latent.topRows(p);
    const Eigen::MatrixXd u = draws.latent.bottomRows(model.num_field());
    // RSR: coefficients of each draw's field on [1, x] over the whole grid
    Eigen::MatrixXd grid_restriction;
    if (model.orthogonal_field()) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(f_new);
      if (qr.rank() < f_new.cols()) {
        throw NumericalError("RSR prediction: the grid design [1, x] is rank deficient");
      }
      const Eigen::MatrixXd gram = f_new.transpose() * f_new;
      const Eigen::MatrixXd cross = (a_new.transpose() * f_new).transpose();
      grid_restriction = gram.ldlt().solve(cross * u);
    }
    const Eigen::Index chunk = 2048;
    std::vector<double> buf(static_cast<std::size_t>(options.draws));
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(cells); start += chunk) {
      const Eigen::Index len = std::min(chunk, static_cast<Eigen::Index>(cells) - start);
      const SparseMatrix a_chunk = a_new.middleRows(start, len);
      const Eigen::MatrixXd f_chunk = f_new.middleRows(start, len);
      Eigen::MatrixXd eta = f_chunk * beta + a_chunk * u;
      if (model.orthogonal_field()) eta -= f_chunk * grid_restriction;
      for (Eigen::Index r = 0; r < len; ++r) {
        for (int j = 0; j < options.draws; ++j) buf[static_cast<std::size_t>(j)] = eta(r, j);
        out[start + r] = median_of(buf);
      }
    }
  }
  if (options.exponentiate) out = out.array().exp();
  return out;
}

}  // namespace geoconf
