#include "geoconf/inference.hpp"

#include "geoconf/errors.hpp"

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace geoconf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Embed an m x m sparse block at (offset, offset) of a size x size matrix.
SparseMatrix embed(const SparseMatrix& block, Eigen::Index offset, Eigen::Index size) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(block.nonZeros()));
  for (Eigen::Index j = 0; j < block.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(block, j); it; ++it) {
      entries.emplace_back(it.row() + offset, it.col() + offset, it.value());
    }
  }
  SparseMatrix out(size, size);
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

// Values of `component` laid out on `pattern` (component must be a
// sub-pattern).
Eigen::VectorXd aligned_values(const SparseMatrix& component, const SparseMatrix& pattern) {
  SparseMatrix merged = component + 0.0 * pattern;
  merged.makeCompressed();
  if (merged.nonZeros() != pattern.nonZeros()) {
    throw NumericalError("internal: component pattern is not contained in the joint pattern");
  }
  return Eigen::Map<const Eigen::VectorXd>(merged.valuePtr(), merged.nonZeros());
}

SparseMatrix with_values(const SparseMatrix& pattern, const Eigen::VectorXd& values) {
  SparseMatrix out = pattern;
  Eigen::Map<Eigen::VectorXd>(out.valuePtr(), out.nonZeros()) = values;
  return out;
}

double sample_sd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 1.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Priors

void PCPrior::validate() const {
  if (!(rho0 > 0.0) || !(sigma0 > 0.0)) throw InvalidInput("PC prior thresholds must be positive");
  if (!(alpha_rho > 0.0 && alpha_rho < 1.0) || !(alpha_sigma > 0.0 && alpha_sigma < 1.0)) {
    throw InvalidInput("PC prior tail probabilities must lie in (0, 1)");
  }
}

double PCPrior::lambda_range() const { return -std::log(alpha_rho) * rho0; }
double PCPrior::lambda_sd() const { return -std::log(alpha_sigma) / sigma0; }

double PCPrior::log_density_range(double rho) const {
  // (d/2) lambda1 rho^(-d/2-1) exp(-lambda1 rho^(-d/2)) with d = 2
  const double l1 = lambda_range();
  return std::log(l1) - 2.0 * std::log(rho) - l1 / rho;
}

double PCPrior::log_density_sd(double sigma) const {
  const double l2 = lambda_sd();
  return std::log(l2) - l2 * sigma;
}

void NoisePrior::validate() const {
  if (!(sigma0 > 0.0) || !(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidInput("noise prior needs sigma0 > 0 and alpha in (0, 1)");
  }
}

double NoisePrior::log_density(double sigma_eps) const {
  const double lambda = -std::log(alpha) / sigma0;
  return std::log(lambda) - lambda * sigma_eps;
}

double pc_prior_logdensity(const HyperParams& hp, const PCPrior& prior) {
  prior.validate();
  return prior.log_density(hp.rho, hp.sigma);
}

// ---------------------------------------------------------------------------
// LinearLGM

void LinearLGM::validate() const {
  const auto n = y.size();
  if (fixed.rows() != n) throw InvalidInput("LinearLGM: design rows differ from response length");
  if (projector.has_value() != field_precision.has_value()) {
    throw InvalidInput("LinearLGM: projector and field precision must come together");
  }
  if (projector) {
    if (projector->rows() != n || projector->cols() != field_precision->rows() ||
        field_precision->rows() != field_precision->cols()) {
      throw InvalidInput("LinearLGM: field dimensions are inconsistent");
    }
  }
  if (orthogonal_field && (!projector || fixed.cols() == 0)) {
    throw InvalidInput("LinearLGM: orthogonal restriction needs a field and fixed effects");
  }
  if (!(sigma_eps > 0.0)) throw InvalidInput("LinearLGM: sigma_eps must be positive");
  if (!(beta_precision > 0.0)) throw InvalidInput("LinearLGM: beta precision must be positive");
}

// ---------------------------------------------------------------------------
// LatentModel

struct LatentModel::Impl {
  Eigen::VectorXd y;
  Eigen::MatrixXd f;
  double beta_precision = kVagueBetaPrecision;
  bool field = false;
  bool orthogonal = false;
  std::shared_ptr<const FemMatrices> fem;
  SparseMatrix a;
  Eigen::Index n = 0, p = 0, m = 0;

  Eigen::LLT<Eigen::MatrixXd> ftf_llt;  // F'F, for the orthogonal restriction
  Eigen::MatrixXd fta;                  // F'A (p x m)
  Eigen::VectorXd rhs0;                 // [F'y ; A~'y]

  // joint (beta, u) precision: pattern plus aligned value components
  SparseMatrix joint_pattern;
  Eigen::VectorXd jc, jg, jk, jlik, jbeta;
  SparseCholesky::Permutation joint_perm;

  // field precision alone, for log|Q_u|
  SparseMatrix field_pattern;
  Eigen::VectorXd fc, fg, fk;
  SparseCholesky::Permutation field_perm;

  Eigen::MatrixXd low_rank0;  // (p+m) x p, orthogonal models only

  void prepare();
  Eigen::VectorXd restricted_field(const Eigen::VectorXd& au) const {
    // (I - F (F'F)^{-1} F') (A u)
    return au - f * ftf_llt.solve(f.transpose() * au);
  }
};

void LatentModel::Impl::prepare() {
  n = y.size();
  p = f.cols();
  m = field ? a.cols() : 0;
  if (f.rows() != n) throw InvalidInput("LatentModel: design rows differ from response length");
  if (field) {
    if (a.rows() != n) throw InvalidInput("LatentModel: projector rows differ from response length");
    if (!fem || fem->size() != m) throw InvalidInput("LatentModel: projector columns differ from mesh size");
  }
  if (orthogonal && (!field || p == 0)) {
    throw InvalidInput("LatentModel: orthogonal restriction needs a field and fixed effects");
  }
  if (!(beta_precision > 0.0)) throw InvalidInput("LatentModel: beta precision must be positive");

  const Eigen::Index dim = p + m;
  const Eigen::MatrixXd ftf = f.transpose() * f;
  if (orthogonal) {
    ftf_llt.compute(ftf);
    if (ftf_llt.info() != Eigen::Success) {
      throw NumericalError("orthogonal restriction: fixed-effect design is rank deficient");
    }
  }

  // likelihood block [F A~]'[F A~] laid out in the joint index
  std::vector<Eigen::Triplet<double>> lik;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) lik.emplace_back(i, j, ftf(i, j));
  }
  rhs0.resize(dim);
  rhs0.head(p) = f.transpose() * y;
  if (field) {
    fta = f.transpose() * a;
    if (!orthogonal) {
      for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
          lik.emplace_back(i, p + j, fta(i, j));
          lik.emplace_back(p + j, i, fta(i, j));
        }
      }
      rhs0.tail(m) = a.transpose() * y;
    } else {
      rhs0.tail(m) = a.transpose() * restricted_field(y);
    }
    const SparseMatrix ata = a.transpose() * a;
    for (Eigen::Index j = 0; j < ata.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(ata, j); it; ++it) {
        lik.emplace_back(p + it.row(), p + it.col(), it.value());
      }
    }
  }
  SparseMatrix lik_mat(dim, dim);
  lik_mat.setFromTriplets(lik.begin(), lik.end());

  std::vector<Eigen::Triplet<double>> ident;
  for (Eigen::Index i = 0; i < p; ++i) ident.emplace_back(i, i, 1.0);
  SparseMatrix beta_mat(dim, dim);
  beta_mat.setFromTriplets(ident.begin(), ident.end());

  SparseMatrix c_mat(dim, dim), g_mat(dim, dim), k_mat(dim, dim);
  if (field) {
    c_mat = embed(fem->c, p, dim);
    g_mat = embed(fem->g, p, dim);
    k_mat = embed(fem->gcg, p, dim);
  }
  joint_pattern = lik_mat + beta_mat + c_mat + g_mat + k_mat;
  joint_pattern.makeCompressed();
  jc = aligned_values(c_mat, joint_pattern);
  jg = aligned_values(g_mat, joint_pattern);
  jk = aligned_values(k_mat, joint_pattern);
  jlik = aligned_values(lik_mat, joint_pattern);
  jbeta = aligned_values(beta_mat, joint_pattern);
  joint_perm = SparseCholesky::amd_ordering(joint_pattern);

  if (field) {
    field_pattern = fem->c + fem->g + fem->gcg;
    field_pattern.makeCompressed();
    fc = aligned_values(fem->c, field_pattern);
    fg = aligned_values(fem->g, field_pattern);
    fk = aligned_values(fem->gcg, field_pattern);
    field_perm = SparseCholesky::amd_ordering(field_pattern);
  }

  if (orthogonal) {
    // A'F (F'F)^{-1} F'A = V0 V0' with V0 = A'F L^{-T}
    const Eigen::MatrixXd l_inv_fta = ftf_llt.matrixL().solve(fta);  // p x m
    low_rank0 = Eigen::MatrixXd::Zero(dim, p);
    low_rank0.bottomRows(m) = l_inv_fta.transpose();
  }
}

LatentModel::LatentModel(Eigen::VectorXd y, Eigen::MatrixXd fixed, double beta_precision)
    : impl_(std::make_unique<Impl>()) {
  impl_->y = std::move(y);
  impl_->f = std::move(fixed);
  impl_->beta_precision = beta_precision;
  if (impl_->f.cols() == 0) throw InvalidInput("LatentModel: no fixed effects and no field");
  impl_->prepare();
}

LatentModel::LatentModel(Eigen::VectorXd y, Eigen::MatrixXd fixed,
                         std::shared_ptr<const FemMatrices> fem, SparseMatrix projector,
                         bool orthogonal_field, double beta_precision)
    : impl_(std::make_unique<Impl>()) {
  impl_->y = std::move(y);
  impl_->f = std::move(fixed);
  impl_->beta_precision = beta_precision;
  impl_->field = true;
  impl_->orthogonal = orthogonal_field;
  impl_->fem = std::move(fem);
  impl_->a = std::move(projector);
  impl_->prepare();
}

LatentModel::~LatentModel() = default;
LatentModel::LatentModel(LatentModel&&) noexcept = default;
LatentModel& LatentModel::operator=(LatentModel&&) noexcept = default;

bool LatentModel::has_field() const { return impl_->field; }
bool LatentModel::orthogonal_field() const { return impl_->orthogonal; }
Eigen::Index LatentModel::num_obs() const { return impl_->n; }
Eigen::Index LatentModel::num_fixed() const { return impl_->p; }
Eigen::Index LatentModel::num_field() const { return impl_->m; }
const Eigen::VectorXd& LatentModel::response() const { return impl_->y; }
const Eigen::MatrixXd& LatentModel::fixed() const { return impl_->f; }
const SparseMatrix& LatentModel::projector() const { return impl_->a; }

Eigen::VectorXd LatentModel::restriction_coefficients(const Eigen::VectorXd& field) const {
  if (!impl_->orthogonal) return {};
  return impl_->ftf_llt.solve(impl_->fta * field);
}

LinearLGM LatentModel::at(const HyperParams& hp) const {
  LinearLGM lgm;
  lgm.y = impl_->y;
  lgm.fixed = impl_->f;
  lgm.sigma_eps = hp.sigma_eps;
  lgm.orthogonal_field = impl_->orthogonal;
  lgm.beta_precision = impl_->beta_precision;
  if (impl_->field) {
    lgm.projector = impl_->a;
    lgm.field_precision = build_precision(*impl_->fem, hp).q;
  }
  return lgm;
}

struct LatentModel::Conditional::Factor {
  std::optional<SparseCholesky> joint;
  Eigen::MatrixXd v;                    // low-rank downdate, scaled by 1/sigma_eps
  Eigen::MatrixXd w;                    // M^{-1} V
  Eigen::LLT<Eigen::MatrixXd> s_llt;    // I - V' M^{-1} V
};

LatentModel::Conditional::Conditional() : factor_(std::make_unique<Factor>()) {}
LatentModel::Conditional::~Conditional() = default;
LatentModel::Conditional::Conditional(Conditional&&) noexcept = default;
LatentModel::Conditional& LatentModel::Conditional::operator=(Conditional&&) noexcept = default;

LatentModel::Conditional LatentModel::condition(const HyperParams& hp) const {
  const Impl& im = *impl_;
  if (!(hp.sigma_eps > 0.0)) throw InvalidInput("sigma_eps must be positive");
  Conditional cond;
  cond.model_ = this;
  cond.hp_ = hp;
  Conditional::Factor& fac = *cond.factor_;

  const double s2 = hp.sigma_eps * hp.sigma_eps;
  double c_coef = 0.0, g_coef = 0.0, k_coef = 0.0;
  double log_det_field = 0.0;
  SparseMatrix field_q;
  if (im.field) {
    hp.validate();
    const double k2 = hp.kappa() * hp.kappa();
    const double t2 = hp.tau() * hp.tau();
    c_coef = t2 * k2 * k2;
    g_coef = 2.0 * t2 * k2;
    k_coef = t2;
    field_q = with_values(im.field_pattern, c_coef * im.fc + g_coef * im.fg + k_coef * im.fk);
    SparseCholesky field_chol(field_q, im.field_perm);
    log_det_field = field_chol.log_determinant();
  }
  const Eigen::VectorXd values = c_coef * im.jc + g_coef * im.jg + k_coef * im.jk +
                                 (1.0 / s2) * im.jlik + im.beta_precision * im.jbeta;
  fac.joint.emplace(with_values(im.joint_pattern, values), im.joint_perm);
  const SparseCholesky& chol = *fac.joint;

  const Eigen::VectorXd rhs = im.rhs0 / s2;
  Eigen::VectorXd mean = chol.solve(rhs);
  double log_det_post = chol.log_determinant();

  const Eigen::Index dim = im.p + im.m;
  Eigen::MatrixXd unit = Eigen::MatrixXd::Zero(dim, im.p);
  for (Eigen::Index i = 0; i < im.p; ++i) unit(i, i) = 1.0;
  Eigen::MatrixXd cov_cols = chol.solve(unit);

  if (im.orthogonal) {
    fac.v = im.low_rank0 / hp.sigma_eps;
    fac.w = chol.solve(fac.v);
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(im.p, im.p) - fac.v.transpose() * fac.w;
    fac.s_llt.compute(s);
    if (fac.s_llt.info() != Eigen::Success) {
      throw NumericalError("orthogonal restriction: downdated precision is not positive definite");
    }
    log_det_post += 2.0 * fac.s_llt.matrixLLT().diagonal().array().log().sum();
    mean += fac.w * fac.s_llt.solve(fac.v.transpose() * mean);
    cov_cols += fac.w * fac.s_llt.solve(fac.w.transpose() * unit);
  }

  GaussianPosterior& post = cond.post_;
  post.mean = mean;
  post.beta_cov = cov_cols.topRows(im.p);
  post.beta_cov = 0.5 * (post.beta_cov + post.beta_cov.transpose()).eval();
  post.predictor = cond.predictor(mean);

  const Eigen::VectorXd beta = mean.head(im.p);
  double quad = im.beta_precision * beta.squaredNorm();
  if (im.field) {
    const Eigen::VectorXd u = mean.tail(im.m);
    quad += u.dot(field_q * u);
  }
  const double rss = (im.y - post.predictor).squaredNorm();
  const double n = static_cast<double>(im.n);
  post.log_marginal = -0.5 * n * kLog2Pi - n * std::log(hp.sigma_eps) - 0.5 * rss / s2 -
                      0.5 * quad +
                      0.5 * (static_cast<double>(im.p) * std::log(im.beta_precision) + log_det_field) -
                      0.5 * log_det_post;
  if (!std::isfinite(post.log_marginal)) {
    throw NumericalError("log marginal likelihood is not finite");
  }
  return cond;
}

Eigen::VectorXd LatentModel::Conditional::predictor(const Eigen::VectorXd& latent) const {
  const Impl& im = *model_->impl_;
  Eigen::VectorXd eta = im.f * latent.head(im.p);
  if (im.field) {
    Eigen::VectorXd au = im.a * latent.tail(im.m);
    eta += im.orthogonal ? im.restricted_field(au) : au;
  }
  return eta;
}

Eigen::VectorXd LatentModel::Conditional::draw(std::mt19937_64& rng) const {
  const Impl& im = *model_->impl_;
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index dim = im.p + im.m;
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal(rng);
  Eigen::VectorXd x = post_.mean + factor_->joint->colour(z);
  if (im.orthogonal) {
    // adds covariance W S^{-1} W' on top of M^{-1}
    Eigen::VectorXd zeta(im.p);
    for (Eigen::Index i = 0; i < im.p; ++i) zeta[i] = normal(rng);
    const Eigen::VectorXd t = factor_->s_llt.matrixU().solve(zeta);
    x += factor_->w * t;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Dense conjugate route for explicit models

GaussianPosterior conditional_posterior(const LinearLGM& model) {
  model.validate();
  const Eigen::Index n = model.y.size();
  const Eigen::Index p = model.fixed.cols();
  const Eigen::Index m = model.projector ? model.projector->cols() : 0;
  const Eigen::Index dim = p + m;
  if (dim == 0) throw InvalidInput("LinearLGM: nothing to estimate");
  const double s2 = model.sigma_eps * model.sigma_eps;

  Eigen::MatrixXd design(n, dim);
  design.leftCols(p) = model.fixed;
  if (m > 0) {
    Eigen::MatrixXd a = Eigen::MatrixXd(*model.projector);
    if (model.orthogonal_field) {
      const Eigen::MatrixXd& f = model.fixed;
      Eigen::LLT<Eigen::MatrixXd> ftf(f.transpose() * f);
      if (ftf.info() != Eigen::Success) throw NumericalError("rank-deficient fixed-effect design");
      a -= f * ftf.solve(f.transpose() * a);
    }
    design.rightCols(m) = a;
  }
  Eigen::MatrixXd prior = Eigen::MatrixXd::Zero(dim, dim);
  prior.topLeftCorner(p, p).diagonal().setConstant(model.beta_precision);
  if (m > 0) prior.bottomRightCorner(m, m) = Eigen::MatrixXd(*model.field_precision);

  const Eigen::MatrixXd precision = prior + design.transpose() * design / s2;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("posterior precision is singular (rank-deficient normal equations)");
  }
  GaussianPosterior post;
  post.mean = llt.solve(design.transpose() * model.y / s2);
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
  post.beta_cov = cov.topLeftCorner(p, p);
  post.predictor = design * post.mean;

  double log_det_prior = static_cast<double>(p) * std::log(model.beta_precision);
  if (m > 0) {
    Eigen::LLT<Eigen::MatrixXd> qllt(prior.bottomRightCorner(m, m));
    if (qllt.info() != Eigen::Success) throw NumericalError("field precision is not positive definite");
    log_det_prior += 2.0 * Eigen::MatrixXd(qllt.matrixL()).diagonal().array().log().sum();
  }
  const double log_det_post = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  const double rss = (model.y - post.predictor).squaredNorm();
  const double quad = post.mean.dot(prior * post.mean);
  const double nn = static_cast<double>(n);
  post.log_marginal = -0.5 * nn * kLog2Pi - nn * std::log(model.sigma_eps) - 0.5 * rss / s2 -
                      0.5 * quad + 0.5 * log_det_prior - 0.5 * log_det_post;
  return post;
}

// ---------------------------------------------------------------------------
// Hyperparameter integration

void GridSpec::validate() const {
  if (points < 1 || points > 15) throw InvalidInput("grid points per dimension must be in [1, 15]");
  if (coarse_points < 3 && !skip_coarse) {
    throw InvalidInput("coarse grid needs at least 3 points per dimension");
  }
  if (!(coarse_half_width > 0.0) || !(z_half_width > 0.0)) {
    throw InvalidInput("grid half-widths must be positive");
  }
}

double log_hyper_posterior(const LatentModel& model, const HyperPriors& priors,
                           const HyperParams& hp, double* log_marginal) {
  const auto cond = model.condition(hp);
  const double lml = cond.posterior().log_marginal;
  if (log_marginal) *log_marginal = lml;
  // densities on the log scale pick up a Jacobian equal to the parameter
  double lp = lml + priors.noise.log_density(hp.sigma_eps) + std::log(hp.sigma_eps);
  if (model.has_field()) {
    if (!priors.field) throw InvalidInput("field model needs a PC prior");
    lp += priors.field->log_density(hp.rho, hp.sigma) + std::log(hp.rho) + std::log(hp.sigma);
  }
  return lp;
}

namespace {

class HyperObjective {
 public:
  HyperObjective(const LatentModel& model, const HyperPriors& priors, HyperParams base)
      : model_(model), priors_(priors), base_(base), dim_(model.has_field() ? 3 : 1) {}

  int dim() const { return dim_; }

  HyperParams params(const Eigen::VectorXd& theta) const {
    HyperParams hp = base_;
    if (dim_ == 3) {
      hp.rho = std::exp(theta[0]);
      hp.sigma = std::exp(theta[1]);
      hp.sigma_eps = std::exp(theta[2]);
    } else {
      hp.sigma_eps = std::exp(theta[0]);
    }
    return hp;
  }

  Eigen::VectorXd theta(const HyperParams& hp) const {
    Eigen::VectorXd t(dim_);
    if (dim_ == 3) {
      t << std::log(hp.rho), std::log(hp.sigma), std::log(hp.sigma_eps);
    } else {
      t << std::log(hp.sigma_eps);
    }
    return t;
  }

  double operator()(const Eigen::VectorXd& theta) {
    ++evaluations;
    if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > 60.0) {
      return -std::numeric_limits<double>::infinity();
    }
    try {
      const double v = log_hyper_posterior(model_, priors_, params(theta));
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }

  int evaluations = 0;

 private:
  const LatentModel& model_;
  const HyperPriors& priors_;
  HyperParams base_;
  int dim_;
};

// Central-difference gradient and Hessian.
void finite_difference(HyperObjective& f, const Eigen::VectorXd& x, double fx, double h,
                       Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
  const int d = f.dim();
  grad.resize(d);
  hess.resize(d, d);
  Eigen::VectorXd fp(d), fm(d);
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    e[i] = h;
    fp[i] = f(x + e);
    fm[i] = f(x - e);
    grad[i] = (fp[i] - fm[i]) / (2.0 * h);
    hess(i, i) = (fp[i] - 2.0 * fx + fm[i]) / (h * h);
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      Eigen::VectorXd ei = Eigen::VectorXd::Zero(d), ej = Eigen::VectorXd::Zero(d);
      ei[i] = h;
      ej[j] = h;
      const double fpp = f(x + ei + ej);
      const double fmm = f(x - ei - ej);
      // f(x+ei+ej) + f(x-ei-ej) - f(x+ei) - f(x-ei) - f(x+ej) - f(x-ej) + 2 f(x)
      hess(i, j) = (fpp + fmm - fp[i] - fm[i] - fp[j] - fm[j] + 2.0 * fx) / (2.0 * h * h);
      hess(j, i) = hess(i, j);
    }
  }
}

// Negative Hessian made positive definite: eigenvalues floored at `floor`.
Eigen::MatrixXd regularised_precision(const Eigen::MatrixXd& hess, double floor,
                                      Eigen::MatrixXd* basis = nullptr,
                                      Eigen::VectorXd* eigenvalues = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-hess);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!std::isfinite(ev[i]) || ev[i] < floor) ev[i] = floor;
  }
  if (basis) *basis = es.eigenvectors();
  if (eigenvalues) *eigenvalues = ev;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

HyperParams default_start(const LatentModel& model) {
  HyperParams hp;
  const Eigen::VectorXd& y = model.response();
  const double sd = std::max(sample_sd(y), 1e-8);
  hp.sigma_eps = sd / std::sqrt(2.0);
  hp.sigma = sd / std::sqrt(2.0);
  hp.rho = 1.0;
  return hp;
}

GridPoint summarise_point(const LatentModel& model, const LatentModel::Conditional& cond,
                          double log_post) {
  GridPoint gp;
  gp.params = cond.params();
  gp.log_posterior = log_post;
  gp.log_marginal = cond.posterior().log_marginal;
  const auto p = model.num_fixed();
  gp.beta_mean = cond.posterior().mean.head(p);
  gp.beta_cov = cond.posterior().beta_cov;
  if (model.has_field()) gp.field_mean = cond.posterior().mean.tail(model.num_field());
  gp.predictor_mean = cond.posterior().predictor;
  return gp;
}

void normalise(HyperPosterior& post) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < post.points.size(); ++i) {
    if (post.points[i].log_posterior > best) {
      best = post.points[i].log_posterior;
      post.mode_index = i;
    }
  }
  double total = 0.0;
  for (auto& gp : post.points) {
    gp.weight = std::isfinite(gp.log_posterior) ? std::exp(gp.log_posterior - best) : 0.0;
    total += gp.weight;
  }
  for (auto& gp : post.points) gp.weight /= total;
}

}  // namespace

HyperPosterior fixed_hyperparameters(const LatentModel& model, const HyperParams& hp) {
  HyperPosterior post;
  const auto cond = model.condition(hp);
  post.points.push_back(summarise_point(model, cond, 0.0));
  post.points[0].weight = 1.0;
  post.mode = hp;
  post.evaluations = 1;
  return post;
}

HyperPosterior fit_hyperparameters(const LatentModel& model, const HyperPriors& priors,
                                   const GridSpec& grid) {
  grid.validate();
  priors.noise.validate();
  if (model.has_field()) {
    if (!priors.field) throw InvalidInput("field model needs a PC prior");
    priors.field->validate();
  }
  if (grid.fixed) {
    if (!grid.start) throw InvalidInput("fixed hyperparameters need a start");
    return fixed_hyperparameters(model, *grid.start);
  }
  const HyperParams start = grid.start.value_or(default_start(model));
  HyperObjective objective(model, priors, start);
  const int d = objective.dim();

  HyperPosterior post;
  Eigen::VectorXd theta = objective.theta(start);
  double f_theta = objective(theta);

  // 1. coarse localisation on a box around the start; a boundary mode
  // recentres the box once at twice the width
  if (!grid.skip_coarse) {
    const int g = grid.coarse_points;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const double half = grid.coarse_half_width * (attempt == 0 ? 1.0 : 2.0);
      const double step = 2.0 * half / (g - 1);
      const Eigen::VectorXd centre = theta;
      int total = 1;
      for (int i = 0; i < d; ++i) total *= g;
      Eigen::VectorXd best_theta = centre;
      double best_f = -std::numeric_limits<double>::infinity();
      std::vector<int> best_idx(d, g / 2);
      for (int flat = 0; flat < total; ++flat) {
        Eigen::VectorXd t(d);
        std::vector<int> idx(d);
        int rem = flat;
        for (int i = 0; i < d; ++i) {
          idx[i] = rem % g;
          rem /= g;
          t[i] = centre[i] - half + step * idx[i];
        }
        const double v = objective(t);
        if (v > best_f) {
          best_f = v;
          best_theta = t;
          best_idx = idx;
        }
      }
      if (!std::isfinite(best_f)) {
        throw NumericalError("log posterior is not finite anywhere on the coarse grid");
      }
      theta = best_theta;
      f_theta = best_f;
      const bool on_boundary = std::any_of(best_idx.begin(), best_idx.end(),
                                           [g](int i) { return i == 0 || i == g - 1; });
      if (!on_boundary) break;
      if (attempt == 0) {
        spdlog::warn("hyperparameter mode on the coarse-grid boundary; expanding the grid");
        post.coarse_expanded = true;
      } else {
        throw GridBoundaryError(
            "hyperparameter mode stays on the grid boundary after one expansion; "
            "check the priors or the starting values");
      }
    }
  }
  if (!std::isfinite(f_theta)) throw NumericalError("log posterior is not finite at the start");

  // 2. damped Newton ascent with finite-difference derivatives, from the
  // coarse optimum and from every extra start
  constexpr double h = 0.01;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  auto ascend = [&](Eigen::VectorXd& theta, double& f_theta) {
    for (int iter = 0; iter < 40; ++iter) {
      finite_difference(objective, theta, f_theta, h, grad, hess);
      const Eigen::MatrixXd prec = regularised_precision(hess, 1e-3);
      Eigen::VectorXd step = prec.llt().solve(grad);
      const double max_step = step.cwiseAbs().maxCoeff();
      if (max_step > 1.0) step *= 1.0 / max_step;
      double t = 1.0;
      bool improved = false;
      double f_new = f_theta;
      for (int k = 0; k < 12; ++k) {
        f_new = objective(theta + t * step);
        if (f_new >= f_theta) {
          improved = true;
          break;
        }
        t *= 0.5;
      }
      if (!improved) break;
      theta += t * step;
      const double gain = f_new - f_theta;
      f_theta = f_new;
      if ((t * step).cwiseAbs().maxCoeff() < 1e-4 || gain < 1e-8) break;
    }
  };
  ascend(theta, f_theta);
  for (const HyperParams& s : grid.extra_starts) {
    Eigen::VectorXd alt = objective.theta(s);
    double f_alt = objective(alt);
    if (!std::isfinite(f_alt)) continue;
    ascend(alt, f_alt);
    if (f_alt > f_theta) {
      spdlog::debug("alternative start reached a higher mode ({} > {})", f_alt, f_theta);
      theta = alt;
      f_theta = f_alt;
    }
  }

  // 3. standardised grid along the eigen-directions of the curvature at the mode
  finite_difference(objective, theta, f_theta, h, grad, hess);
  Eigen::MatrixXd basis;
  Eigen::VectorXd curvature;
  regularised_precision(hess, 1.0, &basis, &curvature);
  const Eigen::MatrixXd scale = basis * curvature.cwiseSqrt().cwiseInverse().asDiagonal();

  post.mode = objective.params(theta);
  const int g = grid.points;
  int total = 1;
  for (int i = 0; i < d; ++i) total *= g;
  post.points.reserve(static_cast<std::size_t>(total));
  for (int flat = 0; flat < total; ++flat) {
    Eigen::VectorXd z(d);
    int rem = flat;
    for (int i = 0; i < d; ++i) {
      const int idx = rem % g;
      rem /= g;
      z[i] = (g == 1) ? 0.0 : -grid.z_half_width + 2.0 * grid.z_half_width * idx / (g - 1);
    }
    const Eigen::VectorXd t = theta + scale * z;
    const HyperParams hp = objective.params(t);
    try {
      const auto cond = model.condition(hp);
      ++objective.evaluations;
      double lp = cond.posterior().log_marginal + priors.noise.log_density(hp.sigma_eps) +
                  std::log(hp.sigma_eps);
      if (model.has_field()) {
        lp += priors.field->log_density(hp.rho, hp.sigma) + std::log(hp.rho) + std::log(hp.sigma);
      }
      post.points.push_back(summarise_point(model, cond, lp));
    } catch (const NumericalError&) {
      // unreachable region of the grid; contributes no mass
    }
  }
  if (post.points.empty()) throw NumericalError("no grid point could be evaluated");
  normalise(post);
  post.evaluations = objective.evaluations;
  return post;
}

Eigen::VectorXd HyperPosterior::beta_mean() const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(points.front().beta_mean.size());
  for (const auto& gp : points) acc += gp.weight * gp.beta_mean;
  return acc;
}

Eigen::VectorXd HyperPosterior::field_mean() const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(points.front().field_mean.size());
  for (const auto& gp : points) acc += gp.weight * gp.field_mean;
  return acc;
}

Eigen::VectorXd HyperPosterior::predictor_mean() const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(points.front().predictor_mean.size());
  for (const auto& gp : points) acc += gp.weight * gp.predictor_mean;
  return acc;
}

double HyperPosterior::mean_sigma_eps() const {
  double acc = 0.0;
  for (const auto& gp : points) acc += gp.weight * gp.params.sigma_eps;
  return acc;
}

// ---------------------------------------------------------------------------
// Mixture summaries

double mixture_cdf(const std::vector<double>& weights, const std::vector<double>& means,
                   const std::vector<double>& sds, double x) {
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (sds[k] > 0.0) {
      acc += weights[k] * 0.5 * std::erfc(-(x - means[k]) / (sds[k] * std::numbers::sqrt2));
    } else {
      acc += weights[k] * (x >= means[k] ? 1.0 : 0.0);
    }
  }
  return acc;
}

double mixture_quantile(const std::vector<double>& weights, const std::vector<double>& means,
                        const std::vector<double>& sds, double p) {
  if (weights.empty() || weights.size() != means.size() || means.size() != sds.size()) {
    throw InvalidInput("mixture_quantile: inconsistent component lists");
  }
  if (!(p > 0.0 && p < 1.0)) throw InvalidInput("mixture_quantile: p must lie in (0, 1)");
  double lo = std::numeric_limits<double>::max();
  double hi = -lo;
  for (std::size_t k = 0; k < means.size(); ++k) {
    lo = std::min(lo, means[k] - 40.0 * sds[k]);
    hi = std::max(hi, means[k] + 40.0 * sds[k]);
  }
  if (lo == hi) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mixture_cdf(weights, means, sds, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-14 * std::max(1.0, std::abs(mid))) break;
  }
  return 0.5 * (lo + hi);
}

EffectSummary posterior_summary(const HyperPosterior& post, Eigen::Index index) {
  if (post.points.empty()) throw InvalidInput("posterior_summary: empty posterior");
  if (index < 0 || index >= post.points.front().beta_mean.size()) {
    throw InvalidInput("posterior_summary: fixed-effect index out of range");
  }
  std::vector<double> w, mu, sd;
  for (const auto& gp : post.points) {
    w.push_back(gp.weight);
    mu.push_back(gp.beta_mean[index]);
    sd.push_back(std::sqrt(std::max(gp.beta_cov(index, index), 0.0)));
  }
  EffectSummary s;
  double second = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    s.mean += w[k] * mu[k];
    second += w[k] * (sd[k] * sd[k] + mu[k] * mu[k]);
  }
  s.sd = std::sqrt(std::max(second - s.mean * s.mean, 0.0));
  s.q025 = mixture_quantile(w, mu, sd, 0.025);
  s.q975 = mixture_quantile(w, mu, sd, 0.975);
  return s;
}

// ---------------------------------------------------------------------------
// Posterior draws

PosteriorDraws sample_posterior(const LatentModel& model, const HyperPosterior& post, int draws,
                                std::uint64_t seed, int keep_latent) {
  if (draws < 1) throw InvalidInput("sample_posterior: need at least one draw");
  std::mt19937_64 rng(seed);
  std::vector<double> weights;
  for (const auto& gp : post.points) weights.push_back(gp.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<int> counts(post.points.size(), 0);
  for (int j = 0; j < draws; ++j) ++counts[pick(rng)];

  const Eigen::Index n = model.num_obs();
  const Eigen::Index dim = model.num_fixed() + model.num_field();
  keep_latent = std::clamp(keep_latent, 0, draws);
  PosteriorDraws out;
  out.predictor.resize(n, draws);
  out.sigma_eps.resize(draws);
  out.latent.resize(dim, keep_latent);
  if (model.orthogonal_field()) out.restriction.resize(model.num_fixed(), keep_latent);

  int col = 0;
  for (std::size_t k = 0; k < post.points.size(); ++k) {
    if (counts[k] == 0) continue;
    const auto cond = model.condition(post.points[k].params);
    for (int j = 0; j < counts[k]; ++j, ++col) {
      const Eigen::VectorXd x = cond.draw(rng);
      out.predictor.col(col) = cond.predictor(x);
      out.sigma_eps[col] = post.points[k].params.sigma_eps;
      if (col < keep_latent) {
        out.latent.col(col) = x;
        if (model.orthogonal_field()) {
          out.restriction.col(col) = model.restriction_coefficients(x.tail(model.num_field()));
        }
      }
    }
  }
  return out;
}

}  // namespace geoconf
