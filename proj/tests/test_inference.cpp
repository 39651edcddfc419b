#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "geoconf/errors.hpp"
#include "geoconf/inference.hpp"
#include "oracles.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <random>

using namespace geoconf;

namespace {

struct Toy {
  Eigen::VectorXd y;
  Eigen::MatrixXd f;
  std::shared_ptr<const FemMatrices> fem;
  SparseMatrix a;
  HyperParams hp;
};

// n observations on a small mesh (m <= 25) with intercept and one covariate.
Toy make_toy(std::uint64_t seed, int n = 30) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  Toy t;
  const TriMesh mesh = build_mesh({0, 1, 0, 1}, 0.25, 0.0);  // 25 vertices
  t.fem = std::make_shared<const FemMatrices>(assemble_fem(mesh));
  std::vector<Point> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng)};
  t.a = project(mesh, pts);
  t.f.resize(n, 2);
  t.y.resize(n);
  for (int i = 0; i < n; ++i) {
    t.f(i, 0) = 1.0;
    t.f(i, 1) = z(rng) + pts[i].x;
    t.y[i] = 0.5 + 1.5 * t.f(i, 1) + std::sin(4 * pts[i].y) + 0.3 * z(rng);
  }
  t.hp.rho = 0.2 + u(rng);
  t.hp.sigma = 0.3 + u(rng);
  t.hp.sigma_eps = 0.2 + 0.5 * u(rng);
  return t;
}

void check_against_oracle(const GaussianPosterior& post, const oracle::GaussianOracle& ref,
                          double tol) {
  for (Eigen::Index i = 0; i < ref.beta_mean.size(); ++i) {
    CHECK(std::abs(post.mean[i] - ref.beta_mean[i]) <= tol * std::abs(ref.beta_mean[i]) + 1e-12);
    const double sd = std::sqrt(post.beta_cov(i, i));
    const double sd_ref = std::sqrt(ref.beta_cov(i, i));
    CHECK(std::abs(sd - sd_ref) <= tol * sd_ref);
  }
  CHECK(std::abs(post.log_marginal - ref.log_marginal) <= tol * std::abs(ref.log_marginal));
}

}  // namespace

TEST_CASE("PC prior tail probabilities by quadrature") {
  const std::vector<PCPrior> priors{{0.05, 0.05, 3.0, 0.05}, {15.0, 0.9999, 1.5, 0.0001},
                                    {6e4, 0.05, 5.0, 0.05}};
  boost::math::quadrature::tanh_sinh<double> ts;
  for (const auto& pr : priors) {
    auto range_pdf = [&](double r) { return r <= 0.0 ? 0.0 : std::exp(pr.log_density_range(r)); };
    auto sd_pdf = [&](double s) { return std::exp(pr.log_density_sd(s)); };
    const double below = ts.integrate(range_pdf, 0.0, pr.rho0);
    const double above = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        sd_pdf, pr.sigma0, std::numeric_limits<double>::infinity(), 15, 1e-14);
    CHECK(std::abs(below - pr.alpha_rho) < 1e-6);
    CHECK(std::abs(above - pr.alpha_sigma) < 1e-6);
    for (double r : {1e-3, 0.1, 1.0, 100.0}) {
      for (double s : {1e-3, 0.5, 10.0}) {
        HyperParams hp;
        hp.rho = r * pr.rho0;
        hp.sigma = s;
        CHECK(std::exp(pc_prior_logdensity(hp, pr)) >= 0.0);
      }
    }
  }
  CHECK_THROWS_AS(PCPrior({-1.0, 0.5, 1.0, 0.5}).validate(), InvalidInput);
  CHECK_THROWS_AS(PCPrior({1.0, 1.0, 1.0, 0.5}).validate(), InvalidInput);
}

TEST_CASE("no field and a flat prior reduce to ordinary least squares") {
  const Toy t = make_toy(1);
  LinearLGM lgm;
  lgm.y = t.y;
  lgm.fixed = t.f;
  lgm.sigma_eps = 0.4;
  lgm.beta_precision = 1e-14;
  const GaussianPosterior post = conditional_posterior(lgm);
  const Eigen::VectorXd ols = t.f.colPivHouseholderQr().solve(t.y);
  CHECK((post.mean - ols).cwiseAbs().maxCoeff() < 1e-8 * ols.cwiseAbs().maxCoeff());

  LatentModel model(t.y, t.f, 1e-14);
  HyperParams hp;
  hp.sigma_eps = 0.4;
  const auto cond = model.condition(hp);
  CHECK((cond.posterior().mean - ols).cwiseAbs().maxCoeff() < 1e-8 * ols.cwiseAbs().maxCoeff());
}

TEST_CASE("zero response with centred priors gives zero posterior mean") {
  Toy t = make_toy(2);
  t.y.setZero();
  LatentModel model(t.y, t.f, t.fem, t.a, false);
  const auto cond = model.condition(t.hp);
  CHECK(cond.posterior().mean.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sparse and explicit paths match the dense covariance-form oracle") {
  for (int rep = 0; rep < 10; ++rep) {
    const Toy t = make_toy(100 + rep);
    const SparseMatrix q = build_precision(*t.fem, t.hp).q;
    for (bool orth : {false, true}) {
      const auto ref = oracle::dense_posterior(t.y, t.f, Eigen::MatrixXd(t.a), Eigen::MatrixXd(q),
                                               t.hp.sigma_eps, orth, kVagueBetaPrecision);
      LatentModel model(t.y, t.f, t.fem, t.a, orth);
      check_against_oracle(model.condition(t.hp).posterior(), ref, 1e-8);
      check_against_oracle(conditional_posterior(model.at(t.hp)), ref, 1e-8);
    }
    const auto ref0 = oracle::dense_posterior(t.y, t.f, std::nullopt, std::nullopt,
                                              t.hp.sigma_eps, false, kVagueBetaPrecision);
    LatentModel null_model(t.y, t.f);
    check_against_oracle(null_model.condition(t.hp).posterior(), ref0, 1e-8);
  }
}

TEST_CASE("orthogonal field leaves the fixed-effect mean of the null model") {
  const Toy t = make_toy(7);
  LatentModel rsr(t.y, t.f, t.fem, t.a, true);
  LatentModel null_model(t.y, t.f);
  const auto cr = rsr.condition(t.hp);
  const auto cn = null_model.condition(t.hp);
  CHECK((cr.posterior().mean.head(2) - cn.posterior().mean).norm() < 1e-9);
  const Eigen::VectorXd field_part = cr.posterior().predictor - t.f * cr.posterior().mean.head(2);
  CHECK((t.f.transpose() * field_part).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("conditional draws reproduce the posterior covariance of beta") {
  const Toy t = make_toy(9);
  for (bool orth : {false, true}) {
    LatentModel model(t.y, t.f, t.fem, t.a, orth);
    const auto cond = model.condition(t.hp);
    std::mt19937_64 rng(5);
    const int draws = 20000;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2, 2);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
    for (int k = 0; k < draws; ++k) {
      const Eigen::VectorXd x = cond.draw(rng).head(2);
      mean += x;
      acc += (x - cond.posterior().mean.head(2)) * (x - cond.posterior().mean.head(2)).transpose();
    }
    mean /= draws;
    acc /= draws;
    const Eigen::MatrixXd& cov = cond.posterior().beta_cov;
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(mean[i] - cond.posterior().mean[i]) < 5.0 * std::sqrt(cov(i, i) / draws));
      CHECK(std::abs(acc(i, i) / cov(i, i) - 1.0) < 5.0 * std::sqrt(2.0 / draws));
    }
  }
}

TEST_CASE("a single fixed point gives weight one and the conditional summaries") {
  const Toy t = make_toy(11);
  LatentModel model(t.y, t.f, t.fem, t.a, false);
  const HyperPosterior post = fixed_hyperparameters(model, t.hp);
  REQUIRE(post.points.size() == 1);
  CHECK(post.points[0].weight == 1.0);
  const auto direct = conditional_posterior(model.at(t.hp));
  const EffectSummary s = posterior_summary(post, 1);
  CHECK(s.mean == doctest::Approx(direct.mean[1]).epsilon(1e-10));
  CHECK(s.sd == doctest::Approx(std::sqrt(direct.beta_cov(1, 1))).epsilon(1e-10));
  CHECK(s.q975 - s.mean == doctest::Approx(1.959964 * s.sd).epsilon(1e-6));

  HyperPriors priors{PCPrior{0.1, 0.05, 3.0, 0.05}, NoisePrior{5.0, 0.01}};
  GridSpec grid;
  grid.points = 1;
  grid.start = t.hp;
  const HyperPosterior one = fit_hyperparameters(model, priors, grid);
  REQUIRE(one.points.size() == 1);
  CHECK(one.points[0].weight == 1.0);
}

TEST_CASE("noise sd is recovered on null-model data at n = 500") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = 500;
  Eigen::MatrixXd f(n, 2);
  Eigen::VectorXd y(n);
  const double sigma_eps = 0.7;
  for (int i = 0; i < n; ++i) {
    f(i, 0) = 1.0;
    f(i, 1) = z(rng);
    y[i] = 1.0 + 2.0 * f(i, 1) + sigma_eps * z(rng);
  }
  LatentModel model(y, f);
  HyperPriors priors;
  priors.noise = {10.0, 0.01};
  const HyperPosterior post = fit_hyperparameters(model, priors, GridSpec{});
  CHECK(std::abs(post.mode.sigma_eps / sigma_eps - 1.0) < 0.1);
  double total = 0.0;
  for (const auto& gp : post.points) total += gp.weight;
  CHECK(std::abs(total - 1.0) < 1e-12);
  const EffectSummary s = posterior_summary(post, 1);
  const double centre = post.at_mode().beta_mean[1];
  CHECK(s.q025 <= centre);
  CHECK(centre <= s.q975);
}

TEST_CASE("spatial grid fit finds an interior mode and integrates") {
  const Toy t = make_toy(13, 200);
  LatentModel model(t.y, t.f, t.fem, t.a, false);
  HyperPriors priors{PCPrior{0.1, 0.05, 3.0, 0.05}, NoisePrior{5.0, 0.01}};
  const HyperPosterior post = fit_hyperparameters(model, priors, GridSpec{});
  CHECK(post.points.size() == 125);
  double total = 0.0;
  for (const auto& gp : post.points) total += gp.weight;
  CHECK(std::abs(total - 1.0) < 1e-12);
  // the optimiser mode should beat every grid point up to the grid resolution
  const double lp_mode = log_hyper_posterior(model, priors, post.mode);
  for (const auto& gp : post.points) CHECK(gp.log_posterior <= lp_mode + 1e-6);
  const EffectSummary s = posterior_summary(post, 1);
  CHECK(s.sd > 0.0);
  CHECK(s.q025 < s.mean);
  CHECK(s.mean < s.q975);
}

TEST_CASE("mixture quantiles") {
  const double sd = 0.8;
  CHECK(mixture_quantile({1.0}, {2.0}, {sd}, 0.975) ==
        doctest::Approx(2.0 + 1.959963985 * sd).epsilon(1e-8));
  const double lo = mixture_quantile({0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0}, 0.025);
  const double hi = mixture_quantile({0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0}, 0.975);
  CHECK(lo == doctest::Approx(-hi).epsilon(1e-10));

  const std::vector<double> w{0.2, 0.5, 0.3}, mu{-1.0, 0.4, 2.5}, s{0.5, 1.2, 0.7};
  std::mt19937_64 rng(17);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::normal_distribution<double> z(0.0, 1.0);
  const int draws = 10'000'000;
  std::vector<double> xs(draws);
  for (auto& x : xs) {
    const int k = pick(rng);
    x = mu[k] + s[k] * z(rng);
  }
  for (double p : {0.025, 0.5, 0.975}) {
    auto nth = xs.begin() + static_cast<long>(p * draws);
    std::nth_element(xs.begin(), nth, xs.end());
    CHECK(std::abs(mixture_quantile(w, mu, s, p) - *nth) < 0.005);
    CHECK(std::abs(mixture_cdf(w, mu, s, mixture_quantile(w, mu, s, p)) - p) < 1e-6);
  }
}

TEST_CASE("invalid models are rejected") {
  const Toy t = make_toy(3);
  LinearLGM lgm;
  lgm.y = t.y;
  lgm.fixed = t.f.topRows(5);
  CHECK_THROWS_AS(conditional_posterior(lgm), InvalidInput);
  lgm.fixed = t.f;
  lgm.sigma_eps = 0.0;
  CHECK_THROWS_AS(conditional_posterior(lgm), InvalidInput);
  Eigen::MatrixXd collinear(t.y.size(), 2);
  collinear.col(0).setOnes();
  collinear.col(1).setConstant(2.0);
  CHECK_THROWS_AS(LatentModel(t.y, collinear, t.fem, t.a, true), NumericalError);
}
