#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "geoconf/errors.hpp"
#include "geoconf/simstudy.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

using namespace geoconf;

namespace {

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  return (da * db).sum() / std::sqrt((da * da).sum() * (db * db).sum());
}

double variance(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

SimConfig small_config() {
  SimConfig cfg;
  cfg.n = 300;
  cfg.replicates = 20;
  cfg.mesh_nodes = 500;
  return cfg;
}

}  // namespace

TEST_CASE("replicates are reproducible and differ between indices") {
  const SimConfig cfg = small_config();
  const auto mesh = simulation_mesh(cfg);
  const Dataset a = generate_replicate(cfg, 3, *mesh);
  const Dataset b = generate_replicate(cfg, 3, *mesh);
  const Dataset c = generate_replicate(cfg, 4, *mesh);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.locations.size() == 300);
  CHECK_FALSE(a.intercept);
  CHECK(a.x != c.x);
  for (const auto& p : a.locations) {
    CHECK(p.x >= 0.0);
    CHECK(p.x <= cfg.domain_size);
  }
  std::set<std::uint64_t> seeds;
  for (int r = 0; r < 100; ++r) seeds.insert(replicate_seed(cfg.seed, r));
  CHECK(seeds.size() == 100);
}

TEST_CASE("the confounder is negatively correlated with the covariate") {
  // cov(x, u + eps) = -loading var(z_x); the population correlation is about
  // -0.29 and spatial smoothing within one domain pulls samples toward 0
  const SimConfig cfg = small_config();
  const auto mesh = simulation_mesh(cfg);
  double mean = 0.0;
  for (int r = 0; r < cfg.replicates; ++r) {
    const Dataset d = generate_replicate(cfg, r, *mesh);
    mean += corr(d.x, d.y - cfg.beta_true * d.x) / cfg.replicates;
  }
  CHECK(mean < -0.1);
  CHECK(mean > -0.5);
}

TEST_CASE("zero loading leaves a white covariate with the configured variance") {
  SimConfig cfg = small_config();
  cfg.loading = 0.0;
  const auto mesh = simulation_mesh(cfg);
  double var = 0.0, rho = 0.0;
  for (int r = 0; r < cfg.replicates; ++r) {
    const Dataset d = generate_replicate(cfg, r, *mesh);
    var += variance(d.x) / cfg.replicates;
    rho += corr(d.x, d.y - cfg.beta_true * d.x) / cfg.replicates;
  }
  // sampling sd of the pooled variance: 0.1 sqrt(2 / 6000) ~ 0.0018
  CHECK(var == doctest::Approx(cfg.sigma_x2).epsilon(0.09));
  // sd of the mean correlation ~ 1 / sqrt(6000)
  CHECK(std::abs(rho) < 0.065);
}

TEST_CASE("configuration validation") {
  SimConfig cfg;
  cfg.n = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SimConfig{};
  cfg.replicates = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SimConfig{};
  cfg.sigma_y = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(SimConfig{}.validate());
  CHECK(SimConfig{}.short_field().rho == doctest::Approx(std::exp(2.0)));
  CHECK(SimConfig{}.long_field().sigma == doctest::Approx(std::exp(1.0)));
  CaseStudyConfig cs;
  cs.n = 0;
  CHECK_THROWS_AS(cs.validate(), ConfigError);
}

TEST_CASE("single-replicate Null study: coverage is all or nothing") {
  SimConfig cfg = small_config();
  cfg.n = 100;
  cfg.replicates = 1;
  StudyOptions so;
  so.models = {ModelKind::Null};
  const StudyResult res = run_study(cfg, so);
  REQUIRE(res.summary.size() == 1);
  CHECK(res.summary[0].model == "Null");
  CHECK(res.summary[0].replicates == 1);
  CHECK(res.summary[0].failed == 0);
  CHECK((res.summary[0].coverage == 0.0 || res.summary[0].coverage == 100.0));
  REQUIRE(res.replicates.size() == 1);
  CHECK(res.replicates[0].records.size() == 1);
  CHECK(res.replicates[0].null_residual_moran_p >= 0.0);
  CHECK(res.replicates[0].null_residual_moran_p <= 1.0);
}

TEST_CASE("study output does not depend on the thread count") {
  SimConfig cfg = small_config();
  cfg.n = 60;
  cfg.replicates = 3;
  cfg.mesh_nodes = 200;
  StudyOptions so;
  so.models = {ModelKind::Null, ModelKind::RSR};
  so.fit.grid.points = 3;
  so.fit.draws = 200;
  so.threads = 1;
  const StudyResult one = run_study(cfg, so);
  so.threads = 3;
  const StudyResult three = run_study(cfg, so);
  std::ostringstream a, b;
  write_summary_csv(a, one.summary);
  write_summary_csv(b, three.summary);
  CHECK(a.str() == b.str());
  std::ostringstream ra, rb;
  write_raw_csv(ra, one.records());
  write_raw_csv(rb, three.records());
  CHECK(ra.str() == rb.str());
}

TEST_CASE("summary CSV layout and missing values") {
  ModelSummary s;
  s.model = "Spatial";
  s.replicates = 1;
  s.mean_beta = 2.5;
  s.esd = std::numeric_limits<double>::quiet_NaN();
  s.mean_se = 0.25;
  s.mean_dic = 10.0;
  s.mean_waic = 11.0;
  s.coverage = 100.0;
  std::ostringstream out;
  write_summary_csv(out, {s});
  CHECK(out.str() ==
        "model,replicates,failed,mean_beta,esd,mean_se,dic,waic,coverage\n"
        "Spatial,1,0,2.5,NA,0.25,10,11,100\n");
}

TEST_CASE("case-study generator: shape, determinism and covariate surface") {
  const CaseStudyConfig cfg;
  const Dataset a = generate_case_study(cfg);
  const Dataset b = generate_case_study(cfg);
  REQUIRE(a.size() == 445);
  CHECK(a.intercept);
  CHECK(a.y == b.y);
  CHECK((a.y.array() > 0.0).all());
  // the site covariate is the surface plus white noise of sd 0.07; the sd
  // of a 445-sample sd estimate is about 0.07 / sqrt(890)
  const Eigen::VectorXd surface = case_study_covariate_surface(cfg, a.locations);
  const Eigen::VectorXd noise = a.x - surface;
  CHECK(std::abs(noise.mean()) < 5 * 0.07 / std::sqrt(445.0));
  CHECK(std::sqrt(variance(noise)) == doctest::Approx(cfg.covariate_noise_sd).epsilon(0.17));
  const Point outside{-1e7, 0.0};
  CHECK(std::isnan(case_study_covariate_surface(cfg, std::span<const Point>(&outside, 1))[0]));
}
