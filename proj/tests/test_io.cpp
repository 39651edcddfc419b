#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "geoconf/errors.hpp"
#include "geoconf/io.hpp"
#include "tempdir.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>

using namespace geoconf;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

Dataset small_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  Dataset d;
  d.locations.resize(n);
  d.x.resize(n);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    d.locations[i] = {u(rng), u(rng)};
    d.x[i] = z(rng);
    d.y[i] = 1.0 + 0.5 * d.x[i] + std::sin(4 * d.locations[i].x) + 0.2 * z(rng);
  }
  return d;
}

}  // namespace

TEST_CASE("dataset CSV: column order, extra columns, BOM and log transform") {
  TempDir dir("io");
  const auto p = dir.write("d.csv",
                           "\xEF\xBB\xBF" "covariate,id,response,y_coord,x_coord\n"
                           "0.5,a,2.718281828459045,20,10\n"
                           "-1.25,b,1,40,30\r\n");
  const Dataset d = read_dataset_csv(p, true);
  REQUIRE(d.size() == 2);
  CHECK(d.locations[0].x == 10.0);
  CHECK(d.locations[1].y == 40.0);
  CHECK(d.x[1] == -1.25);
  CHECK(d.y[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.y[1] == 0.0);
  CHECK(d.intercept);
  const Dataset raw = read_dataset_csv(p, false, false);
  CHECK(raw.y[0] == 2.718281828459045);
  CHECK_FALSE(raw.intercept);
}

TEST_CASE("dataset CSV: schema errors name the file and line") {
  TempDir dir("io");
  const auto missing = dir.write("m.csv", "x_coord,y_coord,response\n1,2,3\n");
  CHECK(error_of([&] { read_dataset_csv(missing, false); }).find("m.csv:1: missing column 'covariate'") !=
        std::string::npos);
  const auto bad = dir.write("b.csv", "x_coord,y_coord,response,covariate\n1,2,3,4\n1,2,x,4\n");
  CHECK(error_of([&] { read_dataset_csv(bad, false); }).find("b.csv:3:") != std::string::npos);
  const auto ragged = dir.write("r.csv", "x_coord,y_coord,response,covariate\n1,2,3\n");
  CHECK(error_of([&] { read_dataset_csv(ragged, false); }).find("r.csv:2:") != std::string::npos);
  const auto negative = dir.write("n.csv", "x_coord,y_coord,response,covariate\n1,2,-3,4\n");
  CHECK(error_of([&] { read_dataset_csv(negative, true); }).find("n.csv:2:") != std::string::npos);
  CHECK_NOTHROW(read_dataset_csv(negative, false));
  const auto empty = dir.write("e.csv", "");
  CHECK_THROWS_AS(read_dataset_csv(empty, false), ConfigError);
  const auto header_only = dir.write("h.csv", "x_coord,y_coord,response,covariate\n");
  CHECK_THROWS_AS(read_dataset_csv(header_only, false), ConfigError);
  CHECK_THROWS_AS(read_dataset_csv(dir / "absent.csv", false), ConfigError);
}

TEST_CASE("dataset CSV round trip is exact") {
  TempDir dir("io");
  const Dataset d = small_dataset(25, 3);
  write_dataset_csv(dir / "d.csv", d);
  const Dataset back = read_dataset_csv(dir / "d.csv", false);
  CHECK(back.x == d.x);
  CHECK(back.y == d.y);
  for (std::size_t i = 0; i < d.locations.size(); ++i) {
    CHECK(back.locations[i].x == d.locations[i].x);
    CHECK(back.locations[i].y == d.locations[i].y);
  }
}

TEST_CASE("grid geometry: centres run north to south, row-major") {
  GridDef g{100.0, 200.0, 10.0, 3, 2};
  const auto c = g.centres();
  REQUIRE(c.size() == 6);
  CHECK(c[0].x == 105.0);
  CHECK(c[0].y == 215.0);
  CHECK(c[2].x == 125.0);
  CHECK(c[3].y == 205.0);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(g.cell_of(c[i]) == i);
  CHECK_FALSE(g.cell_of({99.0, 205.0}).has_value());
  CHECK_FALSE(g.cell_of({105.0, 221.0}).has_value());
  GridDef bad = g;
  bad.cellsize = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ASCII grid round trip keeps values and nodata") {
  TempDir dir("io");
  AsciiGrid g;
  g.def = {0.5, -3.0, 0.25, 4, 3};
  g.values.resize(12);
  for (int i = 0; i < 12; ++i) g.values[i] = 0.1 * i - 0.3;
  g.values[5] = std::numeric_limits<double>::quiet_NaN();
  write_ascii_grid(dir / "g.asc", g);
  const AsciiGrid back = read_ascii_grid(dir / "g.asc");
  CHECK(back.def.ncols == 4);
  CHECK(back.def.nrows == 3);
  CHECK(back.def.x_min == 0.5);
  CHECK(back.def.y_min == -3.0);
  CHECK(back.def.cellsize == 0.25);
  for (int i = 0; i < 12; ++i) {
    if (i == 5) {
      CHECK(std::isnan(back.values[i]));
    } else {
      CHECK(back.values[i] == doctest::Approx(g.values[i]).epsilon(1e-14));
    }
  }
  const std::string text = slurp(dir / "g.asc");
  CHECK(text.rfind("ncols", 0) == 0);
  CHECK(text.find("NODATA_value") != std::string::npos);
}

TEST_CASE("ASCII grid reader accepts centre-registered headers") {
  TempDir dir("io");
  const auto p = dir.write("c.asc",
                           "ncols 2\nnrows 2\nxllcenter 5\nyllcenter 5\ncellsize 10\n"
                           "NODATA_value -1\n1 2\n3 -1\n");
  const AsciiGrid g = read_ascii_grid(p);
  CHECK(g.def.x_min == 0.0);
  CHECK(g.def.y_min == 0.0);
  CHECK(g.values[2] == 3.0);
  CHECK(std::isnan(g.values[3]));
  const auto short_file = dir.write("s.asc", "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n");
  CHECK_THROWS_AS(read_ascii_grid(short_file), ConfigError);
}

TEST_CASE("fit artifacts round trip and restore the fitted family") {
  TempDir dir("io");
  const Dataset d = small_dataset(40, 11);
  auto mesh = std::make_shared<const TriMesh>(build_mesh({0, 1, 0, 1}, 0.25, 0.3));
  const SpatialContext ctx = make_spatial_context(d.locations, mesh);
  FitOptions fo;
  fo.grid.points = 3;
  fo.draws = 200;
  const PriorSet priors = default_priors(Scenario::Simulation);
  for (const FitResult& fit : {fit_null(d, fo), fit_rsr(d, ctx, priors.rsr, fo)}) {
    CAPTURE(model_name(fit.model));
    const FitArtifact art = make_artifact(fit, "d.csv", true);
    write_fit_artifact(dir / "fit.json", art);
    const FitArtifact back = read_fit_artifact(dir / "fit.json");
    CHECK(back.model == fit.model);
    CHECK(back.log_response);
    CHECK(back.points.size() == fit.hyper.points.size());
    CHECK(back.beta[1].mean == fit.beta[1].mean);
    const FitResult restored = restore_fit(back, d, &ctx);
    CHECK(restored.hyper.beta_mean().isApprox(fit.hyper.beta_mean(), 1e-10));
    CHECK(restored.fitted.isApprox(fit.fitted, 1e-10));
  }
  dir.write("broken.json", "{\"model\": \"Null\"}");
  CHECK_THROWS_AS(read_fit_artifact(dir / "broken.json"), ConfigError);
}
