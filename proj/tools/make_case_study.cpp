// Writes the synthetic survey dataset and its covariate raster:
//   make_case_study OUT_DIR [--seed N]

#include "geoconf/io.hpp"
#include "geoconf/simstudy.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>

int main(int argc, char** argv) {
  using namespace geoconf;
  CLI::App app("synthetic case-study data");
  std::filesystem::path out = "data";
  CaseStudyConfig cfg;
  app.add_option("out", out, "output directory");
  app.add_option("--seed", cfg.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    std::filesystem::create_directories(out);
    write_dataset_csv(out / "survey.csv", generate_case_study(cfg));
    AsciiGrid cov;
    cov.def = GridDef{0.0, 0.0, 20000.0, 60, 50};
    cov.values = case_study_covariate_surface(cfg, cov.def.centres());
    write_ascii_grid(out / "covariate.asc", cov);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  spdlog::info("wrote {} and {}", (out / "survey.csv").string(), (out / "covariate.asc").string());
  return 0;
}
