#include "geoconf/io.hpp"

#include "geoconf/errors.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace geoconf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json to_json(const HyperParams& hp) {
  return {{"rho", hp.rho}, {"sigma", hp.sigma}, {"sigma_eps", hp.sigma_eps}};
}

HyperParams hyper_from(const json& j) {
  HyperParams hp;
  hp.rho = j.at("rho").get<double>();
  hp.sigma = j.at("sigma").get<double>();
  hp.sigma_eps = j.at("sigma_eps").get<double>();
  return hp;
}

}  // namespace

Dataset read_dataset_csv(const fs::path& path, bool log_response, bool intercept) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": dataset is empty");
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv(line);
  const char* required[] = {"x_coord", "y_coord", "response", "covariate"};
  std::size_t col[4];
  for (int c = 0; c < 4; ++c) {
    const auto it = std::find(header.begin(), header.end(), required[c]);
    if (it == header.end()) {
      throw ConfigError(where(path, 1) + "missing column '" + required[c] + "'");
    }
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<Point> locs;
  std::vector<double> y, x;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ConfigError(where(path, line_no) + "expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(cells.size()));
    }
    double v[4];
    for (int c = 0; c < 4; ++c) {
      const auto parsed = parse_double(cells[col[c]]);
      if (!parsed || !std::isfinite(*parsed)) {
        throw ConfigError(where(path, line_no) + "column '" + required[c] +
                          "' is not a finite number: '" + cells[col[c]] + "'");
      }
      v[c] = *parsed;
    }
    if (log_response) {
      if (!(v[2] > 0.0)) {
        throw ConfigError(where(path, line_no) + "log_response needs a positive response");
      }
      v[2] = std::log(v[2]);
    }
    locs.push_back({v[0], v[1]});
    y.push_back(v[2]);
    x.push_back(v[3]);
  }
  if (locs.empty()) throw ConfigError(path.string() + ": dataset has no rows");

  Dataset d;
  d.intercept = intercept;
  d.locations = std::move(locs);
  d.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.x = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  try {
    d.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return d;
}

void write_dataset_csv(const fs::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x_coord,y_coord,response,covariate\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const auto& p = data.locations[static_cast<std::size_t>(i)];
    out << p.x << ',' << p.y << ',' << data.y[i] << ',' << data.x[i] << '\n';
  }
}

// ---------------------------------------------------------------------------

void GridDef::validate() const {
  if (ncols < 1 || nrows < 1) throw ConfigError("grid: ncols and nrows must be positive");
  if (!(cellsize > 0.0) || !std::isfinite(cellsize)) {
    throw ConfigError("grid: cellsize must be positive");
  }
  if (!std::isfinite(x_min) || !std::isfinite(y_min)) throw ConfigError("grid: origin must be finite");
}

std::vector<Point> GridDef::centres() const {
  std::vector<Point> out;
  out.reserve(cells());
  for (int r = 0; r < nrows; ++r) {
    for (int c = 0; c < ncols; ++c) {
      out.push_back({x_min + (c + 0.5) * cellsize, y_min + (nrows - r - 0.5) * cellsize});
    }
  }
  return out;
}

std::optional<std::size_t> GridDef::cell_of(const Point& p) const {
  const double fc = std::floor((p.x - x_min) / cellsize);
  const double fr = std::floor((p.y - y_min) / cellsize);
  if (fc < 0 || fr < 0 || fc >= ncols || fr >= nrows) return std::nullopt;
  const auto row = static_cast<std::size_t>(nrows - 1 - static_cast<int>(fr));
  return row * static_cast<std::size_t>(ncols) + static_cast<std::size_t>(fc);
}

void write_ascii_grid(const fs::path& path, const AsciiGrid& grid) {
  grid.def.validate();
  if (grid.values.size() != static_cast<Eigen::Index>(grid.def.cells())) {
    throw InvalidInput("ascii grid: value count differs from ncols * nrows");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(12);
  out << "ncols " << grid.def.ncols << "\nnrows " << grid.def.nrows << "\nxllcorner "
      << grid.def.x_min << "\nyllcorner " << grid.def.y_min << "\ncellsize " << grid.def.cellsize
      << "\nNODATA_value " << grid.nodata << '\n';
  for (int r = 0; r < grid.def.nrows; ++r) {
    for (int c = 0; c < grid.def.ncols; ++c) {
      const double v = grid.values[r * grid.def.ncols + c];
      if (c) out << ' ';
      if (std::isfinite(v)) {
        out << v;
      } else {
        out << grid.nodata;
      }
    }
    out << '\n';
  }
}

AsciiGrid read_ascii_grid(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open raster " + path.string());
  AsciiGrid g;
  bool centre = false;
  for (int i = 0; i < 6; ++i) {
    std::string key;
    double value = 0.0;
    if (!(in >> key >> value)) throw ConfigError(path.string() + ": truncated raster header");
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (key == "ncols") g.def.ncols = static_cast<int>(value);
    else if (key == "nrows") g.def.nrows = static_cast<int>(value);
    else if (key == "xllcorner") g.def.x_min = value;
    else if (key == "yllcorner") g.def.y_min = value;
    else if (key == "xllcenter") { g.def.x_min = value; centre = true; }
    else if (key == "yllcenter") { g.def.y_min = value; centre = true; }
    else if (key == "cellsize") g.def.cellsize = value;
    else if (key == "nodata_value") g.nodata = value;
    else throw ConfigError(path.string() + ": unknown raster header key '" + key + "'");
  }
  if (centre) {
    g.def.x_min -= 0.5 * g.def.cellsize;
    g.def.y_min -= 0.5 * g.def.cellsize;
  }
  g.def.validate();
  g.values.resize(static_cast<Eigen::Index>(g.def.cells()));
  for (Eigen::Index i = 0; i < g.values.size(); ++i) {
    double v = 0.0;
    if (!(in >> v)) throw ConfigError(path.string() + ": raster has fewer values than ncols * nrows");
    g.values[i] = (v == g.nodata) ? std::numeric_limits<double>::quiet_NaN() : v;
  }
  return g;
}

// ---------------------------------------------------------------------------

FitArtifact make_artifact(const FitResult& fit, const std::string& dataset, bool log_response) {
  FitArtifact a;
  a.model = fit.model;
  a.intercept = fit.intercept;
  a.log_response = log_response;
  a.dataset = dataset;
  for (const auto& gp : fit.hyper.points) {
    a.points.push_back(gp.params);
    a.weights.push_back(gp.weight);
  }
  a.mode = fit.mode;
  a.covariate_used = fit.covariate_used;
  a.stage1_intercept = fit.stage1_intercept;
  a.stage1_field_mean = fit.stage1_field_mean;
  a.k_removed = fit.k_removed;
  a.k_kept = fit.k_kept;
  a.reference_range = fit.reference_range;
  a.beta = fit.beta;
  a.waic = fit.waic.waic;
  a.dic = fit.dic;
  return a;
}

void write_fit_artifact(const fs::path& path, const FitArtifact& a) {
  json j;
  j["model"] = model_name(a.model);
  j["intercept"] = a.intercept;
  j["log_response"] = a.log_response;
  j["dataset"] = a.dataset;
  json pts = json::array();
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    json p = to_json(a.points[i]);
    p["weight"] = a.weights[i];
    pts.push_back(p);
  }
  j["hyper_grid"] = pts;
  j["mode"] = to_json(a.mode);
  j["covariate_used"] = to_json(a.covariate_used);
  j["stage1_intercept"] = a.stage1_intercept;
  j["stage1_field_mean"] = to_json(a.stage1_field_mean);
  j["k_removed"] = a.k_removed ? json(*a.k_removed) : json(nullptr);
  j["k_kept"] = a.k_kept ? json(*a.k_kept) : json(nullptr);
  j["reference_range"] = a.reference_range;
  json beta = json::array();
  for (const auto& b : a.beta) {
    beta.push_back({{"mean", b.mean}, {"sd", b.sd}, {"q025", b.q025}, {"q975", b.q975}});
  }
  j["beta"] = beta;
  j["waic"] = a.waic;
  j["dic"] = a.dic;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

FitArtifact read_fit_artifact(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open fit artifact " + path.string());
  try {
    const json j = json::parse(in);
    FitArtifact a;
    a.model = parse_model(j.at("model").get<std::string>());
    a.intercept = j.at("intercept").get<bool>();
    a.log_response = j.at("log_response").get<bool>();
    a.dataset = j.at("dataset").get<std::string>();
    for (const auto& p : j.at("hyper_grid")) {
      a.points.push_back(hyper_from(p));
      a.weights.push_back(p.at("weight").get<double>());
    }
    a.mode = hyper_from(j.at("mode"));
    a.covariate_used = vector_from(j.at("covariate_used"));
    a.stage1_intercept = j.at("stage1_intercept").get<double>();
    a.stage1_field_mean = vector_from(j.at("stage1_field_mean"));
    if (!j.at("k_removed").is_null()) a.k_removed = j.at("k_removed").get<int>();
    if (!j.at("k_kept").is_null()) a.k_kept = j.at("k_kept").get<int>();
    a.reference_range = j.at("reference_range").get<double>();
    for (const auto& b : j.at("beta")) {
      a.beta.push_back({b.at("mean").get<double>(), b.at("sd").get<double>(),
                        b.at("q025").get<double>(), b.at("q975").get<double>()});
    }
    a.waic = j.at("waic").get<double>();
    a.dic = j.at("dic").get<double>();
    if (a.points.empty()) throw ConfigError("empty hyperparameter grid");
    return a;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed fit artifact (" + e.what() + ")");
  }
}

FitResult restore_fit(const FitArtifact& a, const Dataset& data, const SpatialContext* ctx) {
  if (a.covariate_used.size() != data.size()) {
    throw ConfigError("fit artifact was produced from a dataset of a different size");
  }
  Dataset shape = data;
  shape.intercept = a.intercept;
  std::shared_ptr<LatentModel> model;
  if (a.model == ModelKind::Null) {
    model = std::make_shared<LatentModel>(data.y, shape.design(a.covariate_used));
  } else {
    if (!ctx) throw InvalidInput("restore_fit: spatial models need the mesh context");
    model = std::make_shared<LatentModel>(data.y, shape.design(a.covariate_used), ctx->fem,
                                          ctx->projector, a.model == ModelKind::RSR);
  }
  HyperPosterior post;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    HyperPosterior single = fixed_hyperparameters(*model, a.points[i]);
    GridPoint gp = single.points.front();
    gp.weight = a.weights[i];
    post.points.push_back(std::move(gp));
    if (a.weights[i] > post.points[post.mode_index].weight) post.mode_index = i;
  }
  post.mode = a.mode;

  FitResult fit;
  fit.model = a.model;
  fit.intercept = a.intercept;
  fit.beta = a.beta;
  fit.covariate_index = a.intercept ? 1 : 0;
  fit.mode = a.mode;
  if (model->has_field()) fit.field_mean = post.field_mean();
  fit.fitted = post.predictor_mean();
  fit.covariate_used = a.covariate_used;
  fit.hyper = std::move(post);
  fit.waic.waic = a.waic;
  fit.dic = a.dic;
  fit.stage1_intercept = a.stage1_intercept;
  fit.stage1_field_mean = a.stage1_field_mean;
  fit.k_removed = a.k_removed;
  fit.k_kept = a.k_kept;
  fit.reference_range = a.reference_range;
  fit.latent = std::move(model);
  return fit;
}

}  // namespace geoconf
