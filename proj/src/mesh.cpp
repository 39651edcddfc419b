#include "geoconf/mesh.hpp"

#include "geoconf/errors.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace geoconf {

namespace {

constexpr double kLocateTolerance = 1e-12;

}  // namespace

void Domain::validate() const {
  if (!(x_min < x_max) || !(y_min < y_max)) {
    std::ostringstream msg;
    msg << "degenerate domain [" << x_min << ", " << x_max << "] x [" << y_min
        << ", " << y_max << "]";
    throw InvalidInput(msg.str());
  }
}

Domain bounding_domain(std::span<const Point> points) {
  if (points.empty()) throw InvalidInput("bounding_domain: no points");
  Domain d{points[0].x, points[0].x, points[0].y, points[0].y};
  for (const auto& p : points) {
    d.x_min = std::min(d.x_min, p.x);
    d.x_max = std::max(d.x_max, p.x);
    d.y_min = std::min(d.y_min, p.y);
    d.y_max = std::max(d.y_max, p.y);
  }
  return d;
}

TriMesh::TriMesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
                 double extension)
    : vertices_(std::move(vertices)),
      triangles_(std::move(triangles)),
      extension_(extension) {
  if (vertices_.size() < 3) throw InvalidInput("mesh needs at least 3 vertices");
  if (triangles_.empty()) throw InvalidInput("mesh has no triangles");
  const int m = static_cast<int>(vertices_.size());
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    for (int v : triangles_[t]) {
      if (v < 0 || v >= m) {
        throw InvalidInput("triangle " + std::to_string(t) +
                           " references a missing vertex");
      }
    }
    // orient counter-clockwise
    if (signed_area(t) < 0.0) std::swap(triangles_[t][1], triangles_[t][2]);
  }
  build_index();
}

double TriMesh::signed_area(std::size_t t) const {
  const auto& tri = triangles_[t];
  const Point& a = vertices_[tri[0]];
  const Point& b = vertices_[tri[1]];
  const Point& c = vertices_[tri[2]];
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

double TriMesh::total_area() const {
  double area = 0.0;
  for (std::size_t t = 0; t < triangles_.size(); ++t) area += signed_area(t);
  return area;
}

std::array<double, 3> TriMesh::barycentric(std::size_t t, const Point& p) const {
  const auto& tri = triangles_[t];
  const Point& a = vertices_[tri[0]];
  const Point& b = vertices_[tri[1]];
  const Point& c = vertices_[tri[2]];
  const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
  const double l1 = ((b.x - p.x) * (c.y - p.y) - (c.x - p.x) * (b.y - p.y)) / det;
  const double l2 = ((c.x - p.x) * (a.y - p.y) - (a.x - p.x) * (c.y - p.y)) / det;
  const double l3 = 1.0 - l1 - l2;
  return {l1, l2, l3};
}

void TriMesh::build_index() {
  double x0 = vertices_[0].x, x1 = x0, y0 = vertices_[0].y, y1 = y0;
  for (const auto& v : vertices_) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  const int side = std::max(
      1, static_cast<int>(std::sqrt(static_cast<double>(triangles_.size()) / 2.0)));
  bnx_ = side;
  bny_ = side;
  bx0_ = x0;
  by0_ = y0;
  bdx_ = std::max(x1 - x0, 1e-300) / bnx_;
  bdy_ = std::max(y1 - y0, 1e-300) / bny_;
  buckets_.assign(static_cast<std::size_t>(bnx_) * bny_, {});

  auto clamp_x = [&](double x) {
    return std::clamp(static_cast<int>(std::floor((x - bx0_) / bdx_)), 0, bnx_ - 1);
  };
  auto clamp_y = [&](double y) {
    return std::clamp(static_cast<int>(std::floor((y - by0_) / bdy_)), 0, bny_ - 1);
  };
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    double tx0 = std::numeric_limits<double>::max(), tx1 = -tx0;
    double ty0 = tx0, ty1 = -tx0;
    for (int v : triangles_[t]) {
      tx0 = std::min(tx0, vertices_[v].x);
      tx1 = std::max(tx1, vertices_[v].x);
      ty0 = std::min(ty0, vertices_[v].y);
      ty1 = std::max(ty1, vertices_[v].y);
    }
    // widen by a hair so points on bucket seams see both sides
    const double eps = 1e-9 * std::max(bdx_, bdy_);
    for (int ix = clamp_x(tx0 - eps); ix <= clamp_x(tx1 + eps); ++ix) {
      for (int iy = clamp_y(ty0 - eps); iy <= clamp_y(ty1 + eps); ++iy) {
        buckets_[static_cast<std::size_t>(iy) * bnx_ + ix].push_back(static_cast<int>(t));
      }
    }
  }
}

std::optional<std::size_t> TriMesh::locate(const Point& p) const {
  const double fx = (p.x - bx0_) / bdx_;
  const double fy = (p.y - by0_) / bdy_;
  if (!std::isfinite(fx) || !std::isfinite(fy)) return std::nullopt;
  const double slack = 1e-9;
  if (fx < -slack || fy < -slack || fx > bnx_ + slack || fy > bny_ + slack) {
    return std::nullopt;
  }
  const int ix = std::clamp(static_cast<int>(std::floor(fx)), 0, bnx_ - 1);
  const int iy = std::clamp(static_cast<int>(std::floor(fy)), 0, bny_ - 1);
  // bucket lists are in increasing triangle order, so the first hit is the
  // lowest-index containing triangle
  for (int t : buckets_[static_cast<std::size_t>(iy) * bnx_ + ix]) {
    const auto w = barycentric(static_cast<std::size_t>(t), p);
    if (w[0] >= -kLocateTolerance && w[1] >= -kLocateTolerance &&
        w[2] >= -kLocateTolerance) {
      return static_cast<std::size_t>(t);
    }
  }
  return std::nullopt;
}

double default_extension(const Domain& domain) {
  return 0.2 * std::min(domain.width(), domain.height());
}

TriMesh build_mesh(const Domain& domain, double max_edge, double extension) {
  domain.validate();
  if (!(max_edge > 0.0)) throw InvalidInput("max_edge must be positive");
  if (!(extension >= 0.0)) throw InvalidInput("extension must be non-negative");

  const double x0 = domain.x_min - extension;
  const double y0 = domain.y_min - extension;
  const double w = domain.width() + 2.0 * extension;
  const double h = domain.height() + 2.0 * extension;
  const int nx = std::max(1, static_cast<int>(std::ceil(w / max_edge - 1e-12)));
  const int ny = std::max(1, static_cast<int>(std::ceil(h / max_edge - 1e-12)));

  std::vector<Point> vertices;
  vertices.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j) {
    // pin the last row/column to the exact boundary
    const double y = (j == ny) ? y0 + h : y0 + h * j / ny;
    for (int i = 0; i <= nx; ++i) {
      const double x = (i == nx) ? x0 + w : x0 + w * i / nx;
      vertices.push_back({x, y});
    }
  }
  auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  std::vector<Triangle> triangles;
  triangles.reserve(static_cast<std::size_t>(2) * nx * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      triangles.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
      triangles.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
    }
  }
  return TriMesh(std::move(vertices), std::move(triangles), extension);
}

double max_edge_for_node_count(const Domain& domain, double extension,
                               std::size_t target_nodes) {
  domain.validate();
  const double w = domain.width() + 2.0 * extension;
  const double h = domain.height() + 2.0 * extension;
  double best_edge = std::max(w, h);
  long best_gap = std::numeric_limits<long>::max();
  for (int k = 1; k <= 4096; ++k) {
    const double edge = std::max(w, h) / k;
    const long nx = std::max(1L, static_cast<long>(std::ceil(w / edge - 1e-12)));
    const long ny = std::max(1L, static_cast<long>(std::ceil(h / edge - 1e-12)));
    const long count = (nx + 1) * (ny + 1);
    const long gap = std::labs(count - static_cast<long>(target_nodes));
    if (gap < best_gap) {
      best_gap = gap;
      best_edge = edge;
    }
    if (count > 4 * static_cast<long>(target_nodes)) break;
  }
  return best_edge;
}

SparseMatrix project(const TriMesh& mesh, std::span<const Point> points) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(points.size() * 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto t = mesh.locate(points[i]);
    if (!t) {
      std::ostringstream msg;
      msg << "point " << i << " (" << points[i].x << ", " << points[i].y
          << ") lies outside the mesh";
      throw OutOfDomain(msg.str(), i);
    }
    auto w = mesh.barycentric(*t, points[i]);
    double total = 0.0;
    for (double& wk : w) {
      wk = std::clamp(wk, 0.0, 1.0);
      total += wk;
    }
    const auto& tri = mesh.triangles()[*t];
    for (int k = 0; k < 3; ++k) {
      if (w[k] > 0.0) {
        entries.emplace_back(static_cast<int>(i), tri[k], w[k] / total);
      }
    }
  }
  SparseMatrix a(static_cast<Eigen::Index>(points.size()),
                 static_cast<Eigen::Index>(mesh.num_vertices()));
  a.setFromTriplets(entries.begin(), entries.end());
  a.makeCompressed();
  return a;
}

void write_mesh(std::ostream& out, const TriMesh& mesh) {
  const auto old_precision = out.precision(17);
  out << mesh.num_vertices() << ' ' << mesh.num_triangles() << '\n';
  for (const auto& v : mesh.vertices()) out << v.x << ' ' << v.y << '\n';
  for (const auto& t : mesh.triangles()) {
    out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
  out.precision(old_precision);
}

TriMesh read_mesh(std::istream& in) {
  std::size_t m = 0, t = 0;
  if (!(in >> m >> t)) throw InvalidInput("mesh file: missing 'm t' header");
  std::vector<Point> vertices(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(in >> vertices[i].x >> vertices[i].y)) {
      throw InvalidInput("mesh file: truncated vertex list at vertex " +
                         std::to_string(i));
    }
  }
  std::vector<Triangle> triangles(t);
  for (std::size_t i = 0; i < t; ++i) {
    if (!(in >> triangles[i][0] >> triangles[i][1] >> triangles[i][2])) {
      throw InvalidInput("mesh file: truncated triangle list at triangle " +
                         std::to_string(i));
    }
  }
  return TriMesh(std::move(vertices), std::move(triangles));
}

}  // namespace geoconf
