#pragma once

#include <Eigen/SparseCore>

#include <array>
#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace geoconf {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Point& a, const Point& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

/// Axis-aligned rectangular analysis region.
struct Domain {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  bool contains(const Point& p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
  /// Throws InvalidInput unless x_min < x_max and y_min < y_max.
  void validate() const;
};

/// Smallest domain containing all points (no padding).
Domain bounding_domain(std::span<const Point> points);

using Triangle = std::array<int, 3>;

/// Conforming triangulation with counter-clockwise triangles and a bucket
/// index for point location. Immutable after construction.
class TriMesh {
 public:
  TriMesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
          double extension = 0.0);

  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }
  double extension() const { return extension_; }

  /// Signed area of triangle t (positive for every triangle of a valid mesh).
  double signed_area(std::size_t t) const;
  double total_area() const;

  /// Lowest-index triangle containing p, if any.
  std::optional<std::size_t> locate(const Point& p) const;

  /// Barycentric coordinates of p with respect to triangle t.
  std::array<double, 3> barycentric(std::size_t t, const Point& p) const;

 private:
  void build_index();

  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  double extension_ = 0.0;

  // uniform bucket grid over the vertex bounding box
  double bx0_ = 0.0, by0_ = 0.0, bdx_ = 1.0, bdy_ = 1.0;
  int bnx_ = 1, bny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

/// Structured triangulation of `domain` grown by `extension` on every side.
/// Each lattice cell (axis edges at most `max_edge`) is split along its
/// SW-NE diagonal.
TriMesh build_mesh(const Domain& domain, double max_edge, double extension);

/// Largest lattice edge whose vertex count is closest to `target_nodes`.
double max_edge_for_node_count(const Domain& domain, double extension,
                               std::size_t target_nodes);

/// Default extension: 20% of the shorter domain side.
double default_extension(const Domain& domain);

/// Observation-to-mesh projector: row i holds the barycentric weights of
/// points[i]. Throws OutOfDomain naming the first point outside the hull.
SparseMatrix project(const TriMesh& mesh, std::span<const Point> points);

/// Text format: "m t", m lines "x y", t lines "i j k" (0-based).
void write_mesh(std::ostream& out, const TriMesh& mesh);
TriMesh read_mesh(std::istream& in);

}  // namespace geoconf
