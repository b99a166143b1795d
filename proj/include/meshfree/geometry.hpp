#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "meshfree/sobol.hpp"

namespace meshfree {

using Point = Eigen::VectorXd;
using Point2 = Eigen::Vector2d;

struct Interval {
  double a = 0.0;
  double b = 1.0;
};

/// Closed polygon; the edge from the last vertex back to the first is implicit.
struct Polygon {
  std::vector<Point2> vertices;
};

struct HyperRectangle {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

using Domain = std::variant<Interval, Polygon, HyperRectangle>;

int dimension(const Domain& domain);
/// Throws std::invalid_argument on a < b violations, fewer than three polygon
/// vertices, zero-length edges or (when check_simple is set) self-intersections.
void validate(const Domain& domain, bool check_simple = false);

double signed_area(const Polygon& poly);
/// Area-weighted centroid (shoelace formula).
Point2 centroid(const Polygon& poly);
double perimeter(const Polygon& poly);
bool is_simple(const Polygon& poly);

/// Five-pointed star centred at the origin, outer radius 1, inner radius 0.6.
Polygon star_polygon(int points = 5, double outer = 1.0, double inner = 0.6);
Polygon unit_square();

/// One `x y` pair per line; blank lines and lines starting with '#' ignored.
Polygon read_polygon(const std::filesystem::path& path);

/// Even-odd crossing rule. Points on an edge (to within 1e-12 relative to
/// the edge length) are reported as outside.
bool point_in_polygon(const Point2& p, const Polygon& poly);
/// True if p lies on some edge, within tol times that edge's length.
bool on_polygon_boundary(const Point2& p, const Polygon& poly, double tol = 1e-12);

struct BoundaryPoint {
  Point position;
  Point outward_normal;
  bool is_inflow = false;
};

struct CollocationSet {
  std::vector<Point> interior;
  std::vector<BoundaryPoint> boundary;
  /// Indices into interior used for the coarse distance fit.
  std::vector<std::size_t> distance_subset;
};

enum class SamplingStrategy { Grid, UniformRandom, Sobol };
enum class BoundarySampling { UniformRandom, Stratified };

SamplingStrategy sampling_from_string(std::string_view name);
std::string_view to_string(SamplingStrategy s);
BoundarySampling boundary_sampling_from_string(std::string_view name);

/// Exactly n points strictly inside the domain. Polygons use hit-and-miss
/// rejection from the bounding box; after 1000 * n + 10000 rejected draws a
/// std::runtime_error is thrown. Grid sampling places the n interior nodes
/// of a uniform grid (for boxes n must be k^dim).
std::vector<Point> sample_interior(const Domain& domain, std::size_t n, SamplingStrategy strategy,
                                   std::uint64_t seed,
                                   const DirectionTable& table = DirectionTable::bundled());

/// Boundary samples with outward normals. Polygon and box boundaries are
/// sampled uniformly by arc length (area for box faces); Stratified places
/// the points at the centres of m equal arc-length cells. An interval yields
/// its left endpoint for m = 1 and both endpoints otherwise.
std::vector<BoundaryPoint> sample_boundary(const Domain& domain, std::size_t m, std::uint64_t seed,
                                           BoundarySampling mode = BoundarySampling::UniformRandom);

/// True iff velocity . normal < 0.
bool classify_inflow(const BoundaryPoint& bp, const Eigen::VectorXd& velocity);

/// Flags inflow points, keeps them as the boundary set and appends every
/// other boundary position to the interior set. Throws std::runtime_error
/// if no inflow point remains.
CollocationSet apply_inflow_rule(CollocationSet set, const Eigen::VectorXd& velocity);

/// First max(1, round(fraction * interior.size())) interior indices, or the
/// explicit count when count > 0.
std::vector<std::size_t> choose_distance_subset(std::size_t interior_count, std::size_t count,
                                                double fraction = 0.1);

}  // namespace meshfree
