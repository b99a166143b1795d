#include "meshfree/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace meshfree {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform on the open interval (0, 1).
double open_uniform(std::mt19937_64& rng) {
  double u = 0.0;
  while (u == 0.0) u = unit_uniform(rng);
  return u;
}

const Point2& vertex(const Polygon& poly, std::size_t i) {
  return poly.vertices[i % poly.vertices.size()];
}

double cross(const Point2& a, const Point2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_intersect(const Point2& p1, const Point2& p2, const Point2& q1, const Point2& q2) {
  const double d1 = cross(q2 - q1, p1 - q1);
  const double d2 = cross(q2 - q1, p2 - q1);
  const double d3 = cross(p2 - p1, q1 - p1);
  const double d4 = cross(p2 - p1, q2 - p1);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

Box bounding_box(const Domain& domain) {
  return std::visit(
      [](const auto& d) -> Box {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Interval>) {
          return {Eigen::VectorXd::Constant(1, d.a), Eigen::VectorXd::Constant(1, d.b)};
        } else if constexpr (std::is_same_v<T, HyperRectangle>) {
          return {d.lo, d.hi};
        } else {
          Eigen::Vector2d lo = d.vertices.front();
          Eigen::Vector2d hi = d.vertices.front();
          for (const auto& v : d.vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
          }
          return {lo, hi};
        }
      },
      domain);
}

bool strictly_inside_box(const Point& p, const Box& box) {
  return (p.array() > box.lo.array()).all() && (p.array() < box.hi.array()).all();
}

bool contains(const Domain& domain, const Point& p) {
  if (const auto* poly = std::get_if<Polygon>(&domain)) {
    return point_in_polygon(Point2(p[0], p[1]), *poly);
  }
  return strictly_inside_box(p, bounding_box(domain));
}

std::vector<Point> grid_points(const Box& box, std::size_t n) {
  const auto dim = static_cast<int>(box.lo.size());
  const auto k = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(n), 1.0 / dim)));
  std::size_t total = 1;
  for (int d = 0; d < dim; ++d) total *= k;
  if (total != n) {
    throw std::invalid_argument("grid sampling needs n = k^" + std::to_string(dim) + ", got " +
                                std::to_string(n));
  }
  std::vector<Point> out;
  out.reserve(n);
  std::vector<std::size_t> idx(static_cast<std::size_t>(dim), 0);
  for (std::size_t p = 0; p < n; ++p) {
    Point x(dim);
    for (int d = 0; d < dim; ++d) {
      const double h = (box.hi[d] - box.lo[d]) / static_cast<double>(k + 1);
      x[d] = box.lo[d] + static_cast<double>(idx[static_cast<std::size_t>(d)] + 1) * h;
    }
    out.push_back(std::move(x));
    for (int d = dim - 1; d >= 0; --d) {
      auto& i = idx[static_cast<std::size_t>(d)];
      if (++i < k) break;
      i = 0;
    }
  }
  return out;
}

}  // namespace

int dimension(const Domain& domain) {
  return std::visit(
      [](const auto& d) -> int {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Interval>) {
          return 1;
        } else if constexpr (std::is_same_v<T, Polygon>) {
          return 2;
        } else {
          return static_cast<int>(d.lo.size());
        }
      },
      domain);
}

void validate(const Domain& domain, bool check_simple) {
  if (const auto* iv = std::get_if<Interval>(&domain)) {
    if (!(iv->a < iv->b)) throw std::invalid_argument("interval requires a < b");
  } else if (const auto* box = std::get_if<HyperRectangle>(&domain)) {
    if (box->lo.size() < 1 || box->lo.size() != box->hi.size() ||
        !(box->lo.array() < box->hi.array()).all()) {
      throw std::invalid_argument("hyper-rectangle requires lo < hi componentwise");
    }
  } else {
    const auto& poly = std::get<Polygon>(domain);
    if (poly.vertices.size() < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
      if ((vertex(poly, i + 1) - vertex(poly, i)).norm() == 0.0) {
        throw std::invalid_argument("polygon has a zero-length edge at vertex " + std::to_string(i));
      }
    }
    if (check_simple && !is_simple(poly)) {
      throw std::invalid_argument("polygon is self-intersecting");
    }
  }
}

double signed_area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
    twice += cross(vertex(poly, i), vertex(poly, i + 1));
  }
  return 0.5 * twice;
}

Point2 centroid(const Polygon& poly) {
  double a2 = 0.0;
  Point2 c = Point2::Zero();
  for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
    const Point2& p = vertex(poly, i);
    const Point2& q = vertex(poly, i + 1);
    const double w = cross(p, q);
    a2 += w;
    c += w * (p + q);
  }
  return c / (3.0 * a2);
}

double perimeter(const Polygon& poly) {
  double total = 0.0;
  for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
    total += (vertex(poly, i + 1) - vertex(poly, i)).norm();
  }
  return total;
}

bool is_simple(const Polygon& poly) {
  const std::size_t n = poly.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // adjacent edges share a vertex
      if (segments_intersect(vertex(poly, i), vertex(poly, i + 1), vertex(poly, j),
                             vertex(poly, j + 1))) {
        return false;
      }
    }
  }
  return true;
}

Polygon star_polygon(int points, double outer, double inner) {
  Polygon poly;
  for (int k = 0; k < 2 * points; ++k) {
    const double angle = std::numbers::pi / 2.0 + k * std::numbers::pi / points;
    const double r = (k % 2 == 0) ? outer : inner;
    poly.vertices.emplace_back(r * std::cos(angle), r * std::sin(angle));
  }
  return poly;
}

Polygon unit_square() {
  return Polygon{{Point2(0, 0), Point2(1, 0), Point2(1, 1), Point2(0, 1)}};
}

Polygon read_polygon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open polygon file " + path.string());
  Polygon poly;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    double x = 0.0;
    double y = 0.0;
    if (!(row >> x >> y)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 'x y' vertex");
    }
    poly.vertices.emplace_back(x, y);
  }
  // Tolerate an explicitly repeated first vertex.
  if (poly.vertices.size() > 1 && poly.vertices.front() == poly.vertices.back()) {
    poly.vertices.pop_back();
  }
  validate(Domain{poly});
  return poly;
}

bool on_polygon_boundary(const Point2& p, const Polygon& poly, double tol) {
  for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
    const Point2& a = vertex(poly, i);
    const Point2 d = vertex(poly, i + 1) - a;
    const double len2 = d.squaredNorm();
    const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
    if ((a + t * d - p).norm() <= tol * std::sqrt(len2)) return true;
  }
  return false;
}

bool point_in_polygon(const Point2& p, const Polygon& poly) {
  if (on_polygon_boundary(p, poly)) return false;
  bool inside = false;
  const std::size_t n = poly.vertices.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2& a = poly.vertices[i];
    const Point2& b = poly.vertices[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

SamplingStrategy sampling_from_string(std::string_view name) {
  if (name == "grid") return SamplingStrategy::Grid;
  if (name == "uniform-random" || name == "uniform") return SamplingStrategy::UniformRandom;
  if (name == "sobol") return SamplingStrategy::Sobol;
  throw std::invalid_argument("unknown sampling strategy '" + std::string(name) + "'");
}

std::string_view to_string(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::Grid:
      return "grid";
    case SamplingStrategy::UniformRandom:
      return "uniform-random";
    case SamplingStrategy::Sobol:
      return "sobol";
  }
  return "unknown";
}

BoundarySampling boundary_sampling_from_string(std::string_view name) {
  if (name == "uniform-random" || name == "uniform") return BoundarySampling::UniformRandom;
  if (name == "stratified") return BoundarySampling::Stratified;
  throw std::invalid_argument("unknown boundary sampling '" + std::string(name) + "'");
}

std::vector<Point> sample_interior(const Domain& domain, std::size_t n, SamplingStrategy strategy,
                                   std::uint64_t seed, const DirectionTable& table) {
  if (n < 1) throw std::invalid_argument("sample_interior needs n >= 1");
  validate(domain);
  const Box box = bounding_box(domain);
  const int dim = dimension(domain);
  const bool is_polygon = std::holds_alternative<Polygon>(domain);

  if (strategy == SamplingStrategy::Grid) {
    if (is_polygon) throw std::invalid_argument("grid sampling is only defined for boxes");
    return grid_points(box, n);
  }

  const std::size_t budget = 1000 * n + 10000;
  std::vector<Point> out;
  out.reserve(n);
  std::size_t attempts = 0;
  auto scale = [&box](Point u) -> Point {
    return box.lo.array() + u.array() * (box.hi - box.lo).array();
  };

  if (strategy == SamplingStrategy::UniformRandom) {
    std::mt19937_64 rng(seed);
    while (out.size() < n) {
      if (attempts++ >= budget) {
        throw std::runtime_error("hit-and-miss sampling exceeded " + std::to_string(budget) +
                                 " attempts (degenerate domain?)");
      }
      Point u(dim);
      for (int d = 0; d < dim; ++d) u[d] = open_uniform(rng);
      Point p = scale(std::move(u));
      if (contains(domain, p)) out.push_back(std::move(p));
    }
    return out;
  }

  // Sobol: draw successive blocks of the sequence, keep points inside.
  std::size_t drawn = 0;
  std::size_t block = n;
  while (out.size() < n) {
    const std::vector<double> raw = sobol_points(dim, drawn + block, table);
    for (std::size_t i = drawn; i < drawn + block && out.size() < n; ++i) {
      if (attempts++ >= budget) {
        throw std::runtime_error("sobol rejection sampling exceeded attempt budget");
      }
      Point u = Eigen::Map<const Eigen::VectorXd>(raw.data() + i * static_cast<std::size_t>(dim), dim);
      Point p = scale(std::move(u));
      if (contains(domain, p)) out.push_back(std::move(p));
    }
    drawn += block;
    block *= 2;
  }
  return out;
}

std::vector<BoundaryPoint> sample_boundary(const Domain& domain, std::size_t m, std::uint64_t seed,
                                           BoundarySampling mode) {
  if (m < 1) throw std::invalid_argument("sample_boundary needs m >= 1");
  validate(domain);
  std::vector<BoundaryPoint> out;
  std::mt19937_64 rng(seed);

  if (dimension(domain) == 1) {
    const Box box = bounding_box(domain);
    out.push_back({Point::Constant(1, box.lo[0]), Point::Constant(1, -1.0), false});
    if (m >= 2) out.push_back({Point::Constant(1, box.hi[0]), Point::Constant(1, 1.0), false});
    return out;
  }

  if (const auto* poly = std::get_if<Polygon>(&domain)) {
    const std::size_t n = poly->vertices.size();
    std::vector<double> cumulative(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      cumulative[i + 1] = cumulative[i] + (vertex(*poly, i + 1) - vertex(*poly, i)).norm();
    }
    const double total = cumulative.back();
    const double orientation = signed_area(*poly) > 0.0 ? 1.0 : -1.0;
    out.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double s = mode == BoundarySampling::Stratified
                           ? (static_cast<double>(k) + 0.5) * total / static_cast<double>(m)
                           : unit_uniform(rng) * total;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), s);
      std::size_t edge = static_cast<std::size_t>(std::distance(cumulative.begin(), it)) - 1;
      edge = std::min(edge, n - 1);
      const Point2& a = vertex(*poly, edge);
      const Point2 d = vertex(*poly, edge + 1) - a;
      const double len = d.norm();
      const double t = std::clamp((s - cumulative[edge]) / len, 0.0, 1.0);
      const Point2 pos = a + t * d;
      const Point2 normal = orientation * Point2(d.y(), -d.x()) / len;
      out.push_back({Point(pos), Point(normal), false});
    }
    return out;
  }

  // Box faces, chosen with probability proportional to their measure.
  const auto& box = std::get<HyperRectangle>(domain);
  const int dim = static_cast<int>(box.lo.size());
  const Eigen::VectorXd extent = box.hi - box.lo;
  std::vector<double> face_cumulative;
  double measure = 0.0;
  for (int d = 0; d < dim; ++d) {
    double face = 1.0;
    for (int e = 0; e < dim; ++e) {
      if (e != d) face *= extent[e];
    }
    measure += face;
    face_cumulative.push_back(measure);  // lo face of axis d
    measure += face;
    face_cumulative.push_back(measure);  // hi face of axis d
  }
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double s = mode == BoundarySampling::Stratified
                         ? (static_cast<double>(k) + 0.5) * measure / static_cast<double>(m)
                         : unit_uniform(rng) * measure;
    auto it = std::upper_bound(face_cumulative.begin(), face_cumulative.end(), s);
    const auto face =
        std::min<std::size_t>(static_cast<std::size_t>(std::distance(face_cumulative.begin(), it)),
                              face_cumulative.size() - 1);
    const int axis = static_cast<int>(face / 2);
    const bool high = face % 2 == 1;
    Point pos(dim);
    for (int e = 0; e < dim; ++e) pos[e] = box.lo[e] + open_uniform(rng) * extent[e];
    pos[axis] = high ? box.hi[axis] : box.lo[axis];
    Point normal = Point::Zero(dim);
    normal[axis] = high ? 1.0 : -1.0;
    out.push_back({std::move(pos), std::move(normal), false});
  }
  return out;
}

bool classify_inflow(const BoundaryPoint& bp, const Eigen::VectorXd& velocity) {
  if (velocity.size() != bp.outward_normal.size()) {
    throw std::invalid_argument("velocity dimension does not match boundary normal");
  }
  return velocity.dot(bp.outward_normal) < 0.0;
}

CollocationSet apply_inflow_rule(CollocationSet set, const Eigen::VectorXd& velocity) {
  std::vector<BoundaryPoint> inflow;
  for (auto& bp : set.boundary) {
    bp.is_inflow = classify_inflow(bp, velocity);
    if (bp.is_inflow) {
      inflow.push_back(std::move(bp));
    } else {
      set.interior.push_back(std::move(bp.position));
    }
  }
  if (inflow.empty()) {
    throw std::runtime_error("no inflow boundary for the given velocity; advection problem is ill-posed");
  }
  set.boundary = std::move(inflow);
  return set;
}

std::vector<std::size_t> choose_distance_subset(std::size_t interior_count, std::size_t count,
                                                double fraction) {
  std::size_t k = count;
  if (k == 0) {
    k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(interior_count)));
    k = std::max<std::size_t>(k, 1);
  }
  k = std::min(k, interior_count);
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  return idx;
}

}  // namespace meshfree
