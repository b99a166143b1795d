#include "meshfree/distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace meshfree {

namespace {
constexpr std::size_t kLeafSize = 8;
}

double squared_distance(const Point& a, const Point& b) {
  double sum = 0.0;
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    sum += diff * diff;
  }
  return sum;
}

KdTree::KdTree(std::span<const Point> points) : points_(points) {
  if (points.empty()) throw std::invalid_argument("k-d tree needs at least one point");
  dim_ = static_cast<int>(points.front().size());
  order_.resize(points.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points.size() / kLeafSize + 1);
  build(0, order_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{-1, 0.0, begin, end, -1, -1});
  if (end - begin <= kLeafSize) return id;

  int axis = 0;
  double best_spread = -1.0;
  for (int d = 0; d < dim_; ++d) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = std::min(lo, points_[order_[i]][d]);
      hi = std::max(hi, points_[order_[i]][d]);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      axis = d;
    }
  }
  if (best_spread <= 0.0) return id;  // all points coincide

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [this, axis](std::size_t a, std::size_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = split;
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::search(int node_id, const Point& query, Hit& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const double d2 = squared_distance(query, points_[order_[i]]);
      if (d2 < best.squared_distance) best = {order_[i], d2};
    }
    return;
  }
  const double diff = query[node.axis] - node.split;
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  search(near, query, best);
  // The far side can only hold points at squared distance >= diff^2.
  if (diff * diff <= best.squared_distance) search(far, query, best);
}

KdTree::Hit KdTree::nearest(const Point& query) const {
  if (query.size() != dim_) throw std::invalid_argument("k-d tree query has wrong dimension");
  Hit best{0, std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

DistanceBackend distance_backend_from_string(std::string_view name) {
  if (name == "naive") return DistanceBackend::Naive;
  if (name == "kdtree") return DistanceBackend::KdTree;
  throw std::invalid_argument("unknown distance backend '" + std::string(name) + "'");
}

std::vector<double> DistanceField::normalized() const {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / normalization;
  return out;
}

DistanceField distance_field(std::span<const Point> queries, std::span<const Point> boundary,
                             DistanceBackend backend) {
  if (boundary.empty()) throw std::invalid_argument("distance field needs a nonempty boundary set");
  DistanceField field;
  field.values.resize(queries.size());
  if (backend == DistanceBackend::Naive) {
    for (std::size_t q = 0; q < queries.size(); ++q) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : boundary) best = std::min(best, squared_distance(queries[q], b));
      field.values[q] = std::sqrt(best);
    }
  } else {
    const KdTree tree(boundary);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      field.values[q] = std::sqrt(tree.nearest(queries[q]).squared_distance);
    }
  }
  // Boundary points are at distance zero from themselves.
  double max_value = 0.0;
  for (double v : field.values) max_value = std::max(max_value, v);
  field.normalization = max_value > 0.0 ? max_value : 1.0;
  return field;
}

}  // namespace meshfree
