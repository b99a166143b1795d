#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "meshfree/geometry.hpp"

namespace meshfree {

/// Static k-d tree over a point set for exact Euclidean nearest-neighbour
/// queries. Splits on the axis of largest spread at the median.
class KdTree {
 public:
  explicit KdTree(std::span<const Point> points);

  struct Hit {
    std::size_t index = 0;
    double squared_distance = 0.0;
  };
  Hit nearest(const Point& query) const;

  std::size_t size() const { return order_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  void search(int node, const Point& query, Hit& best) const;

  std::span<const Point> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int dim_ = 0;
};

enum class DistanceBackend { Naive, KdTree };
DistanceBackend distance_backend_from_string(std::string_view name);

struct DistanceField {
  /// Raw minimum distances, one per query.
  std::vector<double> values;
  /// Largest raw distance over the queries and boundary points (> 0).
  double normalization = 1.0;

  std::vector<double> normalized() const;
};

/// Squared Euclidean distance accumulated axis by axis; both backends use
/// this so ties and results are bitwise identical.
double squared_distance(const Point& a, const Point& b);

/// d(x) = min over boundary of |x - x_b| for each query. Throws
/// std::invalid_argument if the boundary is empty.
DistanceField distance_field(std::span<const Point> queries, std::span<const Point> boundary,
                             DistanceBackend backend = DistanceBackend::KdTree);

}  // namespace meshfree
