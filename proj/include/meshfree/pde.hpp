#pragma once

// Linear stationary problems L u = f with Dirichlet data on Gamma, solved
// through the ansatz u_hat = G + D * y, where y is the solution network.
//
// Supported operators: constant-velocity advection a . grad u and the
// Laplacian. Only the scalar case (one network output) is handled here.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meshfree/derivatives.hpp"
#include "meshfree/geometry.hpp"
#include "meshfree/surrogate.hpp"

namespace meshfree {

struct Operator {
  enum class Kind { Advection, Diffusion };
  Kind kind = Kind::Diffusion;
  /// Advection only.
  Vector velocity;

  static Operator advection(Vector velocity) { return {Kind::Advection, std::move(velocity)}; }
  static Operator diffusion() { return {Kind::Diffusion, {}}; }
  /// Highest spatial derivative order (1 or 2).
  int order() const { return kind == Kind::Advection ? 1 : 2; }
};

using ScalarField = std::function<double(const Point&)>;

enum class ProblemId { Advec1d, Diff1d, Advec2d, Diff2d, DiffNd, DiffPolygon, Custom };
ProblemId problem_id_from_string(std::string_view name);
std::string_view to_string(ProblemId id);

struct PdeProblem {
  ProblemId id = ProblemId::Custom;
  Operator op;
  ScalarField forcing;
  ScalarField boundary_data;
  /// Empty when no closed-form solution is known.
  ScalarField exact_solution;
  Domain domain;

  int dimension() const { return meshfree::dimension(domain); }
};

struct ManufacturedOptions {
  /// Replaces the default domain (unit interval, star, unit cube).
  std::optional<Domain> domain;
  /// Dimension for DiffNd.
  int dimension = 3;
};

/// Manufactured problems with hand-differentiated forcing:
///   advec1d      u = sin(2 pi x) cos(4 pi x) + 1,       u' = f on [0, 1]
///   diff1d       u = sin(pi x / 2) cos(2 pi x) + 1,     u'' = f on [0, 1]
///   advec2d      u = cos(pi x) sin(pi y) / 2, (a, b) = (1, 1/2), star
///   diff2d       u = exp(-(2x^2 + 4y^2)) + 1/2, star
///   diff_nd      u = exp(-|x|^2) + 1/2 on [0, 1]^N
///   diff_polygon u = exp(-10 |x - c|^2), c the polygon's area centroid
/// Custom problems cannot be manufactured; build a PdeProblem directly.
PdeProblem manufactured_problem(ProblemId id, const ManufacturedOptions& opts = {});

struct AnsatzBundle {
  Surrogate extension;
  Surrogate distance;
  Network solution;
};

/// G(x) + D(x) y(x).
double ansatz_eval(const AnsatzBundle& bundle, const Point& x);

/// Forward data of the solution network at one point, down to the order the
/// operator needs.
struct PointTapes {
  ForwardTape forward;
  FirstOrderTape first;
  std::optional<SecondOrderTape> second;
};

PointTapes compute_tapes(const Network& net, const Point& x, int order);

/// L u_hat at one point from precomputed surrogate derivatives and tapes.
double apply_operator(const Operator& op, const SurrogateEval& extension,
                      const SurrogateEval& distance, const PointTapes& tapes);
double apply_operator(const AnsatzBundle& bundle, const Operator& op, const Point& x);

struct ResidualEvaluation {
  /// L u_hat - f per collocation point.
  std::vector<double> residuals;
  /// 0.5 / N_d * sum residual^2
  double cost = 0.0;
  Vector gradient;
};

enum class Reduction { Deterministic, Unordered };

struct ResidualOptions {
  /// 0 selects std::thread::hardware_concurrency().
  std::size_t threads = 1;
  Reduction reduction = Reduction::Deterministic;
  std::size_t chunk_size = 64;
};

/// Residual cost and its exact parameter gradient over a fixed set of
/// collocation points. Surrogate derivatives and forcing values are cached
/// at construction, since G and D are frozen during training.
class ResidualSystem {
 public:
  ResidualSystem(const Surrogate& extension, const Surrogate& distance, const PdeProblem& problem,
                 std::vector<Point> points, ResidualOptions opts = {});

  std::size_t size() const { return points_.size(); }
  const std::vector<Point>& points() const { return points_; }

  /// Evaluates over all points (empty batch) or the given subset; the cost
  /// is normalized by the number of points used.
  ResidualEvaluation evaluate(const Network& net, std::span<const std::size_t> batch = {}) const;
  double cost(const Network& net) const;

 private:
  double point_gradient(const Network& net, std::size_t i, Vector* grad) const;

  Operator op_;
  std::vector<Point> points_;
  std::vector<SurrogateEval> extension_;
  std::vector<SurrogateEval> distance_;
  std::vector<double> forcing_;
  ResidualOptions opts_;
};

ResidualEvaluation residual_cost_and_grad(const AnsatzBundle& bundle, const PdeProblem& problem,
                                          std::span<const Point> points,
                                          ResidualOptions opts = {});

/// Replaces G on a trained 1D bundle. G must lie in the kernel of L: a
/// constant for advection, a constant or affine function for diffusion.
/// Throws std::invalid_argument otherwise.
AnsatzBundle post_process_boundary_1d(const AnsatzBundle& trained, const Surrogate& new_extension,
                                      const Operator& op);

}  // namespace meshfree
