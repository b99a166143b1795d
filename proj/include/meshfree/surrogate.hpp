#pragma once

// Boundary-data extension G and smoothed distance D.
//
// Both are either small trained networks or closed forms (for 1D problems a
// constant / line / parabola is exact). They share one evaluation interface
// and are frozen while the solution network trains.

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "meshfree/geometry.hpp"
#include "meshfree/network.hpp"
#include "meshfree/optimizer.hpp"

namespace meshfree {

/// Value, spatial gradient and diagonal of the Hessian at one point.
struct SurrogateEval {
  double value = 0.0;
  Vector gradient;
  Vector second;
};

enum class SurrogateKind { Extension, Distance };
std::string_view to_string(SurrogateKind k);
SurrogateKind surrogate_kind_from_string(std::string_view name);

struct ClosedForm {
  enum class Shape {
    Constant,       // offset
    Affine,         // coefficients . x + offset
    IntervalBubble  // (x - a)(b - x), one dimensional
  };
  Shape shape = Shape::Constant;
  Vector coefficients;
  double offset = 0.0;
  double a = 0.0;
  double b = 1.0;
  int dim = 1;

  static ClosedForm constant(double c, int dim = 1);
  static ClosedForm affine(Vector coefficients, double offset);
  static ClosedForm interval_bubble(double a, double b);

  SurrogateEval evaluate(const Vector& x, int order) const;
};

std::string_view to_string(ClosedForm::Shape s);

struct TrainingInfo {
  double final_cost = 0.0;
  std::size_t iterations = 0;
  OptimizerStatus status = OptimizerStatus::MaxIterations;
  std::size_t training_points = 0;
  /// Order-dependent hash of the training inputs (see fingerprint()).
  std::uint64_t fingerprint = 0;
  /// Distance surrogates only: max |D| over the boundary samples after
  /// training, and the value after every optimizer iteration.
  double boundary_max_abs = 0.0;
  std::vector<double> boundary_max_history;
};

class Surrogate {
 public:
  Surrogate() = default;
  static Surrogate closed(SurrogateKind kind, ClosedForm form);
  static Surrogate trained(SurrogateKind kind, Network net, TrainingInfo info,
                           double normalization = 1.0);

  SurrogateKind kind() const { return kind_; }
  bool is_closed_form() const { return std::holds_alternative<ClosedForm>(impl_); }
  const ClosedForm& closed_form() const { return std::get<ClosedForm>(impl_); }
  const Network& network() const { return std::get<Network>(impl_); }
  const TrainingInfo& info() const { return info_; }
  /// Scale applied to raw distances before fitting (1 for closed forms).
  double normalization() const { return normalization_; }
  int input_dim() const;

  /// order 0: value only; 1: adds gradient; 2: adds Hessian diagonal.
  SurrogateEval evaluate(const Vector& x, int order) const;
  double value(const Vector& x) const { return evaluate(x, 0).value; }

 private:
  SurrogateKind kind_ = SurrogateKind::Extension;
  std::variant<ClosedForm, Network> impl_;
  TrainingInfo info_;
  double normalization_ = 1.0;
};

SurrogateEval evaluate_surrogate(const Surrogate& model, const Vector& x, int order);

/// FNV-1a over the raw bytes of the points, in order.
std::uint64_t fingerprint(std::span<const Point> points);

/// Least-squares fit of a scalar network, cost 0.5 / n * sum (y(x_i) - t_i)^2,
/// using hybrid BFGS with minibatch SGD escapes.
OptimizerResult fit_network(Network& net, std::span<const Point> inputs,
                            std::span<const double> targets, const OptimizerOptions& opts);

/// Fits G to g on the boundary samples only.
Surrogate train_extension(std::span<const Point> boundary, std::span<const double> values,
                          const Architecture& arch, std::uint64_t seed,
                          const OptimizerOptions& opts);

/// Fits D on coarse interior points (with normalized distance targets)
/// followed by the boundary points (target 0).
Surrogate train_distance(std::span<const Point> coarse, std::span<const double> targets,
                         std::span<const Point> boundary, double normalization,
                         const Architecture& arch, std::uint64_t seed,
                         const OptimizerOptions& opts);

}  // namespace meshfree
