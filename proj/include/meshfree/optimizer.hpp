#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace meshfree {

using Vector = Eigen::VectorXd;

/// Cost at x; writes the gradient into grad (resized by the callee).
using ValueAndGradient = std::function<double(const Vector& x, Vector& grad)>;

/// Gradient source for the SGD escape steps. An empty batch means the full
/// sample set; otherwise batch holds sample indices in [0, sample_count).
struct StochasticGradient {
  std::size_t sample_count = 0;
  std::function<double(const Vector& x, std::span<const std::size_t> batch, Vector& grad)> evaluate;
};

struct SgdOptions {
  std::size_t steps = 1000;
  double learning_rate = 1e-9;
  /// 0 selects full-batch gradients.
  std::size_t batch_size = 32;
};

struct OptimizerOptions {
  std::size_t max_iterations = 20000;
  double cost_tolerance = 1e-5;
  double gradient_tolerance = 1e-10;
  double c1 = 1e-4;
  double c2 = 0.9;
  std::size_t max_line_search_evaluations = 40;
  SgdOptions sgd;
  std::size_t max_fallback_rounds = 100;
  std::uint64_t seed = 0;
  /// Called after every accepted BFGS step with the iteration count so far.
  std::function<void(std::size_t iteration, const Vector& x, double cost)> observer;

  /// Throws std::invalid_argument unless 0 < c1 < c2 < 1 and tolerances > 0.
  void validate() const;
};

enum class StepType { Bfgs, SgdFallback };
std::string_view to_string(StepType t);

struct HistoryEntry {
  std::size_t iteration = 0;
  double cost = 0.0;
  /// Infinity norm of the gradient after the step (minibatch gradient for SGD).
  double grad_norm = 0.0;
  StepType step = StepType::Bfgs;
  double step_length = 0.0;
  double seconds = 0.0;
};

struct ConvergenceHistory {
  double initial_cost = 0.0;
  std::vector<HistoryEntry> entries;
  /// Number of steps taken before each line-search failure.
  std::vector<std::size_t> line_search_failures;

  std::size_t bfgs_iterations() const;
  std::size_t sgd_steps() const;
  std::optional<std::size_t> first_failure() const;

  /// Columns: iteration,cost,grad_norm,step_type,event
  void write_csv(std::ostream& out) const;
};

enum class OptimizerStatus { ConvergedByCost, ConvergedByGradient, LineSearchFailed, MaxIterations };
std::string_view to_string(OptimizerStatus s);
inline bool converged(OptimizerStatus s) {
  return s == OptimizerStatus::ConvergedByCost || s == OptimizerStatus::ConvergedByGradient;
}

struct OptimizerResult {
  Vector x;
  double cost = 0.0;
  OptimizerStatus status = OptimizerStatus::MaxIterations;
  ConvergenceHistory history;
};

enum class LineSearchStatus { Ok, NotDescent, Failed };

struct LineSearchResult {
  double alpha = 0.0;
  double phi = 0.0;
  double dphi = 0.0;
  LineSearchStatus status = LineSearchStatus::Failed;
  std::size_t evaluations = 0;
};

/// phi(alpha) and phi'(alpha) along the search direction.
using LineFunction = std::function<std::pair<double, double>(double alpha)>;

/// Strong Wolfe search (bracketing then cubic-interpolation zoom). Non-finite
/// trial values are treated as a failed sufficient-decrease test.
LineSearchResult wolfe_line_search(const LineFunction& phi, double phi0, double dphi0, double alpha0,
                                   double c1 = 1e-4, double c2 = 0.9,
                                   std::size_t max_evaluations = 40);

/// BFGS with a dense inverse-Hessian approximation starting from the
/// identity. The first step is tried with length min(1, 1/|g|_2), later ones
/// with 1. Throws std::runtime_error if the cost or gradient at x0 is not
/// finite.
OptimizerResult bfgs_minimize(const ValueAndGradient& f, const Vector& x0,
                              const OptimizerOptions& opts);
OptimizerResult bfgs_minimize(const std::function<double(const Vector&)>& cost,
                              const std::function<Vector(const Vector&)>& grad, const Vector& x0,
                              const OptimizerOptions& opts);

/// x <- x - lr * g for `steps` steps, reshuffling minibatches each epoch
/// from a generator seeded with `seed`. Appends SgdFallback entries to
/// history when given. Throws std::runtime_error on a non-finite gradient.
Vector sgd_steps(const StochasticGradient& source, const Vector& x0, std::size_t steps, double lr,
                 std::size_t batch_size, std::uint64_t seed, ConvergenceHistory* history = nullptr);

/// BFGS; on each line-search failure run opts.sgd.steps SGD steps and restart
/// BFGS from a reset inverse Hessian, for at most opts.max_fallback_rounds
/// rounds and opts.max_iterations BFGS iterations in total.
OptimizerResult hybrid_minimize(const ValueAndGradient& f, const StochasticGradient& sgd,
                                const Vector& x0, const OptimizerOptions& opts);

}  // namespace meshfree
