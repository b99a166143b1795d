#include "meshfree/optimizer.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

namespace meshfree {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool finite(double v) { return std::isfinite(v); }

struct Trial {
  double alpha = 0.0;
  double phi = 0.0;
  double dphi = 0.0;
  bool ok() const { return finite(phi) && finite(dphi); }
};

// Minimiser of the cubic interpolating (a, phi_a, dphi_a), (b, phi_b, dphi_b),
// safeguarded into the inner 80% of the bracket.
double interpolate(const Trial& a, const Trial& b) {
  const double lo = std::min(a.alpha, b.alpha);
  const double hi = std::max(a.alpha, b.alpha);
  const double mid = 0.5 * (lo + hi);
  if (!a.ok() || !b.ok()) return mid;
  const double d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.dphi * b.dphi;
  if (disc < 0.0) return mid;
  const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
  const double denom = b.dphi - a.dphi + 2.0 * d2;
  if (denom == 0.0) return mid;
  const double alpha = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom;
  const double margin = 0.1 * (hi - lo);
  if (!finite(alpha)) return mid;
  return std::clamp(alpha, lo + margin, hi - margin);
}

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

struct BfgsRun {
  Vector x;
  double cost = 0.0;
  Vector grad;
  OptimizerStatus status = OptimizerStatus::MaxIterations;
  std::size_t iterations = 0;
};

// One BFGS segment starting from an identity inverse Hessian.
BfgsRun bfgs_segment(const ValueAndGradient& f, Vector x, double cost, Vector grad,
                     const OptimizerOptions& opts, std::size_t max_iterations,
                     ConvergenceHistory& history) {
  const auto n = x.size();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool updated = false;
  BfgsRun run;

  auto finish = [&](OptimizerStatus status) {
    run.x = std::move(x);
    run.cost = cost;
    run.grad = std::move(grad);
    run.status = status;
    return run;
  };

  for (;;) {
    if (cost < opts.cost_tolerance) return finish(OptimizerStatus::ConvergedByCost);
    if (inf_norm(grad) < opts.gradient_tolerance) return finish(OptimizerStatus::ConvergedByGradient);
    if (run.iterations >= max_iterations) return finish(OptimizerStatus::MaxIterations);

    const auto start = Clock::now();
    Vector p = -(H * grad);
    double dphi0 = grad.dot(p);
    if (!(dphi0 < 0.0)) {
      // Lost positive definiteness numerically; fall back to steepest descent.
      H.setIdentity();
      updated = false;
      p = -grad;
      dphi0 = grad.dot(p);
    }
    const double alpha0 = updated ? 1.0 : std::min(1.0, 1.0 / grad.norm());

    // Gradients of every trial point, so the accepted one needs no re-evaluation.
    std::vector<std::pair<double, Vector>> seen;
    auto line = [&](double alpha) -> std::pair<double, double> {
      Vector g;
      const double value = f(x + alpha * p, g);
      const double slope = g.size() == n ? g.dot(p) : std::nan("");
      seen.emplace_back(alpha, std::move(g));
      return {value, slope};
    };

    const LineSearchResult ls = wolfe_line_search(line, cost, dphi0, alpha0, opts.c1, opts.c2,
                                                  opts.max_line_search_evaluations);
    if (ls.status != LineSearchStatus::Ok) {
      history.line_search_failures.push_back(history.entries.size());
      return finish(OptimizerStatus::LineSearchFailed);
    }
    assert(ls.phi <= cost + opts.c1 * ls.alpha * dphi0);
    assert(std::abs(ls.dphi) <= -opts.c2 * dphi0);

    Vector new_grad;
    for (auto it = seen.rbegin(); it != seen.rend(); ++it) {
      if (it->first == ls.alpha) {
        new_grad = it->second;
        break;
      }
    }
    const Vector s = ls.alpha * p;
    const Vector y = new_grad - grad;
    const double sy = s.dot(y);
    if (sy > 0.0) {
      updated = true;
      const double rho = 1.0 / sy;
      const Vector Hy = H * y;
      const double yHy = y.dot(Hy);
      H.noalias() -= rho * (Hy * s.transpose() + s * Hy.transpose());
      H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose());
    }

    x += s;
    cost = ls.phi;
    grad = new_grad;
    ++run.iterations;
    history.entries.push_back({history.entries.size() + 1, cost, inf_norm(grad), StepType::Bfgs,
                               ls.alpha, seconds_since(start)});
    if (opts.observer) opts.observer(history.entries.size(), x, cost);
  }
}

}  // namespace

void OptimizerOptions::validate() const {
  if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) {
    throw std::invalid_argument("Wolfe constants must satisfy 0 < c1 < c2 < 1");
  }
  if (!(cost_tolerance > 0.0) || !(gradient_tolerance > 0.0)) {
    throw std::invalid_argument("optimizer tolerances must be positive");
  }
  if (sgd.learning_rate < 0.0) throw std::invalid_argument("SGD learning rate must be >= 0");
}

std::string_view to_string(StepType t) { return t == StepType::Bfgs ? "bfgs" : "sgd-fallback"; }

std::string_view to_string(OptimizerStatus s) {
  switch (s) {
    case OptimizerStatus::ConvergedByCost:
      return "converged-by-cost";
    case OptimizerStatus::ConvergedByGradient:
      return "converged-by-gradient";
    case OptimizerStatus::LineSearchFailed:
      return "line-search-failed";
    case OptimizerStatus::MaxIterations:
      return "max-iterations";
  }
  return "unknown";
}

std::size_t ConvergenceHistory::bfgs_iterations() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [](const HistoryEntry& e) { return e.step == StepType::Bfgs; }));
}

std::size_t ConvergenceHistory::sgd_steps() const { return entries.size() - bfgs_iterations(); }

std::optional<std::size_t> ConvergenceHistory::first_failure() const {
  if (line_search_failures.empty()) return std::nullopt;
  return line_search_failures.front();
}

void ConvergenceHistory::write_csv(std::ostream& out) const {
  out << "iteration,cost,grad_norm,step_type,event\n";
  out.precision(17);
  out << "0," << initial_cost << ",,init,\n";
  // A failure recorded at k happened after entry k and before entry k + 1.
  std::size_t failure = 0;
  auto emit_failures_up_to = [&](std::size_t k) {
    for (; failure < line_search_failures.size() && line_search_failures[failure] <= k; ++failure) {
      out << line_search_failures[failure] << ",,,bfgs,line-search-failed\n";
    }
  };
  for (const auto& e : entries) {
    emit_failures_up_to(e.iteration - 1);
    out << e.iteration << ',' << e.cost << ',' << e.grad_norm << ',' << to_string(e.step) << ",\n";
  }
  emit_failures_up_to(entries.size());
}

LineSearchResult wolfe_line_search(const LineFunction& phi, double phi0, double dphi0, double alpha0,
                                   double c1, double c2, std::size_t max_evaluations) {
  LineSearchResult result;
  if (!(dphi0 < 0.0)) {
    result.status = LineSearchStatus::NotDescent;
    return result;
  }
  auto eval = [&](double alpha) {
    auto [v, d] = phi(alpha);
    ++result.evaluations;
    return Trial{alpha, v, d};
  };
  auto armijo_fails = [&](const Trial& t) {
    return !t.ok() || t.phi > phi0 + c1 * t.alpha * dphi0;
  };
  auto curvature_holds = [&](const Trial& t) { return std::abs(t.dphi) <= -c2 * dphi0; };
  auto accept = [&](const Trial& t) {
    result.alpha = t.alpha;
    result.phi = t.phi;
    result.dphi = t.dphi;
    result.status = LineSearchStatus::Ok;
    return result;
  };

  // lo always satisfies sufficient decrease and has the lowest value seen.
  auto zoom = [&](Trial lo, Trial hi) {
    while (result.evaluations < max_evaluations) {
      if (std::abs(hi.alpha - lo.alpha) <= 1e-14 * std::max(1.0, std::abs(lo.alpha))) break;
      const Trial t = eval(interpolate(lo, hi));
      if (armijo_fails(t) || t.phi >= lo.phi) {
        hi = t;
      } else {
        if (curvature_holds(t)) return accept(t);
        if (t.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = t;
      }
    }
    result.status = LineSearchStatus::Failed;
    return result;
  };

  Trial prev{0.0, phi0, dphi0};
  double alpha = alpha0 > 0.0 ? alpha0 : 1.0;
  for (std::size_t i = 0; result.evaluations < max_evaluations; ++i) {
    const Trial t = eval(alpha);
    if (armijo_fails(t) || (i > 0 && t.phi >= prev.phi)) return zoom(prev, t);
    if (curvature_holds(t)) return accept(t);
    if (t.dphi >= 0.0) return zoom(t, prev);
    prev = t;
    alpha *= 2.0;
  }
  result.status = LineSearchStatus::Failed;
  return result;
}

OptimizerResult bfgs_minimize(const ValueAndGradient& f, const Vector& x0,
                              const OptimizerOptions& opts) {
  opts.validate();
  OptimizerResult result;
  Vector grad;
  const double cost = f(x0, grad);
  if (!finite(cost) || grad.size() != x0.size() || !grad.allFinite()) {
    throw std::runtime_error("non-finite cost or gradient at the starting point");
  }
  result.history.initial_cost = cost;
  BfgsRun run = bfgs_segment(f, x0, cost, std::move(grad), opts, opts.max_iterations, result.history);
  result.x = std::move(run.x);
  result.cost = run.cost;
  result.status = run.status;
  return result;
}

OptimizerResult bfgs_minimize(const std::function<double(const Vector&)>& cost,
                              const std::function<Vector(const Vector&)>& grad, const Vector& x0,
                              const OptimizerOptions& opts) {
  return bfgs_minimize(
      [&](const Vector& x, Vector& g) {
        g = grad(x);
        return cost(x);
      },
      x0, opts);
}

Vector sgd_steps(const StochasticGradient& source, const Vector& x0, std::size_t steps, double lr,
                 std::size_t batch_size, std::uint64_t seed, ConvergenceHistory* history) {
  if (lr < 0.0) throw std::invalid_argument("SGD learning rate must be >= 0");
  Vector x = x0;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(source.sample_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool full = batch_size == 0 || batch_size >= source.sample_count;
  std::size_t cursor = order.size();
  Vector grad;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto start = Clock::now();
    std::span<const std::size_t> batch;
    if (!full) {
      if (cursor + batch_size > order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch = std::span<const std::size_t>(order).subspan(cursor, batch_size);
      cursor += batch_size;
    }
    const double cost = source.evaluate(x, batch, grad);
    if (!grad.allFinite() || grad.size() != x.size()) {
      throw std::runtime_error("non-finite gradient during SGD step " + std::to_string(step));
    }
    x -= lr * grad;
    if (history != nullptr) {
      history->entries.push_back({history->entries.size() + 1, cost, inf_norm(grad),
                                  StepType::SgdFallback, lr, seconds_since(start)});
    }
  }
  return x;
}

OptimizerResult hybrid_minimize(const ValueAndGradient& f, const StochasticGradient& sgd,
                                const Vector& x0, const OptimizerOptions& opts) {
  opts.validate();
  OptimizerResult result;
  Vector grad;
  double cost = f(x0, grad);
  if (!finite(cost) || grad.size() != x0.size() || !grad.allFinite()) {
    throw std::runtime_error("non-finite cost or gradient at the starting point");
  }
  result.history.initial_cost = cost;

  Vector x = x0;
  std::size_t bfgs_total = 0;
  std::size_t rounds = 0;
  for (;;) {
    BfgsRun run = bfgs_segment(f, std::move(x), cost, std::move(grad), opts,
                               opts.max_iterations - bfgs_total, result.history);
    bfgs_total += run.iterations;
    x = std::move(run.x);
    cost = run.cost;
    grad = std::move(run.grad);
    result.status = run.status;
    if (run.status != OptimizerStatus::LineSearchFailed || rounds >= opts.max_fallback_rounds ||
        bfgs_total >= opts.max_iterations) {
      break;
    }
    ++rounds;
    x = sgd_steps(sgd, x, opts.sgd.steps, opts.sgd.learning_rate, opts.sgd.batch_size,
                  opts.seed + rounds, &result.history);
    cost = f(x, grad);
    if (!finite(cost) || !grad.allFinite()) {
      throw std::runtime_error("non-finite cost after SGD fallback round " + std::to_string(rounds));
    }
  }
  result.x = std::move(x);
  result.cost = cost;
  return result;
}

}  // namespace meshfree
