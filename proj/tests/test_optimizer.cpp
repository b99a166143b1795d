#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "meshfree/optimizer.hpp"

using namespace meshfree;

namespace {

OptimizerOptions tight() {
  OptimizerOptions o;
  o.cost_tolerance = 1e-30;
  o.gradient_tolerance = 1e-12;
  o.max_iterations = 1000;
  return o;
}

double rosenbrock(const Vector& x, Vector& g) {
  const double a = 1.0 - x[0];
  const double b = x[1] - x[0] * x[0];
  g.resize(2);
  g[0] = -2.0 * a - 400.0 * x[0] * b;
  g[1] = 200.0 * b;
  return a * a + 100.0 * b * b;
}

// 0.5 |x|^2 with the gradient's sign flipped: every search direction is an
// ascent direction in disguise, so the line search can never succeed.
double lying_bowl(const Vector& x, Vector& g) {
  g = -x;
  return 0.5 * x.squaredNorm();
}

}  // namespace

TEST_CASE("quadratic in one variable") {
  auto f = [](const Vector& x, Vector& g) {
    g = Vector::Constant(1, 2.0 * (x[0] - 3.0));
    return (x[0] - 3.0) * (x[0] - 3.0);
  };
  const auto r = bfgs_minimize(f, Vector::Zero(1), tight());
  CHECK(converged(r.status));
  CHECK(std::abs(r.x[0] - 3.0) < 1e-8);
  CHECK(r.history.bfgs_iterations() <= 5);
}

TEST_CASE("separate cost and gradient callbacks") {
  auto cost = [](const Vector& x) { return (x[0] - 3.0) * (x[0] - 3.0); };
  auto grad = [](const Vector& x) { return Vector::Constant(1, 2.0 * (x[0] - 3.0)); };
  const auto r = bfgs_minimize(cost, grad, Vector::Zero(1), tight());
  CHECK(std::abs(r.x[0] - 3.0) < 1e-8);
}

TEST_CASE("rosenbrock") {
  const auto r = bfgs_minimize(rosenbrock, (Vector(2) << -1.2, 1.0).finished(), tight());
  CHECK(converged(r.status));
  CHECK((r.x - Vector::Ones(2)).norm() < 1e-6);
}

TEST_CASE("pure BFGS segments decrease the cost strictly") {
  const auto r = bfgs_minimize(rosenbrock, (Vector(2) << -1.2, 1.0).finished(), tight());
  double prev = r.history.initial_cost;
  for (const auto& e : r.history.entries) {
    CHECK(e.cost < prev);
    prev = e.cost;
  }
}

TEST_CASE("random SPD quadratics converge in at most dim + 1 iterations") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (int dim = 2; dim <= 20; dim += 3) {
    const Eigen::MatrixXd m = Eigen::MatrixXd::NullaryExpr(dim, dim, [&] { return n01(rng); });
    const Eigen::MatrixXd a = m * m.transpose() + dim * Eigen::MatrixXd::Identity(dim, dim);
    const Vector xs = Vector::NullaryExpr(dim, [&] { return n01(rng); });
    auto f = [&](const Vector& x, Vector& g) {
      g = a * (x - xs);
      return 0.5 * (x - xs).dot(g);
    };
    // Near-exact line searches.
    OptimizerOptions o = tight();
    o.c1 = 1e-8;
    o.c2 = 1e-4;
    o.gradient_tolerance = 1e-8;
    const auto r = bfgs_minimize(f, Vector::Zero(dim), o);
    CAPTURE(dim);
    CHECK(converged(r.status));
    CHECK(r.history.bfgs_iterations() <= static_cast<std::size_t>(dim + 1));
    CHECK((r.x - xs).norm() < 1e-6);
  }
}

TEST_CASE("inconsistent gradient ends in a line-search failure") {
  const auto r = bfgs_minimize(lying_bowl, Vector::Ones(3), tight());
  CHECK(r.status == OptimizerStatus::LineSearchFailed);
  CHECK(r.history.first_failure() == std::optional<std::size_t>(0));
  CHECK(r.x == Vector::Ones(3));
}

TEST_CASE("non-finite start is rejected") {
  auto f = [](const Vector& x, Vector& g) {
    g = x;
    return std::nan("");
  };
  CHECK_THROWS_AS(bfgs_minimize(f, Vector::Ones(2), tight()), std::runtime_error);
}

TEST_CASE("option validation") {
  OptimizerOptions o;
  o.c1 = 0.95;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.cost_tolerance = 0.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
}

TEST_CASE("wolfe line search") {
  SUBCASE("parabola") {
    auto phi = [](double a) { return std::pair{(a - 1) * (a - 1), 2 * (a - 1)}; };
    const auto r = wolfe_line_search(phi, 1.0, -2.0, 0.25);
    REQUIRE(r.status == LineSearchStatus::Ok);
    CHECK(r.phi <= 1.0 + 1e-4 * r.alpha * -2.0);
    CHECK(std::abs(r.dphi) <= 0.9 * 2.0);
    CHECK(std::abs(r.alpha - 1.0) < 0.95);
  }
  SUBCASE("non-descent direction") {
    auto phi = [](double a) { return std::pair{a, 1.0}; };
    const auto r = wolfe_line_search(phi, 0.0, 1.0, 1.0);
    CHECK(r.status == LineSearchStatus::NotDescent);
    CHECK(r.evaluations == 0);
  }
  SUBCASE("cliff fails within the budget") {
    // Claims descent at 0, then blows up immediately; exp is clamped so the
    // values stay finite for part of the range and overflow for the rest.
    auto phi = [](double a) {
      const double e = std::exp(std::min(1e4 * a, 800.0));
      return std::pair{-a + e - 1.0, -1.0 + 1e4 * e};
    };
    const auto r = wolfe_line_search(phi, 0.0, -1.0, 1.0, 1e-4, 0.9, 40);
    CHECK(r.status == LineSearchStatus::Failed);
    CHECK(r.evaluations <= 40);
  }
}

TEST_CASE("sgd steps") {
  auto quad = [](const Vector& x, std::span<const std::size_t> batch, Vector& g) {
    // Samples i contribute 0.5 (x - i)^2 / n; empty batch = all ten.
    const std::size_t n = batch.empty() ? 10 : batch.size();
    g = Vector::Zero(1);
    double c = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(batch.empty() ? k : batch[k]);
      g[0] += (x[0] - t) / n;
      c += 0.5 * (x[0] - t) * (x[0] - t) / n;
    }
    return c;
  };
  const StochasticGradient src{10, quad};
  const Vector x0 = Vector::Constant(1, 40.0);

  SUBCASE("zero learning rate keeps x") {
    CHECK(sgd_steps(src, x0, 50, 0.0, 3, 1) == x0);
  }
  SUBCASE("full batch descent is monotone") {
    ConvergenceHistory h;
    sgd_steps(src, x0, 200, 0.05, 0, 1, &h);
    REQUIRE(h.entries.size() == 200);
    for (std::size_t i = 1; i < h.entries.size(); ++i) CHECK(h.entries[i].cost <= h.entries[i - 1].cost);
    CHECK(h.sgd_steps() == 200);
  }
  SUBCASE("minibatch trajectory is seed-deterministic") {
    const Vector a = sgd_steps(src, x0, 100, 0.1, 3, 42);
    const Vector b = sgd_steps(src, x0, 100, 0.1, 3, 42);
    const Vector c = sgd_steps(src, x0, 100, 0.1, 3, 43);
    CHECK(a == b);
    CHECK(a != c);
  }
}

TEST_CASE("hybrid: no fallback when BFGS converges") {
  const StochasticGradient src{1, [](const Vector& x, std::span<const std::size_t>, Vector& g) {
                                 return rosenbrock(x, g);
                               }};
  const Vector x0 = (Vector(2) << -1.2, 1.0).finished();
  const auto plain = bfgs_minimize(rosenbrock, x0, tight());
  const auto hybrid = hybrid_minimize(rosenbrock, src, x0, tight());
  CHECK(hybrid.x == plain.x);
  CHECK(hybrid.history.entries.size() == plain.history.entries.size());
  CHECK(hybrid.history.sgd_steps() == 0);
}

TEST_CASE("hybrid: a line-search failure triggers exactly 1000 SGD steps, then BFGS restarts") {
  std::size_t full_calls = 0;
  ValueAndGradient f = [&](const Vector& x, Vector& g) {
    ++full_calls;
    return lying_bowl(x, g);
  };
  std::size_t sgd_calls = 0;
  const StochasticGradient src{64, [&](const Vector& x, std::span<const std::size_t> batch, Vector& g) {
                                 ++sgd_calls;
                                 CHECK(batch.size() == 32);
                                 return lying_bowl(x, g);
                               }};
  OptimizerOptions o = tight();
  o.max_fallback_rounds = 1;
  const auto r = hybrid_minimize(f, src, Vector::Ones(4), o);

  CHECK(r.status == OptimizerStatus::LineSearchFailed);
  CHECK(sgd_calls == 1000);
  CHECK(r.history.sgd_steps() == 1000);
  REQUIRE(r.history.line_search_failures.size() == 2);
  CHECK(r.history.line_search_failures[0] == 0);
  CHECK(r.history.line_search_failures[1] == 1000);
  for (const auto& e : r.history.entries) CHECK(e.step == StepType::SgdFallback);
  // lr 1e-9 against an outward "gradient" of size ~1 moves x by ~1e-6.
  CHECK((r.x - Vector::Ones(4)).cwiseAbs().maxCoeff() == doctest::Approx(1000 * 1e-9).epsilon(1e-3));

  std::ostringstream csv;
  r.history.write_csv(csv);
  const std::string text = csv.str();
  CHECK(text.rfind("iteration,cost,grad_norm,step_type,event\n0,", 0) == 0);
  CHECK(text.find("0,,,bfgs,line-search-failed\n") != std::string::npos);
  CHECK(text.find("1000,,,bfgs,line-search-failed\n") != std::string::npos);
}
