#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "meshfree/gradcheck.hpp"
#include "meshfree/pde.hpp"

using namespace meshfree;
using reference::Real;

namespace {

constexpr double kPi = std::numbers::pi;

Point pt(double x) { return Vector::Constant(1, x); }
Point pt(double x, double y) { return (Vector(2) << x, y).finished(); }

Surrogate closed(SurrogateKind k, ClosedForm f) { return Surrogate::closed(k, std::move(f)); }

Architecture arch_of(int dim, std::vector<int> hidden) {
  Architecture a;
  a.input_dim = dim;
  a.hidden_sizes = std::move(hidden);
  return a;
}

Network constant_net(double c) {
  Network net(arch_of(1, {3}));
  net.biases(2)[0] = c;
  return net;
}

Surrogate random_surrogate(SurrogateKind kind, int dim, std::mt19937_64& rng) {
  return Surrogate::trained(kind, reference::random_network(arch_of(dim, {4}), rng), {});
}

Network random_solution(int dim, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> depth(1, 3), width(2, 6);
  std::vector<int> hidden(static_cast<std::size_t>(depth(rng)));
  for (int& h : hidden) h = width(rng);
  return reference::random_network(arch_of(dim, hidden), rng);
}

PdeProblem custom(Operator op, ScalarField f) {
  PdeProblem p;
  p.op = std::move(op);
  p.forcing = std::move(f);
  return p;
}

struct GradientTrial {
  std::size_t compared = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

GradientTrial check_gradient(const AnsatzBundle& b, const PdeProblem& problem,
                             const std::vector<Point>& points, double rel) {
  const ResidualEvaluation e = residual_cost_and_grad(b, problem, points);
  const auto params = reference::widen(b.solution.flatten());
  auto cost_of = [&](const std::vector<Real>& p) {
    return reference::residual_cost(b.extension.network(), b.distance.network(), b.solution.arch(), p,
                                    problem.op, problem.forcing, points);
  };
  GradientTrial t;
  CHECK(std::abs(e.cost - static_cast<double>(cost_of(params))) <= 1e-12 * (1 + e.cost));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Real fd = reference::param_fd(cost_of, params, k, 1e-7L);
    const double a = e.gradient[static_cast<Eigen::Index>(k)];
    ++t.compared;
    if (!reference::close(a, fd, rel)) ++t.failed;
    t.worst = std::max(t.worst, reference::relative_error(a, fd, 1e-10));
  }
  return t;
}

}  // namespace

TEST_CASE("problem ids") {
  for (auto id : {ProblemId::Advec1d, ProblemId::Diff1d, ProblemId::Advec2d, ProblemId::Diff2d,
                  ProblemId::DiffNd, ProblemId::DiffPolygon, ProblemId::Custom}) {
    CHECK(problem_id_from_string(to_string(id)) == id);
  }
  CHECK_THROWS_AS(problem_id_from_string("wave"), std::invalid_argument);
  CHECK_THROWS_AS(manufactured_problem(ProblemId::Custom), std::invalid_argument);
}

TEST_CASE("manufactured values") {
  CHECK(manufactured_problem(ProblemId::Advec1d).boundary_data(pt(0.0)) == 1.0);
  CHECK(manufactured_problem(ProblemId::Diff1d).exact_solution(pt(1.0)) ==
        doctest::Approx(2.0).epsilon(1e-15));
  CHECK(manufactured_problem(ProblemId::Advec2d).exact_solution(pt(0.0, 0.5)) == 0.5);
  CHECK(manufactured_problem(ProblemId::Diff2d).exact_solution(pt(0.0, 0.0)) == 1.5);
  const auto adv = manufactured_problem(ProblemId::Advec2d);
  CHECK(adv.op.velocity == (Vector(2) << 1.0, 0.5).finished());
  CHECK(manufactured_problem(ProblemId::DiffNd).dimension() == 3);
}

TEST_CASE("manufactured forcing equals L u by finite differences") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto id : {ProblemId::Advec1d, ProblemId::Diff1d, ProblemId::Advec2d, ProblemId::Diff2d,
                  ProblemId::DiffNd, ProblemId::DiffPolygon}) {
    const PdeProblem p = manufactured_problem(id);
    const int n = p.dimension();
    for (int trial = 0; trial < 20; ++trial) {
      Point x(n);
      for (int i = 0; i < n; ++i) x[i] = 0.5 + u(rng);
      const double h = 1e-4;
      double lu = 0.0;
      for (int i = 0; i < n; ++i) {
        Point up = x, dn = x;
        up[i] += h;
        dn[i] -= h;
        const double uu = p.exact_solution(up), ud = p.exact_solution(dn), u0 = p.exact_solution(x);
        lu += p.op.kind == Operator::Kind::Advection ? p.op.velocity[i] * (uu - ud) / (2 * h)
                                                     : (uu - 2 * u0 + ud) / (h * h);
      }
      CAPTURE(to_string(id));
      CHECK(p.forcing(x) == doctest::Approx(lu).epsilon(1e-5).scale(1.0));
      CHECK(p.boundary_data(x) == p.exact_solution(x));
    }
  }
}

TEST_CASE("ansatz hand examples") {
  SUBCASE("zero network leaves G") {
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::constant(1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::affine(Vector::Ones(1), 0)),
                         constant_net(0.0)};
    for (double x = 0; x <= 1; x += 0.125) CHECK(ansatz_eval(b, pt(x)) == 1.0);
  }
  SUBCASE("diffusion closed forms hit the boundary data exactly") {
    std::mt19937_64 rng(4);
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::affine(Vector::Ones(1), 1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::interval_bubble(0, 1)),
                         random_solution(1, rng)};
    CHECK(ansatz_eval(b, pt(0.0)) == 1.0);
    CHECK(ansatz_eval(b, pt(1.0)) == 2.0);
  }
  SUBCASE("boundary error is controlled by D") {
    std::mt19937_64 rng(5);
    const AnsatzBundle b{random_surrogate(SurrogateKind::Extension, 2, rng),
                         random_surrogate(SurrogateKind::Distance, 2, rng),
                         random_solution(2, rng)};
    const Point x = pt(0.3, -0.2);
    const double y = b.solution.evaluate(x)[0];
    CHECK(std::abs(ansatz_eval(b, x) - b.extension.value(x)) <=
          std::abs(b.distance.value(x)) * std::abs(y) * (1 + 1e-15));
  }
}

TEST_CASE("operator on a constant network") {
  SUBCASE("advection, D = x, G = 1") {
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::constant(1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::affine(Vector::Ones(1), 0)),
                         constant_net(0.7)};
    const Operator op = Operator::advection(Vector::Ones(1));
    for (double x = 0; x <= 1; x += 0.25) CHECK(apply_operator(b, op, pt(x)) == 0.7);
  }
  SUBCASE("diffusion, D = x(1 - x), G = x + 1") {
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::affine(Vector::Ones(1), 1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::interval_bubble(0, 1)),
                         constant_net(0.7)};
    for (double x = 0; x <= 1; x += 0.25) {
      CHECK(apply_operator(b, Operator::diffusion(), pt(x)) == doctest::Approx(-1.4).epsilon(1e-14));
    }
  }
  SUBCASE("shape checks") {
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::constant(1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::constant(1.0)), constant_net(0)};
    CHECK_THROWS_AS(apply_operator(b, Operator::advection(Vector::Ones(2)), pt(0.5)),
                    std::invalid_argument);
    PointTapes first_only = compute_tapes(b.solution, pt(0.5), 1);
    CHECK_THROWS_AS(apply_operator(Operator::diffusion(), b.extension.evaluate(pt(0.5), 2),
                                   b.distance.evaluate(pt(0.5), 2), first_only),
                    std::invalid_argument);
  }
}

TEST_CASE("L u_hat matches finite differences of the ansatz") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 1 + trial % 3;
    const AnsatzBundle b{random_surrogate(SurrogateKind::Extension, dim, rng),
                         random_surrogate(SurrogateKind::Distance, dim, rng),
                         random_solution(dim, rng)};
    const Vector a = Vector::NullaryExpr(dim, [&] { return n01(rng); });
    const Point x = Vector::NullaryExpr(dim, [&] { return 0.5 * n01(rng); });
    double adv = 0.0, lap = 0.0;
    const double h1 = 1e-6, h2 = 1e-4;
    for (int i = 0; i < dim; ++i) {
      Point up = x, dn = x;
      up[i] += h1;
      dn[i] -= h1;
      adv += a[i] * (ansatz_eval(b, up) - ansatz_eval(b, dn)) / (2 * h1);
      up = x;
      dn = x;
      up[i] += h2;
      dn[i] -= h2;
      lap += (ansatz_eval(b, up) - 2 * ansatz_eval(b, x) + ansatz_eval(b, dn)) / (h2 * h2);
    }
    CAPTURE(trial);
    CHECK(apply_operator(b, Operator::advection(a), x) == doctest::Approx(adv).epsilon(1e-5).scale(1e-3));
    CHECK(apply_operator(b, Operator::diffusion(), x) == doctest::Approx(lap).epsilon(1e-5).scale(1e-2));
  }
}

TEST_CASE("residual gradient matches the long-double oracle") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> npts(1, 3);
  GradientTrial adv_total, diff_total;
  for (int trial = 0; trial < 50; ++trial) {
    for (bool advection : {true, false}) {
      const int dim = 1 + trial % (advection ? 2 : 3);
      const AnsatzBundle b{random_surrogate(SurrogateKind::Extension, dim, rng),
                           random_surrogate(SurrogateKind::Distance, dim, rng),
                           random_solution(dim, rng)};
      std::vector<Point> points(static_cast<std::size_t>(npts(rng)));
      for (auto& p : points) p = Vector::NullaryExpr(dim, [&] { return 0.5 * n01(rng); });
      const Operator op = advection ? Operator::advection(Vector::NullaryExpr(dim, [&] { return n01(rng); }))
                                    : Operator::diffusion();
      const PdeProblem problem = custom(op, [](const Point& x) { return std::sin(x.sum()); });
      const GradientTrial t = check_gradient(b, problem, points, advection ? 1e-5 : 1e-4);
      GradientTrial& total = advection ? adv_total : diff_total;
      total.compared += t.compared;
      total.failed += t.failed;
      total.worst = std::max(total.worst, t.worst);
    }
  }
  MESSAGE("advection worst rel. error " << adv_total.worst << ", diffusion " << diff_total.worst);
  CHECK(adv_total.failed == 0);
  CHECK(diff_total.failed == 0);
  CHECK(adv_total.compared > 1000);
  CHECK(diff_total.compared > 1000);
}

TEST_CASE("shifting the forcing keeps the gradient exact") {
  std::mt19937_64 rng(8);
  const AnsatzBundle b{random_surrogate(SurrogateKind::Extension, 2, rng),
                       random_surrogate(SurrogateKind::Distance, 2, rng), random_solution(2, rng)};
  const std::vector<Point> points{pt(0.1, 0.2), pt(-0.3, 0.4)};
  for (double shift : {0.0, 3.0, -10.0}) {
    const PdeProblem p = custom(Operator::diffusion(), [shift](const Point& x) { return x[0] + shift; });
    const GradientTrial t = check_gradient(b, p, points, 1e-4);
    CHECK(t.failed == 0);
  }
}

TEST_CASE("exact residual gives zero cost and gradient") {
  std::mt19937_64 rng(9);
  // D = 1, G affine, y = 0: u_hat = G and L u_hat = 0.
  Network zero(arch_of(2, {4, 3}));
  const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::affine(Vector::Ones(2), 0.5)),
                       closed(SurrogateKind::Distance, ClosedForm::constant(1.0, 2)), zero};
  const std::vector<Point> points{pt(0.1, 0.2), pt(-0.3, 0.4), pt(0.9, 0.0)};
  const auto e = residual_cost_and_grad(b, custom(Operator::diffusion(), [](const Point&) { return 0.0; }),
                                        points);
  CHECK(e.cost == 0.0);
  CHECK(e.gradient.isZero(0.0));
  CHECK(e.gradient.size() == static_cast<Eigen::Index>(zero.param_count()));
}

TEST_CASE("operator is linear in the network output") {
  std::mt19937_64 rng(10);
  const AnsatzBundle b{random_surrogate(SurrogateKind::Extension, 2, rng),
                       random_surrogate(SurrogateKind::Distance, 2, rng), random_solution(2, rng)};
  const Point x = pt(0.2, 0.1);
  const Operator ops[] = {Operator::advection((Vector(2) << 1.0, 0.5).finished()), Operator::diffusion()};
  for (const Operator& op : ops) {
    const double lg = [&] {
      AnsatzBundle z = b;
      const int L = z.solution.layer_count();
      z.solution.weights(L).setZero();
      z.solution.biases(L).setZero();
      return apply_operator(z, op, x);
    }();
    const double l1 = apply_operator(b, op, x);
    for (double alpha : {-2.0, 0.5, 3.0}) {
      AnsatzBundle s = b;
      const int L = s.solution.layer_count();
      s.solution.weights(L) *= alpha;
      s.solution.biases(L) *= alpha;
      CHECK(apply_operator(s, op, x) - lg == doctest::Approx(alpha * (l1 - lg)).epsilon(1e-12));
    }
  }
}

TEST_CASE("fused gradient equals the assembled mixed derivatives") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int dim = 1 + trial % 3;
    const Network net = random_solution(dim, rng);
    const Surrogate d = random_surrogate(SurrogateKind::Distance, dim, rng);
    const Point x = Vector::Random(dim) * 0.5;
    const SurrogateEval de = d.evaluate(x, 2);

    const ForwardTape tape = net.feedforward(x);
    const FirstOrderTape first = spatial_jacobian(net, tape);
    const SecondOrderTape second = spatial_second(net, tape, first);
    const OutputParamGradients pg = output_param_grad(net, tape, 0);
    const MixedParamGradients m1 = mixed_param_grad(net, tape, first, pg);
    const MixedParamGradients m2 = second_mixed_param_grad(net, tape, first, second, pg, m1);
    const auto jd = delta_jacobian(net, tape, first, pg);
    const auto j2d = delta_second(net, tape, first, second, pg, jd);

    const Vector a = Vector::Random(dim);
    const Vector adv_ref = a.dot(de.gradient) * pg.values +
                           de.value * (m1.values.transpose() * a);
    const Vector adv = combined_param_grad(net, tape, first, nullptr, pg, jd, nullptr,
                                           a.dot(de.gradient), de.value * a, 0.0);
    CHECK((adv - adv_ref).cwiseAbs().maxCoeff() <= 1e-12 * (1 + adv_ref.cwiseAbs().maxCoeff()));

    const Vector diff_ref = de.second.sum() * pg.values +
                            2.0 * (m1.values.transpose() * de.gradient) +
                            de.value * m2.values.colwise().sum().transpose();
    const Vector diff = combined_param_grad(net, tape, first, &second, pg, jd, &j2d, de.second.sum(),
                                            2.0 * de.gradient, de.value);
    CHECK((diff - diff_ref).cwiseAbs().maxCoeff() <= 1e-12 * (1 + diff_ref.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("residual system") {
  std::mt19937_64 rng(12);
  const PdeProblem p = manufactured_problem(ProblemId::Diff2d);
  const Surrogate g = random_surrogate(SurrogateKind::Extension, 2, rng);
  const Surrogate d = random_surrogate(SurrogateKind::Distance, 2, rng);
  const Network net = random_solution(2, rng);
  const auto points = sample_interior(p.domain, 300, SamplingStrategy::Sobol, 0);

  SUBCASE("threaded deterministic reduction is bit-identical to serial") {
    const ResidualSystem serial(g, d, p, points, {1, Reduction::Deterministic, 16});
    const ResidualSystem threaded(g, d, p, points, {4, Reduction::Deterministic, 16});
    const auto a = serial.evaluate(net);
    const auto b = threaded.evaluate(net);
    CHECK(a.cost == b.cost);
    CHECK(a.gradient == b.gradient);
    CHECK(a.residuals == b.residuals);
    const ResidualSystem unordered(g, d, p, points, {4, Reduction::Unordered, 16});
    const auto c = unordered.evaluate(net);
    CHECK(c.cost == doctest::Approx(a.cost).epsilon(1e-12));
    CHECK((c.gradient - a.gradient).norm() <= 1e-12 * (1 + a.gradient.norm()));
  }
  SUBCASE("cost-only path and batches") {
    const ResidualSystem sys(g, d, p, points);
    const auto full = sys.evaluate(net);
    CHECK(sys.cost(net) == doctest::Approx(full.cost).epsilon(1e-13));
    const std::vector<std::size_t> batch{3, 7, 11};
    const auto part = sys.evaluate(net, batch);
    REQUIRE(part.residuals.size() == 3);
    CHECK(part.residuals[1] == full.residuals[7]);
    double sq = 0.0;
    for (double r : part.residuals) sq += r * r;
    CHECK(part.cost == doctest::Approx(sq / 6.0).epsilon(1e-15));
  }
  SUBCASE("empty point set") {
    CHECK_THROWS_AS(ResidualSystem(g, d, p, {}), std::invalid_argument);
  }
}

TEST_CASE("1D boundary post-processing") {
  std::mt19937_64 rng(13);
  const Network net = random_solution(1, rng);
  std::vector<Point> grid;
  for (int i = 1; i <= 100; ++i) grid.push_back(pt(i / 101.0));

  SUBCASE("advection: shifting the constant shifts u_hat") {
    const PdeProblem p = manufactured_problem(ProblemId::Advec1d);
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::constant(1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::affine(Vector::Ones(1), 0)), net};
    const AnsatzBundle moved = post_process_boundary_1d(
        b, closed(SurrogateKind::Extension, ClosedForm::constant(5.0)), p.op);
    for (const auto& x : grid) CHECK(ansatz_eval(moved, x) - ansatz_eval(b, x) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(std::abs(residual_cost_and_grad(moved, p, grid).cost - residual_cost_and_grad(b, p, grid).cost) <= 1e-12);
    CHECK_THROWS_AS(post_process_boundary_1d(
                        b, closed(SurrogateKind::Extension, ClosedForm::affine(Vector::Ones(1), 0)), p.op),
                    std::invalid_argument);
  }
  SUBCASE("diffusion: a line is allowed, a parabola is not") {
    const PdeProblem p = manufactured_problem(ProblemId::Diff1d);
    const AnsatzBundle b{closed(SurrogateKind::Extension, ClosedForm::affine(Vector::Ones(1), 1.0)),
                         closed(SurrogateKind::Distance, ClosedForm::interval_bubble(0, 1)), net};
    const Surrogate line = closed(SurrogateKind::Extension, ClosedForm::affine(Vector::Constant(1, -3.0), 4.0));
    const AnsatzBundle moved = post_process_boundary_1d(b, line, p.op);
    CHECK(ansatz_eval(moved, pt(0.0)) == 4.0);
    CHECK(ansatz_eval(moved, pt(1.0)) == 1.0);
    CHECK(std::abs(residual_cost_and_grad(moved, p, grid).cost - residual_cost_and_grad(b, p, grid).cost) <= 1e-12);
    CHECK_THROWS_AS(post_process_boundary_1d(
                        b, closed(SurrogateKind::Extension, ClosedForm::interval_bubble(0, 1)), p.op),
                    std::invalid_argument);
  }
}
