#include "meshfree/pde.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace meshfree {

namespace {

constexpr double kPi = std::numbers::pi;

PdeProblem make(ProblemId id, Operator op, Domain domain, ScalarField u, ScalarField f) {
  PdeProblem p;
  p.id = id;
  p.op = std::move(op);
  p.domain = std::move(domain);
  p.boundary_data = u;
  p.exact_solution = std::move(u);
  p.forcing = std::move(f);
  return p;
}

}  // namespace

ProblemId problem_id_from_string(std::string_view name) {
  if (name == "advec1d") return ProblemId::Advec1d;
  if (name == "diff1d") return ProblemId::Diff1d;
  if (name == "advec2d") return ProblemId::Advec2d;
  if (name == "diff2d") return ProblemId::Diff2d;
  if (name == "diff_nd") return ProblemId::DiffNd;
  if (name == "diff_polygon") return ProblemId::DiffPolygon;
  if (name == "custom") return ProblemId::Custom;
  throw std::invalid_argument("unknown problem id '" + std::string(name) + "'");
}

std::string_view to_string(ProblemId id) {
  switch (id) {
    case ProblemId::Advec1d:
      return "advec1d";
    case ProblemId::Diff1d:
      return "diff1d";
    case ProblemId::Advec2d:
      return "advec2d";
    case ProblemId::Diff2d:
      return "diff2d";
    case ProblemId::DiffNd:
      return "diff_nd";
    case ProblemId::DiffPolygon:
      return "diff_polygon";
    case ProblemId::Custom:
      return "custom";
  }
  return "unknown";
}

PdeProblem manufactured_problem(ProblemId id, const ManufacturedOptions& opts) {
  switch (id) {
    case ProblemId::Advec1d:
      return make(
          id, Operator::advection(Vector::Constant(1, 1.0)), opts.domain.value_or(Interval{0.0, 1.0}),
          [](const Point& p) {
            const double x = p[0];
            return std::sin(2 * kPi * x) * std::cos(4 * kPi * x) + 1.0;
          },
          [](const Point& p) {
            const double x = p[0];
            return 2 * kPi * std::cos(2 * kPi * x) * std::cos(4 * kPi * x) -
                   4 * kPi * std::sin(2 * kPi * x) * std::sin(4 * kPi * x);
          });
    case ProblemId::Diff1d:
      return make(
          id, Operator::diffusion(), opts.domain.value_or(Interval{0.0, 1.0}),
          [](const Point& p) {
            const double x = p[0];
            return std::sin(kPi * x / 2) * std::cos(2 * kPi * x) + 1.0;
          },
          [](const Point& p) {
            const double x = p[0];
            return -(kPi * kPi / 4 + 4 * kPi * kPi) * std::sin(kPi * x / 2) * std::cos(2 * kPi * x) -
                   2 * kPi * kPi * std::cos(kPi * x / 2) * std::sin(2 * kPi * x);
          });
    case ProblemId::Advec2d: {
      const double a = 1.0;
      const double b = 0.5;
      Vector velocity(2);
      velocity << a, b;
      return make(
          id, Operator::advection(velocity), opts.domain.value_or(star_polygon()),
          [](const Point& p) { return 0.5 * std::cos(kPi * p[0]) * std::sin(kPi * p[1]); },
          [a, b](const Point& p) {
            const double ux = -0.5 * kPi * std::sin(kPi * p[0]) * std::sin(kPi * p[1]);
            const double uy = 0.5 * kPi * std::cos(kPi * p[0]) * std::cos(kPi * p[1]);
            return a * ux + b * uy;
          });
    }
    case ProblemId::Diff2d:
      return make(
          id, Operator::diffusion(), opts.domain.value_or(star_polygon()),
          [](const Point& p) {
            return std::exp(-(2 * p[0] * p[0] + 4 * p[1] * p[1])) + 0.5;
          },
          [](const Point& p) {
            const double x2 = p[0] * p[0];
            const double y2 = p[1] * p[1];
            return (16 * x2 + 64 * y2 - 12) * std::exp(-(2 * x2 + 4 * y2));
          });
    case ProblemId::DiffNd: {
      const int n = opts.dimension;
      if (n < 1) throw std::invalid_argument("diff_nd needs dimension >= 1");
      Domain domain = opts.domain.value_or(
          HyperRectangle{Vector::Zero(n), Vector::Ones(n)});
      if (dimension(domain) != n) throw std::invalid_argument("diff_nd domain dimension mismatch");
      return make(
          id, Operator::diffusion(), std::move(domain),
          [](const Point& p) { return std::exp(-p.squaredNorm()) + 0.5; },
          [n](const Point& p) {
            const double r2 = p.squaredNorm();
            return (4 * r2 - 2 * n) * std::exp(-r2);
          });
    }
    case ProblemId::DiffPolygon: {
      Domain domain = opts.domain.value_or(star_polygon());
      const auto* poly = std::get_if<Polygon>(&domain);
      if (poly == nullptr) throw std::invalid_argument("diff_polygon needs a polygon domain");
      const Point2 c = centroid(*poly);
      return make(
          id, Operator::diffusion(), std::move(domain),
          [c](const Point& p) {
            const double r2 = (p[0] - c.x()) * (p[0] - c.x()) + (p[1] - c.y()) * (p[1] - c.y());
            return std::exp(-10 * r2);
          },
          [c](const Point& p) {
            const double r2 = (p[0] - c.x()) * (p[0] - c.x()) + (p[1] - c.y()) * (p[1] - c.y());
            return (400 * r2 - 40) * std::exp(-10 * r2);
          });
    }
    case ProblemId::Custom:
      break;
  }
  throw std::invalid_argument("custom problems have no manufactured solution");
}

double ansatz_eval(const AnsatzBundle& bundle, const Point& x) {
  return bundle.extension.value(x) + bundle.distance.value(x) * bundle.solution.evaluate(x)[0];
}

PointTapes compute_tapes(const Network& net, const Point& x, int order) {
  PointTapes t;
  t.forward = net.feedforward(x);
  t.first = spatial_jacobian(net, t.forward);
  if (order >= 2) t.second = spatial_second(net, t.forward, t.first);
  return t;
}

double apply_operator(const Operator& op, const SurrogateEval& g, const SurrogateEval& d,
                      const PointTapes& tapes) {
  const double y = tapes.forward.output()[0];
  const Vector grad_y = tapes.first.output().row(0).transpose();
  if (op.kind == Operator::Kind::Advection) {
    if (op.velocity.size() != grad_y.size()) {
      throw std::invalid_argument("advection velocity dimension does not match the network input");
    }
    return op.velocity.dot(g.gradient) + op.velocity.dot(d.gradient) * y +
           d.value * op.velocity.dot(grad_y);
  }
  if (!tapes.second) throw std::invalid_argument("diffusion operator needs second-order tapes");
  const Vector second_y = tapes.second->output().row(0).transpose();
  return g.second.sum() + d.second.sum() * y + 2.0 * d.gradient.dot(grad_y) +
         d.value * second_y.sum();
}

double apply_operator(const AnsatzBundle& bundle, const Operator& op, const Point& x) {
  const int order = op.order();
  return apply_operator(op, bundle.extension.evaluate(x, order), bundle.distance.evaluate(x, order),
                        compute_tapes(bundle.solution, x, order));
}

ResidualSystem::ResidualSystem(const Surrogate& extension, const Surrogate& distance,
                               const PdeProblem& problem, std::vector<Point> points,
                               ResidualOptions opts)
    : op_(problem.op), points_(std::move(points)), opts_(opts) {
  if (points_.empty()) throw std::invalid_argument("residual system needs collocation points");
  const int order = op_.order();
  extension_.reserve(points_.size());
  distance_.reserve(points_.size());
  forcing_.reserve(points_.size());
  for (const auto& p : points_) {
    extension_.push_back(extension.evaluate(p, order));
    distance_.push_back(distance.evaluate(p, order));
    forcing_.push_back(problem.forcing(p));
  }
  if (opts_.chunk_size == 0) opts_.chunk_size = 64;
}

double ResidualSystem::point_gradient(const Network& net, std::size_t i, Vector* grad) const {
  const int order = op_.order();
  const PointTapes tapes = compute_tapes(net, points_[i], order);
  const SurrogateEval& g = extension_[i];
  const SurrogateEval& d = distance_[i];
  const double r = apply_operator(op_, g, d, tapes) - forcing_[i];
  if (grad == nullptr) return r;

  // L du_hat/dp, with G and D constant in p.
  const OutputParamGradients pg = output_param_grad(net, tapes.forward, 0);
  const std::vector<Matrix> jdelta = delta_jacobian(net, tapes.forward, tapes.first, pg);
  if (op_.kind == Operator::Kind::Advection) {
    grad->noalias() += r * combined_param_grad(net, tapes.forward, tapes.first, nullptr, pg, jdelta,
                                               nullptr, op_.velocity.dot(d.gradient),
                                               d.value * op_.velocity, 0.0);
  } else {
    const std::vector<Matrix> j2delta =
        delta_second(net, tapes.forward, tapes.first, *tapes.second, pg, jdelta);
    grad->noalias() += r * combined_param_grad(net, tapes.forward, tapes.first, &*tapes.second, pg,
                                               jdelta, &j2delta, d.second.sum(), 2.0 * d.gradient,
                                               d.value);
  }
  return r;
}

ResidualEvaluation ResidualSystem::evaluate(const Network& net,
                                            std::span<const std::size_t> batch) const {
  const std::size_t count = batch.empty() ? points_.size() : batch.size();
  const auto index = [&](std::size_t k) { return batch.empty() ? k : batch[k]; };
  const auto params = static_cast<Eigen::Index>(net.param_count());

  ResidualEvaluation out;
  out.residuals.resize(count);
  const std::size_t chunk = opts_.chunk_size;
  const std::size_t chunks = (count + chunk - 1) / chunk;

  struct Partial {
    double sum_sq = 0.0;
    Vector grad;
  };
  std::vector<Partial> partials(opts_.reduction == Reduction::Deterministic ? chunks : 0);
  Partial shared{0.0, Vector::Zero(params)};
  std::mutex shared_mutex;

  auto run_chunk = [&](std::size_t c) {
    Partial local{0.0, Vector::Zero(params)};
    const std::size_t end = std::min(count, (c + 1) * chunk);
    for (std::size_t k = c * chunk; k < end; ++k) {
      const double r = point_gradient(net, index(k), &local.grad);
      out.residuals[k] = r;
      local.sum_sq += r * r;
    }
    if (opts_.reduction == Reduction::Deterministic) {
      partials[c] = std::move(local);
    } else {
      const std::lock_guard lock(shared_mutex);
      shared.sum_sq += local.sum_sq;
      shared.grad += local.grad;
    }
  };

  std::size_t threads = opts_.threads == 0 ? std::thread::hardware_concurrency() : opts_.threads;
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(chunks, 1));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < chunks; c = next++) run_chunk(c);
      });
    }
  }

  if (opts_.reduction == Reduction::Deterministic) {
    for (auto& p : partials) {
      shared.sum_sq += p.sum_sq;
      shared.grad += p.grad;
    }
  }
  const double scale = 1.0 / static_cast<double>(count);
  out.cost = 0.5 * shared.sum_sq * scale;
  out.gradient = shared.grad * scale;
  if (!std::isfinite(out.cost) || !out.gradient.allFinite()) {
    throw std::runtime_error("non-finite residual: training diverged");
  }
  return out;
}

double ResidualSystem::cost(const Network& net) const {
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const double r = point_gradient(net, i, nullptr);
    sum_sq += r * r;
  }
  return 0.5 * sum_sq / static_cast<double>(points_.size());
}

ResidualEvaluation residual_cost_and_grad(const AnsatzBundle& bundle, const PdeProblem& problem,
                                          std::span<const Point> points, ResidualOptions opts) {
  const ResidualSystem system(bundle.extension, bundle.distance, problem,
                              std::vector<Point>(points.begin(), points.end()), opts);
  return system.evaluate(bundle.solution);
}

AnsatzBundle post_process_boundary_1d(const AnsatzBundle& trained, const Surrogate& new_extension,
                                      const Operator& op) {
  if (trained.solution.input_dim() != 1 || new_extension.input_dim() != 1) {
    throw std::invalid_argument("boundary post-processing is only defined in 1D");
  }
  if (!new_extension.is_closed_form()) {
    throw std::invalid_argument("post-processing needs a closed-form extension");
  }
  const auto shape = new_extension.closed_form().shape;
  const bool in_kernel = op.kind == Operator::Kind::Advection
                             ? shape == ClosedForm::Shape::Constant
                             : (shape == ClosedForm::Shape::Constant ||
                                shape == ClosedForm::Shape::Affine);
  if (!in_kernel) {
    throw std::invalid_argument(std::string("extension of shape '") +
                                std::string(to_string(shape)) +
                                "' is not annihilated by the operator");
  }
  AnsatzBundle out = trained;
  out.extension = new_extension;
  return out;
}

}  // namespace meshfree
