#include "meshfree/surrogate.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "meshfree/derivatives.hpp"

namespace meshfree {

std::string_view to_string(SurrogateKind k) {
  return k == SurrogateKind::Extension ? "extension" : "distance";
}

SurrogateKind surrogate_kind_from_string(std::string_view name) {
  if (name == "extension") return SurrogateKind::Extension;
  if (name == "distance") return SurrogateKind::Distance;
  throw std::invalid_argument("unknown surrogate kind '" + std::string(name) + "'");
}

std::string_view to_string(ClosedForm::Shape s) {
  switch (s) {
    case ClosedForm::Shape::Constant:
      return "constant";
    case ClosedForm::Shape::Affine:
      return "affine";
    case ClosedForm::Shape::IntervalBubble:
      return "interval-bubble";
  }
  return "unknown";
}

ClosedForm ClosedForm::constant(double c, int dim) {
  ClosedForm f;
  f.shape = Shape::Constant;
  f.offset = c;
  f.dim = dim;
  f.coefficients = Vector::Zero(dim);
  return f;
}

ClosedForm ClosedForm::affine(Vector coefficients, double offset) {
  ClosedForm f;
  f.shape = Shape::Affine;
  f.dim = static_cast<int>(coefficients.size());
  f.coefficients = std::move(coefficients);
  f.offset = offset;
  return f;
}

ClosedForm ClosedForm::interval_bubble(double a, double b) {
  ClosedForm f;
  f.shape = Shape::IntervalBubble;
  f.a = a;
  f.b = b;
  f.dim = 1;
  return f;
}

SurrogateEval ClosedForm::evaluate(const Vector& x, int order) const {
  if (x.size() != dim) throw std::invalid_argument("closed-form surrogate: dimension mismatch");
  SurrogateEval e;
  switch (shape) {
    case Shape::Constant:
      e.value = offset;
      if (order >= 1) e.gradient = Vector::Zero(dim);
      if (order >= 2) e.second = Vector::Zero(dim);
      break;
    case Shape::Affine:
      e.value = coefficients.dot(x) + offset;
      if (order >= 1) e.gradient = coefficients;
      if (order >= 2) e.second = Vector::Zero(dim);
      break;
    case Shape::IntervalBubble:
      e.value = (x[0] - a) * (b - x[0]);
      if (order >= 1) e.gradient = Vector::Constant(1, a + b - 2.0 * x[0]);
      if (order >= 2) e.second = Vector::Constant(1, -2.0);
      break;
  }
  return e;
}

Surrogate Surrogate::closed(SurrogateKind kind, ClosedForm form) {
  Surrogate s;
  s.kind_ = kind;
  s.impl_ = std::move(form);
  return s;
}

Surrogate Surrogate::trained(SurrogateKind kind, Network net, TrainingInfo info,
                             double normalization) {
  if (net.output_dim() != 1) throw std::invalid_argument("surrogate networks must be scalar");
  Surrogate s;
  s.kind_ = kind;
  s.impl_ = std::move(net);
  s.info_ = std::move(info);
  s.normalization_ = normalization;
  return s;
}

int Surrogate::input_dim() const {
  return is_closed_form() ? closed_form().dim : network().input_dim();
}

SurrogateEval Surrogate::evaluate(const Vector& x, int order) const {
  if (order < 0 || order > 2) throw std::invalid_argument("surrogate derivative order must be 0..2");
  if (is_closed_form()) return closed_form().evaluate(x, order);
  const Network& net = network();
  const ForwardTape tape = net.feedforward(x);
  SurrogateEval e;
  e.value = tape.output()[0];
  if (order >= 1) {
    const FirstOrderTape first = spatial_jacobian(net, tape);
    e.gradient = first.output().row(0).transpose();
    if (order >= 2) e.second = spatial_second(net, tape, first).output().row(0).transpose();
  }
  return e;
}

SurrogateEval evaluate_surrogate(const Surrogate& model, const Vector& x, int order) {
  return model.evaluate(x, order);
}

std::uint64_t fingerprint(std::span<const Point> points) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : points) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &p[i], sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

OptimizerResult fit_network(Network& net, std::span<const Point> inputs,
                            std::span<const double> targets, const OptimizerOptions& opts) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw std::invalid_argument("fit_network needs matching, nonempty inputs and targets");
  }
  if (net.output_dim() != 1) throw std::invalid_argument("fit_network expects a scalar network");

  Network work = net;
  auto batch_cost = [&](const Vector& params, std::span<const std::size_t> batch, Vector& grad) {
    work.unflatten(params);
    grad = Vector::Zero(params.size());
    double cost = 0.0;
    const std::size_t count = batch.empty() ? inputs.size() : batch.size();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = batch.empty() ? k : batch[k];
      const ForwardTape tape = work.feedforward(inputs[i]);
      const Vector target = Vector::Constant(1, targets[i]);
      const double r = tape.output()[0] - targets[i];
      cost += 0.5 * r * r;
      grad += data_fit_backprop(work, tape, target);
    }
    const double scale = 1.0 / static_cast<double>(count);
    grad *= scale;
    return cost * scale;
  };

  ValueAndGradient full = [&](const Vector& params, Vector& grad) {
    return batch_cost(params, {}, grad);
  };
  StochasticGradient sgd{inputs.size(), batch_cost};
  OptimizerResult result = hybrid_minimize(full, sgd, net.flatten(), opts);
  net.unflatten(result.x);
  return result;
}

Surrogate train_extension(std::span<const Point> boundary, std::span<const double> values,
                          const Architecture& arch, std::uint64_t seed,
                          const OptimizerOptions& opts) {
  if (boundary.empty()) throw std::invalid_argument("train_extension needs boundary samples");
  Network net = init_network(arch, seed);
  const OptimizerResult r = fit_network(net, boundary, values, opts);
  if (!std::isfinite(r.cost)) throw std::runtime_error("extension training diverged");
  TrainingInfo info;
  info.final_cost = r.cost;
  info.iterations = r.history.entries.size();
  info.status = r.status;
  info.training_points = boundary.size();
  info.fingerprint = fingerprint(boundary);
  return Surrogate::trained(SurrogateKind::Extension, std::move(net), std::move(info));
}

Surrogate train_distance(std::span<const Point> coarse, std::span<const double> targets,
                         std::span<const Point> boundary, double normalization,
                         const Architecture& arch, std::uint64_t seed,
                         const OptimizerOptions& opts) {
  if (boundary.empty()) throw std::invalid_argument("train_distance needs boundary samples");
  if (coarse.size() != targets.size()) {
    throw std::invalid_argument("train_distance: coarse points and targets differ in length");
  }
  std::vector<Point> inputs(coarse.begin(), coarse.end());
  std::vector<double> all_targets(targets.begin(), targets.end());
  for (const auto& b : boundary) {
    inputs.push_back(b);
    all_targets.push_back(0.0);
  }

  Network net = init_network(arch, seed);
  Network probe = net;
  auto boundary_max = [&](const Network& n) {
    double m = 0.0;
    for (const auto& b : boundary) m = std::max(m, std::abs(n.evaluate(b)[0]));
    return m;
  };

  TrainingInfo info;
  OptimizerOptions local = opts;
  local.observer = [&](std::size_t it, const Vector& x, double cost) {
    probe.unflatten(x);
    info.boundary_max_history.push_back(boundary_max(probe));
    if (opts.observer) opts.observer(it, x, cost);
  };
  const OptimizerResult r = fit_network(net, inputs, all_targets, local);
  if (!std::isfinite(r.cost)) throw std::runtime_error("distance training diverged");

  info.final_cost = r.cost;
  info.iterations = r.history.entries.size();
  info.status = r.status;
  info.training_points = inputs.size();
  info.fingerprint = fingerprint(inputs);
  info.boundary_max_abs = boundary_max(net);
  return Surrogate::trained(SurrogateKind::Distance, std::move(net), std::move(info),
                            normalization);
}

}  // namespace meshfree
