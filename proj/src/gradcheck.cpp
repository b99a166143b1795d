#include "meshfree/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "meshfree/derivatives.hpp"
#include "meshfree/io.hpp"

namespace meshfree::reference {

namespace {

Real sigmoid(Real z) { return 1 / (1 + std::exp(-z)); }

}  // namespace

Jet evaluate(const Architecture& arch, const std::vector<Real>& params, const std::vector<Real>& x,
             int axis, int output) {
  std::vector<Jet> prev(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    prev[i].value = x[i];
    prev[i].d1 = static_cast<int>(i) == axis ? 1 : 0;
  }
  std::size_t pos = 0;
  for (int l = 1; l <= arch.layer_count(); ++l) {
    const auto rows = static_cast<std::size_t>(arch.layer_size(l));
    const std::size_t cols = prev.size();
    const std::size_t bias_pos = pos + rows * cols;
    std::vector<Jet> next(rows);
    for (std::size_t j = 0; j < rows; ++j) {
      Jet z{params[bias_pos + j], 0, 0};
      for (std::size_t k = 0; k < cols; ++k) {
        const Real w = params[pos + j * cols + k];
        z.value += w * prev[k].value;
        z.d1 += w * prev[k].d1;
        z.d2 += w * prev[k].d2;
      }
      if (arch.activation(l) == Activation::Linear) {
        next[j] = z;
      } else {
        const Real s = sigmoid(z.value);
        const Real s1 = s * (1 - s);
        const Real s2 = s1 * (1 - 2 * s);
        next[j] = {s, s1 * z.d1, s2 * z.d1 * z.d1 + s1 * z.d2};
      }
    }
    pos = bias_pos + rows;
    prev = std::move(next);
  }
  return prev[static_cast<std::size_t>(output)];
}

std::vector<Real> widen(const Eigen::VectorXd& v) {
  return std::vector<Real>(v.data(), v.data() + v.size());
}

bool close(double analytic, Real oracle, double rel, double floor) {
  const Real diff = std::abs(static_cast<Real>(analytic) - oracle);
  return diff <= std::max(static_cast<Real>(rel) * std::abs(oracle), static_cast<Real>(floor));
}

double relative_error(double analytic, Real oracle, double floor) {
  const Real diff = std::abs(static_cast<Real>(analytic) - oracle);
  return static_cast<double>(diff / std::max(std::abs(oracle), static_cast<Real>(floor)));
}

Architecture random_architecture(std::mt19937_64& rng, int max_input, Activation hidden) {
  std::uniform_int_distribution<int> depth(1, 5);
  std::uniform_int_distribution<int> width(2, 20);
  std::uniform_int_distribution<int> inputs(1, max_input);
  Architecture arch;
  arch.input_dim = inputs(rng);
  const int d = depth(rng);
  for (int l = 0; l < d; ++l) arch.hidden_sizes.push_back(width(rng));
  arch.hidden_activation = hidden;
  arch.output_activation = Activation::Linear;
  return arch;
}

Network random_network(const Architecture& arch, std::mt19937_64& rng) {
  Network net = init_network(arch, rng());
  Eigen::VectorXd p = net.flatten();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index k = 0; k < p.size(); ++k) p[k] += 0.5 * u(rng);
  net.unflatten(p);
  return net;
}

const char* family_name(int family) {
  static const char* names[] = {"dy/dx", "d2y/dx2", "dy/dp", "d2y/dxdp", "d3y/dx2dp"};
  return names[family];
}

std::size_t OracleReport::total_checked() const {
  std::size_t n = 0;
  for (auto c : checked) n += c;
  return n;
}

bool OracleReport::ok() const {
  return std::all_of(std::begin(failed), std::end(failed), [](std::size_t f) { return f == 0; });
}

void OracleReport::merge(const OracleReport& o) {
  for (int k = 0; k < FamilyCount; ++k) {
    checked[k] += o.checked[k];
    failed[k] += o.failed[k];
    worst[k] = std::max(worst[k], o.worst[k]);
    largest[k] = std::max(largest[k], o.largest[k]);
  }
}

OracleReport check_network(const Network& net, const Eigen::VectorXd& x, const Tolerances& tol,
                           std::size_t param_stride) {
  const Architecture& arch = net.arch();
  const auto params = widen(net.flatten());
  const auto xr = widen(x);
  const int n = net.input_dim();
  param_stride = std::max<std::size_t>(param_stride, 1);

  const ForwardTape tape = net.feedforward(x);
  const FirstOrderTape first = spatial_jacobian(net, tape);
  const SecondOrderTape second = spatial_second(net, tape, first);
  const OutputParamGradients grads = output_param_grad(net, tape, 0);
  const MixedParamGradients mixed = mixed_param_grad(net, tape, first, grads);
  const MixedParamGradients mixed2 = second_mixed_param_grad(net, tape, first, second, grads, mixed);

  OracleReport rep;
  auto record = [&](int family, double analytic, Real oracle) {
    ++rep.checked[family];
    if (!close(analytic, oracle, tol.rel[family], tol.floor)) ++rep.failed[family];
    rep.worst[family] = std::max(rep.worst[family], relative_error(analytic, oracle, tol.floor));
    rep.largest[family] = std::max(rep.largest[family], std::abs(analytic));
  };

  const Real h = 1e-7L;
  for (int i = 0; i < n; ++i) {
    auto value_at = [&](const std::vector<Real>& xs) { return evaluate(arch, params, xs, i).value; };
    auto slope_at = [&](const std::vector<Real>& xs) { return evaluate(arch, params, xs, i).d1; };
    record(Dx, first.output()(0, i), input_fd(value_at, xr, i, h));
    record(Dxx, second.output()(0, i), input_fd(slope_at, xr, i, h));

    auto d1 = [&](const std::vector<Real>& ps) { return evaluate(arch, ps, xr, i).d1; };
    auto d2 = [&](const std::vector<Real>& ps) { return evaluate(arch, ps, xr, i).d2; };
    for (std::size_t p = 0; p < params.size(); p += param_stride) {
      const auto col = static_cast<Eigen::Index>(p);
      record(Dxdp, mixed.values(i, col), param_fd(d1, params, p, h));
      record(Dxxdp, mixed2.values(i, col), param_fd(d2, params, p, h));
    }
  }
  auto y = [&](const std::vector<Real>& ps) { return evaluate(arch, ps, xr, 0).value; };
  for (std::size_t p = 0; p < params.size(); p += param_stride) {
    record(Dp, grads.values[static_cast<Eigen::Index>(p)], param_fd(y, params, p, h));
  }
  return rep;
}

Real residual_cost(const Network& extension, const Network& distance, const Architecture& solution,
                   const std::vector<Real>& params, const Operator& op, const ScalarField& forcing,
                   const std::vector<Point>& points) {
  const auto g_params = widen(extension.flatten());
  const auto d_params = widen(distance.flatten());
  Real sum = 0;
  for (const auto& x : points) {
    const auto xr = widen(x);
    Real lu = 0;
    for (int i = 0; i < x.size(); ++i) {
      const Jet g = evaluate(extension.arch(), g_params, xr, i);
      const Jet d = evaluate(distance.arch(), d_params, xr, i);
      const Jet y = evaluate(solution, params, xr, i);
      if (op.kind == Operator::Kind::Advection) {
        lu += op.velocity[i] * (g.d1 + d.d1 * y.value + d.value * y.d1);
      } else {
        lu += g.d2 + d.d2 * y.value + 2 * d.d1 * y.d1 + d.value * y.d2;
      }
    }
    const Real r = lu - forcing(x);
    sum += r * r;
  }
  return sum / (2 * static_cast<Real>(points.size()));
}

}  // namespace meshfree::reference

namespace meshfree {

std::string describe(const Architecture& arch) {
  std::ostringstream s;
  s << arch.input_dim << "-[";
  for (std::size_t l = 0; l < arch.hidden_sizes.size(); ++l) s << (l ? "," : "") << arch.hidden_sizes[l];
  s << "]-" << arch.output_dim;
  if (arch.hidden_activation != Activation::Sigmoid) s << " " << to_string(arch.hidden_activation);
  return s.str();
}

bool GradcheckReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.pass(); });
}

std::size_t GradcheckReport::failures(const std::string& quantity) const {
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.quantity == quantity) n += r.failed;
  }
  return n;
}

void GradcheckReport::write_csv(std::ostream& out) const {
  out << "quantity,trial,architecture,checked,failed,worst_rel_error,max_abs_analytic,tolerance,pass\n";
  for (const auto& r : rows) {
    out << r.quantity << ',' << r.trial << ',' << r.architecture << ',' << r.checked << ','
        << r.failed << ',' << format_double(r.worst_rel_error) << ','
        << format_double(r.max_abs_analytic) << ',' << format_double(r.tolerance) << ','
        << (r.pass() ? "true" : "false") << '\n';
  }
}

namespace {

Network small_solution(int dim, Activation hidden, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> depth(1, 3), width(2, 6);
  Architecture a;
  a.input_dim = dim;
  a.hidden_sizes.resize(static_cast<std::size_t>(depth(rng)));
  for (int& h : a.hidden_sizes) h = width(rng);
  a.hidden_activation = hidden;
  return reference::random_network(a, rng);
}

Network small_surrogate(int dim, std::mt19937_64& rng) {
  Architecture a;
  a.input_dim = dim;
  a.hidden_sizes = {4};
  return reference::random_network(a, rng);
}

GradcheckRow residual_row(const char* name, std::size_t trial, bool advection, int dim,
                          const GradcheckOptions& opts, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> npts(1, 3);
  const Network g = small_surrogate(dim, rng);
  const Network d = small_surrogate(dim, rng);
  const Network y = small_solution(dim, opts.hidden_activation, rng);
  std::vector<Point> points(static_cast<std::size_t>(npts(rng)));
  for (auto& p : points) p = Vector::NullaryExpr(dim, [&] { return 0.5 * n01(rng); });

  PdeProblem problem;
  problem.op = advection ? Operator::advection(Vector::NullaryExpr(dim, [&] { return n01(rng); }))
                         : Operator::diffusion();
  problem.forcing = [](const Point& x) { return std::sin(x.sum()); };

  const AnsatzBundle bundle{Surrogate::trained(SurrogateKind::Extension, g, {}),
                            Surrogate::trained(SurrogateKind::Distance, d, {}), y};
  const ResidualEvaluation e = residual_cost_and_grad(bundle, problem, points);
  const auto params = reference::widen(y.flatten());
  auto cost = [&](const std::vector<reference::Real>& p) {
    return reference::residual_cost(g, d, y.arch(), p, problem.op, problem.forcing, points);
  };

  GradcheckRow row;
  row.quantity = name;
  row.trial = trial;
  row.architecture = describe(y.arch());
  row.tolerance = advection ? opts.advection_tolerance : opts.diffusion_tolerance;
  for (std::size_t k = 0; k < params.size(); k += std::max<std::size_t>(opts.param_stride, 1)) {
    const auto fd = reference::param_fd(cost, params, k, 1e-7L);
    const double a = e.gradient[static_cast<Eigen::Index>(k)];
    ++row.checked;
    if (!reference::close(a, fd, row.tolerance, opts.tolerances.floor)) ++row.failed;
    row.worst_rel_error =
        std::max(row.worst_rel_error, reference::relative_error(a, fd, opts.tolerances.floor));
    row.max_abs_analytic = std::max(row.max_abs_analytic, std::abs(a));
  }
  return row;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  GradcheckReport report;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> n01;
  for (std::size_t t = 0; t < opts.network_trials; ++t) {
    const Architecture arch = reference::random_architecture(rng, opts.max_input, opts.hidden_activation);
    const Network net = reference::random_network(arch, rng);
    const Vector x = Vector::NullaryExpr(arch.input_dim, [&] { return n01(rng); });
    const reference::OracleReport rep = reference::check_network(net, x, opts.tolerances, opts.param_stride);
    for (int f = 0; f < reference::FamilyCount; ++f) {
      GradcheckRow row;
      row.quantity = reference::family_name(f);
      row.trial = t;
      row.architecture = describe(arch);
      row.checked = rep.checked[f];
      row.failed = rep.failed[f];
      row.worst_rel_error = rep.worst[f];
      row.max_abs_analytic = rep.largest[f];
      row.tolerance = opts.tolerances.rel[f];
      report.rows.push_back(std::move(row));
    }
  }
  for (std::size_t t = 0; t < opts.residual_trials; ++t) {
    report.rows.push_back(residual_row("advection dC/dp", t, true, 1 + static_cast<int>(t % 2), opts, rng));
    report.rows.push_back(residual_row("diffusion dC/dp", t, false, 1 + static_cast<int>(t % 3), opts, rng));
  }
  return report;
}

}  // namespace meshfree
