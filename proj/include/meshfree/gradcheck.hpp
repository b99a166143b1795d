#pragma once

// Finite-difference oracles for every analytic derivative in the library.
//
// The reference evaluator is a plain scalar loop in long double that carries
// forward-mode d/dx_i and d^2/dx_i^2 along one axis. Parameter derivatives
// are central differences of those quantities, so the oracle shares no code
// with the backward recursions it checks.

#include <cstddef>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "meshfree/network.hpp"
#include "meshfree/pde.hpp"

namespace meshfree::reference {

using Real = long double;

struct Jet {
  Real value = 0;
  Real d1 = 0;
  Real d2 = 0;
};

/// Output m of the network at x, differentiated along input axis `axis`.
/// Parameters are in the flat layer-major layout.
Jet evaluate(const Architecture& arch, const std::vector<Real>& params, const std::vector<Real>& x,
             int axis, int output = 0);

std::vector<Real> widen(const Eigen::VectorXd& v);

/// Central difference of f(params) in parameter p.
template <class F>
Real param_fd(F&& f, std::vector<Real> params, std::size_t p, Real h) {
  const Real base = params[p];
  params[p] = base + h;
  const Real up = f(params);
  params[p] = base - h;
  const Real down = f(params);
  return (up - down) / (2 * h);
}

/// Central difference of f(x) along axis i.
template <class F>
Real input_fd(F&& f, std::vector<Real> x, int i, Real h) {
  const auto k = static_cast<std::size_t>(i);
  const Real base = x[k];
  x[k] = base + h;
  const Real up = f(x);
  x[k] = base - h;
  const Real down = f(x);
  return (up - down) / (2 * h);
}

/// |a - b| <= max(rel * |b|, floor).
bool close(double analytic, Real oracle, double rel, double floor = 1e-10);
/// |a - b| / max(|b|, floor).
double relative_error(double analytic, Real oracle, double floor);

/// 1..5 hidden layers of width 2..20, linear output.
Architecture random_architecture(std::mt19937_64& rng, int max_input = 3,
                                 Activation hidden = Activation::Sigmoid);
/// Glorot initialization plus uniform(-0.5, 0.5) noise on every parameter,
/// so biases are nonzero.
Network random_network(const Architecture& arch, std::mt19937_64& rng);

/// The five derivative families, in report order.
enum Family { Dx, Dxx, Dp, Dxdp, Dxxdp, FamilyCount };
const char* family_name(int family);

struct Tolerances {
  double rel[FamilyCount] = {1e-6, 1e-5, 1e-6, 1e-5, 1e-4};
  double floor = 1e-10;
};

struct OracleReport {
  std::size_t checked[FamilyCount] = {};
  std::size_t failed[FamilyCount] = {};
  double worst[FamilyCount] = {};
  /// Largest |analytic| seen per family (zero for an all-linear network's
  /// higher orders).
  double largest[FamilyCount] = {};

  std::size_t total_checked() const;
  bool ok() const;
  void merge(const OracleReport& o);
};

/// Compares all derivatives of output 0 at x. `param_stride` > 1 samples
/// every k-th parameter.
OracleReport check_network(const Network& net, const Eigen::VectorXd& x, const Tolerances& tol = {},
                           std::size_t param_stride = 1);

/// Residual cost 0.5 / n sum (L u_hat - f)^2 in long double, with G and D
/// given as networks and the solution parameters as `params`.
Real residual_cost(const Network& extension, const Network& distance, const Architecture& solution,
                   const std::vector<Real>& params, const Operator& op, const ScalarField& forcing,
                   const std::vector<Point>& points);

}  // namespace meshfree::reference

namespace meshfree {

struct GradcheckOptions {
  std::size_t network_trials = 100;
  /// Per operator.
  std::size_t residual_trials = 50;
  std::uint64_t seed = 0;
  Activation hidden_activation = Activation::Sigmoid;
  int max_input = 3;
  std::size_t param_stride = 1;
  reference::Tolerances tolerances;
  double advection_tolerance = 1e-5;
  double diffusion_tolerance = 1e-4;
};

/// One line per (trial, quantity).
struct GradcheckRow {
  std::string quantity;
  std::size_t trial = 0;
  std::string architecture;
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double tolerance = 0.0;

  bool pass() const { return failed == 0; }
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;

  bool all_pass() const;
  std::size_t failures(const std::string& quantity) const;
  /// quantity,trial,architecture,checked,failed,worst_rel_error,max_abs_analytic,tolerance,pass
  void write_csv(std::ostream& out) const;
};

/// Random networks for the five derivative families, then random small
/// bundles for the advection and diffusion residual gradients.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

std::string describe(const Architecture& arch);

}  // namespace meshfree
