#include "meshfree/derivatives.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

namespace meshfree {

namespace fault {
namespace {
std::atomic<bool> sign_flip{false};
}
void set_second_order_sign_flip(bool enabled) { sign_flip = enabled; }
bool second_order_sign_flip() { return sign_flip.load(std::memory_order_relaxed); }
}  // namespace fault

namespace {

void check_tape(const Network& net, const ForwardTape& tape) {
  const int L = net.layer_count();
  if (tape.layer_count() != L || static_cast<int>(tape.z.size()) != L + 1) {
    throw std::invalid_argument("forward tape does not match network depth");
  }
  for (int l = 0; l <= L; ++l) {
    if (tape.y[l].size() != net.arch().layer_size(l) ||
        (l > 0 && tape.z[l].size() != net.arch().layer_size(l))) {
      throw std::invalid_argument("forward tape layer " + std::to_string(l) +
                                  " does not match network");
    }
  }
}

void check_first(const Network& net, const FirstOrderTape& first) {
  const int L = net.layer_count();
  if (static_cast<int>(first.jy.size()) != L + 1 || static_cast<int>(first.jz.size()) != L + 1 ||
      first.jy[L].rows() != net.output_dim() || first.jy[L].cols() != net.input_dim()) {
    throw std::invalid_argument("first-order tape does not match network");
  }
}

void check_second(const Network& net, const SecondOrderTape& second) {
  const int L = net.layer_count();
  if (static_cast<int>(second.j2y.size()) != L + 1 ||
      static_cast<int>(second.j2z.size()) != L + 1) {
    throw std::invalid_argument("second-order tape does not match network");
  }
}

void check_grads(const Network& net, const OutputParamGradients& grads) {
  if (static_cast<int>(grads.delta.size()) != net.layer_count() + 1 ||
      static_cast<std::size_t>(grads.values.size()) != net.param_count()) {
    throw std::invalid_argument("parameter gradients do not match network");
  }
}

// k-th derivative of layer l's activation at z^l. Sigmoid derivatives are
// polynomials in s = y^l, so no exponentials are re-evaluated.
Vector slope(const Network& net, const ForwardTape& tape, int l, int order) {
  const Vector& y = tape.y[l];
  if (net.arch().activation(l) == Activation::Linear) {
    return Vector::Constant(y.size(), order == 1 ? 1.0 : 0.0);
  }
  const auto s = y.array();
  const Eigen::ArrayXd d1 = s * (1.0 - s);
  switch (order) {
    case 1:
      return d1.matrix();
    case 2:
      return (d1 * (1.0 - 2.0 * s)).matrix();
    default:
      return (d1 * (1.0 - 2.0 * s).square() - 2.0 * d1.square()).matrix();
  }
}

// Scales row j of m by v[j].
Matrix row_scaled(const Vector& v, const Matrix& m) { return v.asDiagonal() * m; }

}  // namespace

std::size_t weight_index(const Network& net, int layer, int j, int k) {
  return net.param_offset(layer) + static_cast<std::size_t>(j * net.weights(layer).cols() + k);
}

std::size_t bias_index(const Network& net, int layer, int j) {
  return net.param_offset(layer) + static_cast<std::size_t>(net.weights(layer).size() + j);
}

FirstOrderTape spatial_jacobian(const Network& net, const ForwardTape& tape) {
  check_tape(net, tape);
  const int L = net.layer_count();
  const auto n = static_cast<Eigen::Index>(net.input_dim());
  FirstOrderTape first;
  first.jz.resize(L + 1);
  first.jy.resize(L + 1);
  first.jy[0] = Matrix::Identity(n, n);
  for (int l = 1; l <= L; ++l) {
    first.jz[l] = net.weights(l).lazyProduct(first.jy[l - 1]);
    const Vector d1 = slope(net, tape, l, 1);
    first.jy[l] = row_scaled(d1, first.jz[l]);
  }
  return first;
}

SecondOrderTape spatial_second(const Network& net, const ForwardTape& tape,
                               const FirstOrderTape& first) {
  check_tape(net, tape);
  check_first(net, first);
  const int L = net.layer_count();
  const auto n = static_cast<Eigen::Index>(net.input_dim());
  SecondOrderTape second;
  second.j2z.resize(L + 1);
  second.j2y.resize(L + 1);
  second.j2y[0] = Matrix::Zero(n, n);
  for (int l = 1; l <= L; ++l) {
    // J2(z^1) = W^1 * 0 since the input layer is affine in x.
    second.j2z[l] = net.weights(l).lazyProduct(second.j2y[l - 1]);
    const Vector d1 = slope(net, tape, l, 1);
    const Vector d2 = slope(net, tape, l, 2);
    second.j2y[l] = row_scaled(d2, first.jz[l].cwiseAbs2()) + row_scaled(d1, second.j2z[l]);
  }
  return second;
}

OutputParamGradients output_param_grad(const Network& net, const ForwardTape& tape, int output) {
  check_tape(net, tape);
  if (output < 0 || output >= net.output_dim()) {
    throw std::invalid_argument("output index " + std::to_string(output) + " out of range");
  }
  const int L = net.layer_count();
  OutputParamGradients g;
  g.output = output;
  g.delta.resize(L + 1);
  g.upstream.resize(L + 1);
  g.upstream[L] = Vector::Unit(net.output_dim(), output);
  for (int l = L; l >= 1; --l) {
    if (l < L) g.upstream[l] = net.weights(l + 1).transpose() * g.delta[l + 1];
    const Vector d1 = slope(net, tape, l, 1);
    g.delta[l] = g.upstream[l].cwiseProduct(d1);
  }

  g.values.resize(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index pos = 0;
  for (int l = 1; l <= L; ++l) {
    const Vector& prev = tape.y[l - 1];
    for (Eigen::Index j = 0; j < g.delta[l].size(); ++j) {
      g.values.segment(pos, prev.size()) = g.delta[l][j] * prev;
      pos += prev.size();
    }
    g.values.segment(pos, g.delta[l].size()) = g.delta[l];
    pos += g.delta[l].size();
  }
  return g;
}

std::vector<Matrix> delta_jacobian(const Network& net, const ForwardTape& tape,
                                   const FirstOrderTape& first, const OutputParamGradients& grads) {
  check_tape(net, tape);
  check_first(net, first);
  check_grads(net, grads);
  const int L = net.layer_count();
  std::vector<Matrix> jdelta(L + 1);
  // d delta^l/dx_i = sigma'(z^l) (W^{l+1})^T d delta^{l+1}/dx_i
  //                + upstream^l sigma''(z^l) dz^l/dx_i
  for (int l = L; l >= 1; --l) {
    const Vector d1 = slope(net, tape, l, 1);
    const Vector d2 = slope(net, tape, l, 2);
    Matrix jd = row_scaled(grads.upstream[l].cwiseProduct(d2), first.jz[l]);
    if (l < L) jd += row_scaled(d1, net.weights(l + 1).transpose().lazyProduct(jdelta[l + 1]));
    jdelta[l] = std::move(jd);
  }
  return jdelta;
}

MixedParamGradients mixed_param_grad(const Network& net, const ForwardTape& tape,
                                     const FirstOrderTape& first,
                                     const OutputParamGradients& grads) {
  check_tape(net, tape);
  check_first(net, first);
  check_grads(net, grads);
  const int L = net.layer_count();
  const auto n = static_cast<Eigen::Index>(net.input_dim());

  MixedParamGradients mixed;
  mixed.output = grads.output;
  mixed.spatial_order = 1;
  mixed.delta_derivs = delta_jacobian(net, tape, first, grads);

  // d^2 y / dx_i dw^l_jk = dy^{l-1}_k/dx_i delta^l_j + y^{l-1}_k d delta^l_j/dx_i
  mixed.values.resize(n, static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index pos = 0;
  for (int l = 1; l <= L; ++l) {
    const Vector& prev = tape.y[l - 1];
    const Matrix& jprev = first.jy[l - 1];
    const Vector& delta = grads.delta[l];
    const Matrix& jd = mixed.delta_derivs[l];
    const Eigen::Index cols = prev.size();
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        mixed.values.row(i).segment(pos, cols) =
            (jprev.col(i) * delta[j] + prev * jd(j, i)).transpose();
      }
      pos += cols;
    }
    mixed.values.middleCols(pos, delta.size()) = jd.transpose();
    pos += delta.size();
  }
  return mixed;
}

std::vector<Matrix> delta_second(const Network& net, const ForwardTape& tape,
                                 const FirstOrderTape& first, const SecondOrderTape& second,
                                 const OutputParamGradients& grads,
                                 const std::vector<Matrix>& jdelta) {
  check_tape(net, tape);
  check_first(net, first);
  check_second(net, second);
  check_grads(net, grads);
  const int L = net.layer_count();
  if (static_cast<int>(jdelta.size()) != L + 1) {
    throw std::invalid_argument("delta_second needs first-order delta derivatives");
  }
  std::vector<Matrix> j2delta(L + 1);
  // With u = upstream^l, du = d u/dx_i, d2u = d^2 u/dx_i^2:
  // d^2 delta^l/dx_i^2 = sigma' d2u + 2 sigma'' du dz + u sigma''' dz^2 + u sigma'' d2z
  // (the printed recursion's last factor is dz; rederivation and the
  // finite-difference oracle both require d2z).
  for (int l = L; l >= 1; --l) {
    const Vector d1 = slope(net, tape, l, 1);
    const Vector d2 = slope(net, tape, l, 2);
    const Vector d3 = slope(net, tape, l, 3);
    const Vector& up = grads.upstream[l];
    const Matrix& jz = first.jz[l];
    Matrix j2d = row_scaled(up.cwiseProduct(d3), jz.cwiseAbs2()) +
                 row_scaled(up.cwiseProduct(d2), second.j2z[l]);
    if (l < L) {
      const Matrix& w_next = net.weights(l + 1);
      const Matrix dup = w_next.transpose().lazyProduct(jdelta[l + 1]);
      const Matrix d2up = w_next.transpose().lazyProduct(j2delta[l + 1]);
      const double cross = fault::second_order_sign_flip() ? -2.0 : 2.0;
      j2d += row_scaled(d1, d2up) + cross * row_scaled(d2, dup.cwiseProduct(jz));
    }
    j2delta[l] = std::move(j2d);
  }
  return j2delta;
}

MixedParamGradients second_mixed_param_grad(const Network& net, const ForwardTape& tape,
                                            const FirstOrderTape& first,
                                            const SecondOrderTape& second,
                                            const OutputParamGradients& grads,
                                            const MixedParamGradients& mixed) {
  check_tape(net, tape);
  check_first(net, first);
  check_second(net, second);
  check_grads(net, grads);
  if (mixed.spatial_order != 1 || static_cast<int>(mixed.delta_derivs.size()) != net.layer_count() + 1) {
    throw std::invalid_argument("second_mixed_param_grad needs first-order mixed gradients");
  }
  const int L = net.layer_count();
  const auto n = static_cast<Eigen::Index>(net.input_dim());

  MixedParamGradients out;
  out.output = grads.output;
  out.spatial_order = 2;
  out.delta_derivs = delta_second(net, tape, first, second, grads, mixed.delta_derivs);

  // d^3 y / dx_i^2 dw^l_jk = d2y^{l-1}_k delta_j + 2 dy^{l-1}_k d delta_j
  //                        + y^{l-1}_k d2 delta_j
  out.values.resize(n, static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index pos = 0;
  for (int l = 1; l <= L; ++l) {
    const Vector& prev = tape.y[l - 1];
    const Matrix& jprev = first.jy[l - 1];
    const Matrix& j2prev = second.j2y[l - 1];
    const Vector& delta = grads.delta[l];
    const Matrix& jd = mixed.delta_derivs[l];
    const Matrix& j2d = out.delta_derivs[l];
    const Eigen::Index cols = prev.size();
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        out.values.row(i).segment(pos, cols) =
            (j2prev.col(i) * delta[j] + 2.0 * jd(j, i) * jprev.col(i) + prev * j2d(j, i))
                .transpose();
      }
      pos += cols;
    }
    out.values.middleCols(pos, delta.size()) = j2d.transpose();
    pos += delta.size();
  }
  return out;
}

Vector combined_param_grad(const Network& net, const ForwardTape& tape,
                           const FirstOrderTape& first, const SecondOrderTape* second,
                           const OutputParamGradients& grads, const std::vector<Matrix>& jdelta,
                           const std::vector<Matrix>* j2delta, double c0, const Vector& c1,
                           double c2) {
  const int L = net.layer_count();
  const auto n = static_cast<Eigen::Index>(net.input_dim());
  if (c1.size() != n) throw std::invalid_argument("combined_param_grad: c1 has the wrong length");
  const bool with_second = c2 != 0.0;
  if (with_second && (second == nullptr || j2delta == nullptr)) {
    throw std::invalid_argument("combined_param_grad: second-order data required when c2 != 0");
  }
  Vector out(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index pos = 0;
  for (int l = 1; l <= L; ++l) {
    const Vector& prev = tape.y[l - 1];
    const Matrix& jprev = first.jy[l - 1];
    const Vector& delta = grads.delta[l];
    const Matrix& jd = jdelta[l];
    // Weight block = delta a^T + b y^T (+ 2 c2 J(delta) J(y)^T); bias = c0 delta + b.
    Vector a = c0 * prev + jprev * c1;
    Vector b = jd * c1;
    Matrix block;
    if (with_second) {
      a += c2 * second->j2y[l - 1].rowwise().sum();
      b += c2 * (*j2delta)[l].rowwise().sum();
      block = delta * a.transpose() + b * prev.transpose() + (2.0 * c2) * jd.lazyProduct(jprev.transpose());
    } else {
      block = delta * a.transpose() + b * prev.transpose();
    }
    const Eigen::Index rows = block.rows();
    const Eigen::Index cols = block.cols();
    for (Eigen::Index j = 0; j < rows; ++j) out.segment(pos + j * cols, cols) = block.row(j).transpose();
    pos += rows * cols;
    out.segment(pos, rows) = c0 * delta + b;
    pos += rows;
  }
  return out;
}

Vector data_fit_backprop(const Network& net, const ForwardTape& tape, const Vector& target) {
  check_tape(net, tape);
  if (target.size() != net.output_dim()) {
    throw std::invalid_argument("target has dimension " + std::to_string(target.size()) +
                                ", network output is " + std::to_string(net.output_dim()));
  }
  const int L = net.layer_count();
  std::vector<Vector> delta(L + 1);
  delta[L] = (tape.output() - target)
                 .cwiseProduct(slope(net, tape, L, 1));
  for (int l = L - 1; l >= 1; --l) {
    delta[l] = (net.weights(l + 1).transpose() * delta[l + 1])
                   .cwiseProduct(slope(net, tape, l, 1));
  }
  Vector grad(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index pos = 0;
  for (int l = 1; l <= L; ++l) {
    const Vector& prev = tape.y[l - 1];
    for (Eigen::Index j = 0; j < delta[l].size(); ++j) {
      grad.segment(pos, prev.size()) = delta[l][j] * prev;
      pos += prev.size();
    }
    grad.segment(pos, delta[l].size()) = delta[l];
    pos += delta[l].size();
  }
  return grad;
}

}  // namespace meshfree
