#pragma once

// Spatial and parameter derivatives of a feedforward network output.
//
// All routines consume tapes from a single forward pass; none of them takes
// the input point, so the forward data is reused rather than recomputed.
// Layer indices follow the network: slot 0 is the input layer.
//
// Only non-mixed second spatial derivatives d^2/dx_i^2 are provided.

#include "meshfree/network.hpp"

namespace meshfree {

/// J(z^l) and J(y^l), each size_l x N. jy[0] is the identity, jz[0] empty.
struct FirstOrderTape {
  std::vector<Matrix> jz;
  std::vector<Matrix> jy;

  /// Row m is the spatial gradient of output m.
  const Matrix& output() const { return jy.back(); }
};

/// Non-mixed second partials J2(z^l), J2(y^l); entry (j, i) = d^2/dx_i^2.
struct SecondOrderTape {
  std::vector<Matrix> j2z;
  std::vector<Matrix> j2y;

  const Matrix& output() const { return j2y.back(); }
};

/// dy^L_m / dp for all parameters p, in flattening order.
struct OutputParamGradients {
  int output = 0;
  /// delta^l = dy^L_m / dz^l, slot 0 unused.
  std::vector<Vector> delta;
  /// (W^{l+1})^T delta^{l+1}, i.e. delta^l before the activation factor;
  /// for l = L this is the unit vector selecting output m.
  std::vector<Vector> upstream;
  Vector values;
};

/// d/dx_i (spatial_order 1) or d^2/dx_i^2 (spatial_order 2) of dy^L_m/dp.
/// values is N x param_count; delta_derivs[l] is size_l x N.
struct MixedParamGradients {
  int output = 0;
  int spatial_order = 1;
  std::vector<Matrix> delta_derivs;
  Matrix values;
};

FirstOrderTape spatial_jacobian(const Network& net, const ForwardTape& tape);

SecondOrderTape spatial_second(const Network& net, const ForwardTape& tape,
                               const FirstOrderTape& first);

/// Backpropagation with the identity as cost: delta^L is sigma'_L(z^L) masked
/// to output m, zero elsewhere.
OutputParamGradients output_param_grad(const Network& net, const ForwardTape& tape, int output);

MixedParamGradients mixed_param_grad(const Network& net, const ForwardTape& tape,
                                     const FirstOrderTape& first,
                                     const OutputParamGradients& grads);

MixedParamGradients second_mixed_param_grad(const Network& net, const ForwardTape& tape,
                                            const FirstOrderTape& first,
                                            const SecondOrderTape& second,
                                            const OutputParamGradients& grads,
                                            const MixedParamGradients& mixed);

/// d delta^l / dx_i for every layer (size_l x N), slot 0 unused.
std::vector<Matrix> delta_jacobian(const Network& net, const ForwardTape& tape,
                                   const FirstOrderTape& first, const OutputParamGradients& grads);

/// d^2 delta^l / dx_i^2 for every layer, from the first-order delta derivatives.
std::vector<Matrix> delta_second(const Network& net, const ForwardTape& tape,
                                 const FirstOrderTape& first, const SecondOrderTape& second,
                                 const OutputParamGradients& grads,
                                 const std::vector<Matrix>& jdelta);

/// c0 dy/dp + sum_i c1_i d^2y/dx_i dp + c2 sum_i d^3y/dx_i^2 dp without
/// forming the N x P mixed matrices. second and j2delta may be null when
/// c2 == 0.
Vector combined_param_grad(const Network& net, const ForwardTape& tape,
                           const FirstOrderTape& first, const SecondOrderTape* second,
                           const OutputParamGradients& grads, const std::vector<Matrix>& jdelta,
                           const std::vector<Matrix>* j2delta, double c0, const Vector& c1,
                           double c2);

/// Gradient of 0.5 * |y^L - target|^2 with respect to all parameters.
Vector data_fit_backprop(const Network& net, const ForwardTape& tape, const Vector& target);

/// Flat index of weight w^l_{jk} and bias b^l_j.
std::size_t weight_index(const Network& net, int layer, int j, int k);
std::size_t bias_index(const Network& net, int layer, int j);

namespace fault {
/// Flips the sign of the cross term 2 sigma'' du dz in delta_second. Exists
/// only so the gradient check can prove it notices a broken third-order
/// chain; never enable outside that self test.
void set_second_order_sign_flip(bool enabled);
bool second_order_sign_flip();
}  // namespace fault

}  // namespace meshfree
