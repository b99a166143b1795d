#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace meshfree {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { Sigmoid, Linear };

std::string_view to_string(Activation kind);
Activation activation_from_string(std::string_view name);

/// Elementwise derivative of the given order (0 = the activation itself).
/// Orders 0..3 are supported; anything else throws std::invalid_argument.
double activation_derivative(Activation kind, int order, double z);
Vector activation_derivative(Activation kind, int order, const Vector& z);

/// Layer sizes of a fully connected network. Layer 0 is the input, layer L
/// the output; every layer in between is hidden and uses hidden_activation.
struct Architecture {
  int input_dim = 1;
  std::vector<int> hidden_sizes;
  int output_dim = 1;
  Activation hidden_activation = Activation::Sigmoid;
  Activation output_activation = Activation::Linear;

  /// Throws std::invalid_argument unless there is at least one hidden layer
  /// and all sizes are positive.
  void validate() const;

  int layer_count() const { return static_cast<int>(hidden_sizes.size()) + 1; }
  /// Size of layer l for l in [0, L].
  int layer_size(int l) const;
  Activation activation(int l) const;

  bool operator==(const Architecture&) const = default;
};

std::size_t param_count(const Architecture& arch);

/// Weighted inputs z^l and outputs y^l of one forward pass. Index 0 holds
/// the input (z[0] is left empty, y[0] = x).
struct ForwardTape {
  std::vector<Vector> z;
  std::vector<Vector> y;

  const Vector& input() const { return y.front(); }
  const Vector& output() const { return y.back(); }
  int layer_count() const { return static_cast<int>(y.size()) - 1; }
};

class Network {
 public:
  Network() = default;
  /// Zero weights and biases.
  explicit Network(Architecture arch);

  const Architecture& arch() const { return arch_; }
  int layer_count() const { return arch_.layer_count(); }
  int input_dim() const { return arch_.input_dim; }
  int output_dim() const { return arch_.output_dim; }

  /// Weights and biases of layer l, 1 <= l <= L. W^l is size_l x size_{l-1}.
  const Matrix& weights(int l) const { return weights_.at(l - 1); }
  Matrix& weights(int l) { return weights_.at(l - 1); }
  const Vector& biases(int l) const { return biases_.at(l - 1); }
  Vector& biases(int l) { return biases_.at(l - 1); }

  std::size_t param_count() const { return meshfree::param_count(arch_); }

  /// Layer-major; within a layer the weights in row-major order, then biases.
  Vector flatten() const;
  void unflatten(const Vector& params);
  /// Offset of layer l's first weight inside the flat parameter vector.
  std::size_t param_offset(int l) const;

  ForwardTape feedforward(const Vector& x) const;
  Vector evaluate(const Vector& x) const { return feedforward(x).output(); }

  bool all_finite() const;

 private:
  Architecture arch_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// The stream is drawn layer by layer in flattening order, so equal seeds
/// give bit-identical networks.
Network init_network(const Architecture& arch, std::uint64_t seed);

}  // namespace meshfree
