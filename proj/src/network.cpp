#include "meshfree/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace meshfree {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Uniform on [0, 1) from the top 53 bits, independent of the standard
// library's distribution implementation.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Linear:
      return "linear";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view name) {
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "linear") return Activation::Linear;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

double activation_derivative(Activation kind, int order, double z) {
  if (order < 0 || order > 3) {
    throw std::invalid_argument("activation derivative order must be in 0..3, got " +
                                std::to_string(order));
  }
  if (kind == Activation::Linear) {
    if (order == 0) return z;
    return order == 1 ? 1.0 : 0.0;
  }
  // s' = s(1-s), s'' = s'(1-2s), s''' = s''(1-2s) - 2 s'^2
  const double s = sigmoid(z);
  const double d1 = s * (1.0 - s);
  switch (order) {
    case 0:
      return s;
    case 1:
      return d1;
    case 2:
      return d1 * (1.0 - 2.0 * s);
    default:
      return d1 * (1.0 - 2.0 * s) * (1.0 - 2.0 * s) - 2.0 * d1 * d1;
  }
}

Vector activation_derivative(Activation kind, int order, const Vector& z) {
  Vector out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    out[i] = activation_derivative(kind, order, z[i]);
  }
  return out;
}

void Architecture::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw std::invalid_argument("architecture input/output dimensions must be >= 1");
  }
  if (hidden_sizes.empty()) {
    throw std::invalid_argument("architecture needs at least one hidden layer");
  }
  for (int s : hidden_sizes) {
    if (s < 1) throw std::invalid_argument("hidden layer sizes must be >= 1");
  }
}

int Architecture::layer_size(int l) const {
  if (l == 0) return input_dim;
  if (l == layer_count()) return output_dim;
  return hidden_sizes.at(l - 1);
}

Activation Architecture::activation(int l) const {
  return l == layer_count() ? output_activation : hidden_activation;
}

std::size_t param_count(const Architecture& arch) {
  arch.validate();
  std::size_t count = 0;
  for (int l = 1; l <= arch.layer_count(); ++l) {
    const auto rows = static_cast<std::size_t>(arch.layer_size(l));
    const auto cols = static_cast<std::size_t>(arch.layer_size(l - 1));
    count += rows * cols + rows;
  }
  return count;
}

Network::Network(Architecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  for (int l = 1; l <= arch_.layer_count(); ++l) {
    weights_.push_back(Matrix::Zero(arch_.layer_size(l), arch_.layer_size(l - 1)));
    biases_.push_back(Vector::Zero(arch_.layer_size(l)));
  }
}

std::size_t Network::param_offset(int l) const {
  std::size_t offset = 0;
  for (int k = 1; k < l; ++k) {
    offset += static_cast<std::size_t>(weights(k).size() + biases(k).size());
  }
  return offset;
}

Vector Network::flatten() const {
  Vector flat(static_cast<Eigen::Index>(param_count()));
  Eigen::Index pos = 0;
  for (int l = 1; l <= layer_count(); ++l) {
    const Matrix& w = weights(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat[pos++] = w(r, c);
    }
    flat.segment(pos, biases(l).size()) = biases(l);
    pos += biases(l).size();
  }
  return flat;
}

void Network::unflatten(const Vector& params) {
  if (static_cast<std::size_t>(params.size()) != param_count()) {
    throw std::invalid_argument("parameter vector has length " + std::to_string(params.size()) +
                                ", expected " + std::to_string(param_count()));
  }
  Eigen::Index pos = 0;
  for (int l = 1; l <= layer_count(); ++l) {
    Matrix& w = weights(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = params[pos++];
    }
    biases(l) = params.segment(pos, biases(l).size());
    pos += biases(l).size();
  }
}

ForwardTape Network::feedforward(const Vector& x) const {
  if (x.size() != arch_.input_dim) {
    throw std::invalid_argument("feedforward: input has dimension " + std::to_string(x.size()) +
                                ", network expects " + std::to_string(arch_.input_dim));
  }
  const int L = layer_count();
  ForwardTape tape;
  tape.z.resize(L + 1);
  tape.y.resize(L + 1);
  tape.y[0] = x;
  for (int l = 1; l <= L; ++l) {
    tape.z[l] = weights(l) * tape.y[l - 1] + biases(l);
    tape.y[l] = activation_derivative(arch_.activation(l), 0, tape.z[l]);
  }
  return tape;
}

bool Network::all_finite() const {
  for (int l = 1; l <= layer_count(); ++l) {
    if (!weights(l).allFinite() || !biases(l).allFinite()) return false;
  }
  return true;
}

Network init_network(const Architecture& arch, std::uint64_t seed) {
  Network net(arch);
  std::mt19937_64 rng(seed);
  for (int l = 1; l <= net.layer_count(); ++l) {
    Matrix& w = net.weights(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = limit * (2.0 * unit_uniform(rng) - 1.0);
      }
    }
  }
  return net;
}

}  // namespace meshfree
