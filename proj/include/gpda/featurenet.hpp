// Composite deep feature map: raw input -> d-dimensional kernel feature.
//
// The GP kernel is the inner product of these features, so the network's
// weights are the kernel parameters.
#pragma once

#include "gpda/diffmath.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda {

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

/// Architecture of the feature network. Weights live in a ParamVector under
/// segments "<prefix>W<l>" (in x out) and "<prefix>b<l>" (1 x out).
struct FeatureNet {
  std::vector<std::size_t> sizes;  // [p, h_1, ..., h_L, d]
  Activation activation = Activation::tanh;
  std::string prefix = "net.";

  std::size_t input_dim() const { return sizes.front(); }
  std::size_t output_dim() const { return sizes.back(); }
  std::size_t layers() const { return sizes.size() - 1; }

  std::string weight_name(std::size_t l) const { return prefix + "W" + std::to_string(l); }
  std::string bias_name(std::size_t l) const { return prefix + "b" + std::to_string(l); }

  void validate() const {
    if (sizes.size() < 2) throw std::invalid_argument("feature net needs at least input and output sizes");
    for (auto s : sizes)
      if (s == 0) throw std::invalid_argument("feature net layer sizes must be positive");
  }

  /// Appends this net's segments to params, zero-filled.
  void add_segments(ParamVector& params) const {
    validate();
    for (std::size_t l = 0; l < layers(); ++l) {
      params.add_segment(weight_name(l), sizes[l], sizes[l + 1]);
      params.add_segment(bias_name(l), 1, sizes[l + 1]);
    }
  }

  /// Glorot-uniform weights, zero biases.
  template <class Rng>
  void initialize(ParamVector& params, Rng& rng) const {
    for (std::size_t l = 0; l < layers(); ++l) {
      const double a = std::sqrt(6.0 / double(sizes[l] + sizes[l + 1]));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& w : params.slice(weight_name(l))) w = dist(rng);
      for (double& b : params.slice(bias_name(l))) b = 0.0;
    }
  }
};

namespace detail {
inline void check_input(const FeatureNet& net, const Matrix& X) {
  if (std::size_t(X.cols()) != net.input_dim())
    throw std::invalid_argument("feature net expects inputs of dimension " + std::to_string(net.input_dim()) +
                                ", got " + std::to_string(X.cols()));
}
}  // namespace detail

/// Differentiable features: row i is psi(X.row(i)).
inline Var features(Tape& tape, const FeatureNet& net, const Matrix& X) {
  detail::check_input(net, X);
  Var h = tape.constant(X);
  for (std::size_t l = 0; l < net.layers(); ++l) {
    h = ops::add_row(ops::matmul(h, tape.param(net.weight_name(l))), tape.param(net.bias_name(l)));
    if (l + 1 < net.layers()) h = net.activation == Activation::tanh ? ops::tanh(h) : ops::relu(h);
  }
  return h;
}

/// Plain forward pass, n x d.
inline Matrix features(const FeatureNet& net, const ParamVector& params, const Matrix& X) {
  detail::check_input(net, X);
  Matrix h = X;
  for (std::size_t l = 0; l < net.layers(); ++l) {
    Matrix z = h * params.matrix(net.weight_name(l));
    z.rowwise() += params.matrix(net.bias_name(l)).row(0);
    if (l + 1 < net.layers())
      h = net.activation == Activation::tanh ? Matrix(z.array().tanh().matrix()) : Matrix(z.cwiseMax(0.0));
    else
      h = std::move(z);
  }
  return h;
}

/// Deep-kernel Gram matrix G_ij = psi(x_i) . psi(x_j).
inline Matrix kernel_gram(const FeatureNet& net, const ParamVector& params, const Matrix& X) {
  const Matrix phi = features(net, params, X);
  Matrix g = phi * phi.transpose();
  // exact symmetry regardless of summation order
  return 0.5 * (g + g.transpose());
}

}  // namespace gpda
