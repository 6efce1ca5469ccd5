// Variational weight posterior q(W) = prod_j N(m_j, diag(exp(log_s_j))) over
// the K class-label weight vectors, and the quantities derived from it.
#pragma once

#include "gpda/diffmath.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gpda {

inline constexpr const char* kMeanSegment = "gp.m";
inline constexpr const char* kLogVarSegment = "gp.log_s";

struct VariationalPosterior {
  Matrix m;      // K x d
  Matrix log_s;  // K x d, log of diag(S_j)

  Eigen::Index classes() const { return m.rows(); }
  Eigen::Index dim() const { return m.cols(); }

  /// Prior N(0, I): m = 0, S = I.
  static VariationalPosterior prior(Eigen::Index K, Eigen::Index d) {
    return {Matrix::Zero(K, d), Matrix::Zero(K, d)};
  }
  static VariationalPosterior from_params(const ParamVector& params) {
    return {params.matrix(kMeanSegment), params.matrix(kLogVarSegment)};
  }
  static void add_segments(ParamVector& params, std::size_t K, std::size_t d) {
    params.add_segment(kMeanSegment, K, d);
    params.add_segment(kLogVarSegment, K, d);
  }
  void store(ParamVector& params) const {
    params.set_matrix(kMeanSegment, m);
    params.set_matrix(kLogVarSegment, log_s);
  }
};

/// One draw of all class weight vectors, K x d.
struct WeightSample {
  Matrix W;
};

struct PosteriorMoments {
  Vector mu;
  Vector sigma;
};

/// KL(q || N(0, I)) summed over classes.
inline double kl(const VariationalPosterior& q) {
  const Matrix s = q.log_s.array().exp().matrix();
  return 0.5 * (s.sum() + q.m.squaredNorm() - q.log_s.sum() - double(q.m.size()));
}

inline WeightSample sample_weights(const VariationalPosterior& q, const Matrix& noise) {
  if (noise.rows() != q.classes() || noise.cols() != q.dim())
    throw std::invalid_argument("sample_weights: noise must be K x d");
  return {q.m + (0.5 * q.log_s.array()).exp().matrix().cwiseProduct(noise)};
}

// Keeps sigma differentiable at an all-zero feature row.
inline constexpr double kVarianceFloor = std::numeric_limits<double>::min();

inline PosteriorMoments moments(const VariationalPosterior& q, const Vector& phi) {
  if (phi.size() != q.dim())
    throw std::invalid_argument("moments: feature has dimension " + std::to_string(phi.size()) + ", expected " +
                                std::to_string(q.dim()));
  PosteriorMoments out;
  out.mu = q.m * phi;
  out.sigma = ((q.log_s.array().exp().matrix() * phi.array().square().matrix()).array() + kVarianceFloor).sqrt().matrix();
  return out;
}

inline double log_likelihood_softmax(const WeightSample& w, const Vector& phi, Eigen::Index y) {
  if (y < 0 || y >= w.W.rows())
    throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(w.W.rows()) + ")");
  if (phi.size() != w.W.cols()) throw std::invalid_argument("log_likelihood_softmax: feature dimension mismatch");
  const Vector f = w.W * phi;
  const double mx = f.maxCoeff();
  return f(y) - (mx + std::log((f.array() - mx).exp().sum()));
}

/// Index of the largest entry, lowest index on ties.
inline Eigen::Index argmax_lowest(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < v.size(); ++j)
    if (v(j) > v(best)) best = j;
  return best;
}

/// MAP class prediction: argmax_j mu_j.
inline Eigen::Index predict(const VariationalPosterior& q, const Vector& phi) {
  return argmax_lowest(moments(q, phi).mu);
}

namespace ops {

/// Differentiable KL of the posterior held in the tape's parameters.
inline Var kl(Var m, Var log_s) {
  const double d_total = double(m.value().size());
  Var trace = sum(exp(log_s));
  Var norm = sum(square(m));
  Var logdet = sum(log_s);
  return scale(add_scalar(sub(add(trace, norm), logdet), -d_total), 0.5);
}

/// Reparameterized draws for M noise blocks stacked as (M*K) x d.
inline Var sample_weights(Var m, Var log_s, const Matrix& stacked_noise) {
  const Eigen::Index K = m.rows();
  if (stacked_noise.cols() != m.cols() || stacked_noise.rows() % K != 0 || stacked_noise.rows() == 0)
    throw std::invalid_argument("sample_weights: noise must be (M*K) x d");
  const Eigen::Index M = stacked_noise.rows() / K;
  Var sd = exp(scale(log_s, 0.5));
  Var eps = m.tape->constant(stacked_noise);
  return add(tile_rows(m, M), mul(tile_rows(sd, M), eps));
}

/// Posterior means and standard deviations of f_j at each feature row.
/// Returns {mu, sigma}, both n x K.
inline std::pair<Var, Var> moments(Var m, Var log_s, Var phi) {
  Var mu = matmul_nt(phi, m);
  Var var = matmul_nt(square(phi), exp(log_s));
  return {mu, sqrt(add_scalar(var, kVarianceFloor))};
}

}  // namespace ops

}  // namespace gpda
