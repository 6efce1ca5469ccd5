// Training losses: the Monte-Carlo log-likelihood, the KL term, the posterior
// max-separation hinge, and the two alternating composite objectives.
#pragma once

#include "gpda/diffmath.hpp"
#include "gpda/featurenet.hpp"
#include "gpda/gp_head.hpp"
#include "gpda/labeled.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda {

/// M standard-normal weight-noise blocks stacked as (M*K) x d.
struct WeightNoise {
  Eigen::Index draws = 0;
  Matrix stacked;
};

template <class Rng>
WeightNoise draw_weight_noise(Rng& rng, Eigen::Index M, Eigen::Index K, Eigen::Index d) {
  if (M < 1) throw std::invalid_argument("need at least one posterior draw");
  std::normal_distribution<double> normal(0.0, 1.0);
  WeightNoise n{M, Matrix(M * K, d)};
  for (Eigen::Index i = 0; i < n.stacked.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) n.stacked(i, j) = normal(rng);
  return n;
}

struct LossWeights {
  double lambda = 50.0;
  double alpha = 2.0;
  double margin = 1.0;
};

struct LossBreakdown {
  double ll = 0;
  double kl = 0;
  double ms = 0;
  double total_inference = 0;
  double total_model = 0;
};

/// Per-sample hinge (max_{j != j*} mu_j - max_j mu_j + margin + alpha * max_j sigma_j)_+.
inline double ms_term(const Vector& mu, const Vector& sigma, double alpha, double margin) {
  if (mu.size() < 2 || mu.size() != sigma.size()) throw std::invalid_argument("ms_term needs K >= 2 matching moments");
  const Eigen::Index top = argmax_lowest(mu);
  double runner = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < mu.size(); ++j)
    if (j != top) runner = std::max(runner, mu(j));
  return std::max(0.0, runner - mu(top) + margin + alpha * sigma.maxCoeff());
}

namespace ops {

inline void check_labels(const std::vector<int>& y, Eigen::Index K) {
  for (int label : y)
    if (label < 0 || label >= K)
      throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(K) + ")");
}

/// LL from precomputed source features phi (B x d).
inline Var ll_from_features(Var m, Var log_s, Var phi, const std::vector<int>& y, const WeightNoise& noise,
                            double n_source) {
  const Eigen::Index B = phi.rows(), K = m.rows(), M = noise.draws;
  if (B == 0) throw std::invalid_argument("ll_estimate: empty source batch");
  if (Eigen::Index(y.size()) != B) throw std::invalid_argument("ll_estimate: label count mismatch");
  if (M < 1 || noise.stacked.rows() != M * K) throw std::invalid_argument("ll_estimate: noise must hold M*K rows");
  check_labels(y, K);
  Var W = sample_weights(m, log_s, noise.stacked);
  Var logits = matmul_nt(phi, W);  // B x (M*K), column block per draw
  Var lse = group_logsumexp(logits, K);
  std::vector<Eigen::Index> rows, cols;
  rows.reserve(std::size_t(B * M));
  cols.reserve(std::size_t(B * M));
  for (Eigen::Index i = 0; i < B; ++i)
    for (Eigen::Index s = 0; s < M; ++s) {
      rows.push_back(i);
      cols.push_back(s * K + y[std::size_t(i)]);
    }
  Var picked = gather(logits, std::move(rows), std::move(cols));
  return scale(sub(sum(picked), sum(lse)), n_source / double(B) / double(M));
}

/// MS from precomputed target features phi (B x d).
inline Var ms_from_features(Var m, Var log_s, Var phi, double alpha, double margin) {
  const Eigen::Index B = phi.rows();
  if (B == 0) throw std::invalid_argument("ms_loss: empty target batch");
  if (alpha < 0) throw std::invalid_argument("ms_loss: alpha must be nonnegative");
  if (m.rows() < 2) throw std::invalid_argument("ms_loss needs at least two classes");
  auto [mu, sigma] = moments(m, log_s, phi);
  std::vector<Eigen::Index> top_idx;
  Var top = row_max(mu, &top_idx);
  Var runner = row_max(mu, nullptr, &top_idx);
  Var widest = row_max(sigma);
  Var slack = add_scalar(add(sub(runner, top), scale(widest, alpha)), margin);
  return scale(sum(hinge(slack)), 1.0 / double(B));
}

struct CompositeTerms {
  Var ll, kl, ms, total_inference, total_model;
};

/// Builds every term on one tape; backward from total_inference (variational
/// step) or total_model (feature-net step).
inline CompositeTerms composite(Tape& tape, const FeatureNet& net, const LabeledSet& source, const Matrix& target,
                                const WeightNoise& noise, double n_source, const LossWeights& w) {
  Var m = tape.param(kMeanSegment);
  Var log_s = tape.param(kLogVarSegment);
  Var ll = ll_from_features(m, log_s, features(tape, net, source.X), source.y, noise, n_source);
  Var k = kl(m, log_s);
  Var ms = ms_from_features(m, log_s, features(tape, net, target), w.alpha, w.margin);
  Var inference = sub(k, ll);
  Var model = add(inference, scale(ms, w.lambda));
  return {ll, k, ms, inference, model};
}

}  // namespace ops

/// Stochastic log-likelihood estimate (scaled to the full source size).
inline double ll_estimate(const FeatureNet& net, const ParamVector& params, const LabeledSet& source,
                          const WeightNoise& noise, double n_source) {
  Tape tape(&params);
  Var phi = features(tape, net, source.X);
  return ops::ll_from_features(tape.param(kMeanSegment), tape.param(kLogVarSegment), phi, source.y, noise, n_source)
      .scalar();
}

inline double ms_loss(const FeatureNet& net, const ParamVector& params, const Matrix& target, double alpha,
                      double margin) {
  Tape tape(&params);
  Var phi = features(tape, net, target);
  return ops::ms_from_features(tape.param(kMeanSegment), tape.param(kLogVarSegment), phi, alpha, margin).scalar();
}

inline LossBreakdown composite_losses(const FeatureNet& net, const ParamVector& params, const LabeledSet& source,
                                      const Matrix& target, const WeightNoise& noise, double n_source,
                                      const LossWeights& w) {
  Tape tape(&params);
  auto t = ops::composite(tape, net, source, target, noise, n_source, w);
  return {t.ll.scalar(), t.kl.scalar(), t.ms.scalar(), t.total_inference.scalar(), t.total_model.scalar()};
}

}  // namespace gpda
