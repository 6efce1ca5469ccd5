// Comparison baselines: source-only training and maximum classifier
// discrepancy (two softmax heads over a shared feature net, trained by
// three-step coordinate descent).
#pragma once

#include "gpda/checkpoint.hpp"
#include "gpda/trainer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda {

// ---------------------------------------------------------------------------
// Source only

/// GPDA architecture trained with lambda = 0: the max-separation term is
/// still evaluated and logged but never optimized against.
inline GpdaResult train_source_only(TrainConfig config, const DomainDataset& data) {
  config.lambda = 0.0;
  return train(config, data);
}

// ---------------------------------------------------------------------------
// MCDA

/// Per-sample classifier discrepancy ||p - p'||_1 / K.
inline double mcda_discrepancy(const Vector& p, const Vector& p_prime) {
  auto check = [](const Vector& v) {
    if ((v.array() < 0.0).any() || !v.allFinite() || std::abs(v.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("mcda_discrepancy: not a probability vector");
  };
  if (p.size() != p_prime.size() || p.size() == 0) throw std::invalid_argument("mcda_discrepancy: size mismatch");
  check(p);
  check(p_prime);
  return (p - p_prime).cwiseAbs().sum() / double(p.size());
}

inline constexpr const char* kHeadPrefix = "head.";

struct McdaModel {
  FeatureNet net;
  ParamVector params;  // "net.*" then "head.h.*", "head.g.*"
  int K = 0;
  int n = 4;           // step-3 repetitions

  static std::string head_weight(int head) { return head == 0 ? "head.h.W" : "head.g.W"; }
  static std::string head_bias(int head) { return head == 0 ? "head.h.b" : "head.g.b"; }
};

inline McdaModel make_mcda_model(const TrainConfig& config) {
  config.validate();
  McdaModel model{config.feature_net(), {}, config.K, config.mcda_n};
  model.net.add_segments(model.params);
  for (int h = 0; h < 2; ++h) {
    model.params.add_segment(McdaModel::head_weight(h), config.feature_dim, std::size_t(config.K));
    model.params.add_segment(McdaModel::head_bias(h), 1, std::size_t(config.K));
  }
  auto rng = make_stream(config.seed, kInitStream);
  model.net.initialize(model.params, rng);
  const double a = std::sqrt(6.0 / double(config.feature_dim + std::size_t(config.K)));
  std::uniform_real_distribution<double> dist(-a, a);
  for (int h = 0; h < 2; ++h)
    for (double& w : model.params.slice(McdaModel::head_weight(h))) w = dist(rng);
  return model;
}

/// Class probabilities of head `head` (0 = h, the evaluated classifier).
inline Matrix mcda_probabilities(const McdaModel& model, const Matrix& X, int head = 0) {
  Matrix logits = features(model.net, model.params, X) * model.params.matrix(McdaModel::head_weight(head));
  logits.rowwise() += model.params.matrix(McdaModel::head_bias(head)).row(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

inline double evaluate(const McdaModel& model, const LabeledSet& set) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty set");
  const Matrix p = mcda_probabilities(model, set.X);
  std::vector<int> pred(std::size_t(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) pred[std::size_t(i)] = int(argmax_lowest(p.row(i).transpose()));
  return accuracy(pred, set.y);
}

namespace ops {

struct HeadOutputs {
  Var logits;
  Var lse;  // n x 1
};

inline HeadOutputs head_forward(Tape& tape, Var phi, int head) {
  Var logits = add_row(matmul(phi, tape.param(McdaModel::head_weight(head))), tape.param(McdaModel::head_bias(head)));
  return {logits, group_logsumexp(logits, logits.cols())};
}

/// Mean cross-entropy -log p(y) of one head.
inline Var cross_entropy(const HeadOutputs& out, const std::vector<int>& y) {
  const Eigen::Index B = out.logits.rows();
  check_labels(y, out.logits.cols());
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(B)), cols(static_cast<std::size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) {
    rows[std::size_t(i)] = i;
    cols[std::size_t(i)] = y[std::size_t(i)];
  }
  Var picked = gather(out.logits, std::move(rows), std::move(cols));
  return scale(sub(sum(out.lse), sum(picked)), 1.0 / double(B));
}

inline Var softmax(Tape& tape, const HeadOutputs& out) {
  Var ones = tape.constant(Matrix::Ones(1, out.logits.cols()));
  return exp(sub(out.logits, matmul(out.lse, ones)));
}

/// L_S: summed mean cross-entropies of both heads on the source batch.
inline Var mcda_source_loss(Tape& tape, const FeatureNet& net, const LabeledSet& source) {
  if (source.empty()) throw std::invalid_argument("mcda: empty source batch");
  Var phi = features(tape, net, source.X);
  return add(cross_entropy(head_forward(tape, phi, 0), source.y), cross_entropy(head_forward(tape, phi, 1), source.y));
}

/// L_adv: mean normalized L1 distance between the heads' target predictions.
inline Var mcda_adversarial_loss(Tape& tape, const FeatureNet& net, const Matrix& target) {
  if (target.rows() == 0) throw std::invalid_argument("mcda: empty target batch");
  Var phi = features(tape, net, target);
  Var p = softmax(tape, head_forward(tape, phi, 0));
  Var q = softmax(tape, head_forward(tape, phi, 1));
  return scale(sum(abs(sub(p, q))), 1.0 / double(target.rows() * p.cols()));
}

}  // namespace ops

struct McdaResult {
  McdaModel model;
  TrainHistory history;
};

/// Observer for each completed MCDA step: (round, step 1..3, params after the step).
using McdaStepHook = std::function<void(std::size_t, int, const ParamVector&)>;

/// Per round on fresh mini-batches:
///   1. minimize L_S over (G, h, h')
///   2. fix G, minimize L_S - L_adv over (h, h')
///   3. fix (h, h'), minimize L_adv over G, repeated n times on the same batch.
/// Each step keeps its own Adam state. With source_only the loop stops after
/// step 1, giving a plain softmax source-only model.
inline McdaResult train_mcda(const TrainConfig& config, const DomainDataset& data, bool source_only = false,
                             const McdaStepHook& hook = {}) {
  check_domains(config, data);
  McdaResult out{make_mcda_model(config), {}};
  McdaModel& model = out.model;

  EpochSampler src_sampler(data.source.size(), make_stream(config.seed, kSourceBatchStream));
  EpochSampler tgt_sampler(std::size_t(data.target_train.rows()), make_stream(config.seed, kTargetBatchStream));
  BlockAdam all_opt(model.params, "", adam_settings(config));
  BlockAdam head_opt(model.params, kHeadPrefix, adam_settings(config));
  BlockAdam net_opt(model.params, model.net.prefix, adam_settings(config));

  for (std::size_t round = 1; round <= config.steps; ++round) {
    const LabeledSet src = data.source.rows(src_sampler.next(config.batch_source));
    const Matrix tgt = select_rows(data.target_train, tgt_sampler.next(config.batch_target));
    HistoryRecord rec;
    rec.round = round;
    try {
      {
        Tape tape(&model.params);
        Var ls = ops::mcda_source_loss(tape, model.net, src);
        tape.backward(ls);
        all_opt.step(model.params, tape.gradient());
        if (hook) hook(round, 1, model.params);
      }
      {
        Tape tape(&model.params);
        Var ls = ops::mcda_source_loss(tape, model.net, src);
        Var adv = ops::mcda_adversarial_loss(tape, model.net, tgt);
        Var obj = ops::sub(ls, adv);
        rec.losses = {-ls.scalar(), 0.0, adv.scalar(), ls.scalar(), obj.scalar()};
        if (!source_only) {
          tape.backward(obj);
          head_opt.step(model.params, tape.gradient());
          if (hook) hook(round, 2, model.params);
        }
      }
      for (int r = 0; r < model.n && !source_only; ++r) {
        Tape tape(&model.params);
        Var adv = ops::mcda_adversarial_loss(tape, model.net, tgt);
        tape.backward(adv);
        net_opt.step(model.params, tape.gradient());
        if (hook) hook(round, 3, model.params);
      }
    } catch (const NonFiniteError& e) {
      throw TrainingDiverged(round, e.what());
    }
    if (!std::isfinite(rec.losses.total_model) || !model.params.all_finite())
      throw TrainingDiverged(round, "non-finite loss or parameters");
    if (eval_due(config, round)) {
      rec.src_acc = evaluate(model, data.source);
      if (!data.target_test.empty()) rec.tgt_acc = evaluate(model, data.target_test);
    }
    out.history.records.push_back(rec);
  }
  return out;
}

/// Softmax-head source-only variant (MCDA step 1 alone).
inline McdaResult train_source_only_softmax(const TrainConfig& config, const DomainDataset& data) {
  return train_mcda(config, data, true);
}

struct LoadedMcda {
  TrainConfig config;
  McdaModel model;
};

inline void save_mcda_checkpoint(const McdaModel& model, const TrainConfig& config, const std::string& path) {
  save_checkpoint_file(path, kMcdaMagic, nlohmann::json(config), model.params);
}

inline LoadedMcda load_mcda_checkpoint(const std::string& path) {
  auto c = load_checkpoint_file(path, kMcdaMagic);
  LoadedMcda out;
  c.config.get_to(out.config);
  out.model = make_mcda_model(out.config);
  if (!out.model.params.same_layout(c.params)) throw CheckpointFormatError("checkpoint layout does not match its config");
  out.model.params = std::move(c.params);
  return out;
}

}  // namespace gpda
