// Alternating optimization of the variational posterior and the feature
// network, with Adam, epoch-based mini-batch sampling, evaluation, and
// training history.
#pragma once

#include "gpda/checkpoint.hpp"
#include "gpda/datagen.hpp"
#include "gpda/diffmath.hpp"
#include "gpda/featurenet.hpp"
#include "gpda/gp_head.hpp"
#include "gpda/objectives.hpp"
#include "gpda/uncertainty.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda {

struct TrainConfig {
  int K = 2;
  std::size_t input_dim = 2;
  std::size_t feature_dim = 16;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;

  double lambda = 50.0;
  double alpha = 2.0;
  double margin = 1.0;
  int M = 50;
  std::size_t batch_source = 32;
  std::size_t batch_target = 32;

  double lr = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  std::size_t steps = 2000;
  std::uint64_t seed = 1;
  BayesErrorMode bayes_error_mode = BayesErrorMode::as_written;

  int inference_repeats = 1;  // variational-step updates per round
  int model_repeats = 1;      // feature-net updates per round
  int mcda_n = 4;             // MCDA step-3 repetitions
  std::size_t eval_every = 0;  // 0: accuracies only on the final round

  FeatureNet feature_net() const {
    FeatureNet net;
    net.sizes.push_back(input_dim);
    net.sizes.insert(net.sizes.end(), hidden.begin(), hidden.end());
    net.sizes.push_back(feature_dim);
    net.activation = activation;
    return net;
  }
  LossWeights loss_weights() const { return {lambda, alpha, margin}; }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid config: " + what); };
    if (K < 2) fail("K must be >= 2");
    if (input_dim < 1 || feature_dim < 1) fail("dimensions must be positive");
    for (auto h : hidden)
      if (h < 1) fail("hidden widths must be positive");
    if (!(lambda >= 0) || !(alpha >= 0) || !(lr >= 0) || !(adam_epsilon >= 0)) fail("rates and weights must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("Adam betas must lie in [0, 1)");
    if (!std::isfinite(margin)) fail("margin must be finite");
    if (M < 1) fail("M must be >= 1");
    if (batch_source < 1 || batch_target < 1) fail("batch sizes must be >= 1");
    if (inference_repeats < 1 || model_repeats < 1) fail("step repeat counts must be >= 1");
    if (mcda_n < 0) fail("mcda_n must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"K", c.K},
                     {"input_dim", c.input_dim},
                     {"feature_dim", c.feature_dim},
                     {"hidden", c.hidden},
                     {"activation", to_string(c.activation)},
                     {"lambda", c.lambda},
                     {"alpha", c.alpha},
                     {"margin", c.margin},
                     {"M", c.M},
                     {"batch_source", c.batch_source},
                     {"batch_target", c.batch_target},
                     {"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_epsilon", c.adam_epsilon},
                     {"steps", c.steps},
                     {"seed", c.seed},
                     {"bayes_error_mode", to_string(c.bayes_error_mode)},
                     {"inference_repeats", c.inference_repeats},
                     {"model_repeats", c.model_repeats},
                     {"mcda_n", c.mcda_n},
                     {"eval_every", c.eval_every}};
}

/// Missing keys keep their current values, so a partial file overrides defaults.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("K", c.K);
  get("input_dim", c.input_dim);
  get("feature_dim", c.feature_dim);
  get("hidden", c.hidden);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  get("lambda", c.lambda);
  get("alpha", c.alpha);
  get("margin", c.margin);
  get("M", c.M);
  get("batch_source", c.batch_source);
  get("batch_target", c.batch_target);
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_epsilon", c.adam_epsilon);
  get("steps", c.steps);
  get("seed", c.seed);
  if (j.contains("bayes_error_mode"))
    c.bayes_error_mode = bayes_mode_from_string(j.at("bayes_error_mode").get<std::string>());
  get("inference_repeats", c.inference_repeats);
  get("model_repeats", c.model_repeats);
  get("mcda_n", c.mcda_n);
  get("eval_every", c.eval_every);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamSettings {
  double lr = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamSettings adam_settings(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.adam_epsilon}; }

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam step, in place. A non-finite gradient rejects the
/// step and leaves params and state untouched.
inline void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state,
                        const AdamSettings& s) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_update: shape mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) throw NonFiniteError("adam_update", "gradient");
  state.t += 1;
  const double c1 = 1.0 - std::pow(s.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(s.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = s.beta1 * state.m[i] + (1.0 - s.beta1) * grad[i];
    state.v[i] = s.beta2 * state.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

/// Adam restricted to the contiguous parameter block with the given prefix.
class BlockAdam {
 public:
  BlockAdam(const ParamVector& params, std::string prefix, AdamSettings settings)
      : prefix_(std::move(prefix)), range_(params.prefix_range(prefix_)), settings_(settings),
        state_(range_.second - range_.first) {}

  void step(ParamVector& params, const Gradient& grad) {
    auto g = grad.values().subspan(range_.first, range_.second - range_.first);
    adam_update(params.prefix_slice(prefix_), g, state_, settings_);
  }
  const AdamState& state() const { return state_; }

 private:
  std::string prefix_;
  std::pair<std::size_t, std::size_t> range_;
  AdamSettings settings_;
  AdamState state_;
};

// ---------------------------------------------------------------------------
// Sampling

/// Draws mini-batches without replacement within an epoch, reshuffling when
/// the permutation is exhausted.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::mt19937_64 rng) : rng_(std::move(rng)), perm_(n) {
    if (n == 0) throw std::invalid_argument("cannot sample from an empty domain");
    std::iota(perm_.begin(), perm_.end(), 0);
    std::shuffle(perm_.begin(), perm_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == perm_.size()) {
        std::shuffle(perm_.begin(), perm_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(perm_[pos_++]);
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

// Stream ids for make_stream(seed, id).
inline constexpr std::uint64_t kInitStream = 100;
inline constexpr std::uint64_t kSourceBatchStream = 101;
inline constexpr std::uint64_t kTargetBatchStream = 102;
inline constexpr std::uint64_t kNoiseStream = 103;

// ---------------------------------------------------------------------------
// Model, history, evaluation

struct GpdaModel {
  FeatureNet net;
  ParamVector params;  // "net.*" segments then "gp.m", "gp.log_s"
  int K = 0;

  VariationalPosterior posterior() const { return VariationalPosterior::from_params(params); }
};

/// Feature net drawn from the seed's init stream; q at the prior N(0, I).
inline GpdaModel make_gpda_model(const TrainConfig& config) {
  config.validate();
  GpdaModel model{config.feature_net(), {}, config.K};
  model.net.add_segments(model.params);
  VariationalPosterior::add_segments(model.params, std::size_t(config.K), config.feature_dim);
  auto rng = make_stream(config.seed, kInitStream);
  model.net.initialize(model.params, rng);
  return model;
}

struct HistoryRecord {
  std::size_t round = 0;
  LossBreakdown losses;
  std::optional<double> src_acc;
  std::optional<double> tgt_acc;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;
};

inline std::vector<int> predict_labels(const FeatureNet& net, const ParamVector& params, const Matrix& X) {
  const Matrix mu = features(net, params, X) * params.matrix(kMeanSegment).transpose();
  std::vector<int> out(std::size_t(mu.rows()));
  for (Eigen::Index i = 0; i < mu.rows(); ++i) out[std::size_t(i)] = int(argmax_lowest(mu.row(i).transpose()));
  return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (truth.empty()) throw std::invalid_argument("accuracy of an empty set");
  if (pred.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += pred[i] == truth[i];
  return double(hit) / double(truth.size());
}

/// Fraction of samples whose MAP prediction equals the label.
inline double evaluate(const FeatureNet& net, const ParamVector& params, const LabeledSet& set) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty set");
  return accuracy(predict_labels(net, params, set.X), set.y);
}
inline double evaluate(const GpdaModel& model, const LabeledSet& set) { return evaluate(model.net, model.params, set); }

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t round, const std::string& why)
      : std::runtime_error("training diverged at round " + std::to_string(round) + ": " + why), round_(round) {}
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

inline void check_domains(const TrainConfig& config, const DomainDataset& data) {
  data.validate();
  if (std::size_t(data.source.X.cols()) != config.input_dim)
    throw std::invalid_argument("config input_dim " + std::to_string(config.input_dim) + " != data width " +
                                std::to_string(data.source.X.cols()));
  if (data.K > config.K) throw std::invalid_argument("data has more classes than config K");
}

struct GpdaResult {
  GpdaModel model;
  TrainHistory history;
};

inline bool eval_due(const TrainConfig& c, std::size_t round) {
  return round == c.steps || (c.eval_every > 0 && round % c.eval_every == 0);
}

/// Alternates, per round on one source and one target mini-batch:
///   variational step: minimize -LL + KL over (m, log_s);
///   model step:       minimize -LL + KL + lambda * MS over the feature net.
/// Each step draws fresh posterior noise and keeps its own Adam state.
inline GpdaResult train(const TrainConfig& config, const DomainDataset& data) {
  check_domains(config, data);
  GpdaResult out{make_gpda_model(config), {}};
  GpdaModel& model = out.model;

  EpochSampler src_sampler(data.source.size(), make_stream(config.seed, kSourceBatchStream));
  EpochSampler tgt_sampler(std::size_t(data.target_train.rows()), make_stream(config.seed, kTargetBatchStream));
  auto noise_rng = make_stream(config.seed, kNoiseStream);

  BlockAdam inference_opt(model.params, "gp.", adam_settings(config));
  BlockAdam model_opt(model.params, model.net.prefix, adam_settings(config));
  const auto weights = config.loss_weights();
  const double n_source = double(data.source.size());
  const auto d = Eigen::Index(config.feature_dim);

  for (std::size_t round = 1; round <= config.steps; ++round) {
    const LabeledSet src = data.source.rows(src_sampler.next(config.batch_source));
    const Matrix tgt = select_rows(data.target_train, tgt_sampler.next(config.batch_target));
    HistoryRecord rec;
    rec.round = round;
    try {
      for (int r = 0; r < config.inference_repeats; ++r) {
        const auto noise = draw_weight_noise(noise_rng, config.M, config.K, d);
        Tape tape(&model.params);
        auto terms = ops::composite(tape, model.net, src, tgt, noise, n_source, weights);
        tape.backward(terms.total_inference);
        inference_opt.step(model.params, tape.gradient());
      }
      for (int r = 0; r < config.model_repeats; ++r) {
        const auto noise = draw_weight_noise(noise_rng, config.M, config.K, d);
        Tape tape(&model.params);
        auto terms = ops::composite(tape, model.net, src, tgt, noise, n_source, weights);
        if (r == 0)
          rec.losses = {terms.ll.scalar(), terms.kl.scalar(), terms.ms.scalar(), terms.total_inference.scalar(),
                        terms.total_model.scalar()};
        tape.backward(terms.total_model);
        model_opt.step(model.params, tape.gradient());
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

inline void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  out << "round,ll,kl,ms,total_inference,total_model,src_acc,tgt_acc\n";
  for (const auto& r : history.records) {
    const auto& l = r.losses;
    out << r.round << ',' << num(l.ll) << ',' << num(l.kl) << ',' << num(l.ms) << ',' << num(l.total_inference) << ','
        << num(l.total_model) << ',' << opt(r.src_acc) << ',' << opt(r.tgt_acc) << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct LoadedGpda {
  TrainConfig config;
  GpdaModel model;
};

inline void save_checkpoint(const GpdaModel& model, const TrainConfig& config, const std::string& path) {
  save_checkpoint_file(path, kGpdaMagic, nlohmann::json(config), model.params);
}

inline LoadedGpda load_checkpoint(const std::string& path) {
  auto c = load_checkpoint_file(path, kGpdaMagic);
  LoadedGpda out;
  c.config.get_to(out.config);
  out.model.net = out.config.feature_net();
  out.model.K = out.config.K;
  ParamVector expected;
  out.model.net.add_segments(expected);
  VariationalPosterior::add_segments(expected, std::size_t(out.config.K), out.config.feature_dim);
  if (!expected.same_layout(c.params)) throw CheckpointFormatError("checkpoint layout does not match its config");
  out.model.params = std::move(c.params);
  return out;
}

}  // namespace gpda
