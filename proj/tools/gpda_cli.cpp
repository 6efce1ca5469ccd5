// gpda: train, evaluate and inspect max-margin GP domain adaptation models.
#include "cli_support.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>

using namespace gpda;
using namespace gpda::cli;
namespace fs = std::filesystem;

namespace {

struct Context {
  int argc;
  char** argv;
};

// ---------------------------------------------------------------------------
// Training helpers shared by train, compare and ablate

struct MethodRun {
  TrainHistory history;
  double src_acc = 0, tgt_acc = 0;
  std::function<void(const std::string&)> save;
};

MethodRun run_method(const std::string& method, const TrainConfig& cfg, const DomainDataset& ds) {
  MethodRun out;
  if (method == "gpda" || method == "source-only") {
    auto res = method == "gpda" ? train(cfg, ds) : train_source_only(cfg, ds);
    auto saved_cfg = cfg;
    if (method == "source-only") saved_cfg.lambda = 0.0;
    out.src_acc = evaluate(res.model, ds.source);
    out.tgt_acc = evaluate(res.model, ds.target_test);
    out.history = std::move(res.history);
    out.save = [model = std::move(res.model), saved_cfg](const std::string& p) { save_checkpoint(model, saved_cfg, p); };
  } else if (method == "mcda") {
    auto res = train_mcda(cfg, ds);
    out.src_acc = evaluate(res.model, ds.source);
    out.tgt_acc = evaluate(res.model, ds.target_test);
    out.history = std::move(res.history);
    out.save = [model = std::move(res.model), cfg](const std::string& p) { save_mcda_checkpoint(model, cfg, p); };
  } else {
    throw UsageError("unknown method '" + method + "'");
  }
  return out;
}

std::vector<std::uint64_t> seed_list(const Flags& f, const Resolved& r) {
  if (!f.seeds.empty()) return f.seeds;
  if (r.file.contains("seeds")) return r.file.at("seeds").get<std::vector<std::uint64_t>>();
  if (f.seed) return {*f.seed};
  return {1, 2, 3, 4, 5};
}

void fill_manifest(Manifest& m, const Resolved& r, const DomainDataset& ds) {
  m["config"] = r.config;
  m["dataset"] = r.dataset;
  m["provenance"] = provenance_json(ds.provenance);
  m["seed"] = r.config.seed;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const Flags& f, const std::string& method_flag, const Context& ctx) {
  Resolved r = resolve(f);
  if (!method_flag.empty()) r.method = method_flag;
  const auto dir = prepare_out(f.out);
  const DomainDataset ds = build_dataset(r.dataset, r.config.seed);
  r.config = fit_to_data(r.config, ds);

  Manifest m("train", ctx.argc, ctx.argv);
  m["method"] = r.method;
  fill_manifest(m, r, ds);
  const MethodRun run = run_method(r.method, r.config, ds);

  const auto ckpt = dir / "model.ckpt", hist = dir / "history.csv";
  run.save(ckpt.string());
  write_history_csv(hist.string(), run.history);
  m.output("checkpoint", ckpt);
  m.output("history", hist);
  m["results"] = {{"source_accuracy", run.src_acc}, {"target_accuracy", run.tgt_acc}};
  m.write(dir);
  std::printf("method %s  source acc %.4f  target acc %.4f\n", r.method.c_str(), run.src_acc, run.tgt_acc);
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / report

struct AnyModel {
  std::optional<LoadedGpda> gp;
  std::optional<LoadedMcda> mcda;
  const TrainConfig& config() const { return gp ? gp->config : mcda->config; }
};

AnyModel load_any(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  AnyModel out;
  try {
    const std::string bytes = read_file(path);
    if (bytes.rfind(std::string(kMcdaMagic), 0) == 0)
      out.mcda = load_mcda_checkpoint(path);
    else
      out.gp = load_checkpoint(path);
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return out;
}

double accuracy_of(const AnyModel& m, const LabeledSet& set) {
  return m.gp ? evaluate(m.gp->model, set) : evaluate(m.mcda->model, set);
}

/// Dataset for an existing checkpoint: flags and --config as usual, seed
/// defaulting to the one the checkpoint was trained with.
DomainDataset dataset_for(const Flags& f, const AnyModel& model, Resolved& r) {
  if (!f.seed && f.config_path.empty()) r.config.seed = model.config().seed;
  const DomainDataset ds = build_dataset(r.dataset, r.config.seed);
  if (ds.p != model.config().input_dim) throw DataError("dataset width does not match the checkpoint");
  return ds;
}

int cmd_eval(const Flags& f, const std::string& checkpoint, const Context& ctx) {
  Resolved r = resolve(f);
  const AnyModel model = load_any(checkpoint);
  const DomainDataset ds = dataset_for(f, model, r);
  const double src = accuracy_of(model, ds.source), tgt = accuracy_of(model, ds.target_test);
  std::printf("source acc %.4f  target acc %.4f\n", src, tgt);
  if (!f.out.empty()) {
    const auto dir = prepare_out(f.out);
    Manifest m("eval", ctx.argc, ctx.argv);
    m["checkpoint"] = checkpoint;
    m["dataset"] = r.dataset;
    m["provenance"] = provenance_json(ds.provenance);
    m["seed"] = r.config.seed;
    m["config"] = model.config();
    m["results"] = {{"source_accuracy", src}, {"target_accuracy", tgt}};
    m.write(dir);
  }
  return kOk;
}

int cmd_report(const Flags& f, const std::string& checkpoint, const Context& ctx) {
  Resolved r = resolve(f);
  const AnyModel model = load_any(checkpoint);
  const DomainDataset ds = dataset_for(f, model, r);
  const auto dir = prepare_out(f.out);
  Manifest m("report", ctx.argc, ctx.argv);

  CohortReport rep;
  if (model.gp) {
    const auto mode = f.bayes_mode ? bayes_mode_from_string(*f.bayes_mode) : model.gp->config.bayes_error_mode;
    rep = cohort_report(model.gp->model.net, model.gp->model.params, ds.target_test, mode);
    m["bayes_mode"] = to_string(mode);
  } else {
    rep = cohort_report_from_probabilities(mcda_probabilities(model.mcda->model, ds.target_test.X), ds.target_test.y);
  }
  const auto records = dir / "uncertainty.csv", cert = dir / "hist_certainty.csv";
  write_report_csv(records.string(), rep.records);
  write_histogram_csv(cert.string(), rep.certainty);
  m.output("records", records);
  m.output("certainty_histogram", cert);
  if (model.gp) {
    const auto bayes = dir / "hist_bayes_error.csv";
    write_histogram_csv(bayes.string(), rep.bayes);
    m.output("bayes_error_histogram", bayes);
  }

  std::size_t correct = 0;
  for (const auto& rec : rep.records) correct += rec.correct;
  m["checkpoint"] = checkpoint;
  m["config"] = model.config();
  m["dataset"] = r.dataset;
  m["provenance"] = provenance_json(ds.provenance);
  m["seed"] = r.config.seed;
  m["results"] = {{"samples", rep.records.size()}, {"correct", correct}};
  m.write(dir);
  std::printf("%zu target samples, %zu correct; certainty score %s\n", rep.records.size(), correct,
              model.gp ? "bhattacharyya" : "bpd");
  return kOk;
}

// ---------------------------------------------------------------------------
// compare / ablate

int cmd_compare(const Flags& f, const Context& ctx) {
  Resolved r = resolve(f);
  const auto seeds = seed_list(f, r);
  const auto dir = prepare_out(f.out);
  const std::vector<std::string> methods{"gpda", "mcda", "source-only"};
  std::map<std::string, std::vector<double>> tgt;

  const auto path = dir / "summary.csv";
  std::ofstream out(path);
  out << "method,seed,source_acc,target_acc\n";
  nlohmann::json provenance = nlohmann::json::array();
  for (auto seed : seeds) {
    auto cfg = r.config;
    cfg.seed = seed;
    const DomainDataset ds = build_dataset(r.dataset, seed);
    cfg = fit_to_data(cfg, ds);
    provenance.push_back(provenance_json(ds.provenance));
    for (const auto& method : methods) {
      const auto run = run_method(method, cfg, ds);
      out << method << ',' << seed << ',' << fmt(run.src_acc) << ',' << fmt(run.tgt_acc) << '\n';
      tgt[method].push_back(run.tgt_acc);
      std::printf("seed %llu  %-11s target acc %.4f\n", static_cast<unsigned long long>(seed), method.c_str(),
                  run.tgt_acc);
    }
  }
  nlohmann::json means;
  for (const auto& method : methods) {
    double s = 0;
    for (double v : tgt[method]) s += v;
    const double mean = s / double(seeds.size());
    out << method << ",mean,," << fmt(mean) << '\n';
    means[method] = mean;
    std::printf("mean        %-11s target acc %.4f\n", method.c_str(), mean);
  }
  out.close();
  if (!out) throw std::runtime_error("error writing " + path.string());

  Manifest m("compare", ctx.argc, ctx.argv);
  m["config"] = r.config;
  m["dataset"] = r.dataset;
  m["seeds"] = seeds;
  m["provenance"] = provenance;
  m["results"] = {{"mean_target_accuracy", means}};
  m.output("summary", path);
  m.write(dir);
  return kOk;
}

std::vector<double> parse_grid(const std::string& flag, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError(flag + ": not a number: '" + cell + "'");
    }
  }
  if (out.empty()) throw UsageError(flag + " is empty");
  return out;
}

int cmd_ablate(const Flags& f, const std::optional<std::string>& lambda_grid,
               const std::optional<std::string>& alpha_grid, const Context& ctx) {
  if (!lambda_grid && !alpha_grid) throw UsageError("ablate needs --lambda-grid and/or --alpha-grid");
  Resolved r = resolve(f);
  const auto seeds = seed_list(f, r);
  std::vector<std::pair<std::string, std::vector<double>>> grids;
  if (lambda_grid) grids.emplace_back("lambda", parse_grid("--lambda-grid", *lambda_grid));
  if (alpha_grid) grids.emplace_back("alpha", parse_grid("--alpha-grid", *alpha_grid));
  const auto dir = prepare_out(f.out);

  const auto path = dir / "ablation.csv", means_path = dir / "ablation_means.csv";
  std::ofstream out(path), means_out(means_path);
  out << "param,value,seed,target_acc\n";
  means_out << "param,value,mean_target_acc\n";
  nlohmann::json means = nlohmann::json::array();
  for (const auto& [param, grid] : grids) {
    for (double value : grid) {
      double sum = 0;
      for (auto seed : seeds) {
        auto cfg = r.config;
        cfg.seed = seed;
        (param == "lambda" ? cfg.lambda : cfg.alpha) = value;
        const DomainDataset ds = build_dataset(r.dataset, seed);
        cfg = fit_to_data(cfg, ds);
        const auto res = train(cfg, ds);
        const double acc = evaluate(res.model, ds.target_test);
        sum += acc;
        out << param << ',' << fmt(value) << ',' << seed << ',' << fmt(acc) << '\n';
      }
      const double mean = sum / double(seeds.size());
      means_out << param << ',' << fmt(value) << ',' << fmt(mean) << '\n';
      means.push_back({{"param", param}, {"value", value}, {"mean_target_accuracy", mean}});
      std::printf("%-6s = %-8g mean target acc %.4f\n", param.c_str(), value, mean);
    }
  }
  out.close();
  means_out.close();
  if (!out || !means_out) throw std::runtime_error("error writing ablation CSVs");

  Manifest m("ablate", ctx.argc, ctx.argv);
  m["config"] = r.config;
  m["dataset"] = r.dataset;
  m["seeds"] = seeds;
  if (lambda_grid) m["lambda_grid"] = *lambda_grid;
  if (alpha_grid) m["alpha_grid"] = *alpha_grid;
  m["results"] = means;
  m.output("ablation", path);
  m.output("ablation_means", means_path);
  m.write(dir);
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  double h = 1e-5;
  std::optional<double> tol;
  int points = 20;
  std::uint64_t seed = 1;
  std::string inject_fault;
};

struct TermResult {
  double worst = 0;
  std::string segment;
};

/// Largest per-segment relative error between the tape and the FD gradient.
void compare_gradients(const Gradient& tape, const Gradient& fd, TermResult& acc) {
  for (const auto& s : tape.segments()) {
    const double e = relative_error(tape.slice(s.name), fd.slice(s.name));
    if (e > acc.worst) {
      acc.worst = e;
      acc.segment = s.name;
    }
  }
}

struct GradPoint {
  GpdaModel gp;
  McdaModel mcda;
  LabeledSet src;
  Matrix tgt;
  WeightNoise noise;
};

GradPoint draw_point(const TrainConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0, 1);
  std::uniform_real_distribution<double> logvar(-1.0, 0.5);
  GradPoint pt{make_gpda_model(cfg), make_mcda_model(cfg), {Matrix(5, 2), {}}, Matrix(4, 2), {}};
  for (auto* params : {&pt.gp.params, &pt.mcda.params})
    for (const auto& s : params->segments())
      if (s.name.find(".b") != std::string::npos)
        for (double& b : params->slice(s.name)) b = 0.3 * normal(rng);
  for (double& v : pt.gp.params.slice(kMeanSegment)) v = normal(rng);
  for (double& v : pt.gp.params.slice(kLogVarSegment)) v = logvar(rng);
  for (Eigen::Index i = 0; i < pt.src.X.size(); ++i) pt.src.X.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < pt.tgt.size(); ++i) pt.tgt.data()[i] = normal(rng);
  for (int i = 0; i < 5; ++i) pt.src.y.push_back(int(rng() % std::uint64_t(cfg.K)));
  pt.noise = draw_weight_noise(rng, 3, cfg.K, Eigen::Index(cfg.feature_dim));
  return pt;
}

/// Distance to the nearest non-differentiable point: ReLU pre-activations,
/// ties among the class means or sigmas, the hinge threshold, and points
/// where the two MCDA heads agree on a class probability.
double kink_distance(const GradPoint& pt) {
  double dist = std::numeric_limits<double>::infinity();
  auto hidden = [&](const FeatureNet& net, const ParamVector& params, Matrix h) {
    if (net.activation != Activation::relu) return;
    for (std::size_t l = 0; l + 2 < net.sizes.size(); ++l) {
      Matrix z = h * params.matrix("net.W" + std::to_string(l));
      z.rowwise() += params.matrix("net.b" + std::to_string(l)).row(0);
      dist = std::min(dist, z.cwiseAbs().minCoeff());
      h = z.cwiseMax(0.0);
    }
  };
  for (const Matrix* X : {&pt.src.X, &pt.tgt}) {
    hidden(pt.gp.net, pt.gp.params, *X);
    hidden(pt.mcda.net, pt.mcda.params, *X);
  }
  const auto q = pt.gp.posterior();
  const Matrix phi = features(pt.gp.net, pt.gp.params, pt.tgt);
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const auto mom = moments(q, phi.row(i).transpose());
    for (const Vector* v : {&mom.mu, &mom.sigma}) {
      Vector sorted = *v;
      std::sort(sorted.data(), sorted.data() + sorted.size());
      for (Eigen::Index j = 1; j < sorted.size(); ++j) dist = std::min(dist, sorted(j) - sorted(j - 1));
    }
    auto [js, jd] = top_two(mom.mu);
    dist = std::min(dist, std::abs(mom.mu(jd) - mom.mu(js) + 1.0 + 2.0 * mom.sigma.maxCoeff()));
  }
  const Matrix gap = mcda_probabilities(pt.mcda, pt.tgt, 0) - mcda_probabilities(pt.mcda, pt.tgt, 1);
  return std::min(dist, gap.cwiseAbs().minCoeff());
}

int cmd_gradcheck(const GradcheckOptions& o, const Flags& f, const Context& ctx) {
  if (!(o.h > 0.0)) throw UsageError("--h must be positive");
  if (o.points < 1) throw UsageError("--points must be >= 1");
  const double tol = o.tol.value_or(o.h >= 1e-3 ? 1e-2 : 1e-4);
  TapeOptions topts{o.inject_fault};
  std::mt19937_64 rng(o.seed);
  std::map<std::string, TermResult> results;

  auto check = [&](const std::string& name, const ParamVector& params, const std::function<Var(Tape&)>& fn) {
    auto [v, g] = value_and_grad(fn, params, topts);
    compare_gradients(g, finite_diff_grad(fn, params, o.h), results[name]);
  };

  const double min_kink = 10.0 * o.h;
  std::size_t redrawn = 0;
  for (int t = 0; t < o.points; ++t) {
    TrainConfig cfg;
    cfg.K = 3;
    cfg.hidden = {6};
    cfg.feature_dim = 4;
    cfg.activation = t % 2 ? Activation::relu : Activation::tanh;

    // Redraw until every kink sits well outside the finite-difference step.
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::runtime_error("gradcheck: no kink-free point found; try a smaller --h");
      cfg.seed = o.seed * 1000003 + std::uint64_t(t) * 1009 + std::uint64_t(attempt);
      GradPoint pt = draw_point(cfg, rng);
      if (kink_distance(pt) < min_kink) {
        ++redrawn;
        continue;
      }
      const auto& net = pt.gp.net;
      const LossWeights w{50, 2, 1};
      check("kl", pt.gp.params,
            [&](Tape& tp) { return ops::kl(tp.param(kMeanSegment), tp.param(kLogVarSegment)); });
      check("ll", pt.gp.params, [&](Tape& tp) { return ops::composite(tp, net, pt.src, pt.tgt, pt.noise, 40.0, w).ll; });
      check("ms", pt.gp.params, [&](Tape& tp) { return ops::composite(tp, net, pt.src, pt.tgt, pt.noise, 40.0, w).ms; });
      check("total_inference", pt.gp.params,
            [&](Tape& tp) { return ops::composite(tp, net, pt.src, pt.tgt, pt.noise, 40.0, w).total_inference; });
      check("total_model", pt.gp.params,
            [&](Tape& tp) { return ops::composite(tp, net, pt.src, pt.tgt, pt.noise, 40.0, w).total_model; });
      check("mcda_source", pt.mcda.params, [&](Tape& tp) { return ops::mcda_source_loss(tp, pt.mcda.net, pt.src); });
      check("mcda_adversarial", pt.mcda.params,
            [&](Tape& tp) { return ops::mcda_adversarial_loss(tp, pt.mcda.net, pt.tgt); });
      break;
    }
  }

  bool ok = true;
  nlohmann::json summary = nlohmann::json::object();
  std::printf("%-18s %-12s %s\n", "term", "worst_rel", "segment");
  for (const auto& [name, res] : results) {
    const bool pass = res.worst <= tol;
    ok = ok && pass;
    std::printf("%-18s %-12.3e %s%s\n", name.c_str(), res.worst, res.segment.c_str(), pass ? "" : "  FAIL");
    if (!pass)
      std::fprintf(stderr, "gradcheck: %s exceeds tolerance %.1e in segment %s\n", name.c_str(), tol,
                   res.segment.c_str());
    summary[name] = {{"worst_relative_error", res.worst}, {"segment", res.segment}, {"pass", pass}};
  }
  std::printf("%s (h=%g, tol=%g, points=%d, redrawn near kinks=%zu)\n", ok ? "PASS" : "FAIL", o.h, tol, o.points,
              redrawn);

  if (!f.out.empty()) {
    const auto dir = prepare_out(f.out);
    Manifest m("gradcheck", ctx.argc, ctx.argv);
    m["h"] = o.h;
    m["tolerance"] = tol;
    m["points"] = o.points;
    m["seed"] = o.seed;
    if (!o.inject_fault.empty()) m["inject_fault"] = o.inject_fault;
    m["results"] = summary;
    m.write(dir);
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Max-margin Gaussian-process domain adaptation: training, evaluation and diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Flags flags;
  const Context ctx{argc, argv};

  auto* train_cmd = app.add_subcommand("train", "Train one model and write checkpoint, history and manifest");
  std::string method;
  add_common_flags(train_cmd, flags, true);
  add_dataset_flags(train_cmd, flags);
  add_train_flags(train_cmd, flags);
  train_cmd->add_option("--seed", flags.seed, "Run seed (data and training)");
  train_cmd->add_option("--method", method, "gpda, source-only or mcda (default gpda)")
      ->check(CLI::IsMember({"gpda", "source-only", "mcda"}));

  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "Print source and target accuracy of a checkpoint");
  add_common_flags(eval_cmd, flags, false);
  add_dataset_flags(eval_cmd, flags);
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--seed", flags.seed, "Dataset seed (default: the checkpoint's)");

  auto* report_cmd = app.add_subcommand("report", "Write per-sample uncertainty records and cohort histograms");
  add_common_flags(report_cmd, flags, true);
  add_dataset_flags(report_cmd, flags);
  report_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  report_cmd->add_option("--seed", flags.seed, "Dataset seed (default: the checkpoint's)");
  report_cmd->add_option("--bayes-mode", flags.bayes_mode, "Bayes error threshold: as-written or midpoint")
      ->check(CLI::IsMember({"as-written", "midpoint"}));

  auto* compare_cmd = app.add_subcommand("compare", "Train gpda, mcda and source-only per seed; write summary CSV");
  add_common_flags(compare_cmd, flags, true);
  add_dataset_flags(compare_cmd, flags);
  add_train_flags(compare_cmd, flags);
  compare_cmd->add_option("--seeds", flags.seeds, "Seeds, comma separated (default 1,2,3,4,5)")->delimiter(',');

  std::optional<std::string> lambda_grid, alpha_grid;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep lambda and/or alpha over seeds");
  add_common_flags(ablate_cmd, flags, true);
  add_dataset_flags(ablate_cmd, flags);
  add_train_flags(ablate_cmd, flags);
  ablate_cmd->add_option("--seeds", flags.seeds, "Seeds, comma separated (default 1,2,3,4,5)")->delimiter(',');
  ablate_cmd->add_option("--lambda-grid", lambda_grid, "Comma-separated lambda values");
  ablate_cmd->add_option("--alpha-grid", alpha_grid, "Comma-separated alpha values");

  GradcheckOptions gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with finite differences");
  grad_cmd->set_help_flag("--help", "Print this help message and exit");
  grad_cmd->add_option("--h", gc.h, "Finite-difference step (default 1e-5)");
  grad_cmd->add_option("--tol", gc.tol, "Relative-error tolerance (default 1e-4, or 1e-2 when h >= 1e-3)");
  grad_cmd->add_option("--points", gc.points, "Random parameter points (default 20)");
  grad_cmd->add_option("--seed", gc.seed, "Seed for the random points");
  grad_cmd->add_option("--out", flags.out, "Output directory for the manifest");
  grad_cmd->add_option("--inject-fault", gc.inject_fault, "Corrupt one primitive's backward rule")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsageError;
  }

  try {
    if (*train_cmd) return cmd_train(flags, method, ctx);
    if (*eval_cmd) return cmd_eval(flags, checkpoint, ctx);
    if (*report_cmd) return cmd_report(flags, checkpoint, ctx);
    if (*compare_cmd) return cmd_compare(flags, ctx);
    if (*ablate_cmd) return cmd_ablate(flags, lambda_grid, alpha_grid, ctx);
    if (*grad_cmd) return cmd_gradcheck(gc, flags, ctx);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const CsvError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
  return kUsageError;
}
