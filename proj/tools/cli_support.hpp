// Option resolution, dataset construction and run manifests for the gpda tool.
#pragma once

#include "gpda/gpda.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsageError = 2, kDataError = 3 };

/// Bad flags, config values or generator parameters.
class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Unreadable or invalid input files (datasets, checkpoints).
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::string kind = "two-moons";
  std::size_t n = 500;  // per domain (two-moons) or per class (blobs)
  double rotation = 30.0;
  double noise_sd = 0.1;
  int classes = 3;
  std::vector<double> shift{2.0, 1.0};
  double scale = 1.5;
  std::string source, target_train, target_test;
  bool center = true;
};

inline void to_json(nlohmann::json& j, const DatasetSpec& d) {
  j = nlohmann::json{{"kind", d.kind},         {"n", d.n},           {"rotation", d.rotation},
                     {"noise_sd", d.noise_sd}, {"classes", d.classes}, {"shift", d.shift},
                     {"scale", d.scale},       {"source", d.source}, {"target_train", d.target_train},
                     {"target_test", d.target_test}, {"center", d.center}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& d) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("kind", d.kind);
  get("n", d.n);
  get("rotation", d.rotation);
  get("noise_sd", d.noise_sd);
  get("classes", d.classes);
  get("shift", d.shift);
  get("scale", d.scale);
  get("source", d.source);
  get("target_train", d.target_train);
  get("target_test", d.target_test);
  get("center", d.center);
}

/// Flag values as parsed; unset flags leave the config file / defaults alone.
struct Flags {
  std::string config_path;
  std::string out;

  std::optional<std::string> dataset;
  std::optional<double> rotation, noise_sd;
  std::optional<std::size_t> n;
  std::optional<int> classes;
  std::optional<std::vector<double>> shift;
  std::optional<double> scale;
  std::optional<std::string> source, target_train, target_test;
  std::optional<bool> center;

  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::optional<double> lambda, alpha, margin, lr, beta1, beta2;
  std::optional<int> M, mcda_n;
  std::optional<std::size_t> batch_source, batch_target, eval_every;
  std::optional<std::string> bayes_mode;
};

inline void add_dataset_flags(CLI::App* app, Flags& f) {
  app->add_option("--dataset", f.dataset, "Dataset: two-moons, blobs or csv")
      ->check(CLI::IsMember({"two-moons", "blobs", "csv"}));
  app->add_option("--rotation", f.rotation, "Target rotation in degrees (two-moons)");
  app->add_option("--noise-sd", f.noise_sd, "Gaussian noise sd (two-moons)");
  app->add_option("--n", f.n, "Samples per domain (two-moons) or per class (blobs)");
  app->add_option("--classes", f.classes, "Number of classes (blobs)");
  app->add_option("--shift", f.shift, "Target mean shift, comma separated (blobs)")->delimiter(',');
  app->add_option("--scale", f.scale, "Target spread multiplier (blobs)");
  app->add_option("--source", f.source, "Labeled source CSV (csv)");
  app->add_option("--target-train", f.target_train, "Unlabeled target CSV (csv)");
  app->add_option("--target-test", f.target_test, "Labeled held-out target CSV (csv)");
  app->add_flag("--center,!--no-center", f.center, "Center each domain on its own mean (default on)");
}

inline void add_train_flags(CLI::App* app, Flags& f) {
  app->add_option("--steps", f.steps, "Training rounds");
  app->add_option("--lambda", f.lambda, "Weight of the max-separation term");
  app->add_option("--alpha", f.alpha, "Uncertainty multiplier in the max-separation hinge");
  app->add_option("--margin", f.margin, "Hinge margin");
  app->add_option("--M", f.M, "Posterior samples per likelihood estimate");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--beta1", f.beta1, "Adam beta1");
  app->add_option("--beta2", f.beta2, "Adam beta2");
  app->add_option("--batch-source", f.batch_source, "Source mini-batch size");
  app->add_option("--batch-target", f.batch_target, "Target mini-batch size");
  app->add_option("--mcda-n", f.mcda_n, "MCDA generator steps per round");
  app->add_option("--eval-every", f.eval_every, "Log accuracies every k rounds (0: final round only)");
  app->add_option("--bayes-mode", f.bayes_mode, "Bayes error threshold: as-written or midpoint")
      ->check(CLI::IsMember({"as-written", "midpoint"}));
}

inline void add_common_flags(CLI::App* app, Flags& f, bool out_required) {
  app->add_option("--config", f.config_path, "JSON config or a previous run manifest");
  auto* out = app->add_option("--out", f.out, "Output directory");
  if (out_required) out->required();
}

struct Resolved {
  TrainConfig config;
  DatasetSpec dataset;
  std::string method = "gpda";
  nlohmann::json file;  // the --config document, if any
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("--config: cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("--config: " + path + ": " + e.what());
  }
}

/// Defaults, then the config file (plain config or a run manifest), then flags.
inline Resolved resolve(const Flags& f) {
  Resolved r;
  r.config.lr = 1e-3;
  r.config.steps = 3000;
  if (!f.config_path.empty()) {
    r.file = read_json_file(f.config_path);
    const nlohmann::json& cfg = r.file.contains("config") ? r.file.at("config") : r.file;
    try {
      cfg.get_to(r.config);
      if (r.file.contains("dataset")) r.file.at("dataset").get_to(r.dataset);
      if (r.file.contains("method")) r.file.at("method").get_to(r.method);
    } catch (const std::exception& e) {
      throw UsageError("--config: " + std::string(e.what()));
    }
  }
  auto set = [](auto& field, const auto& flag) {
    if (flag) field = *flag;
  };
  DatasetSpec& d = r.dataset;
  set(d.kind, f.dataset);
  set(d.rotation, f.rotation);
  set(d.noise_sd, f.noise_sd);
  set(d.n, f.n);
  set(d.classes, f.classes);
  set(d.shift, f.shift);
  set(d.scale, f.scale);
  set(d.source, f.source);
  set(d.target_train, f.target_train);
  set(d.target_test, f.target_test);
  set(d.center, f.center);

  TrainConfig& c = r.config;
  set(c.steps, f.steps);
  set(c.seed, f.seed);
  set(c.lambda, f.lambda);
  set(c.alpha, f.alpha);
  set(c.margin, f.margin);
  set(c.M, f.M);
  set(c.lr, f.lr);
  set(c.beta1, f.beta1);
  set(c.beta2, f.beta2);
  set(c.batch_source, f.batch_source);
  set(c.batch_target, f.batch_target);
  set(c.mcda_n, f.mcda_n);
  set(c.eval_every, f.eval_every);
  if (f.bayes_mode) c.bayes_error_mode = bayes_mode_from_string(*f.bayes_mode);
  return r;
}

inline DomainDataset build_dataset(const DatasetSpec& d, std::uint64_t seed) {
  DomainDataset ds;
  if (d.kind == "two-moons") {
    try {
      ds = two_moons_shift(d.n, d.rotation, d.noise_sd, seed);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  } else if (d.kind == "blobs") {
    Vector shift = Eigen::Map<const Vector>(d.shift.data(), Eigen::Index(d.shift.size()));
    try {
      ds = gaussian_blobs_shift(d.classes, d.n, shift, d.scale, seed);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  } else if (d.kind == "csv") {
    for (auto [flag, path] : {std::pair{"--source", &d.source}, std::pair{"--target-train", &d.target_train},
                              std::pair{"--target-test", &d.target_test}})
      if (path->empty()) throw UsageError(std::string(flag) + " is required with --dataset csv");
    try {
      ds = load_csv_dataset(d.source, d.target_train, d.target_test);
      ds.validate();
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  } else {
    throw UsageError("unknown dataset '" + d.kind + "'");
  }
  return d.center ? center_domains(std::move(ds)) : ds;
}

/// Sizes the model to the data and validates the result.
inline TrainConfig fit_to_data(TrainConfig c, const DomainDataset& ds) {
  c.input_dim = ds.p;
  c.K = std::max(2, ds.K);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

inline nlohmann::json provenance_json(const Provenance& p) {
  return {{"generator", p.generator}, {"parameters", p.parameters}, {"seed", p.seed}};
}

/// Run manifest, written atomically into the output directory at run end.
class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv)
      : t0_(std::chrono::steady_clock::now()) {
    doc_["tool"] = "gpda";
    doc_["tool_version"] = kToolVersion;
    doc_["command"] = std::move(command);
    for (int i = 0; i < argc; ++i) doc_["argv"].push_back(argv[i]);
    doc_["outputs"] = nlohmann::json::object();
  }

  nlohmann::json& operator[](const char* key) { return doc_[key]; }
  void output(const std::string& name, const std::filesystem::path& p) { doc_["outputs"][name] = p.string(); }

  void write(const std::filesystem::path& dir) {
    doc_["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    const auto path = dir / "manifest.json";
    doc_["outputs"]["manifest"] = path.string();
    write_file_atomic(path.string(), doc_.dump(2) + "\n");
  }

 private:
  nlohmann::json doc_;
  std::chrono::steady_clock::time_point t0_;
};

inline std::filesystem::path prepare_out(const std::string& out) {
  std::filesystem::path dir(out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("--out: cannot create " + out + ": " + ec.message());
  return dir;
}

inline std::string fmt(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace gpda::cli
