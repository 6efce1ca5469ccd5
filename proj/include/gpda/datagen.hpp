// Synthetic covariate-shifted source/target tasks and the CSV interchange
// format for bringing in small real datasets.
#pragma once

#include "gpda/labeled.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda {

struct Provenance {
  std::string generator;
  std::map<std::string, std::string> parameters;
  std::uint64_t seed = 0;
};

/// Labeled source, unlabeled target (training), labeled target (held out).
/// target_train carries no labels by construction.
struct DomainDataset {
  LabeledSet source;
  Matrix target_train;
  LabeledSet target_test;
  std::size_t p = 0;
  int K = 0;
  Provenance provenance;

  void validate() const {
    if (source.empty()) throw std::invalid_argument("dataset has no labeled source samples");
    if (target_train.rows() == 0) throw std::invalid_argument("dataset has no target samples");
    auto check = [&](const Matrix& X, const char* what) {
      if (X.rows() > 0 && std::size_t(X.cols()) != p) throw std::invalid_argument(std::string(what) + ": width mismatch");
      if (!X.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
    };
    check(source.X, "source");
    check(target_train, "target_train");
    check(target_test.X, "target_test");
    for (const auto* set : {&source, &target_test})
      for (int y : set->y)
        if (y < 0 || y >= K) throw std::out_of_range("label " + std::to_string(y) + " outside [0, K)");
  }
};

/// Independent generator stream derived from (seed, stream).
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream), std::uint32_t(stream >> 32)};
  return std::mt19937_64(seq);
}

namespace detail {

inline std::string fmt_param(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline LabeledSet shuffled(LabeledSet set, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return set.rows(idx);
}

inline LabeledSet moons(std::size_t n, double noise_sd, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  LabeledSet out{Matrix(Eigen::Index(n), 2), std::vector<int>(n)};
  const std::size_t n0 = (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = angle(rng);
    const int label = i < n0 ? 0 : 1;
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += noise_sd * noise(rng);
    y += noise_sd * noise(rng);
    out.X(Eigen::Index(i), 0) = x;
    out.X(Eigen::Index(i), 1) = y;
    out.y[i] = label;
  }
  return shuffled(std::move(out), rng);
}

/// First half (rounded down) becomes unlabeled training data, the rest is held out.
inline void split_target(const LabeledSet& target, DomainDataset& ds) {
  const std::size_t n_train = target.size() / 2;
  std::vector<std::size_t> train(n_train), test(target.size() - n_train);
  std::iota(train.begin(), train.end(), 0);
  std::iota(test.begin(), test.end(), n_train);
  ds.target_train = select_rows(target.X, train);
  ds.target_test = target.rows(test);
}

}  // namespace detail

/// Two interleaved half circles; the target domain is the same generator
/// rotated by rotation_deg about the origin.
inline DomainDataset two_moons_shift(std::size_t n_per_domain, double rotation_deg, double noise_sd,
                                     std::uint64_t seed) {
  if (n_per_domain < 2) throw std::invalid_argument("two_moons_shift needs n >= 2");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw std::invalid_argument("noise_sd must be >= 0");
  if (!std::isfinite(rotation_deg)) throw std::invalid_argument("rotation must be finite");

  auto src_rng = make_stream(seed, 1);
  auto tgt_rng = make_stream(seed, 2);
  DomainDataset ds;
  ds.p = 2;
  ds.K = 2;
  ds.source = detail::moons(n_per_domain, noise_sd, src_rng);

  LabeledSet target = detail::moons(n_per_domain, noise_sd, tgt_rng);
  const double th = rotation_deg * std::numbers::pi / 180.0;
  Eigen::Matrix2d rot;
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  target.X = target.X * rot.transpose();
  detail::split_target(target, ds);

  ds.provenance = {"two_moons_shift",
                   {{"n_per_domain", std::to_string(n_per_domain)},
                    {"rotation_deg", detail::fmt_param(rotation_deg)},
                    {"noise_sd", detail::fmt_param(noise_sd)}},
                   seed};
  return ds;
}

/// Center of blob k: radius-4 circle in the first two coordinates.
inline Vector blob_center(int k, int K, std::size_t p) {
  Vector c = Vector::Zero(Eigen::Index(p));
  const double a = 2.0 * std::numbers::pi * k / K;
  c(0) = 4.0 * std::cos(a);
  c(1) = 4.0 * std::sin(a);
  return c;
}

/// K unit-variance isotropic clusters; target clusters are translated by
/// mean_shift and their spread multiplied by scale.
inline DomainDataset gaussian_blobs_shift(int K, std::size_t n_per_class, const Vector& mean_shift, double scale,
                                          std::uint64_t seed) {
  if (K < 2) throw std::invalid_argument("gaussian_blobs_shift needs K >= 2");
  if (n_per_class < 1) throw std::invalid_argument("gaussian_blobs_shift needs n_per_class >= 1");
  if (mean_shift.size() < 2) throw std::invalid_argument("mean shift vector must have dimension >= 2");
  if (!(scale > 0.0) || !std::isfinite(scale) || !mean_shift.allFinite())
    throw std::invalid_argument("blob scale must be positive and shift finite");
  const std::size_t p = std::size_t(mean_shift.size());

  auto draw = [&](std::mt19937_64& rng, const Vector& shift, double spread) {
    std::normal_distribution<double> normal(0.0, 1.0);
    LabeledSet set{Matrix(Eigen::Index(K * n_per_class), Eigen::Index(p)), {}};
    Eigen::Index row = 0;
    for (int k = 0; k < K; ++k) {
      const Vector c = blob_center(k, K, p) + shift;
      for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
        for (std::size_t j = 0; j < p; ++j) set.X(row, Eigen::Index(j)) = c(Eigen::Index(j)) + spread * normal(rng);
        set.y.push_back(k);
      }
    }
    return detail::shuffled(std::move(set), rng);
  };

  auto src_rng = make_stream(seed, 1);
  auto tgt_rng = make_stream(seed, 2);
  DomainDataset ds;
  ds.p = p;
  ds.K = K;
  ds.source = draw(src_rng, Vector::Zero(Eigen::Index(p)), 1.0);
  detail::split_target(draw(tgt_rng, mean_shift, scale), ds);

  std::string shift_str;
  for (Eigen::Index j = 0; j < mean_shift.size(); ++j)
    shift_str += (j ? ";" : "") + detail::fmt_param(mean_shift(j));
  ds.provenance = {"gaussian_blobs_shift",
                   {{"K", std::to_string(K)},
                    {"n_per_class", std::to_string(n_per_class)},
                    {"mean_shift", shift_str},
                    {"scale", detail::fmt_param(scale)}},
                   seed};
  return ds;
}

/// Subtracts each domain's own input mean: the source mean from source rows,
/// the target_train mean from both target splits.
inline DomainDataset center_domains(DomainDataset ds) {
  const Eigen::RowVectorXd src_mean = ds.source.X.colwise().mean();
  const Eigen::RowVectorXd tgt_mean = ds.target_train.colwise().mean();
  ds.source.X.rowwise() -= src_mean;
  ds.target_train.rowwise() -= tgt_mean;
  if (!ds.target_test.empty()) ds.target_test.X.rowwise() -= tgt_mean;
  ds.provenance.parameters["centered"] = "true";
  return ds;
}

// ---------------------------------------------------------------------------
// CSV: header f0,...,f{p-1},label; blank label for unlabeled rows.

class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class MalformedRowError : public CsvError {
  using CsvError::CsvError;
};
class LabelRangeError : public CsvError {
  using CsvError::CsvError;
};
class WidthMismatchError : public CsvError {
  using CsvError::CsvError;
};
class LabeledTargetError : public CsvError {
  using CsvError::CsvError;
};

struct CsvTable {
  Matrix X;
  std::vector<std::optional<long>> labels;
};

inline void write_csv(const std::string& path, const Matrix& X, const std::vector<int>* labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (Eigen::Index j = 0; j < X.cols(); ++j) out << 'f' << j << ',';
  out << "label\n";
  char buf[64];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", X(i, j));
      out << buf << ',';
    }
    if (labels != nullptr) out << (*labels)[std::size_t(i)];
    out << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw MalformedRowError(path, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label") throw MalformedRowError(path, 1, "header must end with 'label'");
  for (std::size_t j = 0; j + 1 < header.size(); ++j)
    if (header[j] != "f" + std::to_string(j))
      throw MalformedRowError(path, 1, "header column " + std::to_string(j) + " must be f" + std::to_string(j));
  const std::size_t p = header.size() - 1;

  std::vector<double> values;
  CsvTable table;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != p + 1)
      throw WidthMismatchError(path, lineno,
                               "expected " + std::to_string(p + 1) + " cells, got " + std::to_string(cells.size()));
    for (std::size_t j = 0; j < p; ++j) {
      const auto& c = cells[j];
      double v = 0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (c.empty() || ec != std::errc() || ptr != c.data() + c.size() || !std::isfinite(v))
        throw MalformedRowError(path, lineno, "bad numeric cell '" + c + "' in column f" + std::to_string(j));
      values.push_back(v);
    }
    const auto& lc = cells[p];
    if (lc.empty()) {
      table.labels.emplace_back(std::nullopt);
    } else {
      long label = 0;
      auto [ptr, ec] = std::from_chars(lc.data(), lc.data() + lc.size(), label);
      if (ec != std::errc() || ptr != lc.data() + lc.size())
        throw MalformedRowError(path, lineno, "bad label cell '" + lc + "'");
      if (label < 0) throw LabelRangeError(path, lineno, "negative label " + lc);
      table.labels.emplace_back(label);
    }
  }
  table.X = Eigen::Map<const RowMajorMatrix>(values.data(), Eigen::Index(table.labels.size()), Eigen::Index(p));
  return table;
}

/// Loads the three CSV files. K defaults to 1 + the largest label seen.
inline DomainDataset load_csv_dataset(const std::string& source_path, const std::string& target_train_path,
                                      const std::string& target_test_path, std::optional<int> K = std::nullopt) {
  const CsvTable src = read_csv(source_path);
  const CsvTable tt = read_csv(target_train_path);
  const CsvTable te = read_csv(target_test_path);

  const std::size_t p = std::size_t(src.X.cols());
  auto require_width = [&](const CsvTable& t, const std::string& path) {
    if (std::size_t(t.X.cols()) != p)
      throw WidthMismatchError(path, 1, "has " + std::to_string(t.X.cols()) + " features, source has " +
                                            std::to_string(p));
  };
  require_width(tt, target_train_path);
  require_width(te, target_test_path);

  for (std::size_t i = 0; i < tt.labels.size(); ++i)
    if (tt.labels[i]) throw LabeledTargetError(target_train_path, i + 2, "target training rows must be unlabeled");

  long max_label = -1;
  for (const auto* t : {&src, &te})
    for (const auto& l : t->labels)
      if (l) max_label = std::max(max_label, *l);
  const int classes = K.value_or(int(max_label + 1));

  auto to_labeled = [&](const CsvTable& t, const std::string& path) {
    LabeledSet out{t.X, {}};
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
      if (!t.labels[i]) throw LabelRangeError(path, i + 2, "missing label");
      if (*t.labels[i] >= classes)
        throw LabelRangeError(path, i + 2, "label " + std::to_string(*t.labels[i]) + " >= K=" + std::to_string(classes));
      out.y.push_back(int(*t.labels[i]));
    }
    return out;
  };

  DomainDataset ds;
  ds.p = p;
  ds.K = classes;
  ds.source = to_labeled(src, source_path);
  ds.target_train = tt.X;
  ds.target_test = to_labeled(te, target_test_path);
  ds.provenance = {"csv",
                   {{"source", source_path}, {"target_train", target_train_path}, {"target_test", target_test_path}},
                   0};
  return ds;
}

inline void write_csv_dataset(const DomainDataset& ds, const std::string& source_path,
                              const std::string& target_train_path, const std::string& target_test_path) {
  write_csv(source_path, ds.source.X, &ds.source.y);
  write_csv(target_train_path, ds.target_train, nullptr);
  write_csv(target_test_path, ds.target_test.X, &ds.target_test.y);
}

}  // namespace gpda
