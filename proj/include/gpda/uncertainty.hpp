// Prediction-uncertainty scores between the two largest class posteriors,
// and correct/incorrect cohort reports built from them.
#pragma once

#include "gpda/featurenet.hpp"
#include "gpda/gp_head.hpp"
#include "gpda/labeled.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpda {

enum class BayesErrorMode { as_written, midpoint };

inline std::string to_string(BayesErrorMode m) { return m == BayesErrorMode::as_written ? "as-written" : "midpoint"; }
inline BayesErrorMode bayes_mode_from_string(const std::string& s) {
  if (s == "as-written" || s == "as_written") return BayesErrorMode::as_written;
  if (s == "midpoint") return BayesErrorMode::midpoint;
  throw std::invalid_argument("unknown Bayes error mode '" + s + "'");
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Bhattacharyya distance between N(mu1, sigma1^2) and N(mu2, sigma2^2).
inline double bhattacharyya(double mu1, double sigma1, double mu2, double sigma2) {
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) throw std::invalid_argument("bhattacharyya: sigmas must be positive");
  const double v1 = sigma1 * sigma1, v2 = sigma2 * sigma2;
  const double d = mu1 - mu2;
  return 0.25 * std::log(0.25 * (v1 / v2 + v2 / v1 + 2.0)) + 0.25 * d * d / (v1 + v2);
}

/// Decision threshold between the top posterior N(mu_star, .) and the
/// runner-up N(mu_dag, .).
///
/// as_written: the normalized separation (mu* - mu+) / sqrt((s*^2 + s+^2) / 2)
/// used directly as the threshold. It is dimensionless, so with unit sigmas
/// and mu+ = 0 the rate tends to 1/4 rather than 0 as the gap grows.
/// midpoint: the sigma-weighted point where both standardized distances match.
inline double bayes_threshold(double mu_star, double sigma_star, double mu_dag, double sigma_dag, BayesErrorMode mode) {
  if (mode == BayesErrorMode::as_written)
    return (mu_star - mu_dag) / std::sqrt(0.5 * (sigma_star * sigma_star + sigma_dag * sigma_dag));
  return (sigma_dag * mu_star + sigma_star * mu_dag) / (sigma_star + sigma_dag);
}

/// Equal-prior misclassification rate of the threshold rule between the two
/// largest posteriors.
inline double bayes_error(double mu_star, double sigma_star, double mu_dag, double sigma_dag,
                          BayesErrorMode mode = BayesErrorMode::as_written) {
  if (!(sigma_star > 0.0) || !(sigma_dag > 0.0)) throw std::invalid_argument("bayes_error: sigmas must be positive");
  if (mu_star < mu_dag) throw std::invalid_argument("bayes_error: mu_star must be >= mu_dag");
  const double D = bayes_threshold(mu_star, sigma_star, mu_dag, sigma_dag, mode);
  return 0.5 * (normal_cdf((mu_dag - D) / sigma_dag) + normal_cdf((D - mu_star) / sigma_star));
}

/// Log-ratio of the two largest class probabilities.
inline double bpd(const Vector& probs) {
  if (probs.size() < 2) throw std::invalid_argument("bpd needs at least two classes");
  if ((probs.array() < 0.0).any() || !probs.allFinite()) throw std::invalid_argument("bpd: negative probability");
  if (std::abs(probs.sum() - 1.0) > 1e-9) throw std::invalid_argument("bpd: probabilities must sum to 1");
  double first = -1, second = -1;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    const double v = probs(j);
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  if (!(second > 0.0)) throw std::invalid_argument("bpd: top two probabilities must be positive");
  return std::log(first) - std::log(second);
}

struct UncertaintyRecord {
  std::size_t id = 0;
  int pred = 0;
  int runner_up = 0;
  std::optional<int> truth;
  bool correct = false;
  std::optional<double> bd;
  std::optional<double> bayes_err;
  std::optional<double> bpd;
};

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> correct;
  std::vector<std::size_t> incorrect;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : correct) n += c;
    for (auto c : incorrect) n += c;
    return n;
  }
  std::size_t incorrect_mass() const {
    std::size_t n = 0;
    for (auto c : incorrect) n += c;
    return n;
  }
};

struct CohortReport {
  std::vector<UncertaintyRecord> records;
  Histogram certainty;  // over bd (GP models) or bpd (point-estimate models)
  Histogram bayes;      // over bayes_err; empty for point-estimate models
};

/// Linear-interpolated percentile of values (q in [0, 100]).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

/// Uniform bins over [0, 99th percentile]; values beyond the last edge land in the last bin.
inline Histogram cohort_histogram(const std::vector<double>& values, const std::vector<bool>& correct,
                                  std::size_t bins = 50) {
  if (values.size() != correct.size()) throw std::invalid_argument("histogram: length mismatch");
  Histogram h;
  h.correct.assign(bins, 0);
  h.incorrect.assign(bins, 0);
  double hi = values.empty() ? 1.0 : percentile(values, 99.0);
  if (!(hi > 0.0)) hi = 1.0;
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(hi * double(b) / double(bins));
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto b = std::size_t(std::max(0.0, values[i]) / hi * double(bins));
    b = std::min(b, bins - 1);
    (correct[i] ? h.correct : h.incorrect)[b] += 1;
  }
  return h;
}

/// Top two indices of v: (largest, second largest), lowest index on ties.
inline std::pair<Eigen::Index, Eigen::Index> top_two(const Vector& v) {
  if (v.size() < 2) throw std::invalid_argument("top_two needs at least two entries");
  const Eigen::Index first = argmax_lowest(v);
  Eigen::Index second = first == 0 ? 1 : 0;
  for (Eigen::Index j = 0; j < v.size(); ++j)
    if (j != first && v(j) > v(second)) second = j;
  return {first, second};
}

inline UncertaintyRecord gp_record(std::size_t id, const PosteriorMoments& mom, std::optional<int> truth,
                                   BayesErrorMode mode) {
  auto [js, jd] = top_two(mom.mu);
  UncertaintyRecord r;
  r.id = id;
  r.pred = int(js);
  r.runner_up = int(jd);
  r.truth = truth;
  r.correct = truth && *truth == r.pred;
  r.bd = bhattacharyya(mom.mu(js), mom.sigma(js), mom.mu(jd), mom.sigma(jd));
  r.bayes_err = bayes_error(mom.mu(js), mom.sigma(js), mom.mu(jd), mom.sigma(jd), mode);
  return r;
}

/// Per-sample records for a GP classifier plus certainty and Bayes-error
/// histograms split by correctness.
inline CohortReport cohort_report(const FeatureNet& net, const ParamVector& params, const LabeledSet& set,
                                  BayesErrorMode mode, std::size_t bins = 50) {
  if (set.empty()) throw std::invalid_argument("cohort_report: empty set");
  const auto q = VariationalPosterior::from_params(params);
  const Matrix phi = features(net, params, set.X);
  CohortReport rep;
  std::vector<double> bd, be;
  std::vector<bool> ok;
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const auto mom = moments(q, phi.row(i).transpose());
    rep.records.push_back(gp_record(std::size_t(i), mom, set.y[std::size_t(i)], mode));
    bd.push_back(*rep.records.back().bd);
    be.push_back(*rep.records.back().bayes_err);
    ok.push_back(rep.records.back().correct);
  }
  rep.certainty = cohort_histogram(bd, ok, bins);
  rep.bayes = cohort_histogram(be, ok, bins);
  return rep;
}

/// Records for a point-estimate classifier given class probabilities (n x K).
inline CohortReport cohort_report_from_probabilities(const Matrix& probs, const std::vector<int>& truth,
                                                     std::size_t bins = 50) {
  if (probs.rows() == 0) throw std::invalid_argument("cohort_report: empty set");
  CohortReport rep;
  std::vector<double> vals;
  std::vector<bool> ok;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const Vector p = probs.row(i).transpose();
    auto [js, jd] = top_two(p);
    UncertaintyRecord r;
    r.id = std::size_t(i);
    r.pred = int(js);
    r.runner_up = int(jd);
    r.truth = truth[std::size_t(i)];
    r.correct = *r.truth == r.pred;
    r.bpd = bpd(p);
    vals.push_back(*r.bpd);
    ok.push_back(r.correct);
    rep.records.push_back(r);
  }
  rep.certainty = cohort_histogram(vals, ok, bins);
  return rep;
}

namespace detail {
inline std::string opt_cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}
}  // namespace detail

inline void write_report_csv(const std::string& path, const std::vector<UncertaintyRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "id,pred,runner_up,true,correct,bd,bayes_err,bpd\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.pred << ',' << r.runner_up << ',' << (r.truth ? std::to_string(*r.truth) : "") << ','
        << (r.correct ? 1 : 0) << ',' << detail::opt_cell(r.bd) << ',' << detail::opt_cell(r.bayes_err) << ','
        << detail::opt_cell(r.bpd) << '\n';
  }
}

inline void write_histogram_csv(const std::string& path, const Histogram& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "bin_lo,bin_hi,count_correct,count_incorrect\n";
  for (std::size_t b = 0; b < h.correct.size(); ++b)
    out << detail::opt_cell(h.edges[b]) << ',' << detail::opt_cell(h.edges[b + 1]) << ',' << h.correct[b] << ','
        << h.incorrect[b] << '\n';
}

}  // namespace gpda
