// Dense reverse-mode differentiation over flat parameter vectors.
//
// A Tape records matrix-valued primitives eagerly (values are computed as the
// graph is built) and replays their adjoints in reverse on backward(). All
// arithmetic is double precision.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gpda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a primitive produces a NaN or infinity, in either sweep.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string primitive, const std::string& where)
      : std::runtime_error("non-finite value in primitive '" + primitive + "' (" + where + ")"),
        primitive_(std::move(primitive)) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Flat parameter storage with named, row-major matrix segments.
///
/// Segments are appended in order, so they are disjoint and cover the
/// whole value array.
class ParamVector {
 public:
  ParamVector() = default;

  std::size_t add_segment(std::string name, std::size_t rows, std::size_t cols, double fill = 0.0) {
    if (index_.count(name) != 0) throw std::invalid_argument("duplicate segment '" + name + "'");
    Segment seg{name, values_.size(), rows, cols};
    values_.resize(values_.size() + seg.size(), fill);
    index_.emplace(std::move(name), segments_.size());
    segments_.push_back(std::move(seg));
    return segments_.size() - 1;
  }

  const Segment& segment(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("no segment named '" + std::string(name) + "'");
    return segments_[it->second];
  }
  bool has_segment(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  const std::vector<Segment>& segments() const { return segments_; }

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> slice(std::string_view name) {
    const auto& s = segment(name);
    return std::span<double>(values_).subspan(s.offset, s.size());
  }
  std::span<const double> slice(std::string_view name) const {
    const auto& s = segment(name);
    return std::span<const double>(values_).subspan(s.offset, s.size());
  }

  /// Contiguous range spanning every segment whose name starts with prefix.
  std::pair<std::size_t, std::size_t> prefix_range(std::string_view prefix) const {
    std::size_t lo = values_.size(), hi = 0;
    bool found = false;
    std::size_t covered = 0;
    for (const auto& s : segments_) {
      if (s.name.rfind(prefix, 0) != 0) continue;
      found = true;
      lo = std::min(lo, s.offset);
      hi = std::max(hi, s.offset + s.size());
      covered += s.size();
    }
    if (!found) throw std::out_of_range("no segments with prefix '" + std::string(prefix) + "'");
    if (covered != hi - lo) throw std::logic_error("segments with prefix '" + std::string(prefix) + "' are not contiguous");
    return {lo, hi};
  }
  std::span<double> prefix_slice(std::string_view prefix) {
    auto [lo, hi] = prefix_range(prefix);
    return std::span<double>(values_).subspan(lo, hi - lo);
  }
  std::span<const double> prefix_slice(std::string_view prefix) const {
    auto [lo, hi] = prefix_range(prefix);
    return std::span<const double>(values_).subspan(lo, hi - lo);
  }

  Matrix matrix(std::string_view name) const {
    const auto& s = segment(name);
    return Eigen::Map<const RowMajorMatrix>(values_.data() + s.offset, Eigen::Index(s.rows), Eigen::Index(s.cols));
  }
  void set_matrix(std::string_view name, const Matrix& m) {
    const auto& s = segment(name);
    if (std::size_t(m.rows()) != s.rows || std::size_t(m.cols()) != s.cols)
      throw std::invalid_argument("shape mismatch writing segment '" + s.name + "'");
    Eigen::Map<RowMajorMatrix>(values_.data() + s.offset, m.rows(), m.cols()) = m;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_layout(const ParamVector& other) const {
    if (segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& a = segments_[i];
      const auto& b = other.segments_[i];
      if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.same_layout(b) && a.values_ == b.values_;
  }

 private:
  std::vector<double> values_;
  std::vector<Segment> segments_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Gradient with the layout of the ParamVector it differentiates.
class Gradient {
 public:
  explicit Gradient(const ParamVector& like) : segments_(like.segments()), values_(like.size(), 0.0) {}

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<Segment>& segments() const { return segments_; }

  std::span<const double> slice(std::string_view name) const {
    for (const auto& s : segments_)
      if (s.name == name) return std::span<const double>(values_).subspan(s.offset, s.size());
    throw std::out_of_range("no segment named '" + std::string(name) + "'");
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

/// Records primitives and runs the reverse sweep.
///
/// A primitive named by inject_fault() has its adjoint scaled by 1.5; this
/// exists only so gradient checks can be shown to catch a broken rule.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  explicit Tape(const ParamVector* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void inject_fault(std::string primitive) { fault_ = std::move(primitive); }
  const ParamVector* params() const { return params_; }

  Var param(std::string_view segment) {
    if (params_ == nullptr) throw std::logic_error("tape has no bound parameters");
    const auto& s = params_->segment(segment);
    Var v = push("param", params_->matrix(segment), nullptr);
    nodes_[v.id].param_offset = s.offset;
    nodes_[v.id].is_param = true;
    return v;
  }

  Var constant(Matrix value) { return push("constant", std::move(value), nullptr); }

  Var push(const char* primitive, Matrix value, Backward backward) {
    if (!value.allFinite()) throw NonFiniteError(primitive, "forward");
    nodes_.push_back(Node{primitive, std::move(value), Matrix(), std::move(backward), 0, false});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }

  void accumulate(Var v, const Matrix& g) {
    if (!g.allFinite()) throw NonFiniteError(current_ ? current_ : "accumulate", "backward");
    auto& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  /// Reverse sweep from a 1x1 output node.
  void backward(Var out) {
    if (out.tape != this) throw std::logic_error("output belongs to another tape");
    if (value(out).size() != 1) throw std::invalid_argument("backward() requires a scalar output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[out.id].grad = Matrix::Constant(1, 1, 1.0);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      if (!n.grad.allFinite()) throw NonFiniteError(n.primitive, "backward");
      Matrix g = n.grad;
      if (!fault_.empty() && fault_ == n.primitive) g *= 1.5;
      current_ = n.primitive;
      n.backward(*this, g);
    }
    current_ = nullptr;
  }

  Gradient gradient() const {
    if (params_ == nullptr) throw std::logic_error("tape has no bound parameters");
    Gradient g(*params_);
    for (const auto& n : nodes_) {
      if (!n.is_param || n.grad.size() == 0) continue;
      if (!n.grad.allFinite()) throw NonFiniteError("param", "gradient");
      Eigen::Map<RowMajorMatrix> dst(g.values().data() + n.param_offset, n.value.rows(), n.value.cols());
      dst += n.grad;
    }
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* primitive;
    Matrix value;
    Matrix grad;
    Backward backward;
    std::size_t param_offset;
    bool is_param;
  };

  const ParamVector* params_;
  std::vector<Node> nodes_;
  std::string fault_;
  const char* current_ = nullptr;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw std::logic_error("scalar() on non-scalar node");
  return v(0, 0);
}

namespace ops {

namespace detail {
inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
}
inline void require_shape(bool ok, const char* primitive) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + primitive);
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.cols() == b.rows(), "matmul");
  return a.tape->push("matmul", a.value() * b.value(), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g * b.value().transpose());
    t.accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.cols() == b.cols(), "matmul_nt");
  return a.tape->push("matmul_nt", a.value() * b.value().transpose(), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g * b.value());
    t.accumulate(b, g.transpose() * a.value());
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  return a.tape->push("add", a.value() + b.value(), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  return a.tape->push("sub", a.value() - b.value(), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  return a.tape->push("mul", a.value().cwiseProduct(b.value()), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(b.value()));
    t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double c) {
  return a.tape->push("scale", a.value() * c, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

inline Var add_scalar(Var a, double c) {
  return a.tape->push("add_scalar", (a.value().array() + c).matrix(),
                      [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

/// a (n x k) plus a 1 x k row broadcast over every row.
inline Var add_row(Var a, Var row) {
  detail::require_same_tape(a, row);
  detail::require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->push("add_row", std::move(out), [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

inline Var tanh(Var a) {
  Matrix y = a.value().array().tanh().matrix();
  return a.tape->push("tanh", y, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

/// max(0, a) elementwise; the subgradient at exactly 0 is 0.
inline Var relu(Var a, const char* name = "relu") {
  Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
  return a.tape->push(name, a.value().cwiseMax(0.0), [a, mask](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

/// The hinge (a)_+ used by margin losses.
inline Var hinge(Var a) { return relu(a, "hinge"); }

inline Var abs(Var a) {
  Matrix sign = a.value().unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
  return a.tape->push("abs", a.value().cwiseAbs(), [a, sign](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(sign));
  });
}

inline Var exp(Var a) {
  Matrix y = a.value().array().exp().matrix();
  return a.tape->push("exp", y, [a, y](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(y)); });
}

inline Var log(Var a) {
  return a.tape->push("log", a.value().array().log().matrix(), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

inline Var sqrt(Var a) {
  Matrix y = a.value().array().sqrt().matrix();
  return a.tape->push("sqrt", y, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() / (2.0 * y.array())).matrix());
  });
}

inline Var square(Var a) {
  return a.tape->push("square", a.value().array().square().matrix(), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (2.0 * g.array() * a.value().array()).matrix());
  });
}

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push("sum", std::move(out), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// Stacks `reps` copies of a vertically.
inline Var tile_rows(Var a, Eigen::Index reps) {
  if (reps < 1) throw std::invalid_argument("tile_rows needs reps >= 1");
  const Eigen::Index r = a.rows();
  return a.tape->push("tile_rows", a.value().replicate(reps, 1), [a, r, reps](Tape& t, const Matrix& g) {
    Matrix acc = Matrix::Zero(r, g.cols());
    for (Eigen::Index k = 0; k < reps; ++k) acc += g.middleRows(k * r, r);
    t.accumulate(a, acc);
  });
}

/// Log-sum-exp over consecutive column groups of width `group`.
/// Input n x (G*group), output n x G.
inline Var group_logsumexp(Var a, Eigen::Index group) {
  const auto& x = a.value();
  if (group < 1 || x.cols() % group != 0) throw std::invalid_argument("group_logsumexp: bad group width");
  const Eigen::Index n = x.rows(), ng = x.cols() / group;
  Matrix out(n, ng);
  Matrix soft(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < ng; ++k) {
      auto seg = x.row(i).segment(k * group, group);
      const double mx = seg.maxCoeff();
      auto e = (seg.array() - mx).exp();
      const double s = e.sum();
      out(i, k) = mx + std::log(s);
      soft.row(i).segment(k * group, group) = e / s;
    }
  }
  return a.tape->push("logsumexp", std::move(out), [a, soft, group](Tape& t, const Matrix& g) {
    Matrix ga(soft.rows(), soft.cols());
    for (Eigen::Index i = 0; i < soft.rows(); ++i)
      for (Eigen::Index c = 0; c < soft.cols(); ++c) ga(i, c) = g(i, c / group) * soft(i, c);
    t.accumulate(a, ga);
  });
}

inline Var logsumexp(Var a) {
  const Matrix flat = Eigen::Map<const Matrix>(a.value().data(), 1, a.value().size());
  Matrix soft = (flat.array() - flat.maxCoeff()).exp().matrix();
  const double s = soft.sum();
  soft /= s;
  Matrix out(1, 1);
  out(0, 0) = flat.maxCoeff() + std::log(s);
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push("logsumexp", std::move(out), [a, soft, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a, Eigen::Map<const Matrix>(soft.data(), r, c) * g(0, 0));
  });
}

/// Gathers a(rows[k], cols[k]) into a column vector.
inline Var gather(Var a, std::vector<Eigen::Index> rows, std::vector<Eigen::Index> cols) {
  if (rows.size() != cols.size()) throw std::invalid_argument("gather: index lists differ in length");
  Matrix out(Eigen::Index(rows.size()), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= a.rows() || cols[k] < 0 || cols[k] >= a.cols())
      throw std::out_of_range("gather index out of range");
    out(Eigen::Index(k), 0) = a.value()(rows[k], cols[k]);
  }
  return a.tape->push("gather", std::move(out),
                      [a, rows = std::move(rows), cols = std::move(cols)](Tape& t, const Matrix& g) {
                        Matrix ga = Matrix::Zero(a.rows(), a.cols());
                        for (std::size_t k = 0; k < rows.size(); ++k) ga(rows[k], cols[k]) += g(Eigen::Index(k), 0);
                        t.accumulate(a, ga);
                      });
}

/// Row-wise maximum as an n x 1 column. `argmax` receives the selected
/// column per row (lowest index on ties). A non-negative exclude[i] removes
/// that column from row i's candidates.
inline Var row_max(Var a, std::vector<Eigen::Index>* argmax = nullptr,
                   const std::vector<Eigen::Index>* exclude = nullptr) {
  const auto& x = a.value();
  if (exclude != nullptr && Eigen::Index(exclude->size()) != x.rows())
    throw std::invalid_argument("row_max: exclude list length mismatch");
  std::vector<Eigen::Index> rows(x.rows()), cols(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (exclude != nullptr && (*exclude)[i] == j) continue;
      if (best < 0 || x(i, j) > x(i, best)) best = j;
    }
    if (best < 0) throw std::invalid_argument("row_max: no candidate columns");
    rows[i] = i;
    cols[i] = best;
  }
  if (argmax != nullptr) *argmax = cols;
  Var out = gather(a, std::move(rows), std::move(cols));
  return out;
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace ops

struct TapeOptions {
  std::string inject_fault;
};

/// Evaluates objective(tape) and its exact reverse-mode gradient w.r.t. params.
template <class Objective>
std::pair<double, Gradient> value_and_grad(Objective&& objective, const ParamVector& params,
                                           const TapeOptions& options = {}) {
  Tape tape(&params);
  if (!options.inject_fault.empty()) tape.inject_fault(options.inject_fault);
  Var out = objective(tape);
  const double value = out.scalar();
  tape.backward(out);
  return {value, tape.gradient()};
}

template <class Objective>
double evaluate(Objective&& objective, const ParamVector& params) {
  Tape tape(&params);
  return objective(tape).scalar();
}

/// Central differences, one coordinate at a time.
template <class Objective>
Gradient finite_diff_grad(Objective&& objective, const ParamVector& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad needs h > 0");
  ParamVector x = params;
  Gradient g(params);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = evaluate(objective, x);
    x[i] = orig - h;
    const double down = evaluate(objective, x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NonFiniteError("finite_diff", "coordinate " + std::to_string(i));
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor). Symmetric, zero iff equal.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  if (a.size() != b.size()) throw std::invalid_argument("relative_error: length mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace gpda
