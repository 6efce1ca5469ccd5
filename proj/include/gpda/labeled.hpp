#pragma once

#include "gpda/diffmath.hpp"

#include <vector>

namespace gpda {

/// Inputs as rows of X with one class label per row.
struct LabeledSet {
  Matrix X;
  std::vector<int> y;

  std::size_t size() const { return std::size_t(X.rows()); }
  bool empty() const { return X.rows() == 0; }

  LabeledSet rows(const std::vector<std::size_t>& idx) const {
    LabeledSet out{Matrix(Eigen::Index(idx.size()), X.cols()), {}};
    out.y.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.X.row(Eigen::Index(k)) = X.row(Eigen::Index(idx[k]));
      out.y.push_back(y[idx[k]]);
    }
    return out;
  }
};

inline Matrix select_rows(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(Eigen::Index(idx.size()), X.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(Eigen::Index(k)) = X.row(Eigen::Index(idx[k]));
  return out;
}

}  // namespace gpda
