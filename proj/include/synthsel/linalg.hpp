#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <vector>

namespace synthsel {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Sorted, duplicate-free list of zero-based indices.
using IndexSet = std::vector<Index>;

/// Relative tolerance for numerical rank decisions.
inline constexpr double kRankTolerance = 1e-10;

inline MatrixXd select_cols(const MatrixXd& m, const IndexSet& cols) {
  MatrixXd out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

inline MatrixXd select_rows(const MatrixXd& m, const IndexSet& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline MatrixXd select_block(const MatrixXd& m, const IndexSet& rows, const IndexSet& cols) {
  MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = m(rows[i], cols[j]);
  return out;
}

inline VectorXd select_entries(const VectorXd& v, const IndexSet& idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
  return out;
}

/// Scatter `values` into a zero vector of length `n` at positions `idx`.
inline VectorXd scatter(const VectorXd& values, const IndexSet& idx, Index n) {
  VectorXd out = VectorXd::Zero(n);
  for (std::size_t i = 0; i < idx.size(); ++i) out(idx[i]) = values(static_cast<Index>(i));
  return out;
}

inline IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IndexSet set_difference(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IndexSet index_range(Index n) {
  IndexSet out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

/// Indices where |v_i| exceeds `tol`.
inline IndexSet support(const VectorXd& v, double tol) {
  IndexSet out;
  for (Index i = 0; i < v.size(); ++i)
    if (std::abs(v(i)) > tol) out.push_back(i);
  return out;
}

/// Column-pivoted QR rank with threshold relative to the largest pivot.
inline Index numerical_rank(const MatrixXd& m, double rel_tol = kRankTolerance) {
  if (m.size() == 0) return 0;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(m);
  qr.setThreshold(rel_tol);
  return qr.rank();
}

/// Orthonormal basis of {d : c d = 0}. Rows of `c` may be dependent.
inline MatrixXd null_space(const MatrixXd& c, Index dim, double rel_tol = kRankTolerance) {
  if (c.rows() == 0) return MatrixXd::Identity(dim, dim);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(c.transpose());
  qr.setThreshold(rel_tol);
  const Index r = qr.rank();
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(dim, dim);
  return q.rightCols(dim - r);
}

/// Orthogonal projector onto col(m).
inline MatrixXd column_projector(const MatrixXd& m, double rel_tol = kRankTolerance) {
  const Index n = m.rows();
  if (m.cols() == 0) return MatrixXd::Zero(n, n);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(m);
  qr.setThreshold(rel_tol);
  const Index r = qr.rank();
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, std::max<Index>(r, 0));
  return q * q.transpose();
}

}  // namespace synthsel
