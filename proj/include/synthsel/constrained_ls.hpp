#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"

#include <Eigen/Cholesky>

namespace synthsel {

/// Equality-constrained least squares
///
///   min 1/2 ||Y - X b||^2   s.t.   D b = Z
///
/// solved through the Schur complement of the Gram matrix G = X'X:
///
///   b  = G^-1 X'Y - G^-1 D' (D G^-1 D')^-1 (D G^-1 X'Y - Z)
///   xi = (D G^-1 D')^-1 (D G^-1 X'Y - Z)
///
/// The factorizations are kept so the fitted-value Jacobian (the hat map)
/// can be formed or applied without refactoring.
class ConstrainedLeastSquares {
 public:
  ConstrainedLeastSquares(const MatrixXd& x, const MatrixXd& d) : x_(x), d_(d) {
    if (d_.rows() > 0 && d_.cols() != x_.cols())
      throw ConfigError("constraint matrix has " + std::to_string(d_.cols()) +
                        " columns, design has " + std::to_string(x_.cols()));
    if (numerical_rank(x_) < x_.cols())
      throw SingularityError("X", "design matrix X is column rank deficient");
    gram_.compute(x_.transpose() * x_);
    if (gram_.info() != Eigen::Success)
      throw SingularityError("X", "Gram matrix X'X is not positive definite");
    if (d_.rows() > 0) {
      gi_dt_ = gram_.solve(d_.transpose());
      MatrixXd schur = d_ * gi_dt_;
      if (numerical_rank(schur) < schur.rows())
        throw SingularityError("DG^-1D'", "constraint Schur complement D (X'X)^-1 D' is singular");
      schur_.compute(schur);
      if (schur_.info() != Eigen::Success)
        throw SingularityError("DG^-1D'", "constraint Schur complement D (X'X)^-1 D' is singular");
    }
  }

  struct Solution {
    VectorXd beta;
    VectorXd multipliers;  ///< xi, one per constraint row
  };

  /// Solve with an extra linear term: min 1/2||Y - Xb||^2 + q'b s.t. Db = Z.
  Solution solve(const VectorXd& y, const VectorXd& z, const VectorXd& q) const {
    VectorXd rhs = x_.transpose() * y;
    if (q.size() > 0) rhs -= q;
    VectorXd unconstrained = gram_.solve(rhs);
    Solution s;
    if (d_.rows() == 0) {
      s.beta = std::move(unconstrained);
      s.multipliers.resize(0);
      return s;
    }
    s.multipliers = schur_.solve(d_ * unconstrained - z);
    s.beta = unconstrained - gi_dt_ * s.multipliers;
    return s;
  }

  Solution solve(const VectorXd& y, const VectorXd& z) const { return solve(y, z, VectorXd()); }

  /// d(X b)/dY for fixed constraints:
  /// X G^-1 X' - X G^-1 D' (D G^-1 D')^-1 D G^-1 X'.
  MatrixXd hat_matrix() const {
    MatrixXd gi_xt = gram_.solve(x_.transpose());
    MatrixXd h = x_ * gi_xt;
    if (d_.rows() > 0) h -= x_ * gi_dt_ * schur_.solve(d_ * gi_xt);
    return h;
  }

  Index constraint_count() const { return d_.rows(); }
  const MatrixXd& design() const { return x_; }
  const MatrixXd& constraints() const { return d_; }

 private:
  MatrixXd x_;
  MatrixXd d_;
  Eigen::LDLT<MatrixXd> gram_;
  MatrixXd gi_dt_;
  Eigen::LDLT<MatrixXd> schur_;
};

/// One-shot form of ConstrainedLeastSquares::solve returning only the weights.
inline VectorXd solve_constrained_ls(const VectorXd& y, const MatrixXd& x, const MatrixXd& d_eq,
                                     const VectorXd& z_eq) {
  if (y.size() != x.rows()) throw ConfigError("Y length does not match rows of X");
  if (d_eq.rows() != z_eq.size()) throw ConfigError("D_eq rows do not match Z_eq length");
  return ConstrainedLeastSquares(x, d_eq).solve(y, z_eq).beta;
}

}  // namespace synthsel
