#pragma once

#include "synthsel/constrained_ls.hpp"
#include "synthsel/errors.hpp"
#include "synthsel/estimators.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/parallel.hpp"

#include <Eigen/Cholesky>

#include <string_view>
#include <type_traits>

namespace synthsel {

struct DivergenceMatrix {
  MatrixXd matrix;  ///< dYhat/dY, n x n
  double trace = 0.0;
};

enum class DofCase { plain, cov_many, cov_few, penalized, masc, matching, constrained_ls };

inline std::string_view to_string(DofCase c) {
  switch (c) {
    case DofCase::plain: return "plain";
    case DofCase::cov_many: return "cov_many";
    case DofCase::cov_few: return "cov_few";
    case DofCase::penalized: return "penalized";
    case DofCase::masc: return "masc";
    case DofCase::matching: return "matching";
    case DofCase::constrained_ls: return "constrained_ls";
  }
  return "unknown";
}

struct DofReport {
  double df_hat = 0.0;
  DofCase dof_case = DofCase::plain;
  CovariateCase covariate_case = CovariateCase::none;
  Index rank_XA = 0;
  Index size_A = 0;
  Index size_M_cap_E = 0;
  Index size_E_minus_M = 0;
};

inline DivergenceMatrix make_divergence(MatrixXd m) {
  DivergenceMatrix d;
  d.trace = m.trace();
  d.matrix = std::move(m);
  return d;
}

namespace detail {

/// Constraint rows binding on A: the sum row, plus the exactly matched
/// weighted covariate rows E \ M when few nonzero-residual rows remain.
inline MatrixXd binding_rows(const ScFit& fit, const MatrixXd* d) {
  const IndexSet& a = fit.sets.A;
  const Index na = static_cast<Index>(a.size());
  if (fit.cov_case != CovariateCase::few || d == nullptr) return MatrixXd::Ones(1, na);
  const IndexSet bound = set_difference(fit.sets.E, fit.sets.M);
  MatrixXd rows(1 + static_cast<Index>(bound.size()), na);
  rows.row(0).setOnes();
  if (!bound.empty()) rows.bottomRows(static_cast<Index>(bound.size())) = select_block(*d, bound, a);
  return rows;
}

inline void require_active(const ScFit& fit) {
  if (fit.sets.A.empty()) throw ConfigError("fit has an empty active set");
}

}  // namespace detail

/// Divergence of an unpenalized synthetic control fit, with or without
/// covariates. Without covariates this is Pi_A - b b'/(1'G^-1 1) with
/// b = X_A G^-1 1; with covariates the constraint block D* is the sum row,
/// extended by D_{E\M,A} in the few-residual case.
inline DivergenceMatrix divergence_sc(const ScFit& fit, const MatrixXd& x, const MatrixXd* d = nullptr) {
  detail::require_active(fit);
  MatrixXd xa = select_cols(x, fit.sets.A);
  MatrixXd dstar = detail::binding_rows(fit, d);
  if (dstar.rows() == 1) {
    if (numerical_rank(xa) < xa.cols()) throw SingularityError("G_A", "X_A is column rank deficient");
    Eigen::LDLT<MatrixXd> g(xa.transpose() * xa);
    VectorXd gi1 = g.solve(VectorXd::Ones(xa.cols()));
    VectorXd b = xa * gi1;
    MatrixXd pi = xa * g.solve(xa.transpose());
    return make_divergence(pi - b * b.transpose() / gi1.sum());
  }
  return make_divergence(ConstrainedLeastSquares(xa, dstar).hat_matrix());
}

/// Divergence of the penalized fit. The no-covariate path is the
/// (1 + lambda)-scaled plain divergence; with covariates the full
/// constrained expression with the Y-dependent penalty gradient is used:
///
///   X_A K ((1 + lambda) X_A' - lambda 1 Y'),   K = G^-1 - G^-1 D*'(D* G^-1 D*')^-1 D* G^-1.
inline DivergenceMatrix divergence_pen(const ScFit& fit, const MatrixXd& x, const VectorXd& y, double lambda,
                                       const MatrixXd* d = nullptr) {
  detail::require_active(fit);
  MatrixXd dstar = detail::binding_rows(fit, d);
  if (dstar.rows() == 1) {
    DivergenceMatrix base = divergence_sc(fit, x);
    return make_divergence((1.0 + lambda) * base.matrix);
  }
  MatrixXd xa = select_cols(x, fit.sets.A);
  if (numerical_rank(xa) < xa.cols()) throw SingularityError("G_A", "X_A is column rank deficient");
  Eigen::LDLT<MatrixXd> g(xa.transpose() * xa);
  MatrixXd gi_dt = g.solve(dstar.transpose());
  MatrixXd schur = dstar * gi_dt;
  if (numerical_rank(schur) < schur.rows())
    throw SingularityError("DG^-1D'", "constraint Schur complement D* G_A^-1 D*' is singular");
  Eigen::LDLT<MatrixXd> s(schur);
  const Index na = xa.cols();
  MatrixXd k = g.solve(MatrixXd::Identity(na, na)) - gi_dt * s.solve(gi_dt.transpose());
  MatrixXd dq = (1.0 + lambda) * xa.transpose() - lambda * VectorXd::Ones(na) * y.transpose();
  return make_divergence(xa * k * dq);
}

/// MASC divergence: the matching component is locally constant in Y.
inline DivergenceMatrix divergence_masc(const DivergenceMatrix& sc_component, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("MASC lambda must lie in [0, 1]");
  return make_divergence((1.0 - lambda) * sc_component.matrix);
}

inline DivergenceMatrix divergence_masc(const ScFit& fit, const MatrixXd& x) {
  if (!fit.masc) throw ConfigError("fit carries no MASC components");
  ScFit sc;
  sc.sets.A = fit.masc->sc_active;
  return divergence_masc(divergence_sc(sc, x), fit.lambda);
}

/// Hat matrix of min ||Y - X b|| s.t. D b = Z.
inline DivergenceMatrix divergence_constrained_ls(const MatrixXd& x, const MatrixXd& d) {
  return make_divergence(ConstrainedLeastSquares(x, d).hat_matrix());
}

/// Projector onto {X_A u : D* u = 0}. Agrees with the closed forms whenever
/// they exist and stays defined for rank-deficient X_A or redundant rows.
inline MatrixXd constrained_projector(const MatrixXd& xa, const MatrixXd& dstar) {
  MatrixXd n = null_space(dstar, xa.cols());
  return column_projector(xa * n);
}

/// Divergence of any fit by the projector route.
inline DivergenceMatrix divergence_projector(const ScFit& fit, const MatrixXd& x, const MatrixXd* d = nullptr) {
  switch (fit.kind) {
    case EstimatorKind::matching: return make_divergence(MatrixXd::Zero(x.rows(), x.rows()));
    case EstimatorKind::masc: {
      if (!fit.masc) throw ConfigError("fit carries no MASC components");
      MatrixXd xa = select_cols(x, fit.masc->sc_active);
      return make_divergence((1.0 - fit.lambda) *
                             constrained_projector(xa, MatrixXd::Ones(1, xa.cols())));
    }
    default: break;
  }
  detail::require_active(fit);
  MatrixXd xa = select_cols(x, fit.sets.A);
  MatrixXd p = constrained_projector(xa, detail::binding_rows(fit, d));
  const double scale = fit.kind == EstimatorKind::penalized ||
                               (fit.kind == EstimatorKind::covariate && fit.lambda > 0.0)
                           ? 1.0 + fit.lambda
                           : 1.0;
  return make_divergence(scale * p);
}

/// Analytic divergence dispatched on the estimator kind.
inline DivergenceMatrix divergence(const ScFit& fit, const MatrixXd& x, const VectorXd& y,
                                   const MatrixXd* d = nullptr) {
  switch (fit.kind) {
    case EstimatorKind::plain: return divergence_sc(fit, x);
    case EstimatorKind::covariate:
      return fit.lambda > 0.0 ? divergence_pen(fit, x, y, fit.lambda, d) : divergence_sc(fit, x, d);
    case EstimatorKind::penalized: return divergence_pen(fit, x, y, fit.lambda, d);
    case EstimatorKind::masc: return divergence_masc(fit, x);
    case EstimatorKind::matching: return make_divergence(MatrixXd::Zero(x.rows(), x.rows()));
  }
  throw ConfigError("unknown estimator kind");
}

/// Closed-form degrees-of-freedom sample analog.
inline DofReport df_hat(const ScFit& fit, const MatrixXd& x) {
  DofReport r;
  r.covariate_case = fit.cov_case;
  if (fit.kind == EstimatorKind::matching) {
    r.dof_case = DofCase::matching;
    return r;
  }
  const IndexSet& a = fit.kind == EstimatorKind::masc && fit.masc ? fit.masc->sc_active : fit.sets.A;
  r.size_A = static_cast<Index>(a.size());
  r.rank_XA = numerical_rank(select_cols(x, a));
  r.size_M_cap_E = static_cast<Index>(set_intersection(fit.sets.M, fit.sets.E).size());
  r.size_E_minus_M = static_cast<Index>(set_difference(fit.sets.E, fit.sets.M).size());
  double base = static_cast<double>(r.rank_XA) - 1.0;
  if (fit.cov_case == CovariateCase::few) base -= static_cast<double>(r.size_E_minus_M);
  switch (fit.kind) {
    case EstimatorKind::plain:
      r.dof_case = DofCase::plain;
      r.df_hat = base;
      break;
    case EstimatorKind::covariate:
      r.dof_case = fit.cov_case == CovariateCase::few ? DofCase::cov_few : DofCase::cov_many;
      r.df_hat = (1.0 + fit.lambda) * base;
      break;
    case EstimatorKind::penalized:
      r.dof_case = DofCase::penalized;
      r.df_hat = (1.0 + fit.lambda) * base;
      break;
    case EstimatorKind::masc:
      r.dof_case = DofCase::masc;
      r.df_hat = (1.0 - fit.lambda) * base;
      break;
    case EstimatorKind::matching: break;
  }
  return r;
}

/// rank(X) - h for equality-constrained least squares with h independent rows.
inline DofReport df_constrained_ls(const MatrixXd& x, const MatrixXd& d) {
  DofReport r;
  r.dof_case = DofCase::constrained_ls;
  r.rank_XA = numerical_rank(x);
  r.size_A = x.cols();
  r.df_hat = static_cast<double>(r.rank_XA - numerical_rank(d));
  return r;
}

struct FdDivergence {
  DivergenceMatrix divergence;
  /// Some perturbed solve changed A, M or E; the comparison is then void.
  bool set_flip = false;
  std::vector<Index> flipped_columns;
};

/// Central-difference Jacobian of Y -> Yhat, one column per coordinate:
/// (Yhat(Y + h e_i) - Yhat(Y - h e_i)) / 2h. The closure may return an ScFit,
/// in which case active-set changes are reported, or a plain fitted vector.
template <class Solver>
FdDivergence divergence_fd_oracle(Solver&& solve, const VectorXd& y, double step, unsigned threads = 0) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  using Result = std::decay_t<decltype(solve(y))>;
  constexpr bool has_sets = std::is_same_v<Result, ScFit>;
  const Index n = y.size();
  MatrixXd jac(n, n);
  std::vector<char> flips(static_cast<std::size_t>(n), 0);
  ActiveSets base_sets;
  if constexpr (has_sets) base_sets = solve(y).sets;
  parallel_for(
      static_cast<std::size_t>(n),
      [&](std::size_t col) {
        const Index i = static_cast<Index>(col);
        VectorXd up = y, dn = y;
        up(i) += step;
        dn(i) -= step;
        auto ru = solve(up);
        auto rd = solve(dn);
        if constexpr (has_sets) {
          jac.col(i) = (ru.fitted - rd.fitted) / (2.0 * step);
          auto same = [&](const ActiveSets& s) {
            return s.A == base_sets.A && s.M == base_sets.M && s.E == base_sets.E;
          };
          if (!same(ru.sets) || !same(rd.sets)) flips[col] = 1;
        } else {
          jac.col(i) = (ru - rd) / (2.0 * step);
        }
      },
      threads);
  FdDivergence out;
  out.divergence = make_divergence(std::move(jac));
  for (Index i = 0; i < n; ++i)
    if (flips[static_cast<std::size_t>(i)]) out.flipped_columns.push_back(i);
  out.set_flip = !out.flipped_columns.empty();
  return out;
}

/// Default finite-difference step, relative to |Y|_inf.
inline double default_fd_step(const VectorXd& y) { return 1e-5 * std::max(1.0, y.cwiseAbs().maxCoeff()); }

}  // namespace synthsel
