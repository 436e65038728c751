#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

namespace synthsel {

/// Convex quadratic program over a scaled simplex with optional extra
/// equality rows:
///
///   min 1/2 b'Gb - c'b   s.t.   1'b = total,   A b = r,   b >= 0.
///
/// G must be positive semidefinite; it may be singular (p > n designs,
/// duplicate donors, the covariate inner problem).
struct SimplexQp {
  MatrixXd gram;
  VectorXd linear;
  MatrixXd eq_rows;  ///< A, k x p (k may be 0)
  VectorXd eq_rhs;   ///< r, length k
  double total = 1.0;
};

struct QpOptions {
  double kkt_tol = 1e-8;
  int max_iterations = 0;  ///< 0 selects 50 (p + 1) + 100
  std::optional<VectorXd> start;  ///< feasible warm start
};

/// Primal-dual output. Multiplier convention:
///
///   (G b - c) + nu_sum 1 + A' nu_eq + mu = 0,   mu <= 0,   mu o b = 0.
///
/// Residuals are reported relative to max(1, |G|_max total, |c|_inf).
struct QpSolution {
  VectorXd beta;
  double sum_multiplier = 0.0;
  VectorXd eq_multipliers;
  VectorXd mu;
  double stationarity = 0.0;
  double complementarity = 0.0;
  double dual_infeasibility = 0.0;
  double primal_infeasibility = 0.0;
  int iterations = 0;
  /// False when some zero weight carries a (numerically) zero multiplier.
  bool strictly_complementary = true;
};

namespace detail {

struct WorkingSet {
  std::vector<char> is_free;

  IndexSet free_indices() const {
    IndexSet out;
    for (std::size_t i = 0; i < is_free.size(); ++i)
      if (is_free[i]) out.push_back(static_cast<Index>(i));
    return out;
  }
};

inline MatrixXd constraint_block(const SimplexQp& qp, const IndexSet& cols) {
  const Index k = qp.eq_rows.rows();
  MatrixXd c(1 + k, static_cast<Index>(cols.size()));
  c.row(0).setOnes();
  if (k > 0) c.bottomRows(k) = select_cols(qp.eq_rows, cols);
  return c;
}

struct Direction {
  VectorXd step;  ///< over the free indices
  bool ray = false;
};

// Newton step of the equality-constrained subproblem on the free set, or a
// descent ray when the reduced Hessian is singular along the gradient.
inline Direction free_direction(const SimplexQp& qp, const IndexSet& free, const VectorXd& grad,
                                double scale) {
  const Index nf = static_cast<Index>(free.size());
  Direction out;
  out.step = VectorXd::Zero(nf);
  MatrixXd n = null_space(constraint_block(qp, free), nf);
  if (n.cols() == 0) return out;
  MatrixXd g_ff = select_block(qp.gram, free, free);
  MatrixXd h = n.transpose() * g_ff * n;
  VectorXd rg = n.transpose() * select_entries(grad, free);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
  const VectorXd& evals = es.eigenvalues();
  const MatrixXd& evecs = es.eigenvectors();
  const double lam_max = std::max(evals.maxCoeff(), 0.0);
  const double g_scale = qp.gram.size() ? qp.gram.cwiseAbs().maxCoeff() : 0.0;
  const double thr = 1e-10 * std::max(lam_max, g_scale);
  VectorXd u = VectorXd::Zero(n.cols());
  VectorXd flat = VectorXd::Zero(n.cols());
  for (Index j = 0; j < evals.size(); ++j) {
    const double proj = evecs.col(j).dot(rg);
    if (evals(j) > thr)
      u -= evecs.col(j) * (proj / evals(j));
    else
      flat += evecs.col(j) * proj;
  }
  if (flat.norm() > 1e-12 * scale) {
    out.ray = true;
    out.step = -(n * flat);
  } else {
    out.step = n * u;
  }
  return out;
}

inline VectorXd equality_multipliers(const SimplexQp& qp, const IndexSet& free, const VectorXd& grad) {
  MatrixXd ct = constraint_block(qp, free).transpose();
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(ct);
  cod.setThreshold(kRankTolerance);
  return cod.solve(-select_entries(grad, free));
}

inline Index block_rank(const SimplexQp& qp, const IndexSet& cols) {
  return cols.empty() ? 0 : numerical_rank(constraint_block(qp, cols));
}

// Add zero-valued columns until the free constraint block reaches the full
// row rank, so the multipliers and bound prices are unique.
inline void pad_free_set(const SimplexQp& qp, WorkingSet& ws, Index target) {
  IndexSet free = ws.free_indices();
  Index r = block_rank(qp, free);
  for (std::size_t i = 0; i < ws.is_free.size() && r < target; ++i) {
    if (ws.is_free[i]) continue;
    IndexSet trial = free;
    trial.insert(std::lower_bound(trial.begin(), trial.end(), static_cast<Index>(i)), static_cast<Index>(i));
    const Index tr = block_rank(qp, trial);
    if (tr > r) {
      ws.is_free[i] = 1;
      free = std::move(trial);
      r = tr;
    }
  }
}

inline VectorXd full_constraint_gradient(const SimplexQp& qp, const VectorXd& nu) {
  VectorXd out = VectorXd::Constant(qp.gram.rows(), nu(0));
  if (qp.eq_rows.rows() > 0) out += qp.eq_rows.transpose() * nu.tail(qp.eq_rows.rows());
  return out;
}

}  // namespace detail

inline QpSolution solve_simplex_qp(const SimplexQp& qp, const QpOptions& opt = {});

namespace detail {

inline VectorXd feasible_start(const SimplexQp& qp, const QpOptions& opt, double scale) {
  const Index p = qp.gram.rows();
  const Index k = qp.eq_rows.rows();
  const double feas_tol = 1e-7 * std::max(1.0, qp.eq_rhs.size() ? qp.eq_rhs.cwiseAbs().maxCoeff() : 0.0);
  if (opt.start) {
    VectorXd b = *opt.start;
    if (b.size() != p) throw ConfigError("warm start has wrong length");
    if (b.minCoeff() < -1e-9 * qp.total)
      throw ConfigError("warm start violates nonnegativity");
    b = b.cwiseMax(0.0);
    if (k == 0) {
      const double s = b.sum();
      if (s <= 0) throw ConfigError("warm start has zero mass");
      b *= qp.total / s;
    } else {
      if (std::abs(b.sum() - qp.total) > 1e-9 * qp.total ||
          (qp.eq_rows * b - qp.eq_rhs).cwiseAbs().maxCoeff() > feas_tol)
        throw ConfigError("warm start violates the equality constraints");
    }
    return b;
  }
  if (k == 0) {
    Index best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < p; ++j) {
      const double v = 0.5 * qp.total * qp.total * qp.gram(j, j) - qp.total * qp.linear(j);
      if (v < best_val) {
        best_val = v;
        best = j;
      }
    }
    VectorXd b = VectorXd::Zero(p);
    b(best) = qp.total;
    return b;
  }
  // Phase one: least-squares projection of the equality rows onto the simplex.
  SimplexQp aux;
  aux.gram = qp.eq_rows.transpose() * qp.eq_rows;
  aux.linear = qp.eq_rows.transpose() * qp.eq_rhs;
  aux.total = qp.total;
  QpOptions aux_opt;
  aux_opt.kkt_tol = opt.kkt_tol;
  VectorXd b = solve_simplex_qp(aux, aux_opt).beta;
  if ((qp.eq_rows * b - qp.eq_rhs).cwiseAbs().maxCoeff() > feas_tol)
    throw ConfigError("equality constraints have no solution on the simplex");
  (void)scale;
  return b;
}

}  // namespace detail

/// Primal active-set method. The sum-to-total row and the extra equality
/// rows are always in the working set; nonnegativity bounds enter and leave
/// one at a time. Each working-set subproblem is solved exactly in the null
/// space of the active equality rows.
inline QpSolution solve_simplex_qp(const SimplexQp& qp, const QpOptions& opt) {
  const Index p = qp.gram.rows();
  if (p == 0 || qp.gram.cols() != p || qp.linear.size() != p)
    throw ConfigError("quadratic program has inconsistent dimensions");
  if (qp.eq_rows.rows() != qp.eq_rhs.size() || (qp.eq_rows.rows() > 0 && qp.eq_rows.cols() != p))
    throw ConfigError("equality rows have inconsistent dimensions");
  if (!(qp.total > 0.0) || !std::isfinite(qp.total)) throw ConfigError("simplex total must be positive");
  if (!qp.gram.allFinite() || !qp.linear.allFinite()) throw ConfigError("non-finite problem data");

  const double scale = std::max({1.0, qp.gram.cwiseAbs().maxCoeff() * qp.total, qp.linear.cwiseAbs().maxCoeff()});
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations : static_cast<int>(50 * (p + 1) + 100);
  const double release_tol = 1e-11 * scale;
  const double step_floor = 1e-15 * qp.total;

  VectorXd beta = detail::feasible_start(qp, opt, scale);
  detail::WorkingSet ws;
  ws.is_free.assign(static_cast<std::size_t>(p), 0);
  for (Index i = 0; i < p; ++i) ws.is_free[static_cast<std::size_t>(i)] = beta(i) > 0.0;
  IndexSet all(static_cast<std::size_t>(p));
  std::iota(all.begin(), all.end(), Index{0});
  const Index full_rank = detail::block_rank(qp, all);
  detail::pad_free_set(qp, ws, full_rank);

  std::vector<char> stalled(static_cast<std::size_t>(p), 0);
  Index last_released = -1;
  int iter = 0;
  bool optimal = false;
  while (iter < max_iter) {
    ++iter;
    IndexSet free = ws.free_indices();
    VectorXd grad = qp.gram * beta - qp.linear;
    detail::Direction dir = detail::free_direction(qp, free, grad, scale);

    if (dir.ray || dir.step.cwiseAbs().maxCoeff() > step_floor) {
      double alpha = dir.ray ? std::numeric_limits<double>::infinity() : 1.0;
      Index blocking = -1;
      for (std::size_t j = 0; j < free.size(); ++j) {
        const double dj = dir.step(static_cast<Index>(j));
        if (dj < 0.0) {
          const double a = beta(free[j]) / -dj;
          if (a < alpha) {
            alpha = a;
            blocking = free[j];
          }
        }
      }
      if (blocking < 0 && dir.ray) {
        // Flat descent ray that never hits a bound cannot happen on a simplex;
        // treat as converged and let the certificate judge.
        optimal = true;
        break;
      }
      for (std::size_t j = 0; j < free.size(); ++j) beta(free[j]) += alpha * dir.step(static_cast<Index>(j));
      if (blocking >= 0) {
        if (alpha == 0.0 && blocking == last_released) stalled[static_cast<std::size_t>(blocking)] = 1;
        if (alpha > 0.0) std::fill(stalled.begin(), stalled.end(), 0);
        beta(blocking) = 0.0;
        ws.is_free[static_cast<std::size_t>(blocking)] = 0;
        const bool eq = qp.eq_rows.rows() > 0;
        for (Index i : free)
          if (i != blocking && beta(i) <= 0.0) {
            beta(i) = 0.0;
            ws.is_free[static_cast<std::size_t>(i)] = 0;
            if (eq && detail::block_rank(qp, ws.free_indices()) < full_rank) ws.is_free[static_cast<std::size_t>(i)] = 1;
          }
        if (eq) detail::pad_free_set(qp, ws, full_rank);
        last_released = -1;
        continue;
      }
      std::fill(stalled.begin(), stalled.end(), 0);
    }

    // Stationary on the free set: price the bounds.
    free = ws.free_indices();
    grad = qp.gram * beta - qp.linear;
    VectorXd nu = detail::equality_multipliers(qp, free, grad);
    VectorXd bound_price = grad + detail::full_constraint_gradient(qp, nu);
    Index enter = -1;
    double most_negative = -release_tol;
    for (Index i = 0; i < p; ++i) {
      if (ws.is_free[static_cast<std::size_t>(i)] || stalled[static_cast<std::size_t>(i)]) continue;
      if (bound_price(i) < most_negative) {
        most_negative = bound_price(i);
        enter = i;
      }
    }
    if (enter < 0) {
      optimal = true;
      break;
    }
    ws.is_free[static_cast<std::size_t>(enter)] = 1;
    last_released = enter;
  }

  QpSolution sol;
  sol.iterations = iter;
  IndexSet free = ws.free_indices();
  VectorXd grad = qp.gram * beta - qp.linear;
  VectorXd nu = detail::equality_multipliers(qp, free, grad);
  VectorXd price = grad + detail::full_constraint_gradient(qp, nu);
  sol.mu = VectorXd::Zero(p);
  double stat = 0.0;
  double dual_inf = 0.0;
  bool strict = true;
  for (Index i = 0; i < p; ++i) {
    if (ws.is_free[static_cast<std::size_t>(i)]) {
      stat = std::max(stat, std::abs(price(i)));
      if (beta(i) <= 0.0) strict = false;
    } else {
      sol.mu(i) = -price(i);
      dual_inf = std::max(dual_inf, sol.mu(i));
      if (std::abs(price(i)) <= 1e-9 * scale) strict = false;
    }
  }
  sol.beta = beta;
  sol.sum_multiplier = nu(0);
  sol.eq_multipliers = nu.tail(qp.eq_rows.rows());
  sol.stationarity = stat / scale;
  sol.dual_infeasibility = std::max(dual_inf, 0.0) / scale;
  sol.complementarity = (sol.mu.cwiseProduct(beta)).cwiseAbs().maxCoeff() / scale;
  double prim = std::abs(beta.sum() - qp.total);
  if (qp.eq_rows.rows() > 0) prim = std::max(prim, (qp.eq_rows * beta - qp.eq_rhs).cwiseAbs().maxCoeff());
  sol.primal_infeasibility = prim;
  sol.strictly_complementary = strict;

  if (!optimal || sol.stationarity > opt.kkt_tol || sol.dual_infeasibility > opt.kkt_tol) {
    std::ostringstream msg;
    msg << "simplex QP did not reach kkt_tol " << opt.kkt_tol << " after " << iter
        << " iterations (stationarity " << sol.stationarity << ", dual infeasibility "
        << sol.dual_infeasibility << ")";
    throw ConvergenceError(msg.str(), std::max(sol.stationarity, sol.dual_infeasibility), iter);
  }
  return sol;
}

}  // namespace synthsel
