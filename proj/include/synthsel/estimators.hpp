#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/simplex_qp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace synthsel {

enum class EstimatorKind { plain, covariate, penalized, masc, matching };

inline std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::plain: return "plain";
    case EstimatorKind::covariate: return "covariate";
    case EstimatorKind::penalized: return "penalized";
    case EstimatorKind::masc: return "masc";
    case EstimatorKind::matching: return "matching";
  }
  return "unknown";
}

inline EstimatorKind parse_estimator_kind(std::string_view s) {
  if (s == "plain" || s == "sc") return EstimatorKind::plain;
  if (s == "covariate") return EstimatorKind::covariate;
  if (s == "penalized") return EstimatorKind::penalized;
  if (s == "masc") return EstimatorKind::masc;
  if (s == "matching") return EstimatorKind::matching;
  throw ConfigError("unknown estimator '" + std::string(s) + "'");
}

/// Which reformulation resolved a covariate fit.
///  many: |M n E| >= |A| - 1, only the sum-to-one row binds.
///  few:  |M n E| <  |A| - 1, the exactly matched rows E \ M bind as well.
enum class CovariateCase { none, many, few };

struct Weights {
  VectorXd beta;
  double active_tol = 0.0;
};

struct ActiveSets {
  IndexSet A;  ///< donors with positive weight
  IndexSet M;  ///< covariate rows with nonzero inner residual
  IndexSet E;  ///< covariate rows with positive weight in V
};

/// Convention: grad + sum_multiplier 1 + rows' eq_multipliers + mu = 0 with
/// mu <= 0 on the nonnegativity bounds. Residuals are scale-relative.
struct KktCertificate {
  double stationarity_residual = 0.0;
  double complementarity_gap = 0.0;
  double dual_infeasibility = 0.0;
  double sum_multiplier = 0.0;
  VectorXd mu;
  VectorXd eq_multipliers;  ///< phi for bound covariate rows, empty otherwise
  bool strictly_complementary = true;
  int iterations = 0;
};

struct MascComponents {
  VectorXd sc_beta;
  VectorXd match_beta;
  VectorXd sc_fitted;
  VectorXd match_fitted;
  IndexSet sc_active;
};

struct ScFit {
  EstimatorKind kind = EstimatorKind::plain;
  Weights weights;
  VectorXd fitted;
  VectorXd residuals;
  ActiveSets sets;
  KktCertificate kkt;
  std::optional<KktCertificate> inner_kkt;
  double lambda = 0.0;
  int m = 0;
  VectorXd V;
  double sum_to = 1.0;
  CovariateCase cov_case = CovariateCase::none;
  std::optional<MascComponents> masc;
  /// Set when the solution is not strictly complementary or X_A is rank
  /// deficient, i.e. the active set may not be unique.
  bool degenerate = false;

  double rss() const { return residuals.squaredNorm(); }
};

struct ScOptions {
  double kkt_tol = 1e-8;
  int max_iterations = 0;
  /// Right-hand side of the sum constraint; 1 is the synthetic control
  /// simplex, other values vary the active-set size in df experiments.
  double sum_to = 1.0;
  std::optional<VectorXd> start;
};

struct SetTolerances {
  double active_rel = 1e-8;    ///< A: beta_i > active_rel (1 + |beta|_inf)
  double residual_rel = 1e-8;  ///< M: |d_i b - z_i| > residual_rel (1 + |Z|_inf)
  double weight_rel = 1e-8;    ///< E: v_i > weight_rel max(v)
};

inline double active_threshold(const VectorXd& beta, const SetTolerances& t = {}) {
  return t.active_rel * (1.0 + beta.cwiseAbs().maxCoeff());
}

/// Thresholded A, M, E for a fit. Covariate sets need the inner data.
inline ActiveSets active_sets(const VectorXd& beta, const SetTolerances& t = {}, const MatrixXd* d = nullptr,
                              const VectorXd* z = nullptr, const VectorXd* v = nullptr) {
  ActiveSets s;
  s.A = support(beta.cwiseMax(0.0), active_threshold(beta, t));
  if (d && z && v && d->rows() > 0) {
    const double wtol = t.weight_rel * v->maxCoeff();
    const double rtol = t.residual_rel * (1.0 + z->cwiseAbs().maxCoeff());
    VectorXd r = (*d) * beta - *z;
    for (Index i = 0; i < d->rows(); ++i) {
      if ((*v)(i) > wtol) s.E.push_back(i);
      if (std::abs(r(i)) > rtol) s.M.push_back(i);
    }
  }
  return s;
}

inline ActiveSets active_sets(const ScFit& fit, const SetTolerances& t = {}) {
  ActiveSets s = fit.sets;
  s.A = support(fit.weights.beta.cwiseMax(0.0), active_threshold(fit.weights.beta, t));
  return s;
}

namespace detail {

inline void check_design(const VectorXd& y, const MatrixXd& x) {
  if (x.cols() < 1) throw ConfigError("need at least one donor");
  if (y.size() < 2) throw ConfigError("need at least two pre-treatment periods");
  if (y.size() != x.rows())
    throw ConfigError("Y has " + std::to_string(y.size()) + " periods, X has " + std::to_string(x.rows()));
  if (!y.allFinite() || !x.allFinite()) throw ConfigError("non-finite values in Y or X");
}

/// ||Y - X_i||^2 for every donor.
inline VectorXd donor_distances(const VectorXd& y, const MatrixXd& x) {
  return (x.colwise() - y).colwise().squaredNorm().transpose();
}

inline KktCertificate certificate(const QpSolution& s) {
  KktCertificate k;
  k.stationarity_residual = s.stationarity;
  k.complementarity_gap = s.complementarity;
  k.dual_infeasibility = s.dual_infeasibility;
  k.sum_multiplier = s.sum_multiplier;
  k.mu = s.mu;
  k.eq_multipliers = s.eq_multipliers;
  k.strictly_complementary = s.strictly_complementary;
  k.iterations = s.iterations;
  return k;
}

inline ScFit make_fit(EstimatorKind kind, const VectorXd& y, const MatrixXd& x, VectorXd beta) {
  ScFit f;
  f.kind = kind;
  f.weights.active_tol = active_threshold(beta);
  f.weights.beta = std::move(beta);
  f.fitted = x * f.weights.beta;
  f.residuals = y - f.fitted;
  f.sets.A = support(f.weights.beta.cwiseMax(0.0), f.weights.active_tol);
  return f;
}

inline bool rank_deficient_on(const MatrixXd& x, const IndexSet& a) {
  return !a.empty() && numerical_rank(select_cols(x, a)) < static_cast<Index>(a.size());
}

// Penalized simplex QP: 1/2||Y - Xb||^2 + lambda/2 sum_i b_i ||Y - X_i||^2.
inline SimplexQp penalized_qp(const VectorXd& y, const MatrixXd& x, double lambda, double total) {
  SimplexQp qp;
  qp.gram = x.transpose() * x;
  qp.linear = x.transpose() * y;
  if (lambda != 0.0) qp.linear -= 0.5 * lambda * donor_distances(y, x);
  qp.total = total;
  return qp;
}

inline QpOptions qp_options(const ScOptions& o) {
  QpOptions q;
  q.kkt_tol = o.kkt_tol;
  q.max_iterations = o.max_iterations;
  q.start = o.start;
  return q;
}

}  // namespace detail

/// Synthetic control weights: min ||Y - X b|| over the simplex.
inline ScFit solve_sc(const VectorXd& y, const MatrixXd& x, const ScOptions& opts = {}) {
  detail::check_design(y, x);
  QpSolution s = solve_simplex_qp(detail::penalized_qp(y, x, 0.0, opts.sum_to), detail::qp_options(opts));
  ScFit f = detail::make_fit(EstimatorKind::plain, y, x, s.beta);
  f.kkt = detail::certificate(s);
  f.sum_to = opts.sum_to;
  f.degenerate = !s.strictly_complementary || detail::rank_deficient_on(x, f.sets.A);
  return f;
}

/// Penalized synthetic control: ||Y - Xb||^2 + lambda sum_i b_i ||Y - X_i||^2.
/// The penalty is linear in b, so only the linear coefficient changes.
inline ScFit solve_penalized_sc(const VectorXd& y, const MatrixXd& x, double lambda, const ScOptions& opts = {}) {
  detail::check_design(y, x);
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("penalty lambda must be finite and >= 0");
  QpSolution s = solve_simplex_qp(detail::penalized_qp(y, x, lambda, opts.sum_to), detail::qp_options(opts));
  ScFit f = detail::make_fit(EstimatorKind::penalized, y, x, s.beta);
  f.kkt = detail::certificate(s);
  f.lambda = lambda;
  f.sum_to = opts.sum_to;
  f.degenerate = !s.strictly_complementary || detail::rank_deficient_on(x, f.sets.A);
  return f;
}

/// Weight 1/m on the m donors closest to Y in l2; ties go to the lower index.
inline Weights matching_weights(const VectorXd& y, const MatrixXd& x, int m) {
  detail::check_design(y, x);
  if (m < 1 || m > x.cols())
    throw ConfigError("matching count m=" + std::to_string(m) + " outside [1, " + std::to_string(x.cols()) + "]");
  VectorXd dist = detail::donor_distances(y, x);
  std::vector<Index> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return dist(a) < dist(b); });
  Weights w;
  w.beta = VectorXd::Zero(x.cols());
  for (int j = 0; j < m; ++j) w.beta(order[static_cast<std::size_t>(j)]) = 1.0 / m;
  w.active_tol = active_threshold(w.beta);
  return w;
}

inline ScFit solve_matching(const VectorXd& y, const MatrixXd& x, int m) {
  ScFit f = detail::make_fit(EstimatorKind::matching, y, x, matching_weights(y, x, m).beta);
  f.m = m;
  f.kkt.mu = VectorXd::Zero(x.cols());
  return f;
}

/// lambda * matching(m) + (1 - lambda) * synthetic control.
inline ScFit solve_masc(const VectorXd& y, const MatrixXd& x, double lambda, int m, const ScOptions& opts = {}) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("MASC lambda must lie in [0, 1]");
  ScFit sc = solve_sc(y, x, opts);
  Weights match = matching_weights(y, x, m);
  MascComponents c;
  c.sc_beta = sc.weights.beta;
  c.match_beta = match.beta;
  c.sc_fitted = sc.fitted;
  c.match_fitted = x * match.beta;
  c.sc_active = sc.sets.A;

  ScFit f;
  f.kind = EstimatorKind::masc;
  f.weights.beta = lambda * c.match_beta + (1.0 - lambda) * c.sc_beta;
  f.weights.active_tol = active_threshold(f.weights.beta);
  f.fitted = lambda * c.match_fitted + (1.0 - lambda) * c.sc_fitted;
  f.residuals = y - f.fitted;
  f.sets.A = support(f.weights.beta, f.weights.active_tol);
  f.kkt = sc.kkt;
  f.lambda = lambda;
  f.m = m;
  f.degenerate = sc.degenerate;
  f.masc = std::move(c);
  return f;
}

namespace detail {

// Minimize the outer (optionally penalized) loss over donors `cols`, with
// extra equality rows on those donors, from a feasible start.
inline QpSolution restricted_outer(const VectorXd& y, const MatrixXd& x, double lambda, const IndexSet& cols,
                                   const MatrixXd& eq_rows, const VectorXd& eq_rhs, const VectorXd& start,
                                   const ScOptions& opts) {
  MatrixXd xa = select_cols(x, cols);
  SimplexQp qp = penalized_qp(y, xa, lambda, 1.0);
  qp.eq_rows = eq_rows;
  qp.eq_rhs = eq_rhs;
  QpOptions q = qp_options(opts);
  q.start = select_entries(start, cols);
  if (eq_rows.rows() > 0) {
    // Re-project the start onto the exact equality rows; it satisfies them to
    // the residual tolerance only.
    try {
      return solve_simplex_qp(qp, q);
    } catch (const ConfigError&) {
      q.start.reset();
      return solve_simplex_qp(qp, q);
    }
  }
  return solve_simplex_qp(qp, q);
}

}  // namespace detail

/// Covariate synthetic control at a fixed diagonal V:
///
///   min ||Y - X b||  s.t.  b in argmin_{simplex} (Z - D b)' V (Z - D b).
///
/// The inner problem fixes E and the inner fit D_E b; among inner minimizers
/// the outer loss picks b, which fixes A and M. The fit is then resolved
/// through the reformulation matching |M n E| against |A| - 1: with enough
/// weighted nonzero-residual rows only the simplex binds on A, otherwise the
/// exactly matched rows E \ M stay as equality constraints.
/// `lambda` > 0 adds the donor-distance penalty to the outer loss.
inline ScFit solve_sc_cov_inner(const VectorXd& y, const MatrixXd& x, const VectorXd& z, const MatrixXd& d,
                                const VectorXd& v, double lambda = 0.0, const ScOptions& opts = {},
                                const SetTolerances& tols = {}) {
  detail::check_design(y, x);
  if (d.rows() != z.size()) throw ConfigError("covariate rows of D and Z differ");
  if (d.rows() == 0) {
    ScFit f = lambda > 0.0 ? solve_penalized_sc(y, x, lambda, opts) : solve_sc(y, x, opts);
    f.kind = EstimatorKind::covariate;
    f.lambda = lambda;
    return f;
  }
  if (d.cols() != x.cols()) throw ConfigError("D must have one column per donor");
  if (v.size() != d.rows()) throw ConfigError("V must have one entry per covariate row");
  if (v.minCoeff() < 0.0) throw ConfigError("V entries must be nonnegative");
  if (!(v.maxCoeff() > 0.0)) throw ConfigError("V must have a positive entry");
  if (lambda < 0.0 || !std::isfinite(lambda)) throw ConfigError("penalty lambda must be finite and >= 0");

  const Index p = x.cols();
  const double wtol = tols.weight_rel * v.maxCoeff();
  const double rtol = tols.residual_rel * (1.0 + z.cwiseAbs().maxCoeff());
  IndexSet e;
  for (Index i = 0; i < v.size(); ++i)
    if (v(i) > wtol) e.push_back(i);
  MatrixXd d_e = select_rows(d, e);
  VectorXd z_e = select_entries(z, e);
  VectorXd v_e = select_entries(v, e);

  SimplexQp inner;
  inner.gram = d_e.transpose() * v_e.asDiagonal() * d_e;
  inner.linear = d_e.transpose() * v_e.asDiagonal() * z_e;
  QpOptions inner_opt;
  inner_opt.kkt_tol = opts.kkt_tol;
  QpSolution in = solve_simplex_qp(inner, inner_opt);

  auto residual_set = [&](const VectorXd& b) {
    IndexSet m;
    VectorXd r = d * b - z;
    for (Index i = 0; i < d.rows(); ++i)
      if (std::abs(r(i)) > rtol) m.push_back(i);
    return m;
  };

  // Outer loss over the inner minimizers {b : D_E b = D_E b_inner}.
  SimplexQp sel = detail::penalized_qp(y, x, lambda, 1.0);
  sel.eq_rows = d_e;
  sel.eq_rhs = d_e * in.beta;
  QpOptions sel_opt = detail::qp_options(opts);
  sel_opt.start = in.beta;
  VectorXd beta = solve_simplex_qp(sel, sel_opt).beta;

  IndexSet a = support(beta, active_threshold(beta, tols));
  IndexSet m = residual_set(beta);
  CovariateCase cse = CovariateCase::none;
  QpSolution last;
  for (int round = 0; round < 8; ++round) {
    const IndexSet me = set_intersection(m, e);
    const CovariateCase want =
        static_cast<Index>(me.size()) + 1 >= static_cast<Index>(a.size()) ? CovariateCase::many : CovariateCase::few;
    MatrixXd rows(0, static_cast<Index>(a.size()));
    VectorXd rhs(0);
    if (want == CovariateCase::few) {
      const IndexSet bound = set_difference(e, m);
      rows = select_block(d, bound, a);
      rhs = select_entries(z, bound);
    }
    last = detail::restricted_outer(y, x, lambda, a, rows, rhs, beta, opts);
    VectorXd next = scatter(last.beta, a, p);
    IndexSet next_a = support(next, active_threshold(next, tols));
    IndexSet next_m = residual_set(next);
    const bool stable = want == cse && next_a == a;
    beta = std::move(next);
    cse = want;
    if (stable) {
      m = std::move(next_m);
      break;
    }
    // Keep the exactly matched rows that were imposed; residuals elsewhere may move.
    a = std::move(next_a);
    m = std::move(next_m);
  }

  ScFit f = detail::make_fit(EstimatorKind::covariate, y, x, beta);
  f.sets.A = a;
  f.sets.E = e;
  f.sets.M = m;
  f.cov_case = cse;
  f.kkt = detail::certificate(last);
  f.kkt.mu = scatter(last.mu, a, p);
  f.inner_kkt = detail::certificate(in);
  f.lambda = lambda;
  f.V = v;
  f.degenerate = !last.strictly_complementary || detail::rank_deficient_on(x, f.sets.A);
  return f;
}

/// Default V grid over the trace-one simplex in R^k: the step-1/4 lattice
/// (which contains the vertices) plus the barycenter, sorted lexicographically.
inline std::vector<VectorXd> default_v_grid(Index k, int steps = 4) {
  if (k <= 0) return {};
  std::vector<VectorXd> grid;
  std::vector<int> parts(static_cast<std::size_t>(k), 0);
  // Enumerate compositions of `steps` into k nonnegative parts.
  auto rec = [&](auto&& self, Index pos, int left) -> void {
    if (pos == k - 1) {
      parts[static_cast<std::size_t>(pos)] = left;
      VectorXd v(k);
      for (Index i = 0; i < k; ++i) v(i) = static_cast<double>(parts[static_cast<std::size_t>(i)]) / steps;
      grid.push_back(v);
      return;
    }
    for (int c = left; c >= 0; --c) {
      parts[static_cast<std::size_t>(pos)] = c;
      self(self, pos + 1, left - c);
    }
  };
  rec(rec, 0, steps);
  grid.push_back(VectorXd::Constant(k, 1.0 / static_cast<double>(k)));
  auto lex = [](const VectorXd& a, const VectorXd& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  std::sort(grid.begin(), grid.end(), lex);
  grid.erase(std::unique(grid.begin(), grid.end(), [](const VectorXd& a, const VectorXd& b) { return a.isApprox(b, 1e-14) || (a - b).cwiseAbs().maxCoeff() < 1e-14; }),
             grid.end());
  return grid;
}

struct VSearchResult {
  ScFit fit;
  std::vector<VectorXd> grid;
  std::vector<double> scores;
  std::size_t chosen = 0;
};

/// Outer V search: evaluate `criterion` at each grid V and keep the minimum;
/// equal scores go to the lexicographically smallest V.
template <class Criterion>
VSearchResult solve_sc_cov(const VectorXd& y, const MatrixXd& x, const VectorXd& z, const MatrixXd& d,
                           const std::vector<VectorXd>& v_grid, Criterion&& criterion, double lambda = 0.0,
                           const ScOptions& opts = {}) {
  if (v_grid.empty()) throw ConfigError("empty V grid");
  VSearchResult out;
  out.grid = v_grid;
  std::optional<ScFit> best;
  double best_score = std::numeric_limits<double>::infinity();
  auto lex_less = [](const VectorXd& a, const VectorXd& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  for (std::size_t g = 0; g < v_grid.size(); ++g) {
    ScFit f = solve_sc_cov_inner(y, x, z, d, v_grid[g], lambda, opts);
    const double s = criterion(f);
    out.scores.push_back(s);
    const bool better = s < best_score;
    const bool tie = s == best_score && best && lex_less(v_grid[g], v_grid[out.chosen]);
    if (!best || better || tie) {
      best_score = s;
      out.chosen = g;
      best = std::move(f);
    }
  }
  out.fit = std::move(*best);
  return out;
}

/// Outer residual sum of squares, the default V criterion.
inline double outer_rss(const ScFit& f) { return f.rss(); }

/// Active set under degeneracy: re-solve with a vanishing penalty, which
/// selects a canonical support among tied solutions.
inline IndexSet canonical_active_set(const VectorXd& y, const MatrixXd& x, const ScFit& fit,
                                     double tiny_lambda = 1e-8) {
  if (!fit.degenerate) return fit.sets.A;
  ScOptions o;
  o.sum_to = fit.sum_to;
  ScFit pen = solve_penalized_sc(y, x, fit.lambda + tiny_lambda, o);
  return pen.sets.A;
}

}  // namespace synthsel
