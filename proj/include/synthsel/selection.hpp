#pragma once

#include "synthsel/divergence.hpp"
#include "synthsel/errors.hpp"
#include "synthsel/estimators.hpp"
#include "synthsel/panel.hpp"
#include "synthsel/parallel.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace synthsel {

enum class SelectionMethod { sure, cv_holdout, cv_loo_untreated, cv_rolling };

inline std::string_view to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::sure: return "sure";
    case SelectionMethod::cv_holdout: return "cv_holdout";
    case SelectionMethod::cv_loo_untreated: return "cv_loo_untreated";
    case SelectionMethod::cv_rolling: return "cv_rolling";
  }
  return "unknown";
}

inline SelectionMethod parse_selection_method(std::string_view s) {
  if (s == "sure" || s == "ic") return SelectionMethod::sure;
  if (s == "cv_holdout" || s == "holdout") return SelectionMethod::cv_holdout;
  if (s == "cv_loo_untreated" || s == "loo") return SelectionMethod::cv_loo_untreated;
  if (s == "cv_rolling" || s == "rolling") return SelectionMethod::cv_rolling;
  throw ConfigError("unknown selection method '" + std::string(s) + "'");
}

/// One candidate tuning point. `v` indexes a V grid when covariates are used.
struct GridPoint {
  double lambda = 0.0;
  int m = 1;
  std::optional<std::size_t> v;
};

struct SelectionResult {
  SelectionMethod method = SelectionMethod::sure;
  EstimatorKind kind = EstimatorKind::penalized;
  std::vector<GridPoint> grid;
  std::vector<VectorXd> v_grid;
  std::vector<double> scores;   ///< +inf where the fit failed
  std::vector<double> rss;      ///< in-sample RSS (SURE only)
  std::vector<double> df;       ///< df_hat per point (SURE only)
  std::vector<std::string> errors;
  double sigma2_hat = 0.0;
  std::size_t chosen = 0;
  std::vector<std::size_t> tied;  ///< all points within tolerance of the minimum

  const GridPoint& best() const { return grid[chosen]; }
  double best_score() const { return scores[chosen]; }
};

// ---------------------------------------------------------------------------
// grids

inline std::vector<double> linspace(double lo, double hi, int count) {
  if (count < 1) throw ConfigError("grid needs at least one point");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
  return out;
}

inline std::vector<double> logspace(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi > 0.0)) throw ConfigError("log grid bounds must be positive");
  std::vector<double> out = linspace(std::log(lo), std::log(hi), count);
  for (double& v : out) v = std::exp(v);
  return out;
}

/// 0 followed by 39 log-spaced points from 0.0125 to 10.
inline std::vector<double> default_penalized_lambdas() {
  std::vector<double> out{0.0};
  for (double v : logspace(0.0125, 10.0, 39)) out.push_back(v);
  return out;
}

inline std::vector<double> default_masc_lambdas() { return linspace(0.0, 1.0, 21); }

inline std::vector<GridPoint> lambda_grid(const std::vector<double>& lambdas, int m = 1) {
  std::vector<GridPoint> g;
  for (double l : lambdas) g.push_back({l, m, std::nullopt});
  return g;
}

/// MASC grid over lambda x m, m in 1..min(10, p) unless given.
inline std::vector<GridPoint> masc_grid(const std::vector<double>& lambdas, Index p, std::vector<int> ms = {}) {
  if (ms.empty())
    for (int m = 1; m <= std::min<Index>(10, p); ++m) ms.push_back(m);
  std::vector<GridPoint> g;
  for (int m : ms)
    for (double l : lambdas) g.push_back({l, m, std::nullopt});
  return g;
}

inline std::vector<GridPoint> default_grid(EstimatorKind kind, Index p) {
  switch (kind) {
    case EstimatorKind::masc: return masc_grid(default_masc_lambdas(), p);
    case EstimatorKind::plain: return lambda_grid({0.0});
    case EstimatorKind::matching: {
      std::vector<GridPoint> g;
      for (int m = 1; m <= std::min<Index>(10, p); ++m) g.push_back({0.0, m, std::nullopt});
      return g;
    }
    default: return lambda_grid(default_penalized_lambdas());
  }
}

// ---------------------------------------------------------------------------
// estimator dispatch

struct FitInput {
  const VectorXd& y;
  const MatrixXd& x;
  const VectorXd* z = nullptr;
  const MatrixXd* d = nullptr;
};

inline ScFit fit_estimator(EstimatorKind kind, const FitInput& in, const GridPoint& pt,
                           const std::vector<VectorXd>& v_grid = {}, const ScOptions& opts = {}) {
  switch (kind) {
    case EstimatorKind::plain: return solve_sc(in.y, in.x, opts);
    case EstimatorKind::penalized: return solve_penalized_sc(in.y, in.x, pt.lambda, opts);
    case EstimatorKind::masc: return solve_masc(in.y, in.x, pt.lambda, std::min<int>(pt.m, static_cast<int>(in.x.cols())), opts);
    case EstimatorKind::matching: return solve_matching(in.y, in.x, std::min<int>(pt.m, static_cast<int>(in.x.cols())));
    case EstimatorKind::covariate: {
      if (in.z == nullptr || in.d == nullptr)
        return solve_sc_cov_inner(in.y, in.x, VectorXd(0), MatrixXd(0, in.x.cols()), VectorXd(0), pt.lambda, opts);
      VectorXd v = pt.v ? v_grid.at(*pt.v) : VectorXd::Constant(in.d->rows(), in.d->rows() ? 1.0 / static_cast<double>(in.d->rows()) : 0.0);
      return solve_sc_cov_inner(in.y, in.x, *in.z, *in.d, v, pt.lambda, opts);
    }
  }
  throw ConfigError("unknown estimator kind");
}

inline FitInput fit_input(const PanelDataset& panel) {
  FitInput in{panel.Y, panel.X};
  if (panel.has_covariates()) {
    in.z = &panel.Z;
    in.d = &panel.D;
  }
  return in;
}

// ---------------------------------------------------------------------------
// criteria

/// Mean squared residual of the unpenalized synthetic control fit.
inline double sigma2_hat(const VectorXd& y, const MatrixXd& x) {
  ScFit f = solve_sc(y, x);
  return f.rss() / static_cast<double>(y.size());
}

/// rss + 2 sigma2 df.
inline double ic_value(double rss, double sigma2, double df) {
  if (rss < 0.0 || sigma2 < 0.0) throw ConfigError("IC inputs must be nonnegative");
  return rss + 2.0 * sigma2 * df;
}

namespace detail {

inline void require_grid(const std::vector<GridPoint>& grid) {
  if (grid.empty()) throw ConfigError("empty tuning grid");
}

/// Minimal score; ties within a relative 1e-12 go to the largest lambda,
/// then to the earliest grid entry.
inline void choose(SelectionResult& r) {
  double best = std::numeric_limits<double>::infinity();
  for (double s : r.scores) best = std::min(best, s);
  if (!std::isfinite(best)) {
    std::string msg = "every grid point failed";
    for (std::size_t i = 0; i < r.errors.size(); ++i)
      if (!r.errors[i].empty()) {
        msg += "; first error at point " + std::to_string(i) + ": " + r.errors[i];
        break;
      }
    throw Error(msg);
  }
  const double tol = 1e-12 * std::max(1.0, std::abs(best));
  r.tied.clear();
  for (std::size_t i = 0; i < r.scores.size(); ++i)
    if (r.scores[i] <= best + tol) r.tied.push_back(i);
  r.chosen = r.tied.front();
  for (std::size_t i : r.tied)
    if (r.grid[i].lambda > r.grid[r.chosen].lambda) r.chosen = i;
}

template <class Score>
void score_grid(SelectionResult& r, Score&& score) {
  const std::size_t g = r.grid.size();
  r.scores.assign(g, std::numeric_limits<double>::infinity());
  r.errors.assign(g, std::string());
  parallel_for(g, [&](std::size_t i) {
    try {
      r.scores[i] = score(i);
    } catch (const Error& e) {
      r.errors[i] = e.what();
    }
  });
  choose(r);
}

inline double mse(const VectorXd& a, const VectorXd& b) { return (a - b).squaredNorm() / static_cast<double>(a.size()); }

}  // namespace detail

/// Information-criterion selection over a tuning grid. df enters through
/// the closed-form sample analog, so lambda acts directly and through |A|.
inline SelectionResult select_ic(const PanelDataset& panel, EstimatorKind kind, std::vector<GridPoint> grid,
                                 std::vector<VectorXd> v_grid = {}) {
  detail::require_grid(grid);
  SelectionResult r;
  r.method = SelectionMethod::sure;
  r.kind = kind;
  r.grid = std::move(grid);
  r.v_grid = std::move(v_grid);
  r.sigma2_hat = sigma2_hat(panel.Y, panel.X);
  r.rss.assign(r.grid.size(), std::numeric_limits<double>::quiet_NaN());
  r.df.assign(r.grid.size(), std::numeric_limits<double>::quiet_NaN());
  const FitInput in = fit_input(panel);
  detail::score_grid(r, [&](std::size_t i) {
    ScFit f = fit_estimator(kind, in, r.grid[i], r.v_grid);
    r.rss[i] = f.rss();
    r.df[i] = df_hat(f, panel.X).df_hat;
    return ic_value(r.rss[i], r.sigma2_hat, r.df[i]);
  });
  return r;
}

inline SelectionResult select_lambda_ic(const PanelDataset& panel, EstimatorKind kind,
                                        const std::vector<GridPoint>& grid) {
  return select_ic(panel, kind, grid);
}

/// Joint (V, lambda) selection for the covariate estimator.
inline SelectionResult select_v_ic(const PanelDataset& panel, const std::vector<VectorXd>& v_grid,
                                   const std::vector<double>& lambdas) {
  if (v_grid.empty()) throw ConfigError("empty V grid");
  if (lambdas.empty()) throw ConfigError("empty lambda grid");
  std::vector<GridPoint> grid;
  for (std::size_t v = 0; v < v_grid.size(); ++v)
    for (double l : lambdas) grid.push_back({l, 1, v});
  return select_ic(panel, EstimatorKind::covariate, std::move(grid), v_grid);
}

/// Train on the first ceil(split n) pre-treatment periods, score the mean
/// squared forecast error on the rest.
inline SelectionResult cv_holdout(const PanelDataset& panel, EstimatorKind kind, std::vector<GridPoint> grid,
                                  double split_fraction = 0.5, std::vector<VectorXd> v_grid = {}) {
  detail::require_grid(grid);
  const Index n = panel.n();
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  const Index train = static_cast<Index>(std::ceil(split_fraction * static_cast<double>(n) - 1e-12));
  if (train < 2 || n - train < 1)
    throw ConfigError("holdout split leaves " + std::to_string(train) + " training and " +
                      std::to_string(n - train) + " test periods");
  SelectionResult r;
  r.method = SelectionMethod::cv_holdout;
  r.kind = kind;
  r.grid = std::move(grid);
  r.v_grid = std::move(v_grid);
  VectorXd y_tr = panel.Y.head(train);
  MatrixXd x_tr = panel.X.topRows(train);
  FitInput in{y_tr, x_tr, panel.has_covariates() ? &panel.Z : nullptr, panel.has_covariates() ? &panel.D : nullptr};
  detail::score_grid(r, [&](std::size_t i) {
    ScFit f = fit_estimator(kind, in, r.grid[i], r.v_grid);
    return detail::mse(panel.Y.tail(n - train), panel.X.bottomRows(n - train) * f.weights.beta);
  });
  return r;
}

/// Each donor in turn plays the treated unit; fit on the remaining donors
/// over the pre-period and score the post-period forecast, averaged over donors.
inline SelectionResult cv_loo_untreated(const PanelDataset& panel, EstimatorKind kind, std::vector<GridPoint> grid,
                                        std::vector<VectorXd> v_grid = {}) {
  detail::require_grid(grid);
  if (!panel.has_post()) throw ConfigError("leave-one-out validation needs post-treatment donor data");
  if (panel.p() < 2) throw ConfigError("leave-one-out validation needs at least two donors");
  SelectionResult r;
  r.method = SelectionMethod::cv_loo_untreated;
  r.kind = kind;
  r.grid = std::move(grid);
  r.v_grid = std::move(v_grid);
  std::vector<PanelDataset> folds;
  for (Index j = 0; j < panel.p(); ++j) folds.push_back(leave_donor_out(panel, j));
  detail::score_grid(r, [&](std::size_t i) {
    double total = 0.0;
    for (const PanelDataset& f : folds) {
      ScFit fit = fit_estimator(kind, fit_input(f), r.grid[i], r.v_grid);
      total += detail::mse(f.post_Y, f.post_X * fit.weights.beta);
    }
    return total / static_cast<double>(folds.size());
  });
  return r;
}

/// Rolling origin: for t = window .. n - horizon, train on periods 1..t and
/// score the mean squared error over t+1..t+horizon; average over origins.
inline SelectionResult cv_rolling(const PanelDataset& panel, EstimatorKind kind, std::vector<GridPoint> grid,
                                  Index window = 0, Index horizon = 1, std::vector<VectorXd> v_grid = {}) {
  detail::require_grid(grid);
  const Index n = panel.n();
  if (window == 0) window = (n + 1) / 2;
  if (horizon < 1 || window < 2 || window + horizon > n)
    throw ConfigError("rolling window " + std::to_string(window) + " with horizon " + std::to_string(horizon) +
                      " does not fit " + std::to_string(n) + " periods");
  SelectionResult r;
  r.method = SelectionMethod::cv_rolling;
  r.kind = kind;
  r.grid = std::move(grid);
  r.v_grid = std::move(v_grid);
  detail::score_grid(r, [&](std::size_t i) {
    double total = 0.0;
    Index folds = 0;
    for (Index t = window; t + horizon <= n; ++t) {
      VectorXd y_tr = panel.Y.head(t);
      MatrixXd x_tr = panel.X.topRows(t);
      FitInput in{y_tr, x_tr, panel.has_covariates() ? &panel.Z : nullptr,
                  panel.has_covariates() ? &panel.D : nullptr};
      ScFit f = fit_estimator(kind, in, r.grid[i], r.v_grid);
      total += detail::mse(panel.Y.segment(t, horizon), panel.X.middleRows(t, horizon) * f.weights.beta);
      ++folds;
    }
    return total / static_cast<double>(folds);
  });
  return r;
}

struct SelectionOptions {
  double split_fraction = 0.5;
  Index window = 0;
  Index horizon = 1;
};

inline SelectionResult select(SelectionMethod method, const PanelDataset& panel, EstimatorKind kind,
                              std::vector<GridPoint> grid, const SelectionOptions& o = {},
                              std::vector<VectorXd> v_grid = {}) {
  switch (method) {
    case SelectionMethod::sure: return select_ic(panel, kind, std::move(grid), std::move(v_grid));
    case SelectionMethod::cv_holdout:
      return cv_holdout(panel, kind, std::move(grid), o.split_fraction, std::move(v_grid));
    case SelectionMethod::cv_loo_untreated: return cv_loo_untreated(panel, kind, std::move(grid), std::move(v_grid));
    case SelectionMethod::cv_rolling:
      return cv_rolling(panel, kind, std::move(grid), o.window, o.horizon, std::move(v_grid));
  }
  throw ConfigError("unknown selection method");
}

}  // namespace synthsel
