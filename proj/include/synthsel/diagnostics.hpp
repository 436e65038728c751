#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/estimators.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/panel.hpp"
#include "synthsel/parallel.hpp"
#include "synthsel/selection.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace synthsel {

struct WhiteTestReport {
  double r_squared = 0.0;
  double statistic = 0.0;  ///< n R^2
  double p_value = 1.0;
  int regressor_count = 0;  ///< kept regressors, intercept excluded
  std::vector<std::string> regressors;
  std::vector<std::string> dropped;  ///< collinear candidates left out
};

/// Auxiliary regression of squared residuals on an intercept, the time
/// index, its square, and the active donors with their squares. Candidates
/// that do not raise the rank of the design are dropped in order.
inline WhiteTestReport white_test(const VectorXd& residuals, const MatrixXd& x, const IndexSet& active) {
  const Index n = residuals.size();
  if (x.rows() != n) throw ConfigError("residuals and donors disagree on the number of periods");
  std::vector<VectorXd> cols;
  std::vector<std::string> names;
  VectorXd t(n);
  for (Index i = 0; i < n; ++i) t(i) = static_cast<double>(i + 1) / static_cast<double>(n);
  cols.push_back(t);
  names.push_back("t");
  cols.push_back(t.array().square());
  names.push_back("t^2");
  for (Index j : active) {
    cols.push_back(x.col(j));
    names.push_back("x" + std::to_string(j));
    cols.push_back(x.col(j).array().square());
    names.push_back("x" + std::to_string(j) + "^2");
  }

  WhiteTestReport rep;
  MatrixXd design = MatrixXd::Ones(n, 1);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    MatrixXd trial(n, design.cols() + 1);
    trial << design, cols[c];
    if (numerical_rank(trial) > design.cols()) {
      design = std::move(trial);
      rep.regressors.push_back(names[c]);
    } else {
      rep.dropped.push_back(names[c]);
    }
  }
  rep.regressor_count = static_cast<int>(design.cols() - 1);
  if (n <= design.cols())
    throw ConfigError("White test needs more periods (" + std::to_string(n) + ") than regressors (" +
                      std::to_string(design.cols()) + ")");

  const VectorXd e2 = residuals.array().square();
  const VectorXd centered = e2.array() - e2.mean();
  const double sst = centered.squaredNorm();
  if (!(sst > 1e-24 * std::max(1.0, e2.squaredNorm()))) return rep;
  const VectorXd coef = design.colPivHouseholderQr().solve(e2);
  const double ssr = (e2 - design * coef).squaredNorm();
  rep.r_squared = std::clamp(1.0 - ssr / sst, 0.0, 1.0);
  rep.statistic = static_cast<double>(n) * rep.r_squared;
  if (rep.regressor_count > 0) {
    const boost::math::chi_squared chi(rep.regressor_count);
    rep.p_value = boost::math::cdf(boost::math::complement(chi, rep.statistic));
  }
  return rep;
}

inline WhiteTestReport white_test(const ScFit& fit, const MatrixXd& x) {
  return white_test(fit.residuals, x, fit.sets.A);
}

struct EffectPath {
  VectorXd forecast;  ///< counterfactual Yhat over the post periods
  VectorXd tau;       ///< post_Y - forecast
  std::vector<std::pair<Index, double>> tau_avg;   ///< (h, mean of the first h effects) for h in {1, 12}
  std::vector<std::optional<double>> relative;     ///< tau / forecast, empty where the forecast is ~0

  double average(Index h) const {
    for (const auto& [k, v] : tau_avg)
      if (k == h) return v;
    return tau.head(std::min(h, tau.size())).mean();
  }
};

/// Treatment-effect path from fitted weights. The MASC forecast uses the
/// combined weight vector.
inline EffectPath effect_path(const VectorXd& beta, const VectorXd& post_y, const MatrixXd& post_x) {
  if (post_x.rows() == 0 || post_y.size() == 0) throw ConfigError("effect path needs post-treatment data");
  if (post_x.rows() != post_y.size()) throw ConfigError("post-treatment outcome and donors disagree on length");
  if (post_x.cols() != beta.size()) throw ConfigError("post-treatment donors do not match the weight vector");
  EffectPath e;
  e.forecast = post_x * beta;
  e.tau = post_y - e.forecast;
  const Index h = e.tau.size();
  for (Index k : {Index{1}, Index{12}}) {
    const Index kk = std::min(k, h);
    e.tau_avg.emplace_back(k, e.tau.head(kk).mean());
  }
  const double guard = 1e-12 * std::max(1.0, e.forecast.cwiseAbs().maxCoeff());
  e.relative.resize(static_cast<std::size_t>(h));
  for (Index i = 0; i < h; ++i)
    if (std::abs(e.forecast(i)) >= guard) e.relative[static_cast<std::size_t>(i)] = e.tau(i) / e.forecast(i);
  return e;
}

inline EffectPath effect_path(const ScFit& fit, const VectorXd& post_y, const MatrixXd& post_x) {
  return effect_path(fit.weights.beta, post_y, post_x);
}

struct PlaceboResult {
  EffectPath path;
  Index horizon = 0;
  double mse = 0.0;  ///< mean squared forecast error over the first `horizon` periods
};

/// Forecast a unit known to be untreated; every nonzero effect is error.
inline PlaceboResult placebo_forecast(const PanelDataset& panel, EstimatorKind kind, const GridPoint& point,
                                      Index horizon = 12, const std::vector<VectorXd>& v_grid = {}) {
  if (!panel.has_post()) throw ConfigError("placebo forecast needs post-treatment data");
  if (horizon < 1) throw ConfigError("placebo horizon must be positive");
  const ScFit fit = fit_estimator(kind, fit_input(panel), point, v_grid);
  PlaceboResult r;
  r.path = effect_path(fit, panel.post_Y, panel.post_X);
  r.horizon = std::min(horizon, r.path.tau.size());
  r.mse = r.path.tau.head(r.horizon).squaredNorm() / static_cast<double>(r.horizon);
  return r;
}

/// Placebo error over a tuning grid; +inf where the fit fails.
inline std::vector<double> placebo_curve(const PanelDataset& panel, EstimatorKind kind,
                                         const std::vector<GridPoint>& grid, Index horizon = 12,
                                         const std::vector<VectorXd>& v_grid = {}) {
  std::vector<double> out(grid.size(), std::numeric_limits<double>::infinity());
  parallel_for(grid.size(), [&](std::size_t i) {
    try {
      out[i] = placebo_forecast(panel, kind, grid[i], horizon, v_grid).mse;
    } catch (const Error&) {
    }
  });
  return out;
}

/// sum_i beta_i ||Y - X_i||^2 at the fitted weights.
inline double penalty_distance(const VectorXd& beta, const VectorXd& y, const MatrixXd& x) {
  return beta.dot(detail::donor_distances(y, x));
}

inline double penalty_distance(const ScFit& fit, const MatrixXd& x) {
  return penalty_distance(fit.weights.beta, fit.fitted + fit.residuals, x);
}

}  // namespace synthsel
