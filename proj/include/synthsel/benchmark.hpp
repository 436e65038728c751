#pragma once

#include "synthsel/bootstrap.hpp"
#include "synthsel/errors.hpp"
#include "synthsel/factor_model.hpp"
#include "synthsel/parallel.hpp"
#include "synthsel/rng.hpp"
#include "synthsel/selection.hpp"
#include "synthsel/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace synthsel {

enum class BenchmarkDesign { gaussian, empirical, block_bootstrap };

inline std::string_view to_string(BenchmarkDesign d) {
  switch (d) {
    case BenchmarkDesign::gaussian: return "gaussian";
    case BenchmarkDesign::empirical: return "empirical";
    case BenchmarkDesign::block_bootstrap: return "block_bootstrap";
  }
  return "?";
}

inline BenchmarkDesign parse_benchmark_design(std::string_view s) {
  if (s == "gaussian") return BenchmarkDesign::gaussian;
  if (s == "empirical") return BenchmarkDesign::empirical;
  if (s == "block_bootstrap" || s == "bootstrap") return BenchmarkDesign::block_bootstrap;
  throw ConfigError("unknown design '" + std::string(s) + "'");
}

/// `risk` picks lambda by the true risk; `sure_true_sigma` plugs the true
/// conditional variance into the criterion.
enum class BenchMethod { risk, sure, sure_true_sigma, cv_holdout, cv_loo_untreated, cv_rolling };

inline std::string_view to_string(BenchMethod m) {
  switch (m) {
    case BenchMethod::risk: return "risk";
    case BenchMethod::sure: return "sure";
    case BenchMethod::sure_true_sigma: return "sure_true_sigma";
    case BenchMethod::cv_holdout: return "cv_holdout";
    case BenchMethod::cv_loo_untreated: return "cv_loo_untreated";
    case BenchMethod::cv_rolling: return "cv_rolling";
  }
  return "?";
}

inline BenchMethod parse_bench_method(std::string_view s) {
  if (s == "risk" || s == "oracle") return BenchMethod::risk;
  if (s == "sure" || s == "ic") return BenchMethod::sure;
  if (s == "sure_true_sigma") return BenchMethod::sure_true_sigma;
  if (s == "cv_holdout" || s == "holdout") return BenchMethod::cv_holdout;
  if (s == "cv_loo_untreated" || s == "loo") return BenchMethod::cv_loo_untreated;
  if (s == "cv_rolling" || s == "rolling") return BenchMethod::cv_rolling;
  throw ConfigError("unknown benchmark method '" + std::string(s) + "'");
}

inline std::vector<BenchMethod> all_bench_methods() {
  return {BenchMethod::risk,       BenchMethod::sure,             BenchMethod::sure_true_sigma,
          BenchMethod::cv_holdout, BenchMethod::cv_loo_untreated, BenchMethod::cv_rolling};
}

struct BenchmarkConfig {
  BenchmarkDesign design = BenchmarkDesign::gaussian;
  std::vector<BenchMethod> methods = all_bench_methods();
  int replications = 200;
  std::uint64_t seed = 7;
  Index pre_periods = 36;
  Index post_periods = 12;
  std::optional<FactorModelSpec> spec;  ///< synthetic_spec() when absent
  std::vector<double> lambdas = default_penalized_lambdas();
  std::optional<VectorXd> residual_pool;  ///< empirical design; skewed pool when absent
  std::optional<MatrixXd> source;         ///< block bootstrap rows [Y X]; a Gaussian draw when absent
  double block_prob = 0.2;
  SelectionOptions selection;
};

/// One method in one replication.
struct MethodOutcome {
  bool ok = false;
  std::string error;
  std::size_t chosen = 0;
  double lambda_hat = 0.0;
  double tau1 = 0.0;   ///< error of the one-period effect
  double tau12 = 0.0;  ///< error of the average effect over the first h periods
  double risk_hat = std::numeric_limits<double>::quiet_NaN();               ///< forecast scale
  double risk_hat_proportional = std::numeric_limits<double>::quiet_NaN();  ///< proportional scale
  double risk_target = std::numeric_limits<double>::quiet_NaN();
  double risk_target_proportional = std::numeric_limits<double>::quiet_NaN();
  double rank_corr = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicationOutcome {
  std::vector<MethodOutcome> methods;  ///< aligned with BenchmarkReport::methods
  std::vector<double> true_risk;       ///< over the lambda grid; empty without a known mean
  std::optional<std::size_t> lambda_star;
};

struct MethodRow {
  BenchMethod method = BenchMethod::sure;
  int completed = 0;
  double mse_tau1 = 0.0;
  double mse_tau12 = 0.0;
  std::optional<double> mse_lambda;
  std::optional<double> mse_risk;
  std::optional<double> mse_risk_proportional;
  std::optional<double> mean_rank_corr;
  double mean_lambda_hat = 0.0;
};

struct BenchmarkReport {
  BenchmarkDesign design = BenchmarkDesign::gaussian;
  int replications = 0;
  std::uint64_t seed = 0;
  Index donors = 0;
  Index pre_periods = 0;
  Index post_periods = 0;
  Index effect_horizon = 0;
  double sigma2_true = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> lambdas;
  std::vector<BenchMethod> methods;
  std::vector<MethodRow> rows;
  std::vector<double> mean_true_risk;  ///< empty for the block bootstrap
  std::optional<double> mean_lambda_star;
  std::optional<double> interior_fraction;  ///< share of replications with an interior risk minimizer
  std::vector<ReplicationOutcome> replicates;
};

namespace detail {

inline std::size_t argmin_prefer_large(const std::vector<double>& v, const std::vector<double>& lambdas) {
  SelectionResult r;
  r.scores = v;
  r.grid = lambda_grid(lambdas);
  choose(r);
  return r.chosen;
}

struct BenchDraw {
  PanelDataset panel;
  std::optional<VectorXd> cond_mean_pre;
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace detail

/// Monte-Carlo comparison of tuning-parameter selectors for the penalized
/// estimator. Every replication draws n + h periods with a zero treatment
/// effect; replication r uses the stream derived from (seed, r).
inline BenchmarkReport run_selection_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.replications < 1) throw ConfigError("need at least one replication");
  if (cfg.methods.empty()) throw ConfigError("no benchmark methods");
  if (cfg.lambdas.empty()) throw ConfigError("empty lambda grid");
  if (cfg.pre_periods < 4 || cfg.post_periods < 1) throw ConfigError("benchmark needs n >= 4 and h >= 1");
  const bool known_mean = cfg.design != BenchmarkDesign::block_bootstrap;
  for (BenchMethod m : cfg.methods)
    if (!known_mean && (m == BenchMethod::risk || m == BenchMethod::sure_true_sigma))
      throw ConfigError(std::string(to_string(m)) + " needs a design with a known conditional mean");

  const FactorModelSpec spec = cfg.spec ? *cfg.spec : synthetic_spec();
  const Index n = cfg.pre_periods;
  const Index h = cfg.post_periods;
  const Index total = n + h;
  const ConditionalMean cm(spec);
  const VectorXd pool = cfg.residual_pool ? *cfg.residual_pool
                                          : skewed_residual_pool(500, std::sqrt(cm.conditional_variance()), cfg.seed);
  MatrixXd source;
  if (cfg.design == BenchmarkDesign::block_bootstrap) {
    if (cfg.source) {
      source = *cfg.source;
    } else {
      Rng rng = make_rng(cfg.seed, 0, 0xb007ULL);
      const FactorDraw d = draw_factor_gaussian(spec, total, rng);
      source.resize(total, spec.donors() + 1);
      source.col(0) = d.Y;
      source.rightCols(spec.donors()) = d.X;
    }
    if (source.cols() < 3) throw ConfigError("bootstrap source needs a treated column and two donors");
  }

  BenchmarkReport rep;
  rep.design = cfg.design;
  rep.replications = cfg.replications;
  rep.seed = cfg.seed;
  rep.donors = cfg.design == BenchmarkDesign::block_bootstrap ? source.cols() - 1 : spec.donors();
  rep.pre_periods = n;
  rep.post_periods = h;
  rep.effect_horizon = std::min<Index>(12, h);
  rep.lambdas = cfg.lambdas;
  rep.methods = cfg.methods;
  if (cfg.design == BenchmarkDesign::gaussian) rep.sigma2_true = cm.conditional_variance();
  if (cfg.design == BenchmarkDesign::empirical) rep.sigma2_true = pool.squaredNorm() / static_cast<double>(pool.size()) - pool.mean() * pool.mean();

  const std::vector<GridPoint> grid = lambda_grid(cfg.lambdas);
  const std::size_t g = grid.size();
  const auto reps = static_cast<std::size_t>(cfg.replications);
  rep.replicates.resize(reps);

  auto draw = [&](std::size_t r) {
    Rng rng = make_rng(cfg.seed, r, 0xbe4cULL);
    detail::BenchDraw out;
    MatrixXd x;
    VectorXd y;
    if (cfg.design == BenchmarkDesign::block_bootstrap) {
      const MatrixXd s = stationary_bootstrap(source, cfg.block_prob, rng, total).data;
      y = s.col(0);
      x = s.rightCols(s.cols() - 1);
    } else {
      const FactorDraw d = cfg.design == BenchmarkDesign::gaussian ? draw_factor_gaussian(spec, total, rng)
                                                                   : draw_factor_empirical(spec, pool, total, rng);
      y = d.Y;
      x = d.X;
      out.cond_mean_pre = d.cond_mean.head(n);
      out.sigma2 = rep.sigma2_true;
    }
    out.panel.Y = y.head(n);
    out.panel.X = x.topRows(n);
    out.panel.post_Y = y.tail(h);
    out.panel.post_X = x.bottomRows(h);
    return out;
  };

  parallel_for(reps, [&](std::size_t r) {
    const detail::BenchDraw bd = draw(r);
    const PanelDataset& panel = bd.panel;
    ReplicationOutcome& ro = rep.replicates[r];
    ro.methods.resize(cfg.methods.size());

    std::vector<ScFit> fits;
    fits.reserve(g);
    std::vector<std::string> fit_err(g);
    for (std::size_t i = 0; i < g; ++i) {
      try {
        fits.push_back(solve_penalized_sc(panel.Y, panel.X, grid[i].lambda));
      } catch (const Error& e) {
        fits.push_back(ScFit{});
        fit_err[i] = e.what();
      }
    }
    std::vector<double> df(g, std::numeric_limits<double>::quiet_NaN());
    auto df_at = [&](std::size_t i) {
      if (std::isnan(df[i])) df[i] = df_hat(fits[i], panel.X).df_hat;
      return df[i];
    };
    if (bd.cond_mean_pre) {
      ro.true_risk.resize(g, std::numeric_limits<double>::infinity());
      for (std::size_t i = 0; i < g; ++i)
        if (fit_err[i].empty()) ro.true_risk[i] = true_proportional_risk(fits[i].fitted, *bd.cond_mean_pre);
      ro.lambda_star = detail::argmin_prefer_large(ro.true_risk, cfg.lambdas);
    }

    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      MethodOutcome& mo = ro.methods[mi];
      const BenchMethod m = cfg.methods[mi];
      try {
        std::vector<double> scores(g, std::numeric_limits<double>::infinity());
        double s2 = bd.sigma2;
        switch (m) {
          case BenchMethod::risk: scores = ro.true_risk; break;
          case BenchMethod::sure:
          case BenchMethod::sure_true_sigma:
            if (m == BenchMethod::sure) s2 = sigma2_hat(panel.Y, panel.X);
            for (std::size_t i = 0; i < g; ++i)
              if (fit_err[i].empty()) scores[i] = ic_value(fits[i].rss(), s2, df_at(i));
            break;
          case BenchMethod::cv_holdout:
            scores = cv_holdout(panel, EstimatorKind::penalized, grid, cfg.selection.split_fraction).scores;
            break;
          case BenchMethod::cv_loo_untreated:
            scores = cv_loo_untreated(panel, EstimatorKind::penalized, grid).scores;
            break;
          case BenchMethod::cv_rolling:
            scores = cv_rolling(panel, EstimatorKind::penalized, grid, cfg.selection.window, cfg.selection.horizon).scores;
            break;
        }
        const std::size_t k = detail::argmin_prefer_large(scores, cfg.lambdas);
        if (!fit_err[k].empty()) throw Error(fit_err[k]);
        mo.chosen = k;
        mo.lambda_hat = cfg.lambdas[k];
        const VectorXd tau = panel.post_Y - panel.post_X * fits[k].weights.beta;
        mo.tau1 = tau(0);
        mo.tau12 = tau.head(rep.effect_horizon).mean();
        const double nn = static_cast<double>(n);
        if (bd.cond_mean_pre) {
          const double rk = ro.true_risk[k];
          mo.risk_target = rk / nn + bd.sigma2;
          mo.risk_target_proportional = rk / nn;
          switch (m) {
            case BenchMethod::risk:
              mo.risk_hat = mo.risk_target;
              mo.risk_hat_proportional = mo.risk_target_proportional;
              mo.rank_corr = 1.0;
              break;
            case BenchMethod::sure:
            case BenchMethod::sure_true_sigma:
              mo.risk_hat = scores[k] / nn;
              mo.risk_hat_proportional = scores[k] / nn - s2;
              break;
            default:
              mo.risk_hat = scores[k];
              mo.risk_hat_proportional = scores[k] - bd.sigma2;
              break;
          }
          if (m != BenchMethod::risk) mo.rank_corr = spearman(scores, ro.true_risk);
        }
        mo.ok = true;
      } catch (const Error& e) {
        mo.ok = false;
        mo.error = e.what();
      }
    }
  });

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    MethodRow row;
    row.method = cfg.methods[mi];
    double s1 = 0, s12 = 0, sl = 0, sr = 0, srp = 0, slh = 0, sc = 0;
    int nc = 0;
    for (const ReplicationOutcome& ro : rep.replicates) {
      const MethodOutcome& mo = ro.methods[mi];
      if (!mo.ok) continue;
      ++row.completed;
      s1 += mo.tau1 * mo.tau1;
      s12 += mo.tau12 * mo.tau12;
      slh += mo.lambda_hat;
      if (ro.lambda_star) {
        const double dl = mo.lambda_hat - cfg.lambdas[*ro.lambda_star];
        sl += dl * dl;
        sr += (mo.risk_hat - mo.risk_target) * (mo.risk_hat - mo.risk_target);
        srp += (mo.risk_hat_proportional - mo.risk_target_proportional) *
               (mo.risk_hat_proportional - mo.risk_target_proportional);
        if (std::isfinite(mo.rank_corr)) {
          sc += mo.rank_corr;
          ++nc;
        }
      }
    }
    if (row.completed > 0) {
      const double c = row.completed;
      row.mse_tau1 = s1 / c;
      row.mse_tau12 = s12 / c;
      row.mean_lambda_hat = slh / c;
      if (known_mean) {
        row.mse_lambda = sl / c;
        row.mse_risk = sr / c;
        row.mse_risk_proportional = srp / c;
        if (nc > 0) row.mean_rank_corr = sc / nc;
      }
    }
    rep.rows.push_back(row);
  }

  if (known_mean) {
    rep.mean_true_risk.assign(g, 0.0);
    double ls = 0.0;
    int interior = 0;
    const double lo = *std::min_element(cfg.lambdas.begin(), cfg.lambdas.end());
    const double hi = *std::max_element(cfg.lambdas.begin(), cfg.lambdas.end());
    for (const ReplicationOutcome& ro : rep.replicates) {
      for (std::size_t i = 0; i < g; ++i) rep.mean_true_risk[i] += ro.true_risk[i] / cfg.replications;
      const double star = cfg.lambdas[*ro.lambda_star];
      ls += star;
      if (star > lo && star < hi) ++interior;
    }
    rep.mean_lambda_star = ls / cfg.replications;
    rep.interior_fraction = static_cast<double>(interior) / cfg.replications;
  }
  return rep;
}

}  // namespace synthsel
