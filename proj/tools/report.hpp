#pragma once

#include <synthsel/synthsel.hpp>

#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace synthsel::report {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json number(const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); }

inline Json vec(const VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline Json vec(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

inline Json names(const IndexSet& s, const std::vector<std::string>& labels) {
  Json a = Json::array();
  for (Index i : s)
    a.push_back(static_cast<std::size_t>(i) < labels.size() ? Json(labels[static_cast<std::size_t>(i)]) : Json(i));
  return a;
}

inline Json header(std::string_view command) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  return j;
}

inline Json to_json(const KktCertificate& k) {
  return Json{{"stationarity_residual", number(k.stationarity_residual)},
              {"complementarity_gap", number(k.complementarity_gap)},
              {"dual_infeasibility", number(k.dual_infeasibility)},
              {"sum_multiplier", number(k.sum_multiplier)},
              {"strictly_complementary", k.strictly_complementary},
              {"iterations", k.iterations}};
}

inline Json to_json(const DofReport& d) {
  return Json{{"df_hat", number(d.df_hat)},
              {"case", to_string(d.dof_case)},
              {"rank_XA", d.rank_XA},
              {"size_A", d.size_A},
              {"size_M_cap_E", d.size_M_cap_E},
              {"size_E_minus_M", d.size_E_minus_M}};
}

inline Json to_json(const ScFit& f, const std::vector<std::string>& donors) {
  Json w = Json::object();
  for (Index i = 0; i < f.weights.beta.size(); ++i)
    w[static_cast<std::size_t>(i) < donors.size() ? donors[static_cast<std::size_t>(i)] : std::to_string(i)] =
        number(f.weights.beta(i));
  Json j{{"estimator", to_string(f.kind)},
         {"lambda", number(f.lambda)},
         {"weights", w},
         {"active", names(f.sets.A, donors)},
         {"rss", number(f.rss())},
         {"degenerate", f.degenerate},
         {"kkt", to_json(f.kkt)}};
  if (f.kind == EstimatorKind::masc || f.kind == EstimatorKind::matching) j["m"] = f.m;
  if (f.V.size() > 0) j["V"] = vec(f.V);
  if (f.cov_case != CovariateCase::none) {
    j["covariate_case"] = f.cov_case == CovariateCase::many ? "many" : "few";
    j["M"] = f.sets.M;
    j["E"] = f.sets.E;
  }
  return j;
}

inline Json to_json(const SelectionResult& r) {
  Json pts = Json::array();
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    Json p{{"lambda", number(r.grid[i].lambda)}, {"m", r.grid[i].m}, {"score", number(r.scores[i])}};
    if (r.grid[i].v) p["v"] = vec(r.v_grid.at(*r.grid[i].v));
    if (!r.rss.empty()) {
      p["rss"] = number(r.rss[i]);
      p["df"] = number(r.df[i]);
    }
    if (!r.errors[i].empty()) p["error"] = r.errors[i];
    pts.push_back(p);
  }
  Json j{{"method", to_string(r.method)}, {"estimator", to_string(r.kind)}};
  if (r.method == SelectionMethod::sure) j["sigma2_hat"] = number(r.sigma2_hat);
  j["chosen"] = r.chosen;
  j["best"] = pts[r.chosen];
  j["tied"] = r.tied;
  j["grid"] = pts;
  return j;
}

inline Json to_json(const EffectPath& e, const std::vector<std::string>& times) {
  Json rows = Json::array();
  for (Index t = 0; t < e.tau.size(); ++t) {
    const auto& rel = e.relative[static_cast<std::size_t>(t)];
    rows.push_back(Json{{"time", static_cast<std::size_t>(t) < times.size() ? times[static_cast<std::size_t>(t)] : std::to_string(t)},
                        {"forecast", number(e.forecast(t))},
                        {"tau", number(e.tau(t))},
                        {"relative", rel ? number(*rel) : Json(nullptr)}});
  }
  Json avg = Json::object();
  for (const auto& [h, v] : e.tau_avg) avg["h" + std::to_string(h)] = number(v);
  return Json{{"tau_avg", avg}, {"path", rows}};
}

inline Json to_json(const WhiteTestReport& w) {
  return Json{{"r_squared", number(w.r_squared)}, {"statistic", number(w.statistic)},
              {"p_value", number(w.p_value)},     {"regressor_count", w.regressor_count},
              {"regressors", w.regressors},       {"dropped", w.dropped}};
}

inline Json to_json(const McDofResult& m) {
  return Json{{"df", number(m.df)},
              {"se", number(m.se)},
              {"active_minus_one_mean", number(m.extra_mean)},
              {"active_minus_one_se", number(m.extra_se)},
              {"difference_se", number(m.diff_se)},
              {"replications", m.replications}};
}

inline Json to_json(const BenchmarkReport& r, bool per_replication) {
  Json j{{"design", to_string(r.design)},
         {"replications", r.replications},
         {"seed", r.seed},
         {"donors", r.donors},
         {"pre_periods", r.pre_periods},
         {"post_periods", r.post_periods},
         {"effect_horizon", r.effect_horizon},
         {"sigma2_true", number(r.sigma2_true)},
         {"lambdas", vec(r.lambdas)}};
  Json rows = Json::array();
  for (const MethodRow& m : r.rows)
    rows.push_back(Json{{"method", to_string(m.method)},
                        {"completed", m.completed},
                        {"mse_tau1", number(m.mse_tau1)},
                        {"mse_tau12", number(m.mse_tau12)},
                        {"mse_lambda", number(m.mse_lambda)},
                        {"mse_risk_forecast", number(m.mse_risk)},
                        {"mse_risk_proportional", number(m.mse_risk_proportional)},
                        {"mean_rank_corr", number(m.mean_rank_corr)},
                        {"mean_lambda_hat", number(m.mean_lambda_hat)}});
  j["rows"] = rows;
  j["mean_true_risk"] = r.mean_true_risk.empty() ? Json(nullptr) : vec(r.mean_true_risk);
  j["mean_lambda_star"] = number(r.mean_lambda_star);
  j["interior_fraction"] = number(r.interior_fraction);
  if (per_replication) {
    Json reps = Json::array();
    for (const ReplicationOutcome& ro : r.replicates) {
      Json ms = Json::array();
      for (std::size_t i = 0; i < ro.methods.size(); ++i) {
        const MethodOutcome& mo = ro.methods[i];
        Json m{{"method", to_string(r.methods[i])}, {"ok", mo.ok}};
        if (mo.ok) {
          m["lambda_hat"] = number(mo.lambda_hat);
          m["tau1"] = number(mo.tau1);
          m["tau12"] = number(mo.tau12);
          m["risk_hat"] = number(mo.risk_hat);
          m["rank_corr"] = number(mo.rank_corr);
        } else {
          m["error"] = mo.error;
        }
        ms.push_back(m);
      }
      Json one{{"methods", ms}};
      if (ro.lambda_star) one["lambda_star"] = number(r.lambdas[*ro.lambda_star]);
      reps.push_back(one);
    }
    j["replicates"] = reps;
  }
  return j;
}

}  // namespace synthsel::report
