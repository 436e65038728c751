#include "report.hpp"

#include <synthsel/synthsel.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace synthsel;
using report::Json;

struct DataOptions {
  std::string input;
  std::string treated;
  std::string treatment_period;
  std::string covariates;
  int ma_window = 1;
  bool demean = false;
};

struct OutputOptions {
  std::string output;
  std::string csv;
};

struct FitOptions {
  std::string estimator = "penalized";
  double lambda = 0.0;
  int m = 1;
  std::string v;
};

void add_data(CLI::App* cmd, DataOptions& d, bool required = true) {
  auto* in = cmd->add_option("--input", d.input, "Panel CSV (time column, then one column per unit)");
  auto* tr = cmd->add_option("--treated", d.treated, "Column of the treated unit");
  if (required) {
    in->required();
    tr->required();
  }
  cmd->add_option("--treatment-period", d.treatment_period, "Time label of the first treated period");
  cmd->add_option("--covariates", d.covariates, "Covariate CSV (covariate column, then one column per unit)");
  cmd->add_option("--ma-window", d.ma_window, "Trailing moving-average window")->check(CLI::PositiveNumber);
  cmd->add_flag("--demean", d.demean, "Remove pre-treatment means");
}

void add_output(CLI::App* cmd, OutputOptions& o) {
  cmd->add_option("--output", o.output, "JSON report path (stdout when omitted)");
  cmd->add_option("--csv", o.csv, "Optional CSV table path");
}

void add_fit(CLI::App* cmd, FitOptions& f) {
  cmd->add_option("--estimator", f.estimator, "plain | covariate | penalized | masc | matching");
  cmd->add_option("--lambda", f.lambda, "Penalty or mixing weight");
  cmd->add_option("--m", f.m, "Nearest-neighbour count for matching and MASC")->check(CLI::PositiveNumber);
  cmd->add_option("--v", f.v, "Comma-separated covariate weights");
}

PanelDataset load(const DataOptions& d) {
  LoadOptions o;
  o.treated = d.treated;
  if (!d.treatment_period.empty()) o.treatment_period = d.treatment_period;
  if (!d.covariates.empty()) o.covariates_path = d.covariates;
  PanelDataset p = load_panel(d.input, o);
  if (d.ma_window > 1 || d.demean) {
    p = preprocess(p, d.ma_window, d.demean);
    validate(p);
  }
  return p;
}

std::vector<VectorXd> single_v(const std::string& v) {
  if (v.empty()) return {};
  const std::vector<double> vals = parse_grid(v);
  return {Eigen::Map<const VectorXd>(vals.data(), static_cast<Index>(vals.size()))};
}

ScFit fit_one(const PanelDataset& p, const FitOptions& f) {
  GridPoint pt{f.lambda, f.m, std::nullopt};
  const std::vector<VectorXd> v = single_v(f.v);
  if (!v.empty()) pt.v = 0;
  return fit_estimator(parse_estimator_kind(f.estimator), fit_input(p), pt, v);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

void emit(const Json& j, const OutputOptions& o) {
  const std::string text = j.dump(2) + "\n";
  if (o.output.empty()) {
    std::cout << text;
  } else {
    write_text(o.output, text);
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

Json fit_report(const PanelDataset& p, const ScFit& fit) {
  Json j = report::header("fit");
  j["treated"] = p.treated_name;
  j["fit"] = report::to_json(fit, p.donor_names);
  j["df"] = report::to_json(df_hat(fit, p.X));
  const double s2 = sigma2_hat(p.Y, p.X);
  j["sigma2_hat"] = report::number(s2);
  j["ic"] = report::number(ic_value(fit.rss(), s2, df_hat(fit, p.X).df_hat));
  j["penalty_distance"] = report::number(penalty_distance(fit, p.X));
  if (p.has_post()) j["effect"] = report::to_json(effect_path(fit, p.post_Y, p.post_X), p.post_times);
  return j;
}

void fit_csv(const PanelDataset& p, const ScFit& fit, const std::string& path) {
  std::ostringstream s;
  s << "time,period,observed,synthetic,effect\n";
  for (Index t = 0; t < p.n(); ++t)
    s << p.pre_times[static_cast<std::size_t>(t)] << ",pre," << fmt(p.Y(t)) << ',' << fmt(fit.fitted(t)) << ','
      << fmt(p.Y(t) - fit.fitted(t)) << '\n';
  if (p.has_post()) {
    const EffectPath e = effect_path(fit, p.post_Y, p.post_X);
    for (Index t = 0; t < e.tau.size(); ++t)
      s << p.post_times[static_cast<std::size_t>(t)] << ",post," << fmt(p.post_Y(t)) << ',' << fmt(e.forecast(t)) << ','
        << fmt(e.tau(t)) << '\n';
  }
  write_text(path, s.str());
}

struct GridOptions {
  std::string grid;
  std::string m_grid;
  int v_steps = 4;
};

void add_grid(CLI::App* cmd, GridOptions& g) {
  cmd->add_option("--grid", g.grid, "Lambda grid: a:b:n, log:a:b:n or a comma list");
  cmd->add_option("--m-grid", g.m_grid, "MASC neighbour counts: a:b:n or a comma list");
  cmd->add_option("--v-steps", g.v_steps, "Lattice resolution of the covariate-weight grid")->check(CLI::PositiveNumber);
}

std::vector<GridPoint> build_grid(EstimatorKind kind, const GridOptions& g, Index p) {
  if (g.grid.empty() && g.m_grid.empty()) return default_grid(kind, p);
  const std::vector<double> lambdas = g.grid.empty()
                                          ? (kind == EstimatorKind::masc ? default_masc_lambdas() : default_penalized_lambdas())
                                          : parse_grid(g.grid);
  if (kind != EstimatorKind::masc && kind != EstimatorKind::matching) return lambda_grid(lambdas);
  std::vector<int> ms;
  if (!g.m_grid.empty())
    for (double m : parse_grid(g.m_grid)) ms.push_back(static_cast<int>(m));
  return masc_grid(lambdas, p, ms);
}

std::vector<VectorXd> v_grid_for(const PanelDataset& p, EstimatorKind kind, const GridOptions& g,
                                 std::vector<GridPoint>& grid) {
  if (kind != EstimatorKind::covariate || !p.has_covariates()) return {};
  std::vector<VectorXd> vg = default_v_grid(p.D.rows(), g.v_steps);
  std::vector<GridPoint> out;
  for (std::size_t v = 0; v < vg.size(); ++v)
    for (GridPoint pt : grid) {
      pt.v = v;
      out.push_back(pt);
    }
  grid = std::move(out);
  return vg;
}

void curve_csv(const SelectionResult& r, const std::string& path) {
  std::ostringstream s;
  s << "lambda,m,v,score\n";
  for (std::size_t i = 0; i < r.grid.size(); ++i)
    s << fmt(r.grid[i].lambda) << ',' << r.grid[i].m << ',' << (r.grid[i].v ? std::to_string(*r.grid[i].v) : "") << ','
      << fmt(r.scores[i]) << '\n';
  write_text(path, s.str());
}

Json error_json(const std::string& type, const std::string& message) {
  Json j = report::header("error");
  j["error"] = Json{{"type", type}, {"message", message}};
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic control estimation, degrees of freedom and tuning-parameter selection"};
  app.require_subcommand(1);
  std::function<Json()> action;
  OutputOptions out;

  // fit
  DataOptions fit_data;
  FitOptions fit_opts;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one estimator");
  add_data(fit_cmd, fit_data);
  add_fit(fit_cmd, fit_opts);
  add_output(fit_cmd, out);
  fit_cmd->callback([&] {
    action = [&] {
      const PanelDataset p = load(fit_data);
      const ScFit fit = fit_one(p, fit_opts);
      if (!out.csv.empty()) fit_csv(p, fit, out.csv);
      return fit_report(p, fit);
    };
  });

  // select / cv
  DataOptions sel_data;
  GridOptions sel_grid;
  std::string sel_method = "sure", sel_estimator = "penalized";
  SelectionOptions sel_opts;
  auto add_select = [&](const std::string& name, const std::string& desc, const std::string& default_method) {
    auto* cmd = app.add_subcommand(name, desc);
    add_data(cmd, sel_data);
    add_grid(cmd, sel_grid);
    add_output(cmd, out);
    cmd->add_option("--method", sel_method, "sure | holdout | loo | rolling");
    cmd->add_option("--estimator", sel_estimator, "plain | covariate | penalized | masc | matching");
    cmd->add_option("--split", sel_opts.split_fraction, "Holdout training fraction");
    cmd->add_option("--window", sel_opts.window, "Rolling training window (0 = half the periods)");
    cmd->add_option("--horizon", sel_opts.horizon, "Rolling forecast horizon");
    cmd->preparse_callback([&, default_method](std::size_t) { sel_method = default_method; });
    cmd->callback([&, name] {
      action = [&, name] {
        const PanelDataset p = load(sel_data);
        const EstimatorKind kind = parse_estimator_kind(sel_estimator);
        std::vector<GridPoint> grid = build_grid(kind, sel_grid, p.p());
        const std::vector<VectorXd> vg = v_grid_for(p, kind, sel_grid, grid);
        const SelectionResult r = select(parse_selection_method(sel_method), p, kind, grid, sel_opts, vg);
        if (!out.csv.empty()) curve_csv(r, out.csv);
        Json j = report::header(name);
        j["selection"] = report::to_json(r);
        const ScFit best = fit_estimator(kind, fit_input(p), r.best(), vg);
        j["fit"] = report::to_json(best, p.donor_names);
        j["df"] = report::to_json(df_hat(best, p.X));
        if (p.has_post()) j["effect"] = report::to_json(effect_path(best, p.post_Y, p.post_X), p.post_times);
        return j;
      };
    });
  };
  add_select("select", "Select tuning parameters", "sure");
  add_select("cv", "Select tuning parameters by cross-validation", "holdout");

  // df
  DataOptions df_data;
  FitOptions df_fit;
  bool df_fd = false;
  auto* df_cmd = app.add_subcommand("df", "Divergence and degrees of freedom of a fit");
  add_data(df_cmd, df_data);
  add_fit(df_cmd, df_fit);
  add_output(df_cmd, out);
  df_cmd->add_flag("--fd", df_fd, "Also compute the finite-difference divergence");
  df_cmd->callback([&] {
    action = [&] {
      const PanelDataset p = load(df_data);
      const ScFit fit = fit_one(p, df_fit);
      Json j = report::header("df");
      j["fit"] = report::to_json(fit, p.donor_names);
      j["df"] = report::to_json(df_hat(fit, p.X));
      const MatrixXd* d = p.has_covariates() ? &p.D : nullptr;
      const DivergenceMatrix an = divergence(fit, p.X, p.Y, d);
      j["divergence_trace"] = report::number(an.trace);
      if (df_fd) {
        auto solver = [&](const VectorXd& y) {
          PanelDataset q = p;
          q.Y = y;
          return fit_one(q, df_fit);
        };
        const FdDivergence fd = divergence_fd_oracle(solver, p.Y, default_fd_step(p.Y));
        j["fd"] = Json{{"trace", report::number(fd.divergence.trace)},
                       {"max_abs_difference", report::number((fd.divergence.matrix - an.matrix).cwiseAbs().maxCoeff())},
                       {"active_set_changed", fd.set_flip},
                       {"flipped_columns", fd.flipped_columns}};
      }
      return j;
    };
  });

  // simulate
  DataOptions sim_data;
  std::string sim_design = "gaussian";
  Index sim_periods = 48, sim_factors = 5, sim_donors = 40, sim_support = 10;
  std::uint64_t sim_seed = 1;
  int sim_dof_reps = 0;
  double sim_sum_to = 1.0;
  auto* sim_cmd = app.add_subcommand("simulate", "Draw a panel from a factor model");
  add_data(sim_cmd, sim_data, false);
  add_output(sim_cmd, out);
  sim_cmd->add_option("--design", sim_design, "gaussian | empirical");
  sim_cmd->add_option("--periods", sim_periods, "Number of periods to draw")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--factors", sim_factors, "Factor count");
  sim_cmd->add_option("--donors", sim_donors, "Donor count of the synthetic model")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--support", sim_support, "Donors behind the treated loading")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim_seed, "Random seed");
  sim_cmd->add_option("--dof-reps", sim_dof_reps, "Monte-Carlo replications for the df of the SC fit (0 = skip)");
  sim_cmd->add_option("--sum-to", sim_sum_to, "Weight total for the df experiment")->check(CLI::PositiveNumber);
  sim_cmd->callback([&] {
    action = [&] {
      FactorModelSpec spec;
      std::vector<std::string> donor_names;
      std::string treated = "treated";
      VectorXd pool;
      if (!sim_data.input.empty()) {
        if (sim_data.treated.empty()) throw ConfigError("--treated is required with --input");
        const PanelDataset p = load(sim_data);
        spec = fit_factor_model(p, sim_factors);
        donor_names = p.donor_names;
        treated = p.treated_name;
        pool = empirical_residuals(spec, p);
        pool.array() -= pool.mean();
      } else {
        SyntheticSpecOptions o;
        o.donors = sim_donors;
        o.factors = sim_factors;
        o.support = sim_support;
        o.seed = sim_seed;
        spec = synthetic_spec(o);
        for (Index j = 0; j < spec.donors(); ++j) donor_names.push_back("donor" + std::to_string(j + 1));
      }
      const ConditionalMean cm(spec);
      const BenchmarkDesign design = parse_benchmark_design(sim_design);
      if (design == BenchmarkDesign::block_bootstrap) throw ConfigError("simulate draws gaussian or empirical panels");
      if (pool.size() == 0) pool = skewed_residual_pool(500, std::sqrt(cm.conditional_variance()), sim_seed);
      Rng rng = make_rng(sim_seed, 0, 0x51aULL);
      const FactorDraw d = design == BenchmarkDesign::gaussian ? draw_factor_gaussian(spec, sim_periods, rng)
                                                               : draw_factor_empirical(spec, pool, sim_periods, rng);
      Json j = report::header("simulate");
      j["design"] = to_string(design);
      j["seed"] = sim_seed;
      j["donors"] = spec.donors();
      j["factors"] = spec.factors();
      j["periods"] = sim_periods;
      j["omega_star"] = report::vec(spec.omega_star);
      j["sigma2"] = report::vec(spec.sigma2);
      j["conditional_variance"] = report::number(cm.conditional_variance());
      Json orders = Json::array();
      for (const auto& [ar, ma] : spec.innovation_orders) orders.push_back(Json::array({ar, ma}));
      j["innovation_orders"] = orders;
      if (sim_dof_reps > 0) {
        const GaussianDgp dgp{d.cond_mean, std::sqrt(cm.conditional_variance())};
        ScOptions so;
        so.sum_to = sim_sum_to;
        const McDofResult r = mc_dof(
            dgp,
            [&](const VectorXd& y) {
              const ScFit f = solve_sc(y, d.X, so);
              return McSample{f.fitted, static_cast<double>(f.sets.A.size()) - 1.0};
            },
            sim_dof_reps, sim_seed);
        j["mc_dof"] = report::to_json(r);
        j["mc_dof"]["sum_to"] = sim_sum_to;
      }
      if (!out.csv.empty()) {
        PanelDataset p;
        p.treated_name = treated;
        p.donor_names = donor_names;
        p.Y = d.Y;
        p.X = d.X;
        for (Index t = 0; t < sim_periods; ++t) p.pre_times.push_back(std::to_string(t + 1));
        std::ostringstream s;
        write_panel_csv(p, s);
        write_text(out.csv, s.str());
      }
      return j;
    };
  });

  // benchmark
  DataOptions bench_data;
  BenchmarkConfig bench;
  std::string bench_design = "gaussian", bench_methods, bench_grid;
  Index bench_donors = 40, bench_factors = 5, bench_support = 10;
  bool bench_per_rep = false;
  auto* bench_cmd = app.add_subcommand("benchmark", "Compare tuning-parameter selectors by simulation");
  add_data(bench_cmd, bench_data, false);
  add_output(bench_cmd, out);
  bench_cmd->add_option("--design", bench_design, "gaussian | empirical | block_bootstrap");
  bench_cmd->add_option("--reps", bench.replications, "Replications")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.seed, "Random seed");
  bench_cmd->add_option("--methods", bench_methods, "Comma list of risk, sure, sure_true_sigma, holdout, loo, rolling");
  bench_cmd->add_option("--donors", bench_donors, "Donor count of the synthetic model")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--factors", bench_factors, "Factor count");
  bench_cmd->add_option("--support", bench_support, "Donors behind the treated loading")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--periods", bench.pre_periods, "Pre-treatment periods per draw");
  bench_cmd->add_option("--post", bench.post_periods, "Post-treatment periods per draw");
  bench_cmd->add_option("--grid", bench_grid, "Lambda grid");
  bench_cmd->add_option("--block-prob", bench.block_prob, "Stationary-bootstrap restart probability");
  bench_cmd->add_option("--split", bench.selection.split_fraction, "Holdout training fraction");
  bench_cmd->add_option("--window", bench.selection.window, "Rolling training window");
  bench_cmd->add_option("--horizon", bench.selection.horizon, "Rolling forecast horizon");
  bench_cmd->add_flag("--per-replication", bench_per_rep, "Include per-replication outcomes");
  bench_cmd->callback([&] {
    action = [&] {
      bench.design = parse_benchmark_design(bench_design);
      if (!bench_grid.empty()) bench.lambdas = parse_grid(bench_grid);
      if (!bench_methods.empty()) {
        bench.methods.clear();
        std::stringstream ss(bench_methods);
        std::string m;
        while (std::getline(ss, m, ',')) bench.methods.push_back(parse_bench_method(m));
      } else if (bench.design == BenchmarkDesign::block_bootstrap) {
        bench.methods = {BenchMethod::sure, BenchMethod::cv_holdout, BenchMethod::cv_loo_untreated, BenchMethod::cv_rolling};
      }
      if (!bench_data.input.empty()) {
        if (bench_data.treated.empty()) throw ConfigError("--treated is required with --input");
        const PanelDataset p = load(bench_data);
        if (bench.design == BenchmarkDesign::block_bootstrap) {
          MatrixXd src(p.n(), p.p() + 1);
          src << p.Y, p.X;
          bench.source = src;
        } else {
          bench.spec = fit_factor_model(p, bench_factors);
          VectorXd pool = empirical_residuals(*bench.spec, p);
          pool.array() -= pool.mean();
          bench.residual_pool = pool;
        }
      } else {
        SyntheticSpecOptions o;
        o.donors = bench_donors;
        o.factors = bench_factors;
        o.support = bench_support;
        bench.spec = synthetic_spec(o);
      }
      const BenchmarkReport r = run_selection_benchmark(bench);
      if (!out.csv.empty()) {
        std::ostringstream s;
        s << "method,completed,mse_tau1,mse_tau12,mse_lambda,mse_risk_forecast,mse_risk_proportional,mean_rank_corr\n";
        auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
        for (const MethodRow& m : r.rows)
          s << to_string(m.method) << ',' << m.completed << ',' << fmt(m.mse_tau1) << ',' << fmt(m.mse_tau12) << ','
            << opt(m.mse_lambda) << ',' << opt(m.mse_risk) << ',' << opt(m.mse_risk_proportional) << ','
            << opt(m.mean_rank_corr) << '\n';
        write_text(out.csv, s.str());
      }
      Json j = report::header("benchmark");
      j["benchmark"] = report::to_json(r, bench_per_rep);
      return j;
    };
  });

  // placebo
  DataOptions pl_data;
  GridOptions pl_grid;
  std::string pl_estimator = "penalized";
  Index pl_horizon = 12;
  auto* pl_cmd = app.add_subcommand("placebo", "Forecast error on a unit known to be untreated");
  add_data(pl_cmd, pl_data);
  add_grid(pl_cmd, pl_grid);
  add_output(pl_cmd, out);
  pl_cmd->add_option("--estimator", pl_estimator, "plain | covariate | penalized | masc | matching");
  pl_cmd->add_option("--horizon", pl_horizon, "Periods averaged in the error")->check(CLI::PositiveNumber);
  pl_cmd->callback([&] {
    action = [&] {
      const PanelDataset p = load(pl_data);
      const EstimatorKind kind = parse_estimator_kind(pl_estimator);
      std::vector<GridPoint> grid = build_grid(kind, pl_grid, p.p());
      const std::vector<VectorXd> vg = v_grid_for(p, kind, pl_grid, grid);
      const std::vector<double> curve = placebo_curve(p, kind, grid, pl_horizon, vg);
      Json pts = Json::array();
      std::ostringstream s;
      s << "lambda,m,mse\n";
      for (std::size_t i = 0; i < grid.size(); ++i) {
        pts.push_back(Json{{"lambda", grid[i].lambda}, {"m", grid[i].m}, {"mse", report::number(curve[i])}});
        s << fmt(grid[i].lambda) << ',' << grid[i].m << ',' << fmt(curve[i]) << '\n';
      }
      if (!out.csv.empty()) write_text(out.csv, s.str());
      Json j = report::header("placebo");
      j["unit"] = p.treated_name;
      j["estimator"] = to_string(kind);
      j["horizon"] = std::min<Index>(pl_horizon, p.post_Y.size());
      j["curve"] = pts;
      return j;
    };
  });

  // whitetest
  DataOptions wt_data;
  FitOptions wt_fit;
  auto* wt_cmd = app.add_subcommand("whitetest", "Heteroskedasticity test on the fit residuals");
  add_data(wt_cmd, wt_data);
  add_fit(wt_cmd, wt_fit);
  add_output(wt_cmd, out);
  wt_cmd->callback([&] {
    action = [&] {
      const PanelDataset p = load(wt_data);
      const ScFit fit = fit_one(p, wt_fit);
      Json j = report::header("whitetest");
      j["fit"] = report::to_json(fit, p.donor_names);
      j["white_test"] = report::to_json(white_test(fit, p.X));
      return j;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    emit(action(), out);
    return 0;
  } catch (const ParseError& e) {
    Json j = error_json("parse_error", e.what());
    j["error"]["row"] = e.row();
    j["error"]["column"] = e.column();
    std::cout << j.dump(2) << '\n';
  } catch (const SingularityError& e) {
    Json j = error_json("singularity_error", e.what());
    j["error"]["block"] = e.block();
    std::cout << j.dump(2) << '\n';
  } catch (const ConvergenceError& e) {
    Json j = error_json("convergence_error", e.what());
    j["error"]["stationarity"] = report::number(e.stationarity());
    j["error"]["iterations"] = e.iterations();
    std::cout << j.dump(2) << '\n';
  } catch (const ConfigError& e) {
    std::cout << error_json("config_error", e.what()).dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cout << error_json("error", e.what()).dump(2) << '\n';
  }
  return 1;
}
