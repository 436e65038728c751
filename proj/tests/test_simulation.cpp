#include "oracles.hpp"

#include <synthsel/benchmark.hpp>
#include <synthsel/bootstrap.hpp>
#include <synthsel/estimators.hpp>
#include <synthsel/factor_model.hpp>
#include <synthsel/mc_dof.hpp>
#include <synthsel/stats.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace synthsel;

namespace {

MatrixXd row_ids(Index t, Index k) {
  MatrixXd m(t, k);
  for (Index i = 0; i < t; ++i)
    for (Index j = 0; j < k; ++j) m(i, j) = static_cast<double>(i * 10 + j);
  return m;
}

FactorModelSpec small_spec(Index p, Index r, double noise, std::uint64_t seed) {
  SyntheticSpecOptions o;
  o.donors = p;
  o.factors = r;
  o.support = std::min<Index>(2, p);
  o.donor_noise = noise;
  o.treated_noise = noise;
  o.seed = seed;
  return synthetic_spec(o);
}

}  // namespace

TEST(Bootstrap, UnitProbabilityRestartsEveryRow) {
  Rng rng = make_rng(3);
  const BootstrapSample s = stationary_bootstrap(row_ids(20, 2), 1.0, rng, 200);
  ASSERT_EQ(s.block_starts.size(), 200u);
  for (Index i = 0; i < 200; ++i) EXPECT_EQ(s.block_starts[static_cast<std::size_t>(i)], i);
}

TEST(Bootstrap, JointRowsAndCircularBlocks) {
  Rng rng = make_rng(11);
  const MatrixXd src = row_ids(15, 3);
  const BootstrapSample s = stationary_bootstrap(src, 0.1, rng, 300);
  std::size_t b = 0;
  for (Index i = 0; i < 300; ++i) {
    const Index src_row = s.indices[static_cast<std::size_t>(i)];
    EXPECT_TRUE(s.data.row(i).isApprox(src.row(src_row)));
    const bool starts = b < s.block_starts.size() && s.block_starts[b] == i;
    if (starts) {
      ++b;
    } else {
      EXPECT_EQ(src_row, (s.indices[static_cast<std::size_t>(i - 1)] + 1) % 15);
    }
  }
}

TEST(Bootstrap, SeedDeterminism) {
  const MatrixXd src = row_ids(30, 2);
  const BootstrapSample a = stationary_bootstrap(src, BootstrapSpec{0.2, 99});
  const BootstrapSample b = stationary_bootstrap(src, BootstrapSpec{0.2, 99});
  const BootstrapSample c = stationary_bootstrap(src, BootstrapSpec{0.2, 100});
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.data, b.data);
  EXPECT_NE(a.indices, c.indices);
}

TEST(Bootstrap, MeanBlockLength) {
  for (double q : {0.1, 0.2, 0.5}) {
    Rng rng = make_rng(5, static_cast<std::uint64_t>(q * 100));
    std::vector<Index> lengths;
    while (lengths.size() < 10000) {
      const auto l = block_lengths(stationary_bootstrap(row_ids(50, 1), q, rng, 5000));
      lengths.insert(lengths.end(), l.begin(), l.end());
    }
    lengths.resize(10000);
    const double m = std::accumulate(lengths.begin(), lengths.end(), 0.0) / 10000.0;
    EXPECT_NEAR(m, 1.0 / q, 0.05 / q) << "block_prob " << q;
  }
}

TEST(Bootstrap, MarginalMatchesSourceRows) {
  const Index t = 10;
  const MatrixXd src = row_ids(t, 1);
  std::vector<double> counts(static_cast<std::size_t>(t), 0.0);
  const int draws = 10000;
  for (int r = 0; r < draws; ++r) {
    Rng rng = make_rng(21, static_cast<std::uint64_t>(r));
    const BootstrapSample s = stationary_bootstrap(src, 0.3, rng, t);
    counts[static_cast<std::size_t>(s.indices[6])] += 1.0;
  }
  double stat = 0.0;
  const double expected = static_cast<double>(draws) / static_cast<double>(t);
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared chi(static_cast<double>(t - 1));
  EXPECT_GT(boost::math::cdf(boost::math::complement(chi, stat)), 0.01);
}

TEST(Bootstrap, RejectsBadInput) {
  Rng rng = make_rng(1);
  EXPECT_THROW(stationary_bootstrap(row_ids(1, 2), 0.5, rng), ConfigError);
  EXPECT_THROW(stationary_bootstrap(row_ids(5, 2), 0.0, rng), ConfigError);
  EXPECT_THROW(stationary_bootstrap(row_ids(5, 2), 1.5, rng), ConfigError);
}

TEST(ArFit, RecoversOrderAndCoefficient) {
  Rng rng = make_rng(8);
  const VectorXd white = simulate_ar(VectorXd(0), 1.0, 2.0, 4000, rng);
  EXPECT_EQ(fit_ar_bic(white).order, 0);
  VectorXd phi(1);
  phi << 0.6;
  const VectorXd ar = simulate_ar(phi, 1.0 - 0.36, 1.0, 4000, rng);
  const ArFit f = fit_ar_bic(ar);
  EXPECT_GE(f.order, 1);
  EXPECT_NEAR(f.coefs(0), 0.6, 0.05);
  EXPECT_NEAR(f.variance, 1.0, 0.1);
}

TEST(FactorModel, RankOneRecovery) {
  const Index t = 25, p = 6;
  VectorXd psi = oracle::gaussian_vector(t, 4);
  VectorXd l = oracle::gaussian_vector(p, 5);
  l.array() -= l.mean();
  VectorXd delta = oracle::gaussian_vector(t, 6);
  PanelDataset panel;
  panel.X = psi * l.transpose();
  panel.X.colwise() += delta;
  VectorXd w = VectorXd::Zero(p);
  w(0) = 0.3;
  w(2) = 0.7;
  panel.Y = panel.X * w;
  const FactorModelSpec spec = fit_factor_model(panel, 1);
  const VectorXd got = spec.donor_loadings().col(0);
  const double cosang = std::abs(got.dot(l)) / (got.norm() * l.norm());
  EXPECT_LE(std::acos(std::min(1.0, cosang)), 1e-6);
  EXPECT_TRUE(spec.delta.isApprox(delta, 1e-12));
}

TEST(FactorModel, ZeroFactorsAndPlugIn) {
  const MatrixXd x = oracle::gaussian_matrix(20, 5, 12);
  PanelDataset panel;
  panel.X = x;
  panel.Y = 0.5 * x.col(1) + 0.5 * x.col(3) + 0.1 * oracle::gaussian_vector(20, 13);
  const FactorModelSpec s0 = fit_factor_model(panel, 0);
  EXPECT_EQ(s0.factors(), 0);
  EXPECT_EQ(s0.L.rows(), 6);
  const FactorModelSpec s2 = fit_factor_model(panel, 2);
  EXPECT_TRUE(s2.omega_star.isApprox(solve_sc(panel.Y, panel.X).weights.beta, 1e-14));
  EXPECT_LE((s2.treated_loading() - s2.donor_loadings().transpose() * s2.omega_star).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_TRUE((s2.sigma2.array() > 0.0).all());
  EXPECT_THROW(fit_factor_model(panel, 6), ConfigError);
}

TEST(FactorModel, SyntheticLoadingIdentity) {
  const FactorModelSpec s = synthetic_spec();
  EXPECT_EQ(s.donors(), 40);
  EXPECT_NEAR(s.omega_star.sum(), 1.0, 1e-14);
  EXPECT_LE((s.treated_loading() - s.donor_loadings().transpose() * s.omega_star).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(FactorDraws, NoiselessLimit) {
  const FactorModelSpec s = small_spec(3, 1, 1e-8, 31);
  const FactorDraw d = draw_factor_gaussian(s, 40, 5);
  EXPECT_LE((d.Y_star - d.X_star * s.omega_star).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LE((d.Y - d.X * s.omega_star).lpNorm<Eigen::Infinity>(), 1e-2);
}

TEST(FactorDraws, GaussianDeterminism) {
  const FactorModelSpec s = small_spec(6, 2, 1.0, 32);
  const FactorDraw a = draw_factor_gaussian(s, 30, 77);
  const FactorDraw b = draw_factor_gaussian(s, 30, 77);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_EQ(a.X, b.X);
  EXPECT_NE(a.Y, draw_factor_gaussian(s, 30, 78).Y);
}

TEST(FactorDraws, GaussianCovariance) {
  const FactorModelSpec s = small_spec(8, 3, 0.7, 33);
  const Index t = 50000;
  const FactorDraw d = draw_factor_gaussian(s, t, 9);
  MatrixXd z(t, 9);
  z.col(0) = d.Y;
  z.rightCols(8) = d.X;
  const MatrixXd c = z.rowwise() - z.colwise().mean();
  const MatrixXd sample = c.transpose() * c / static_cast<double>(t - 1);
  MatrixXd truth = s.L * s.L.transpose();
  truth.diagonal() += s.sigma2;
  EXPECT_LE((sample - truth).norm() / truth.norm(), 0.03);
}

TEST(FactorDraws, EmpiricalZeroPool) {
  const FactorModelSpec s = small_spec(5, 2, 1.0, 34);
  const FactorDraw d = draw_factor_empirical(s, VectorXd::Zero(10), 25, 3);
  EXPECT_EQ(d.Y, d.cond_mean);
}

TEST(FactorDraws, EmpiricalDeterminismAndVariance) {
  const FactorModelSpec s = small_spec(5, 2, 1.0, 35);
  const VectorXd pool = skewed_residual_pool(1000, 1.5, 4);
  EXPECT_NEAR(pool.mean(), 0.0, 1e-12);
  const FactorDraw a = draw_factor_empirical(s, pool, 10000, 8);
  EXPECT_EQ(a.Y, draw_factor_empirical(s, pool, 10000, 8).Y);
  const VectorXd e = a.Y - a.cond_mean;
  const double var = (e.array() - e.mean()).square().sum() / static_cast<double>(e.size() - 1);
  const double pool_var = pool.squaredNorm() / static_cast<double>(pool.size());
  EXPECT_NEAR(var / pool_var, 1.0, 0.05);
}

TEST(ConditionalMean, DegenerateCases) {
  FactorModelSpec s = small_spec(4, 2, 1.0, 36);
  VectorXd x = oracle::gaussian_vector(4, 1);
  EXPECT_DOUBLE_EQ(conditional_mean(s, VectorXd::Constant(4, 0.7), 0.7), 0.7);
  s.L.setZero();
  EXPECT_NEAR(conditional_mean(s, x, 0.3), 0.3, 1e-15);
  FactorModelSpec singular = small_spec(4, 1, 1.0, 37);
  singular.sigma2.setZero();
  EXPECT_THROW(ConditionalMean{singular}, SingularityError);
}

TEST(ConditionalMean, MatchesMonteCarloRegression) {
  const FactorModelSpec s = small_spec(3, 2, 0.5, 38);
  const Index t = 200000;
  const FactorDraw d = draw_factor_gaussian(s, t, 10);
  MatrixXd design(t, 4);
  design.col(0).setOnes();
  design.rightCols(3) = d.X;
  const VectorXd coef = design.colPivHouseholderQr().solve(d.Y);
  const VectorXd w = ConditionalMean(s).weights();
  EXPECT_LE((coef.tail(3) - w).norm() / w.norm(), 0.02);
}

TEST(TrueRisk, IdempotenceAndOffset) {
  const FactorModelSpec s = small_spec(5, 2, 1.0, 39);
  const FactorDraw d = draw_factor_gaussian(s, 30, 12);
  EXPECT_EQ(true_proportional_risk(s, d.cond_mean, d), 0.0);
  const VectorXd shifted = d.cond_mean.array() + 0.25;
  EXPECT_NEAR(true_proportional_risk(s, shifted, d), 30 * 0.0625, 1e-12);
}

TEST(McDof, ConstantEstimatorIsZero) {
  const GaussianDgp dgp{VectorXd::LinSpaced(12, 0, 1), 0.5};
  const McDofResult r = mc_dof(dgp, [](const VectorXd& y) { return VectorXd(VectorXd::Constant(y.size(), 2.0)); }, 200, 1);
  EXPECT_EQ(r.df, 0.0);
  EXPECT_EQ(r.se, 0.0);
}

TEST(McDof, OlsMatchesColumnCount) {
  const MatrixXd x = oracle::gaussian_matrix(30, 5, 40);
  const MatrixXd h = x * (x.transpose() * x).inverse() * x.transpose();
  const GaussianDgp dgp{x * VectorXd::Ones(5), 1.3};
  const McDofResult r = mc_dof(dgp, [&](const VectorXd& y) { return VectorXd(h * y); }, 2000, 2);
  EXPECT_LE(std::abs(r.df - 5.0), 3.0 * r.se);
}

TEST(McDof, PlainScMatchesActiveSetSize) {
  const MatrixXd x = oracle::gaussian_matrix(20, 8, 41);
  VectorXd w = VectorXd::Zero(8);
  w(0) = 0.5;
  w(1) = 0.5;
  const GaussianDgp dgp{x * w, 0.5};
  const McDofResult r = mc_dof(
      dgp,
      [&](const VectorXd& y) {
        const ScFit f = solve_sc(y, x);
        return McSample{f.fitted, static_cast<double>(f.sets.A.size()) - 1.0};
      },
      600, 3);
  EXPECT_LE(std::abs(r.df - r.extra_mean), 3.0 * r.diff_se);
  EXPECT_GT(r.extra_mean, 0.0);
}

TEST(McDof, StandardErrorScaling) {
  const MatrixXd x = oracle::gaussian_matrix(15, 3, 42);
  const MatrixXd h = x * (x.transpose() * x).inverse() * x.transpose();
  const GaussianDgp dgp{VectorXd::Zero(15), 1.0};
  std::vector<double> lr, ls;
  for (int reps : {100, 400, 1600}) {
    const McDofResult r = mc_dof(dgp, [&](const VectorXd& y) { return VectorXd(h * y); }, reps, 4);
    lr.push_back(std::log(static_cast<double>(reps)));
    ls.push_back(std::log(r.se));
  }
  const double slope = (ls[2] - ls[0]) / (lr[2] - lr[0]);
  EXPECT_NEAR(slope, -0.5, 0.1);
}

TEST(McDof, RejectsBadInput) {
  const GaussianDgp dgp{VectorXd::Zero(3), 1.0};
  auto id = [](const VectorXd& y) { return y; };
  EXPECT_THROW(mc_dof(dgp, id, 1, 0), ConfigError);
  EXPECT_THROW(mc_dof(GaussianDgp{VectorXd::Zero(3), 0.0}, id, 10, 0), ConfigError);
}

TEST(Stats, SpearmanWithTies) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  const auto r = average_ranks({5, 1, 5, 2});
  EXPECT_EQ(r, (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_TRUE(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
}

namespace {

BenchmarkConfig small_bench(BenchmarkDesign d, int reps) {
  BenchmarkConfig c;
  c.design = d;
  c.replications = reps;
  c.seed = 13;
  c.pre_periods = 12;
  c.post_periods = 4;
  c.spec = small_spec(8, 2, 1.0, 50);
  c.lambdas = {0.0, 0.1, 1.0, 5.0};
  return c;
}

}  // namespace

TEST(Benchmark, RiskOracleRowIsExact) {
  BenchmarkConfig c = small_bench(BenchmarkDesign::gaussian, 6);
  c.methods = {BenchMethod::risk};
  const BenchmarkReport r = run_selection_benchmark(c);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].completed, 6);
  EXPECT_EQ(*r.rows[0].mse_lambda, 0.0);
  EXPECT_EQ(*r.rows[0].mse_risk, 0.0);
  EXPECT_EQ(*r.rows[0].mse_risk_proportional, 0.0);
}

TEST(Benchmark, EffectErrorsMatchDirectRefit) {
  BenchmarkConfig c = small_bench(BenchmarkDesign::gaussian, 1);
  c.methods = {BenchMethod::sure};
  const BenchmarkReport r = run_selection_benchmark(c);
  const MethodOutcome& mo = r.replicates[0].methods[0];
  ASSERT_TRUE(mo.ok);
  Rng rng = make_rng(13, 0, 0xbe4cULL);
  const FactorDraw d = draw_factor_gaussian(*c.spec, 16, rng);
  const ScFit f = solve_penalized_sc(d.Y.head(12), d.X.topRows(12), mo.lambda_hat);
  const VectorXd tau = d.Y.tail(4) - d.X.bottomRows(4) * f.weights.beta;
  EXPECT_NEAR(mo.tau1, tau(0), 1e-12);
  EXPECT_NEAR(mo.tau12, tau.mean(), 1e-12);
  EXPECT_NEAR(r.rows[0].mse_tau1, tau(0) * tau(0), 1e-12);
  const double risk = true_proportional_risk(f.fitted, d.cond_mean.head(12));
  EXPECT_NEAR(r.replicates[0].true_risk[mo.chosen], risk, 1e-10);
}

TEST(Benchmark, Determinism) {
  BenchmarkConfig c = small_bench(BenchmarkDesign::empirical, 3);
  const BenchmarkReport a = run_selection_benchmark(c);
  const BenchmarkReport b = run_selection_benchmark(c);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].mse_tau1, b.rows[i].mse_tau1);
    EXPECT_EQ(a.rows[i].mse_lambda, b.rows[i].mse_lambda);
    EXPECT_EQ(a.rows[i].mse_risk, b.rows[i].mse_risk);
    EXPECT_GE(a.rows[i].mse_tau1, 0.0);
    EXPECT_GE(*a.rows[i].mse_risk, 0.0);
  }
  EXPECT_EQ(a.mean_true_risk, b.mean_true_risk);
}

TEST(Benchmark, BlockBootstrapHasNoTrueRisk) {
  BenchmarkConfig c = small_bench(BenchmarkDesign::block_bootstrap, 3);
  c.methods = {BenchMethod::sure, BenchMethod::cv_holdout, BenchMethod::cv_loo_untreated, BenchMethod::cv_rolling};
  const BenchmarkReport r = run_selection_benchmark(c);
  for (const MethodRow& row : r.rows) {
    EXPECT_EQ(row.completed, 3);
    EXPECT_FALSE(row.mse_lambda.has_value());
    EXPECT_FALSE(row.mse_risk.has_value());
  }
  EXPECT_FALSE(r.interior_fraction.has_value());
  c.methods = {BenchMethod::risk};
  EXPECT_THROW(run_selection_benchmark(c), ConfigError);
}

TEST(Benchmark, OverfitSpecHasInteriorRiskMinimum) {
  SyntheticSpecOptions o;
  o.donors = 200;
  BenchmarkConfig c;
  c.spec = synthetic_spec(o);
  c.pre_periods = 20;
  c.replications = 20;
  c.methods = {BenchMethod::risk};
  const BenchmarkReport r = run_selection_benchmark(c);
  const auto best = std::min_element(r.mean_true_risk.begin(), r.mean_true_risk.end());
  EXPECT_GT(r.mean_true_risk.front(), *best);
  EXPECT_GT(r.mean_true_risk.back(), *best);
}
