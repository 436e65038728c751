#include "oracles.hpp"

#include <synthsel/constrained_ls.hpp>
#include <synthsel/estimators.hpp>
#include <synthsel/simplex_qp.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace synthsel;

namespace {

double sc_objective(const VectorXd& y, const MatrixXd& x, const VectorXd& b) { return (y - x * b).squaredNorm(); }

double pen_objective(const VectorXd& y, const MatrixXd& x, double lambda, const VectorXd& b) {
  VectorXd q = (x.colwise() - y).colwise().squaredNorm().transpose();
  return (y - x * b).squaredNorm() + lambda * q.dot(b);
}

void expect_certified(const ScFit& f) {
  EXPECT_LE(f.kkt.stationarity_residual, 1e-8);
  EXPECT_LE(f.kkt.complementarity_gap, 1e-8);
  EXPECT_LE(f.kkt.mu.maxCoeff(), 1e-8);
  EXPECT_NEAR(f.weights.beta.sum(), f.sum_to, 1e-10);
  EXPECT_GE(f.weights.beta.minCoeff(), -1e-12);
}

}  // namespace

TEST(ConstrainedLs, SingleColumnSumConstraint) {
  MatrixXd x(3, 1);
  x << 1, 2, 3;
  VectorXd y(3);
  y << 5, -1, 2;
  MatrixXd d = MatrixXd::Ones(1, 1);
  VectorXd z = VectorXd::Ones(1);
  EXPECT_NEAR(solve_constrained_ls(y, x, d, z)(0), 1.0, 1e-14);
}

TEST(ConstrainedLs, EmptyConstraintsIsOls) {
  std::mt19937_64 rng(3);
  MatrixXd x = oracle::gaussian_matrix(rng, 10, 3);
  VectorXd y = oracle::gaussian_vector(rng, 10);
  VectorXd ols = x.colPivHouseholderQr().solve(y);
  VectorXd b = solve_constrained_ls(y, x, MatrixXd(0, 3), VectorXd(0));
  EXPECT_LE((b - ols).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ConstrainedLs, MatchesConstraintLineGrid) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    MatrixXd x = oracle::gaussian_matrix(rng, 4, 2);
    VectorXd y = oracle::gaussian_vector(rng, 4);
    VectorXd d = oracle::gaussian_vector(rng, 2);
    const double z = 0.7;
    VectorXd ref = oracle::constraint_line_minimize(y, x, d, z);
    VectorXd b = solve_constrained_ls(y, x, d.transpose(), VectorXd::Constant(1, z));
    EXPECT_LE((b - ref).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ConstrainedLs, SingularBlocksAreNamed) {
  MatrixXd x(4, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8;
  try {
    ConstrainedLeastSquares ls(x, MatrixXd(0, 2));
    FAIL();
  } catch (const SingularityError& e) {
    EXPECT_EQ(e.block(), "X");
  }
  MatrixXd x2 = MatrixXd::Identity(3, 2);
  MatrixXd d(2, 2);
  d << 1, 1, 2, 2;
  try {
    ConstrainedLeastSquares ls(x2, d);
    FAIL();
  } catch (const SingularityError& e) {
    EXPECT_EQ(e.block(), "DG^-1D'");
  }
}

TEST(ConstrainedLs, HatTraceIsRankMinusConstraints) {
  std::mt19937_64 rng(5);
  MatrixXd x = oracle::gaussian_matrix(rng, 12, 5);
  MatrixXd d = oracle::gaussian_matrix(rng, 2, 5);
  ConstrainedLeastSquares ls(x, d);
  EXPECT_NEAR(ls.hat_matrix().trace(), 3.0, 1e-10);
}

TEST(SimplexQp, ExactMatchDonor) {
  std::mt19937_64 rng(1);
  MatrixXd x = oracle::gaussian_matrix(rng, 8, 4);
  VectorXd y = x.col(0);
  ScFit f = solve_sc(y, x);
  EXPECT_NEAR(f.weights.beta(0), 1.0, 1e-10);
  EXPECT_LE(f.residuals.norm(), 1e-8);
  expect_certified(f);
}

TEST(SimplexQp, InteriorCombination) {
  std::mt19937_64 rng(2);
  MatrixXd x = oracle::gaussian_matrix(rng, 6, 2);
  VectorXd y = 0.5 * x.col(0) + 0.5 * x.col(1);
  ScFit f = solve_sc(y, x);
  EXPECT_NEAR(f.weights.beta(0), 0.5, 1e-10);
  EXPECT_NEAR(f.weights.beta(1), 0.5, 1e-10);
  expect_certified(f);
}

TEST(SimplexQp, MatchesGridOracleSmall) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    MatrixXd x = oracle::gaussian_matrix(rng, 6, 3);
    VectorXd y = oracle::gaussian_vector(rng, 6);
    ScFit f = solve_sc(y, x);
    VectorXd ref = oracle::simplex_grid_minimize([&](const VectorXd& b) { return sc_objective(y, x, b); }, 3, 200);
    EXPECT_LE(sc_objective(y, x, f.weights.beta), sc_objective(y, x, ref) + 1e-8);
    expect_certified(f);
  }
}

TEST(SimplexQp, HighDimensionalAndDuplicates) {
  std::mt19937_64 rng(9);
  MatrixXd x = oracle::gaussian_matrix(rng, 10, 40);
  x.col(5) = x.col(3);
  VectorXd y = oracle::gaussian_vector(rng, 10);
  ScFit f = solve_sc(y, x);
  expect_certified(f);
}

TEST(SimplexQp, WarmStartSameAnswer) {
  std::mt19937_64 rng(13);
  MatrixXd x = oracle::gaussian_matrix(rng, 20, 15);
  VectorXd y = oracle::gaussian_vector(rng, 20);
  ScFit cold = solve_sc(y, x);
  ScOptions o;
  o.start = VectorXd::Constant(15, 1.0 / 15);
  ScFit warm = solve_sc(y, x, o);
  EXPECT_LE((cold.fitted - warm.fitted).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SimplexQp, ScaledTotal) {
  std::mt19937_64 rng(17);
  MatrixXd x = oracle::gaussian_matrix(rng, 15, 10);
  VectorXd y = oracle::gaussian_vector(rng, 15);
  ScOptions o;
  o.sum_to = 2.5;
  ScFit f = solve_sc(y, x, o);
  expect_certified(f);
}

TEST(SimplexQp, EqualityRows) {
  std::mt19937_64 rng(19);
  MatrixXd g0 = oracle::gaussian_matrix(rng, 8, 5);
  SimplexQp qp;
  qp.gram = g0.transpose() * g0;
  qp.linear = oracle::gaussian_vector(rng, 5);
  qp.eq_rows = oracle::gaussian_matrix(rng, 1, 5);
  VectorXd feasible = VectorXd::Constant(5, 0.2);
  qp.eq_rhs = qp.eq_rows * feasible;
  QpSolution s = solve_simplex_qp(qp);
  EXPECT_LE(s.stationarity, 1e-8);
  EXPECT_LE(s.primal_infeasibility, 1e-9);
  EXPECT_GE(s.beta.minCoeff(), 0.0);
}

TEST(PenalizedSc, ZeroLambdaEqualsPlain) {
  std::mt19937_64 rng(23);
  MatrixXd x = oracle::gaussian_matrix(rng, 12, 8);
  VectorXd y = oracle::gaussian_vector(rng, 12);
  EXPECT_LE((solve_sc(y, x).weights.beta - solve_penalized_sc(y, x, 0.0).weights.beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PenalizedSc, LargeLambdaIsNearestDonor) {
  std::mt19937_64 rng(29);
  MatrixXd x = oracle::gaussian_matrix(rng, 10, 6);
  VectorXd y = x.col(4) + 0.05 * oracle::gaussian_vector(rng, 10);
  ScFit f = solve_penalized_sc(y, x, 1e6);
  EXPECT_NEAR(f.weights.beta(4), 1.0, 1e-8);
}

TEST(PenalizedSc, MatchesGridOracle) {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd x = oracle::gaussian_matrix(rng, 6, 3);
    VectorXd y = oracle::gaussian_vector(rng, 6);
    ScFit f = solve_penalized_sc(y, x, 0.3);
    VectorXd ref =
        oracle::simplex_grid_minimize([&](const VectorXd& b) { return pen_objective(y, x, 0.3, b); }, 3, 200);
    EXPECT_LE(pen_objective(y, x, 0.3, f.weights.beta), pen_objective(y, x, 0.3, ref) + 1e-8);
    expect_certified(f);
  }
}

TEST(PenalizedSc, PathMonotonicity) {
  std::mt19937_64 rng(37);
  MatrixXd x = oracle::gaussian_matrix(rng, 15, 20);
  VectorXd y = oracle::gaussian_vector(rng, 15);
  double prev_rss = -1.0, prev_pen = std::numeric_limits<double>::infinity();
  VectorXd q = (x.colwise() - y).colwise().squaredNorm().transpose();
  for (double lam : {0.0, 0.01, 0.05, 0.1, 0.3, 1.0, 3.0, 10.0}) {
    ScFit f = solve_penalized_sc(y, x, lam);
    EXPECT_GE(f.rss(), prev_rss - 1e-10);
    EXPECT_LE(q.dot(f.weights.beta), prev_pen + 1e-10);
    prev_rss = f.rss();
    prev_pen = q.dot(f.weights.beta);
  }
}

TEST(Matching, Basics) {
  MatrixXd x(2, 3);
  x << 1, 3, 2, 0, 0, 0;
  VectorXd y = VectorXd::Zero(2);
  // squared distances 1, 9, 4
  Weights w = matching_weights(y, x, 2);
  EXPECT_DOUBLE_EQ(w.beta(0), 0.5);
  EXPECT_DOUBLE_EQ(w.beta(1), 0.0);
  EXPECT_DOUBLE_EQ(w.beta(2), 0.5);
  EXPECT_DOUBLE_EQ(matching_weights(y, x, 1).beta(0), 1.0);
  EXPECT_TRUE(matching_weights(y, x, 3).beta.isApproxToConstant(1.0 / 3));
  EXPECT_THROW(matching_weights(y, x, 4), ConfigError);
}

TEST(Matching, TiesGoToLowerIndex) {
  MatrixXd x(2, 3);
  x << 2, 1, -1, 0, 0, 0;
  Weights w = matching_weights(VectorXd::Zero(2), x, 1);
  EXPECT_DOUBLE_EQ(w.beta(1), 1.0);
}

TEST(Masc, EndpointsAndLinearity) {
  std::mt19937_64 rng(41);
  MatrixXd x = oracle::gaussian_matrix(rng, 10, 7);
  VectorXd y = oracle::gaussian_vector(rng, 10);
  ScFit sc = solve_sc(y, x);
  ScFit m0 = solve_masc(y, x, 0.0, 2);
  ScFit m1 = solve_masc(y, x, 1.0, 2);
  EXPECT_LE((m0.fitted - sc.fitted).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((m1.fitted - x * matching_weights(y, x, 2).beta).cwiseAbs().maxCoeff(), 1e-14);
  ScFit mh = solve_masc(y, x, 0.5, 2);
  EXPECT_LE((mh.fitted - 0.5 * (m0.fitted + m1.fitted)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariate, NoRowsReducesToPlain) {
  std::mt19937_64 rng(43);
  MatrixXd x = oracle::gaussian_matrix(rng, 10, 5);
  VectorXd y = oracle::gaussian_vector(rng, 10);
  ScFit f = solve_sc_cov_inner(y, x, VectorXd(0), MatrixXd(0, 5), VectorXd(0));
  EXPECT_LE((f.weights.beta - solve_sc(y, x).weights.beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariate, SingleBindingRow) {
  // Only the second row is weighted; it is matched exactly by donor 2 alone
  // since z lies at the top of the donor range.
  MatrixXd x(4, 3);
  x << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  VectorXd y(4);
  y << 1, 0, 0, 1;
  MatrixXd d(2, 3);
  d << 0.3, 0.1, 0.7, 0.0, 5.0, 1.0;
  VectorXd z(2);
  z << 0.0, 5.0;
  VectorXd v(2);
  v << 0.0, 1.0;
  ScFit f = solve_sc_cov_inner(y, x, z, d, v);
  EXPECT_NEAR(f.weights.beta(1), 1.0, 1e-10);
}

TEST(Covariate, ManyCaseEqualsRestrictedSc) {
  std::mt19937_64 rng(47);
  int checked = 0;
  for (int rep = 0; rep < 40 && checked < 5; ++rep) {
    MatrixXd x = oracle::gaussian_matrix(rng, 8, 6);
    VectorXd y = oracle::gaussian_vector(rng, 8);
    MatrixXd d = oracle::gaussian_matrix(rng, 5, 6);
    VectorXd z = oracle::gaussian_vector(rng, 5) * 3.0;
    VectorXd v = VectorXd::Ones(5);
    ScFit f = solve_sc_cov_inner(y, x, z, d, v);
    if (f.cov_case != CovariateCase::many) continue;
    ScFit r = solve_sc(y, select_cols(x, f.sets.A));
    EXPECT_LE((f.fitted - r.fitted).cwiseAbs().maxCoeff(), 1e-8);
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Covariate, VGridSearch) {
  std::mt19937_64 rng(53);
  MatrixXd x = oracle::gaussian_matrix(rng, 8, 6);
  VectorXd y = oracle::gaussian_vector(rng, 8);
  MatrixXd d = oracle::gaussian_matrix(rng, 2, 6);
  VectorXd z = oracle::gaussian_vector(rng, 2);
  std::vector<VectorXd> one{VectorXd::Constant(2, 0.5)};
  VSearchResult r = solve_sc_cov(y, x, z, d, one, outer_rss);
  ScFit direct = solve_sc_cov_inner(y, x, z, d, one[0]);
  EXPECT_LE((r.fit.weights.beta - direct.weights.beta).cwiseAbs().maxCoeff(), 1e-14);

  auto grid = default_v_grid(2);
  VSearchResult all = solve_sc_cov(y, x, z, d, grid, outer_rss);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double rss = solve_sc_cov_inner(y, x, z, d, grid[g]).rss();
    EXPECT_DOUBLE_EQ(all.scores[g], rss);
    EXPECT_LE(all.scores[all.chosen], rss);
  }

  VSearchResult tie = solve_sc_cov(y, x, z, d, grid, [](const ScFit&) { return 1.0; });
  EXPECT_EQ(tie.chosen, 0u);
  EXPECT_THROW(solve_sc_cov(y, x, z, d, {}, outer_rss), ConfigError);
}

TEST(Covariate, DefaultVGridShape) {
  auto g = default_v_grid(3);
  // compositions of 4 into 3 parts = 15, plus the barycenter
  EXPECT_EQ(g.size(), 16u);
  for (const auto& v : g) EXPECT_NEAR(v.sum(), 1.0, 1e-14);
}

TEST(ActiveSets, Thresholds) {
  VectorXd b(3);
  b << 0.5, 0.5, 0.0;
  EXPECT_EQ(active_sets(b).A, (IndexSet{0, 1}));
  b << 1 - 1e-12, 1e-12, 0.0;
  EXPECT_EQ(active_sets(b).A, (IndexSet{0}));
}

TEST(ActiveSets, CanonicalUnderDuplicates) {
  std::mt19937_64 rng(59);
  MatrixXd x = oracle::gaussian_matrix(rng, 10, 6);
  x.col(4) = x.col(1);
  VectorXd y = 0.6 * x.col(1) + 0.4 * x.col(2);
  ScFit f = solve_sc(y, x);
  IndexSet first = canonical_active_set(y, x, f);
  for (int rep = 0; rep < 10; ++rep) {
    ScOptions o;
    VectorXd start = VectorXd::Zero(6);
    start(rep % 6) = 1.0;
    o.start = start;
    ScFit g = solve_sc(y, x, o);
    EXPECT_EQ(canonical_active_set(y, x, g), first);
  }
}

TEST(Covariate, PartiallyMatchableRowsConverge) {
  std::mt19937_64 rng(909);
  for (int rep = 0; rep < 200; ++rep) {
    MatrixXd x = oracle::gaussian_matrix(rng, 16, 10);
    VectorXd y = oracle::gaussian_vector(rng, 16);
    MatrixXd d = oracle::gaussian_matrix(rng, 3, 10);
    VectorXd w = VectorXd::Constant(10, 0.1);
    VectorXd z = d * w + 0.5 * oracle::gaussian_vector(rng, 3);
    ScFit f;
    ASSERT_NO_THROW(f = solve_sc_cov_inner(y, x, z, d, VectorXd::Ones(3))) << "instance " << rep;
    EXPECT_LE(f.kkt.stationarity_residual, 1e-8);
    EXPECT_LE(f.kkt.dual_infeasibility, 1e-8);
  }
}

TEST(SimplexQp, DegenerateEqualityStart) {
  // the phase-one start is a vertex where the rows exceed the free columns
  SimplexQp qp;
  qp.gram = MatrixXd::Identity(4, 4);
  qp.linear = VectorXd::Zero(4);
  qp.eq_rows = (MatrixXd(2, 4) << 1, 0, 0, 0, 0, 1, 1, 0).finished();
  qp.eq_rhs = VectorXd::Zero(2);
  QpSolution s = solve_simplex_qp(qp);
  EXPECT_NEAR(s.beta(3), 1.0, 1e-12);
  EXPECT_LE(s.stationarity, 1e-8);
}
