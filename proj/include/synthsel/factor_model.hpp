#pragma once

#include "synthsel/bootstrap.hpp"
#include "synthsel/errors.hpp"
#include "synthsel/estimators.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/panel.hpp"
#include "synthsel/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <random>
#include <vector>

namespace synthsel {

/// Gaussian factor model for the treated unit (row 0) and p donors:
///
///   Y_t  = delta_t + psi_t' L_1 + U_1t
///   X_it = delta_t + psi_t' L_i + U_it,   psi_t ~ N(0, I_r),
///
/// with independent stationary AR innovations of marginal variance sigma2_i
/// and L_1 = L_-1' omega_star.
struct FactorModelSpec {
  MatrixXd L;                        ///< (1 + p) x r
  VectorXd delta;                    ///< time effects over the fitted window
  VectorXd sigma2;                   ///< marginal innovation variances, length 1 + p
  std::vector<VectorXd> ar_coefs;    ///< AR coefficients per series
  VectorXd ar_noise_ratio;           ///< driving-noise variance / marginal variance
  std::vector<std::pair<int, int>> innovation_orders;  ///< (AR, MA) orders; MA is always 0
  VectorXd omega_star;               ///< length p

  Index donors() const { return L.rows() - 1; }
  Index factors() const { return L.cols(); }
  MatrixXd donor_loadings() const { return L.bottomRows(donors()); }
  VectorXd treated_loading() const { return L.row(0).transpose(); }
};

struct ArFit {
  VectorXd coefs;
  double noise_ratio = 1.0;
  double variance = 0.0;
  int order = 0;
};

/// Yule-Walker AR fit with the order picked by BIC over 0..max_order.
inline ArFit fit_ar_bic(const VectorXd& x, int max_order = 3) {
  const Index t = x.size();
  if (t < 2) throw ConfigError("AR fit needs at least two observations");
  const VectorXd c = x.array() - x.mean();
  max_order = static_cast<int>(std::min<Index>(max_order, t - 1));
  VectorXd gamma(max_order + 1);
  for (int k = 0; k <= max_order; ++k)
    gamma(k) = c.head(t - k).dot(c.tail(t - k)) / static_cast<double>(t);
  ArFit best;
  best.variance = gamma(0);
  best.coefs = VectorXd(0);
  if (!(gamma(0) > 0.0)) return best;
  double best_bic = static_cast<double>(t) * std::log(gamma(0));
  for (int q = 1; q <= max_order; ++q) {
    MatrixXd toeplitz(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) toeplitz(i, j) = gamma(std::abs(i - j));
    VectorXd phi = toeplitz.ldlt().solve(gamma.segment(1, q));
    const double s2 = gamma(0) - phi.dot(gamma.segment(1, q));
    if (!(s2 > 0.0)) continue;
    const double bic = static_cast<double>(t) * std::log(s2) + q * std::log(static_cast<double>(t));
    if (bic < best_bic) {
      best_bic = bic;
      best.coefs = phi;
      best.order = q;
      best.noise_ratio = s2 / gamma(0);
    }
  }
  return best;
}

/// Stationary AR path of marginal variance `variance`, started after a burn-in.
inline VectorXd simulate_ar(const VectorXd& coefs, double noise_ratio, double variance, Index length, Rng& rng,
                            Index burn_in = 200) {
  std::normal_distribution<double> nd;
  const double sd = std::sqrt(std::max(variance * noise_ratio, 0.0));
  const Index q = coefs.size();
  if (q == 0) {
    VectorXd out(length);
    for (Index i = 0; i < length; ++i) out(i) = sd * nd(rng);
    return out;
  }
  VectorXd path = VectorXd::Zero(length + burn_in);
  for (Index i = 0; i < path.size(); ++i) {
    double v = sd * nd(rng);
    for (Index k = 0; k < q && k < i; ++k) v += coefs(k) * path(i - 1 - k);
    path(i) = v;
  }
  return path.tail(length);
}

/// Time effects for a draw of length T: the fitted path, extended by its
/// mean past the fitted window.
inline VectorXd delta_path(const FactorModelSpec& spec, Index t) {
  VectorXd out(t);
  const Index k = spec.delta.size();
  const double fill = k > 0 ? spec.delta.mean() : 0.0;
  for (Index i = 0; i < t; ++i) out(i) = i < k ? spec.delta(i) : fill;
  return out;
}

/// Estimate the factor model from a preprocessed panel. Time effects are the
/// donor cross-sectional means, loadings come from principal components of
/// the centered donors, and omega_star is the unpenalized synthetic control
/// weight vector.
inline FactorModelSpec fit_factor_model(const PanelDataset& panel, Index r, int max_ar = 3) {
  const Index t = panel.n();
  const Index p = panel.p();
  if (r < 0 || r > p) throw ConfigError("factor count " + std::to_string(r) + " exceeds donor count " + std::to_string(p));
  if (r > t) throw ConfigError("factor count exceeds the number of periods");
  FactorModelSpec spec;
  spec.delta = panel.X.rowwise().mean();
  MatrixXd rx = panel.X.colwise() - spec.delta;

  MatrixXd psi(t, r);
  MatrixXd l_donor(p, r);
  if (r > 0) {
    Eigen::BDCSVD<MatrixXd> svd(rx, Eigen::ComputeThinU);
    psi = std::sqrt(static_cast<double>(t)) * svd.matrixU().leftCols(r);
    l_donor = rx.transpose() * psi / static_cast<double>(t);
  }
  spec.omega_star = solve_sc(panel.Y, panel.X).weights.beta;
  spec.L.resize(p + 1, r);
  if (r > 0) {
    spec.L.row(0) = (l_donor.transpose() * spec.omega_star).transpose();
    spec.L.bottomRows(p) = l_donor;
  }

  MatrixXd innov(t, p + 1);
  innov.col(0) = panel.Y - spec.delta;
  innov.rightCols(p) = rx;
  if (r > 0) {
    innov.col(0) -= psi * spec.L.row(0).transpose();
    innov.rightCols(p) -= psi * l_donor.transpose();
  }
  spec.sigma2.resize(p + 1);
  spec.ar_noise_ratio.resize(p + 1);
  const double floor = 1e-12 * std::max(1.0, rx.squaredNorm() / static_cast<double>(rx.size()));
  for (Index i = 0; i <= p; ++i) {
    ArFit ar = fit_ar_bic(innov.col(i), max_ar);
    spec.sigma2(i) = std::max(ar.variance, floor);
    spec.ar_coefs.push_back(ar.coefs);
    spec.ar_noise_ratio(i) = ar.noise_ratio;
    spec.innovation_orders.emplace_back(ar.order, 0);
  }
  return spec;
}

/// E[Y_t | X_t] = delta_t + w'(X_t - delta_t 1) with w = Sigma_X^-1 Sigma_XY.
class ConditionalMean {
 public:
  explicit ConditionalMean(const FactorModelSpec& spec) {
    const MatrixXd ld = spec.donor_loadings();
    MatrixXd sx = ld * ld.transpose();
    sx.diagonal() += spec.sigma2.tail(spec.donors());
    Eigen::LLT<MatrixXd> llt(sx);
    if (llt.info() != Eigen::Success || numerical_rank(sx) < sx.rows())
      throw SingularityError("Sigma_X", "donor covariance L L' + Sigma is singular");
    const VectorXd sxy = ld * spec.treated_loading();
    weights_ = llt.solve(sxy);
    const double syy = spec.treated_loading().squaredNorm() + spec.sigma2(0);
    conditional_variance_ = syy - sxy.dot(weights_);
  }

  double operator()(const VectorXd& x_t, double delta_t) const {
    return delta_t + weights_.dot(x_t - VectorXd::Constant(x_t.size(), delta_t));
  }

  /// Row-wise conditional means of a T x p donor block.
  VectorXd path(const MatrixXd& x, const VectorXd& delta) const {
    return delta + (x.colwise() - delta) * weights_;
  }

  const VectorXd& weights() const { return weights_; }
  double conditional_variance() const { return conditional_variance_; }

 private:
  VectorXd weights_;
  double conditional_variance_ = 0.0;
};

inline double conditional_mean(const FactorModelSpec& spec, const VectorXd& x_t, double delta_t = 0.0) {
  return ConditionalMean(spec)(x_t, delta_t);
}

struct FactorDraw {
  VectorXd Y;
  MatrixXd X;
  VectorXd Y_star;     ///< delta_t + psi_t' L_1
  MatrixXd X_star;     ///< delta_t + psi_t' L_i
  VectorXd cond_mean;  ///< E[Y_t | X_t]
  VectorXd delta;
};

namespace detail {

inline void draw_donors(const FactorModelSpec& spec, Index t, Rng& rng, FactorDraw& d, MatrixXd& psi) {
  const Index p = spec.donors();
  const Index r = spec.factors();
  d.delta = delta_path(spec, t);
  psi = standard_normal(rng, t, r);
  d.X_star = (r > 0 ? MatrixXd(psi * spec.donor_loadings().transpose()) : MatrixXd::Zero(t, p));
  d.X_star.colwise() += d.delta;
  d.X = d.X_star;
  for (Index i = 0; i < p; ++i)
    d.X.col(i) += simulate_ar(spec.ar_coefs[static_cast<std::size_t>(i + 1)], spec.ar_noise_ratio(i + 1),
                              spec.sigma2(i + 1), t, rng);
}

}  // namespace detail

/// Joint Gaussian draw of T periods.
inline FactorDraw draw_factor_gaussian(const FactorModelSpec& spec, Index t, Rng& rng) {
  FactorDraw d;
  MatrixXd psi;
  detail::draw_donors(spec, t, rng, d, psi);
  d.Y_star = d.delta;
  if (spec.factors() > 0) d.Y_star += psi * spec.treated_loading();
  d.Y = d.Y_star + simulate_ar(spec.ar_coefs[0], spec.ar_noise_ratio(0), spec.sigma2(0), t, rng);
  d.cond_mean = ConditionalMean(spec).path(d.X, d.delta);
  return d;
}

inline FactorDraw draw_factor_gaussian(const FactorModelSpec& spec, Index t, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return draw_factor_gaussian(spec, t, rng);
}

/// Donors drawn as in the Gaussian model; the treated outcome is the
/// conditional mean plus stationary-bootstrap draws from `residual_pool`.
inline FactorDraw draw_factor_empirical(const FactorModelSpec& spec, const VectorXd& residual_pool, Index t,
                                        Rng& rng, double block_prob = 1.0) {
  if (residual_pool.size() == 0) throw ConfigError("empty residual pool");
  FactorDraw d;
  MatrixXd psi;
  detail::draw_donors(spec, t, rng, d, psi);
  d.Y_star = d.delta;
  if (spec.factors() > 0) d.Y_star += psi * spec.treated_loading();
  d.cond_mean = ConditionalMean(spec).path(d.X, d.delta);
  VectorXd eps;
  if (residual_pool.size() == 1) {
    eps = VectorXd::Constant(t, residual_pool(0));
  } else {
    eps = stationary_bootstrap(MatrixXd(residual_pool), block_prob, rng, t).data.col(0);
  }
  d.Y = d.cond_mean + eps;
  return d;
}

inline FactorDraw draw_factor_empirical(const FactorModelSpec& spec, const VectorXd& residual_pool, Index t,
                                        std::uint64_t seed, double block_prob = 1.0) {
  Rng rng = make_rng(seed);
  return draw_factor_empirical(spec, residual_pool, t, rng, block_prob);
}

/// Treated-unit innovations relative to the conditional mean on observed data.
inline VectorXd empirical_residuals(const FactorModelSpec& spec, const PanelDataset& panel) {
  return panel.Y - ConditionalMean(spec).path(panel.X, delta_path(spec, panel.n()));
}

/// ||fitted - E[Y|X]||^2 over the periods covered by `fitted`.
inline double true_proportional_risk(const VectorXd& fitted, const VectorXd& cond_mean) {
  return (fitted - cond_mean.head(fitted.size())).squaredNorm();
}

inline double true_proportional_risk(const FactorModelSpec&, const VectorXd& fitted, const FactorDraw& draw) {
  return true_proportional_risk(fitted, draw.cond_mean);
}

/// Synthetic specification used when no data is supplied: p donors with
/// N(0, 1) loadings on r factors, i.i.d. innovations, and a treated unit
/// loading on a sparse convex combination of `support` donors.
struct SyntheticSpecOptions {
  Index donors = 40;
  Index factors = 5;
  Index support = 10;
  double donor_noise = 1.0;
  double treated_noise = 1.0;
  std::uint64_t seed = 20200101;
};

inline FactorModelSpec synthetic_spec(const SyntheticSpecOptions& o = {}) {
  if (o.support < 1 || o.support > o.donors) throw ConfigError("support must lie in [1, donors]");
  Rng rng = make_rng(o.seed, 0, 0x5eedULL);
  FactorModelSpec spec;
  const Index p = o.donors;
  MatrixXd ld = standard_normal(rng, p, o.factors);
  spec.omega_star = VectorXd::Zero(p);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Index i = 0; i < o.support; ++i) spec.omega_star(i) = u(rng);
  spec.omega_star /= spec.omega_star.sum();
  spec.L.resize(p + 1, o.factors);
  spec.L.row(0) = (ld.transpose() * spec.omega_star).transpose();
  spec.L.bottomRows(p) = ld;
  spec.delta = VectorXd(0);
  spec.sigma2 = VectorXd::Constant(p + 1, o.donor_noise);
  spec.sigma2(0) = o.treated_noise;
  spec.ar_coefs.assign(static_cast<std::size_t>(p + 1), VectorXd(0));
  spec.ar_noise_ratio = VectorXd::Ones(p + 1);
  spec.innovation_orders.assign(static_cast<std::size_t>(p + 1), {0, 0});
  return spec;
}

/// Default skewed innovation pool: centered, unit-variance exponential draws
/// scaled to standard deviation `sd`.
inline VectorXd skewed_residual_pool(Index size, double sd, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0, 0x9001ULL);
  std::exponential_distribution<double> e(1.0);
  VectorXd pool(size);
  for (Index i = 0; i < size; ++i) pool(i) = e(rng);
  pool.array() -= pool.mean();
  const double s = std::sqrt(pool.squaredNorm() / static_cast<double>(size));
  return pool * (sd / s);
}

}  // namespace synthsel
