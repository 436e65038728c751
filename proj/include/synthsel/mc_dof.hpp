#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/parallel.hpp"
#include "synthsel/rng.hpp"
#include "synthsel/stats.hpp"

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

namespace synthsel {

/// Y = mean + sigma * eps with eps ~ N(0, I) and the design held fixed.
struct GaussianDgp {
  VectorXd mean;
  double sigma = 1.0;
};

/// Estimator output with an extra per-draw scalar (for example |A| - 1)
/// averaged on the same draws.
struct McSample {
  VectorXd fitted;
  double extra = 0.0;
};

struct McDofResult {
  double df = 0.0;
  double se = 0.0;
  double extra_mean = 0.0;
  double extra_se = 0.0;
  double diff_se = 0.0;  ///< standard error of df - extra_mean, paired by draw
  int replications = 0;
};

/// Monte-Carlo degrees of freedom (1/sigma^2) sum_i Cov(Y_i, Yhat_i).
/// Per draw r the contribution eps_r'(Yhat_r - mean_r Yhat) / sigma is
/// scaled by R/(R-1), so the average is the unbiased sample covariance.
template <class Estimator>
McDofResult mc_dof(const GaussianDgp& dgp, Estimator&& estimator, int replications, std::uint64_t seed) {
  if (replications < 2) throw ConfigError("need at least two replications");
  if (!(dgp.sigma > 0.0)) throw ConfigError("noise level must be positive");
  const Index n = dgp.mean.size();
  const auto reps = static_cast<std::size_t>(replications);
  std::vector<VectorXd> eps(reps), fitted(reps);
  std::vector<double> extra(reps, 0.0);
  parallel_for(reps, [&](std::size_t r) {
    Rng rng = make_rng(seed, r);
    eps[r] = standard_normal(rng, n);
    VectorXd y = dgp.mean + dgp.sigma * eps[r];
    auto out = estimator(y);
    if constexpr (std::is_same_v<std::decay_t<decltype(out)>, McSample>) {
      fitted[r] = std::move(out.fitted);
      extra[r] = out.extra;
    } else {
      fitted[r] = std::move(out);
    }
  });
  VectorXd avg = VectorXd::Zero(n);
  for (const VectorXd& f : fitted) avg += f;
  avg /= static_cast<double>(replications);
  const double scale = static_cast<double>(replications) / static_cast<double>(replications - 1);
  std::vector<double> contrib(reps), diff(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    contrib[r] = scale * eps[r].dot(fitted[r] - avg) / dgp.sigma;
    diff[r] = contrib[r] - extra[r];
  }
  McDofResult out;
  out.replications = replications;
  const double root = std::sqrt(static_cast<double>(replications));
  out.df = mean(contrib);
  out.se = sample_sd(contrib) / root;
  out.extra_mean = mean(extra);
  out.extra_se = sample_sd(extra) / root;
  out.diff_se = sample_sd(diff) / root;
  return out;
}

}  // namespace synthsel
