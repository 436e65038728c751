#pragma once

// Independent reference computations used only by the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Best point of a regular simplex grid with step 1/k, then a shrinking
/// pattern search along pairwise transfer directions e_i - e_j.
inline VectorXd simplex_grid_minimize(const std::function<double(const VectorXd&)>& f, int p, int k = 1000) {
  VectorXd best(p);
  double best_val = std::numeric_limits<double>::infinity();
  VectorXd cur(p);
  std::vector<int> parts(static_cast<std::size_t>(p), 0);
  auto rec = [&](auto&& self, int pos, int left) -> void {
    if (pos == p - 1) {
      parts[static_cast<std::size_t>(pos)] = left;
      for (int i = 0; i < p; ++i) cur(i) = static_cast<double>(parts[static_cast<std::size_t>(i)]) / k;
      const double v = f(cur);
      if (v < best_val) {
        best_val = v;
        best = cur;
      }
      return;
    }
    for (int c = 0; c <= left; ++c) {
      parts[static_cast<std::size_t>(pos)] = c;
      self(self, pos + 1, left - c);
    }
  };
  rec(rec, 0, k);

  double h = 1.0 / k;
  while (h > 1e-14) {
    bool improved = false;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        if (i == j) continue;
        const double t = std::min(h, best(j));
        if (t <= 0.0) continue;
        VectorXd cand = best;
        cand(i) += t;
        cand(j) -= t;
        const double v = f(cand);
        if (v < best_val) {
          best_val = v;
          best = cand;
          improved = true;
        }
      }
    if (!improved) h *= 0.5;
  }
  return best;
}

/// Minimize 1/2||y - X b||^2 on the line {b : d'b = z} in R^2 by a dense grid
/// over the line parameter followed by golden-section refinement.
inline VectorXd constraint_line_minimize(const VectorXd& y, const MatrixXd& x, const VectorXd& d, double z) {
  // Parametrize b = b0 + t * dir with d'b0 = z, d'dir = 0.
  VectorXd b0 = d * (z / d.squaredNorm());
  VectorXd dir(2);
  dir << -d(1), d(0);
  dir.normalize();
  auto obj = [&](double t) { return 0.5 * (y - x * (b0 + t * dir)).squaredNorm(); };
  double lo = -100.0, hi = 100.0;
  const int n = 200001;
  double best_t = lo, best_v = obj(lo);
  for (int i = 1; i < n; ++i) {
    const double t = lo + (hi - lo) * i / (n - 1);
    const double v = obj(t);
    if (v < best_v) {
      best_v = v;
      best_t = t;
    }
  }
  const double step = (hi - lo) / (n - 1);
  double a = best_t - step, b = best_t + step;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double c = b - g * (b - a), e = a + g * (b - a);
    if (obj(c) < obj(e)) b = e;
    else a = c;
  }
  return b0 + 0.5 * (a + b) * dir;
}

inline MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> nd;
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(rng);
  return m;
}

inline VectorXd gaussian_vector(std::mt19937_64& rng, Eigen::Index n) { return gaussian_matrix(rng, n, 1).col(0); }

inline MatrixXd gaussian_matrix(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937_64 rng(seed);
  return gaussian_matrix(rng, r, c);
}

inline VectorXd gaussian_vector(Eigen::Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  return gaussian_vector(rng, n);
}

/// Central-difference Jacobian of a map R^n -> R^n, written independently of
/// the library oracle.
inline MatrixXd central_jacobian(const std::function<VectorXd(const VectorXd&)>& g, const VectorXd& y, double h) {
  MatrixXd j(y.size(), y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    VectorXd up = y, dn = y;
    up(i) += h;
    dn(i) -= h;
    j.col(i) = (g(up) - g(dn)) / (2.0 * h);
  }
  return j;
}

}  // namespace oracle
