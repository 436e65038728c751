#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/rng.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace synthsel {

/// Stationary bootstrap settings; the expected block length is 1/block_prob.
struct BootstrapSpec {
  double block_prob = 0.2;
  std::uint64_t seed = 0;
};

struct BootstrapSample {
  MatrixXd data;
  std::vector<Index> indices;       ///< source row of every output row
  std::vector<Index> block_starts;  ///< output rows that open a new block
};

/// Resample rows in blocks of geometric length with circular wraparound.
/// All columns share the row indices.
inline BootstrapSample stationary_bootstrap(const MatrixXd& series, double block_prob, Rng& rng, Index length = 0) {
  const Index t = series.rows();
  if (t < 2) throw ConfigError("stationary bootstrap needs at least two rows");
  if (!(block_prob > 0.0 && block_prob <= 1.0)) throw ConfigError("block probability must lie in (0, 1]");
  if (length == 0) length = t;
  std::uniform_int_distribution<Index> pick(0, t - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BootstrapSample out;
  out.data.resize(length, series.cols());
  out.indices.resize(static_cast<std::size_t>(length));
  Index cur = 0;
  for (Index i = 0; i < length; ++i) {
    if (i == 0 || u(rng) < block_prob) {
      cur = pick(rng);
      out.block_starts.push_back(i);
    } else {
      cur = (cur + 1) % t;
    }
    out.indices[static_cast<std::size_t>(i)] = cur;
    out.data.row(i) = series.row(cur);
  }
  return out;
}

inline BootstrapSample stationary_bootstrap(const MatrixXd& series, const BootstrapSpec& spec, Index length = 0) {
  Rng rng = make_rng(spec.seed);
  return stationary_bootstrap(series, spec.block_prob, rng, length);
}

/// Lengths of the complete blocks in a sample; the final block may be cut
/// short by the output length and is left out.
inline std::vector<Index> block_lengths(const BootstrapSample& s) {
  std::vector<Index> out;
  for (std::size_t b = 0; b + 1 < s.block_starts.size(); ++b) out.push_back(s.block_starts[b + 1] - s.block_starts[b]);
  return out;
}

}  // namespace synthsel
