#pragma once

#include "synthsel/linalg.hpp"

#include <cstdint>
#include <random>

namespace synthsel {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of stream `index` under master `seed`. Streams are independent of
/// the order in which they are requested.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(salt)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0, std::uint64_t salt = 0) {
  return Rng(derive_seed(seed, index, salt));
}

inline VectorXd standard_normal(Rng& rng, Index n) {
  std::normal_distribution<double> nd;
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline MatrixXd standard_normal(Rng& rng, Index rows, Index cols) {
  std::normal_distribution<double> nd;
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

}  // namespace synthsel
