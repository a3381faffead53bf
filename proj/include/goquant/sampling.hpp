// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "goquant/lattice.hpp"
#include "goquant/matrix.hpp"

namespace goquant::sampling {

using Rng = std::mt19937_64;

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double sigma = 1.0) {
  std::normal_distribution<double> nd(0.0, sigma);
  Matrix m(rows, cols);
  for (auto& v : m.data) v = nd(rng);
  return m;
}

inline std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double sigma = 1.0) {
  std::normal_distribution<double> nd(0.0, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

inline std::vector<LatticeCode> random_codes(Rng& rng, const LatticeSpec& spec, std::size_t n) {
  std::uniform_int_distribution<int> ud(0, static_cast<int>(spec.size()) - 1);
  std::vector<LatticeCode> c(n);
  for (auto& x : c) x = static_cast<LatticeCode>(ud(rng));
  return c;
}

inline std::vector<double> decode_all(const LatticeSpec& spec, const std::vector<LatticeCode>& codes) {
  std::vector<double> v(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) v[i] = spec.value(codes[i]);
  return v;
}

inline std::uint32_t random_bits(Rng& rng, std::size_t n) {
  if (n == 0) return 0;
  return static_cast<std::uint32_t>(rng()) & (n >= 32 ? ~0u : ((1u << n) - 1));
}

}  // namespace goquant::sampling
