// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "goquant/error.hpp"

namespace goquant {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  bool empty() const noexcept { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template <typename A, typename B>
inline double dot(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) { return dot<double, double>(a, b); }

inline double norm2(std::span<const double> a) { return dot(a, a); }

/// y[n, o] = sum_k x[n, k] * w[o, k]; w is stored [d_out x d_in].
inline Matrix matmul_nt(const Matrix& x, const Matrix& w) {
  if (x.cols != w.cols) throw Error(Errc::data, "matmul: inner dimensions differ");
  Matrix y(x.rows, w.rows);
  for (std::size_t n = 0; n < x.rows; ++n)
    for (std::size_t o = 0; o < w.rows; ++o) y(n, o) = dot(x.row(n), w.row(o));
  return y;
}

}  // namespace goquant
