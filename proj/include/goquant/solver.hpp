// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/matrix.hpp"

namespace goquant {

enum class SolveMode : std::uint8_t { geo, ref };

enum class SolveNote : std::uint8_t {
  none,
  ridge_fallback,   ///< lambda = 0 with a singular design; solved with the default lambda instead
  ill_conditioned,  ///< cond(A^T A + lambda I) above the guard; caller should use the GEO solution
};

inline constexpr double kDefaultLambda = 1e-4;
inline constexpr double kConditionGuard = 1e12;

struct ScalePair {
  double c1 = 0.0;
  double c2 = 0.0;
  SolveMode mode = SolveMode::geo;
  SolveNote note = SolveNote::none;
};

/// Decoupled projections c_k = <w, b_k> / |b_k|^2 (0 when b_k = 0). Valid because <b1, b2> = 0.
inline ScalePair solve_geo(std::span<const double> w, std::span<const double> b1, std::span<const double> b2) {
  if (w.size() != b1.size() || (!b2.empty() && b2.size() != w.size()))
    throw Error(Errc::data, "solve_geo: length mismatch");
  ScalePair s;
  const double n1 = norm2(b1);
  if (n1 > 0.0) s.c1 = dot(w, b1) / n1;
  if (!b2.empty()) {
    const double n2 = norm2(b2);
    if (n2 > 0.0) s.c2 = dot(w, b2) / n2;
  }
  return s;
}

/// Ridge design for one macro-block: A = [X b1, X b2], Y = X w.
struct RefDesign {
  Matrix a;  ///< [n_cal x 2], or [n_cal x 1] for a single basis
  std::vector<double> y;
  double lambda = kDefaultLambda;
};

/// Builds A and Y from activation rows restricted to this block's input columns.
inline RefDesign make_ref_design(const Matrix& x, std::size_t col0, std::span<const double> w,
                                 std::span<const double> b1, std::span<const double> b2, double lambda) {
  const std::size_t k = b2.empty() ? 1 : 2;
  RefDesign d;
  d.a = Matrix(x.rows, k);
  d.y.resize(x.rows);
  d.lambda = lambda;
  for (std::size_t n = 0; n < x.rows; ++n) {
    const auto xr = x.row(n).subspan(col0, w.size());
    d.a(n, 0) = dot(xr, b1);
    if (k == 2) d.a(n, 1) = dot(xr, b2);
    d.y[n] = dot(xr, w);
  }
  return d;
}

/// Ratio of eigenvalues of the symmetric 2x2 [[p, q], [q, r]].
inline double condition_2x2(double p, double q, double r) {
  const double mean = 0.5 * (p + r);
  const double rad = std::hypot(0.5 * (p - r), q);
  const double hi = mean + rad, lo = mean - rad;
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

namespace detail {

inline ScalePair ridge_closed_form(const RefDesign& d, double lambda) {
  const std::size_t k = d.a.cols;
  double p = 0, q = 0, r = 0, u = 0, v = 0;
  for (std::size_t n = 0; n < d.a.rows; ++n) {
    const double a1 = d.a(n, 0);
    const double a2 = k == 2 ? d.a(n, 1) : 0.0;
    p += a1 * a1;
    q += a1 * a2;
    r += a2 * a2;
    u += a1 * d.y[n];
    v += a2 * d.y[n];
  }
  ScalePair s;
  s.mode = SolveMode::ref;
  if (k == 1) {
    const double den = p + lambda;
    if (!(den > 0.0)) {
      s.note = SolveNote::ill_conditioned;
      return s;
    }
    s.c1 = u / den;
    return s;
  }
  p += lambda;
  r += lambda;
  if (condition_2x2(p, q, r) > kConditionGuard) s.note = SolveNote::ill_conditioned;
  const double det = p * r - q * q;
  if (!(det > 0.0)) {
    s.note = SolveNote::ill_conditioned;
    return s;
  }
  s.c1 = (r * u - q * v) / det;
  s.c2 = (p * v - q * u) / det;
  return s;
}

inline bool singular_without_ridge(const RefDesign& d) {
  double p = 0, q = 0, r = 0;
  for (std::size_t n = 0; n < d.a.rows; ++n) {
    const double a1 = d.a(n, 0);
    const double a2 = d.a.cols == 2 ? d.a(n, 1) : 0.0;
    p += a1 * a1;
    q += a1 * a2;
    r += a2 * a2;
  }
  if (d.a.cols == 1) return p == 0.0;
  return !(p * r - q * q > 0.0);
}

}  // namespace detail

/// c = (A^T A + lambda I)^-1 A^T Y via the explicit 2x2 inverse.
/// lambda = 0 on a singular design falls back to the default lambda and sets `ridge_fallback`.
inline ScalePair solve_ref(const RefDesign& d) {
  if (d.a.rows == 0 || d.a.rows != d.y.size()) throw Error(Errc::data, "solve_ref: empty or mismatched design");
  if (d.a.cols != 1 && d.a.cols != 2) throw Error(Errc::data, "solve_ref: design must have one or two columns");
  if (!(d.lambda >= 0.0)) throw Error(Errc::usage, "solve_ref: lambda must be non-negative");
  if (!all_finite(d.a.data) || !all_finite(d.y)) throw Error(Errc::numeric, "solve_ref: non-finite design entry");
  if (d.lambda == 0.0 && detail::singular_without_ridge(d)) {
    ScalePair s = detail::ridge_closed_form(d, kDefaultLambda);
    if (s.note == SolveNote::none) s.note = SolveNote::ridge_fallback;
    return s;
  }
  return detail::ridge_closed_form(d, d.lambda);
}

/// |Y - A c|^2 + lambda |c|^2
inline double ridge_objective(const RefDesign& d, double c1, double c2) {
  double e = 0.0;
  for (std::size_t n = 0; n < d.a.rows; ++n) {
    double pred = d.a(n, 0) * c1;
    if (d.a.cols == 2) pred += d.a(n, 1) * c2;
    e += (d.y[n] - pred) * (d.y[n] - pred);
  }
  return e + d.lambda * (c1 * c1 + (d.a.cols == 2 ? c2 * c2 : 0.0));
}

/// c1 b1 + c2 b2; b2 may be empty for a single basis.
inline std::vector<double> reconstruction(std::span<const double> b1, std::span<const double> b2,
                                          const ScalePair& s) {
  if (!b2.empty() && b2.size() != b1.size()) throw Error(Errc::data, "reconstruction: length mismatch");
  std::vector<double> w(b1.size());
  for (std::size_t i = 0; i < b1.size(); ++i) w[i] = s.c1 * b1[i] + (b2.empty() ? 0.0 : s.c2 * b2[i]);
  return w;
}

inline double squared_error(std::span<const double> a, std::span<const double> b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e += (a[i] - b[i]) * (a[i] - b[i]);
  return e;
}

}  // namespace goquant
