// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brute-force reference implementations. Nothing here calls the analytical sign
// inference, the stride search or the closed-form solvers; the only shared piece
// is the stride pairing itself, whose partition property is checked separately.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/geometry.hpp"
#include "goquant/matrix.hpp"

namespace goquant::oracle {

inline constexpr std::size_t kMaxExhaustiveGroup = 16;

/// <b2, r> for an explicitly constructed b2, accumulated pair by pair.
/// Both analytical and enumerated sign patterns are scored by this one function.
inline double evaluate_alignment(std::span<const double> v, std::span<const double> r,
                                 std::span<const IndexPair> pairing, std::uint32_t signs) {
  double s = 0.0;
  for (std::size_t k = 0; k < pairing.size(); ++k) {
    const std::size_t i = pairing[k].i, j = pairing[k].j;
    const double e = (signs >> k) & 1u ? -1.0 : 1.0;
    const double yi = -e * v[j];
    const double yj = e * v[i];
    s += yi * r[i] + yj * r[j];
  }
  return s;
}

struct SignResult {
  std::uint32_t signs = 0;
  double alignment = 0.0;
};

/// Maximum of <b2, r> over all 2^(G/2) sign vectors for one pairing.
inline SignResult exhaustive_sign_search(std::span<const double> v, std::span<const double> r,
                                         std::span<const IndexPair> pairing, bool allow_big = false) {
  if (v.size() != r.size()) throw Error(Errc::data, "exhaustive_sign_search: length mismatch");
  if (v.size() > kMaxExhaustiveGroup && !allow_big)
    throw Error(Errc::usage, "exhaustive_sign_search: G > 16 requires the big opt-in");
  if (pairing.size() > 16) throw Error(Errc::usage, "exhaustive_sign_search: at most 16 pairs");
  SignResult best;
  best.alignment = -INFINITY;
  const std::uint32_t count = 1u << pairing.size();
  for (std::uint32_t m = 0; m < count; ++m) {
    const double a = evaluate_alignment(v, r, pairing, m);
    if (a > best.alignment) best = {m, a};
  }
  return best;
}

struct StrideResult {
  std::size_t stride = 1;
  std::uint32_t signs = 0;
  double alignment = 0.0;
};

/// Maximum over every feasible stride and every sign vector. Strides are enumerated
/// directly from the cycle-parity rule, not from the production search tables.
inline StrideResult exhaustive_stride_search(std::span<const double> v, std::span<const double> r,
                                             bool allow_big = false) {
  const std::size_t g = v.size() - (v.size() % 2);
  StrideResult best;
  bool have = false;
  for (std::size_t s = 1; s <= g / 2; ++s) {
    if (!stride_feasible(g, s)) continue;
    const auto pairs = pairing_for_stride(g, s);
    const auto res = exhaustive_sign_search(v.first(g), r.first(g), pairs, allow_big);
    if (!have || res.alignment > best.alignment) {
      best = {s, res.signs, res.alignment};
      have = true;
    }
  }
  if (!have) best.alignment = 0.0;
  return best;
}

struct LstsqResult {
  double c1 = 0.0;
  double c2 = 0.0;
};

/// Normal equations (M^T M + lambda I) c = M^T y with an explicit 2x2 inverse in
/// extended precision; no orthogonality shortcut. Singular systems are errors.
inline LstsqResult dense_lstsq_2col(const Matrix& m, std::span<const double> y, double lambda) {
  if (m.cols != 2 || m.rows != y.size()) throw Error(Errc::data, "dense_lstsq_2col: expects [N x 2] and [N]");
  long double g11 = lambda, g12 = 0, g22 = lambda, h1 = 0, h2 = 0;
  for (std::size_t n = 0; n < m.rows; ++n) {
    const long double a = m(n, 0), b = m(n, 1), t = y[n];
    g11 += a * a;
    g12 += a * b;
    g22 += b * b;
    h1 += a * t;
    h2 += b * t;
  }
  const long double det = g11 * g22 - g12 * g12;
  const long double scale = g11 * g22;
  if (det == 0 || (scale > 0 && std::fabs(det) <= scale * 1e-18L) || scale == 0)
    throw Error(Errc::numeric, "dense_lstsq_2col: singular normal equations");
  LstsqResult out;
  out.c1 = static_cast<double>((g22 * h1 - g12 * h2) / det);
  out.c2 = static_cast<double>((g11 * h2 - g12 * h1) / det);
  return out;
}

/// Column-stacks two vectors into an [N x 2] design.
inline Matrix stack_columns(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    m(i, 0) = a[i];
    m(i, 1) = b[i];
  }
  return m;
}

}  // namespace goquant::oracle
