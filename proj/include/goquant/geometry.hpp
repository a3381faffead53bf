// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/lattice.hpp"
#include "goquant/matrix.hpp"

namespace goquant {

/// Largest micro-block handled anywhere in the pipeline: 16 sign bits and a 4-bit stride field.
inline constexpr std::size_t kMaxMicroBlock = 32;

// ---------------------------------------------------------------------------
// Primary projection and orthogonal residual
// ---------------------------------------------------------------------------

struct PrimaryProjection {
  std::vector<LatticeCode> b1_codes;
  double s_norm = 1.0;
  std::vector<double> b1_values;
};

/// max |w|, or 1 for an all-zero vector.
inline double max_abs_scale(std::span<const double> w) {
  double m = 0.0;
  for (double x : w) m = std::max(m, std::abs(x));
  return m > 0.0 ? m : 1.0;
}

inline PrimaryProjection project_primary(std::span<const double> w_proc, const LatticeSpec& spec, double s_norm) {
  if (!(s_norm > 0.0) || !std::isfinite(s_norm)) s_norm = 1.0;
  PrimaryProjection p;
  p.s_norm = s_norm;
  p.b1_codes.resize(w_proc.size());
  p.b1_values.resize(w_proc.size());
  for (std::size_t i = 0; i < w_proc.size(); ++i) {
    if (std::isnan(w_proc[i])) throw Error(Errc::data, "project_primary: NaN weight");
    const LatticeCode c = nearest(spec, w_proc[i] / s_norm);
    p.b1_codes[i] = c;
    p.b1_values[i] = spec.value_unchecked(c);
  }
  return p;
}

struct OrthogonalResidual {
  std::vector<double> r_perp;
};

/// Gram-Schmidt: w - (<w, b1> / |b1|^2) b1, or w itself when b1 = 0.
inline OrthogonalResidual residual(std::span<const double> w_proc, std::span<const double> b1) {
  if (w_proc.size() != b1.size()) throw Error(Errc::data, "residual: length mismatch");
  OrthogonalResidual r;
  r.r_perp.assign(w_proc.begin(), w_proc.end());
  const double bb = norm2(b1);
  if (bb == 0.0) return r;
  const double c = dot(w_proc, b1) / bb;
  for (std::size_t i = 0; i < b1.size(); ++i) r.r_perp[i] -= c * b1[i];
  return r;
}

inline OrthogonalResidual residual(std::span<const double> w_proc, const PrimaryProjection& p) {
  return residual(w_proc, std::span<const double>(p.b1_values));
}

// ---------------------------------------------------------------------------
// Strided pairings
// ---------------------------------------------------------------------------

struct IndexPair {
  std::uint16_t i = 0;
  std::uint16_t j = 0;
  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// A stride admits a perfect matching of i -> (i + s) mod G iff every cycle has even length.
inline bool stride_feasible(std::size_t g, std::size_t s) noexcept {
  if (g < 2 || g % 2 != 0 || s < 1 || s > g / 2) return false;
  return (g / std::gcd(g, s)) % 2 == 0;
}

/// Perfect matching of {0..G-1} whose pairs satisfy j = (i + s) mod G. Each cycle of
/// i -> i + s is walked from its smallest unvisited index, taking alternating edges.
inline std::vector<IndexPair> pairing_for_stride(std::size_t g, std::size_t s) {
  if (g < 2 || g % 2 != 0) throw Error(Errc::usage, "pairing_for_stride: G must be even and >= 2");
  if (s < 1 || s > g / 2) throw Error(Errc::usage, "pairing_for_stride: stride out of range");
  if (!stride_feasible(g, s))
    throw Error(Errc::usage, "pairing_for_stride: stride " + std::to_string(s) + " has odd cycles for G=" +
                                 std::to_string(g));
  std::vector<IndexPair> pairs;
  pairs.reserve(g / 2);
  std::vector<bool> seen(g, false);
  for (std::size_t start = 0; start < g; ++start) {
    if (seen[start]) continue;
    std::size_t i = start;
    do {
      const std::size_t j = (i + s) % g;
      pairs.push_back({static_cast<std::uint16_t>(i), static_cast<std::uint16_t>(j)});
      seen[i] = seen[j] = true;
      i = (j + s) % g;
    } while (i != start);
  }
  return pairs;
}

/// Sign bitmap convention: bit k set means eta_k = -1 for the k-th pair.
inline int eta(std::uint32_t signs, std::size_t k) noexcept { return (signs >> k) & 1u ? -1 : 1; }

/// [y_i, y_j] = [-eta x_j, eta x_i] for every pair; indices outside the pairing map to 0.
template <typename T>
std::vector<T> dual_exchange(std::span<const T> v, std::span<const IndexPair> pairing, std::uint32_t signs) {
  std::vector<T> y(v.size(), T{0});
  for (std::size_t k = 0; k < pairing.size(); ++k) {
    const auto [i, j] = pairing[k];
    const T e = static_cast<T>(eta(signs, k));
    y[i] = -e * v[j];
    y[j] = e * v[i];
  }
  return y;
}

struct SignChoice {
  std::uint32_t signs = 0;
  double alignment = 0.0;  ///< sum over pairs of |x_i r_j - x_j r_i|
};

/// eta_k = sign(x_i r_j - x_j r_i), +1 on zero.
inline SignChoice optimal_signs(std::span<const double> v, std::span<const double> r,
                                std::span<const IndexPair> pairing) {
  SignChoice out;
  for (std::size_t k = 0; k < pairing.size(); ++k) {
    const auto [i, j] = pairing[k];
    const double t = v[i] * r[j] - v[j] * r[i];
    if (t < 0.0) out.signs |= (1u << k);
    out.alignment += std::abs(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Micro/macro block search
// ---------------------------------------------------------------------------

/// Stride + sign metadata for one micro-block. Pairing is recomputed from (length, stride).
struct MicroBlockBasis {
  std::uint8_t stride = 1;
  std::uint16_t signs = 0;
  double alignment = 0.0;
};

struct MacroBasis {
  std::vector<MicroBlockBasis> micro;
  std::vector<double> b2_values;
};

/// Even prefix of a (possibly ragged) micro-block that takes part in pairing.
inline std::size_t paired_length(std::size_t len) noexcept { return len - (len % 2); }

/// All feasible strides and their pairings for one micro-block length.
class StrideTable {
 public:
  explicit StrideTable(std::size_t block_len) : len_(block_len), paired_(paired_length(block_len)) {
    if (block_len > kMaxMicroBlock) throw Error(Errc::usage, "micro-block larger than 32");
    for (std::size_t s = 1; s <= paired_ / 2; ++s)
      if (stride_feasible(paired_, s)) entries_.push_back({s, pairing_for_stride(paired_, s)});
  }

  struct Entry {
    std::size_t stride;
    std::vector<IndexPair> pairs;
  };

  std::size_t length() const noexcept { return len_; }
  std::size_t paired() const noexcept { return paired_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  const std::vector<IndexPair>* find(std::size_t stride) const noexcept {
    for (const auto& e : entries_)
      if (e.stride == stride) return &e.pairs;
    return nullptr;
  }

 private:
  std::size_t len_;
  std::size_t paired_;
  std::vector<Entry> entries_;
};

/// Instrumented work for the complexity audit.
struct SearchCounter {
  std::uint64_t pair_evaluations = 0;
  std::uint64_t strides_evaluated = 0;
  std::uint64_t micro_blocks = 0;
};

/// Best (stride, signs) for one micro-block: maximal alignment, smallest stride on ties.
inline MicroBlockBasis search_micro(std::span<const double> v, std::span<const double> r, const StrideTable& table,
                                    SearchCounter* counter = nullptr) {
  MicroBlockBasis best;
  bool have = false;
  for (const auto& e : table.entries()) {
    const SignChoice sc = optimal_signs(v, r, e.pairs);
    if (counter) {
      counter->pair_evaluations += e.pairs.size();
      ++counter->strides_evaluated;
    }
    if (!have || sc.alignment > best.alignment) {
      best = {static_cast<std::uint8_t>(e.stride), static_cast<std::uint16_t>(sc.signs), sc.alignment};
      have = true;
    }
  }
  if (counter) ++counter->micro_blocks;
  return best;
}

/// Applies one micro-block's exchange; unpaired tail entries stay 0.
template <typename T>
std::vector<T> micro_exchange(std::span<const T> v, const MicroBlockBasis& mb, const StrideTable& table) {
  if (table.paired() == 0) return std::vector<T>(v.size(), T{0});
  const auto* pairs = table.find(mb.stride);
  if (!pairs) throw Error(Errc::corrupt, "micro-block stride " + std::to_string(mb.stride) + " invalid for length " +
                                             std::to_string(table.length()));
  return dual_exchange<T>(v, *pairs, mb.signs);
}

/// Splits a span of length n into consecutive micro-blocks of size g (last one may be short).
inline std::size_t micro_count(std::size_t n, std::size_t g) noexcept { return (n + g - 1) / g; }

/// Reuses one StrideTable for full micro-blocks and builds ragged tails on demand.
class StrideTables {
 public:
  explicit StrideTables(std::size_t g) : g_(g), full_(g) {}

  std::size_t group() const noexcept { return g_; }

  const StrideTable& for_length(std::size_t len) {
    if (len == g_) return full_;
    for (const auto& t : ragged_)
      if (t.length() == len) return t;
    ragged_.emplace_back(len);
    return ragged_.back();
  }

 private:
  std::size_t g_;
  StrideTable full_;
  std::deque<StrideTable> ragged_;
};

/// Builds the secondary basis of a macro-block, one micro-block of size g at a time.
inline MacroBasis search_basis(std::span<const double> b1, std::span<const double> r, StrideTables& tables,
                               SearchCounter* counter = nullptr) {
  if (b1.size() != r.size()) throw Error(Errc::data, "search_basis: length mismatch");
  const std::size_t g = tables.group();
  MacroBasis out;
  out.b2_values.resize(b1.size(), 0.0);
  for (std::size_t start = 0; start < b1.size(); start += g) {
    const std::size_t len = std::min(g, b1.size() - start);
    const auto& table = tables.for_length(len);
    const auto v = b1.subspan(start, len);
    const MicroBlockBasis mb = search_micro(v, r.subspan(start, len), table, counter);
    out.micro.push_back(mb);
    const auto y = micro_exchange<double>(v, mb, table);
    std::copy(y.begin(), y.end(), out.b2_values.begin() + static_cast<std::ptrdiff_t>(start));
  }
  return out;
}

inline MacroBasis search_basis(std::span<const double> b1, std::span<const double> r, std::size_t g,
                               SearchCounter* counter = nullptr) {
  StrideTables tables(g);
  return search_basis(b1, r, tables, counter);
}

/// Rebuilds b2 for a macro-block from stored micro metadata.
template <typename T>
std::vector<T> derive_b2(std::span<const T> b1, std::span<const MicroBlockBasis> micro, StrideTables& tables) {
  const std::size_t g = tables.group();
  if (micro.size() != micro_count(b1.size(), g)) throw Error(Errc::corrupt, "derive_b2: micro-block count mismatch");
  std::vector<T> b2(b1.size(), T{0});
  for (std::size_t m = 0; m < micro.size(); ++m) {
    const std::size_t start = m * g;
    const std::size_t len = std::min(g, b1.size() - start);
    const auto y = micro_exchange<T>(b1.subspan(start, len), micro[m], tables.for_length(len));
    std::copy(y.begin(), y.end(), b2.begin() + static_cast<std::ptrdiff_t>(start));
  }
  return b2;
}

/// Source index and sign toggle of each b2 entry: b2[k] = (-1)^flip * b1[src], or 0 when src < 0.
struct ExchangeEntry {
  std::int16_t src = -1;
  bool flip = false;
};

inline std::vector<ExchangeEntry> exchange_map(std::size_t len, const MicroBlockBasis& mb, const StrideTable& table) {
  std::vector<ExchangeEntry> map(len);
  if (table.paired() == 0) return map;
  const auto* pairs = table.find(mb.stride);
  if (!pairs) throw Error(Errc::corrupt, "exchange_map: invalid stride " + std::to_string(mb.stride));
  for (std::size_t k = 0; k < pairs->size(); ++k) {
    const auto [i, j] = (*pairs)[k];
    const bool neg = eta(mb.signs, k) < 0;
    map[i] = {static_cast<std::int16_t>(j), !neg};  // y_i = -eta x_j
    map[j] = {static_cast<std::int16_t>(i), neg};   // y_j =  eta x_i
  }
  return map;
}

/// Exact <b1, b2> over the integerized lattice, computed on int64.
inline std::int64_t integer_cross(const LatticeSpec& spec, std::span<const LatticeCode> codes,
                                  std::span<const MicroBlockBasis> micro, StrideTables& tables) {
  std::vector<std::int64_t> b1(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) b1[i] = spec.int_value(codes[i]);
  const auto b2 = derive_b2<std::int64_t>(b1, micro, tables);
  std::int64_t s = 0;
  for (std::size_t i = 0; i < b1.size(); ++i) s += b1[i] * b2[i];
  return s;
}

}  // namespace goquant
