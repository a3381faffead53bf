// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/geometry.hpp"
#include "goquant/lattice.hpp"
#include "goquant/matrix.hpp"
#include "goquant/precondition.hpp"
#include "goquant/solver.hpp"

namespace goquant {

enum class NormScope : std::uint8_t { per_channel, per_macro_block };

struct QuantConfig {
  int bits = 3;
  Topology topology = Topology::pot;
  SolveMode mode = SolveMode::geo;
  int k = 2;                  ///< number of discrete bases (1 or 2)
  std::size_t macro = 128;    ///< N: weights sharing (c1, c2)
  std::size_t micro = 32;     ///< G: weights sharing one stride + sign bitmap
  double alpha = 0.5;
  double lambda = kDefaultLambda;
  int scale_bits = 8;         ///< b_c
  int act_bits = 8;           ///< b_a
  NormScope norm_scope = NormScope::per_channel;

  LatticeSpec lattice() const { return LatticeSpec::make(topology, bits); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::usage, "config: " + m); };
    if (bits != 3 && bits != 4) fail("bits must be 3 or 4");
    if (k != 1 && k != 2) fail("K must be 1 or 2");
    if (micro < 2 || micro > kMaxMicroBlock || (micro & (micro - 1)) != 0)
      fail("micro-block size must be a power of two in [2, 32]");
    if (macro < micro || macro % micro != 0 || macro > 0xFFFF) fail("macro-block size must be a multiple of the micro-block size");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and non-negative");
    if (scale_bits < 2 || scale_bits > 16) fail("scale bits must lie in [2, 16]");
    if (act_bits != 4 && act_bits != 6 && act_bits != 8 && act_bits != 16) fail("activation bits must be 4, 6, 8 or 16");
  }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Largest magnitude of a symmetric b-bit signed integer.
inline std::int64_t symmetric_qmax(int bits) noexcept { return (std::int64_t{1} << (bits - 1)) - 1; }

/// Round half away from zero.
inline double round_half_away(double x) noexcept { return std::round(x); }

struct QuantizedTensor {
  std::string name;
  std::size_t d_out = 0;
  std::size_t d_in = 0;
  QuantConfig config;
  std::vector<float> s_norm;               ///< [d_out], or [d_out x n_macro] for per-macro-block scope
  std::vector<float> s_vec;                ///< [d_in]
  float s_c1 = 1.0f;
  float s_c2 = 1.0f;
  std::vector<LatticeCode> codes;          ///< b1 codes, [d_out x d_in]
  std::vector<MicroBlockBasis> micro;      ///< [d_out x n_micro], empty for K = 1
  std::vector<std::int32_t> c1q;           ///< [d_out x n_macro]
  std::vector<std::int32_t> c2q;           ///< [d_out x n_macro], empty for K = 1

  std::size_t macro_count() const noexcept { return (d_in + config.macro - 1) / config.macro; }
  std::size_t micro_count() const noexcept { return (d_in + config.micro - 1) / config.micro; }
  std::size_t micro_per_macro() const noexcept { return config.macro / config.micro; }

  std::span<const LatticeCode> row_codes(std::size_t i) const { return {codes.data() + i * d_in, d_in}; }

  std::span<const MicroBlockBasis> macro_micro(std::size_t i, std::size_t m) const {
    const std::size_t first = m * micro_per_macro();
    const std::size_t count = micro_count_in(block_length(m));
    return {micro.data() + i * micro_count() + first, count};
  }

  std::size_t block_begin(std::size_t m) const noexcept { return m * config.macro; }
  std::size_t block_length(std::size_t m) const noexcept { return std::min(config.macro, d_in - block_begin(m)); }
  std::size_t micro_count_in(std::size_t len) const noexcept { return (len + config.micro - 1) / config.micro; }

  friend bool operator==(const QuantizedTensor& a, const QuantizedTensor& b) {
    auto micro_eq = [](const MicroBlockBasis& x, const MicroBlockBasis& y) {
      return x.stride == y.stride && x.signs == y.signs;
    };
    return a.name == b.name && a.d_out == b.d_out && a.d_in == b.d_in && a.config == b.config &&
           a.s_norm == b.s_norm && a.s_vec == b.s_vec && a.s_c1 == b.s_c1 && a.s_c2 == b.s_c2 &&
           a.codes == b.codes && std::equal(a.micro.begin(), a.micro.end(), b.micro.begin(), b.micro.end(), micro_eq) &&
           a.c1q == b.c1q && a.c2q == b.c2q;
  }
};

struct QuantizeStats {
  std::uint64_t ref_geo_fallbacks = 0;  ///< ill-conditioned REF blocks solved with GEO instead
  std::uint64_t ridge_fallbacks = 0;    ///< lambda = 0 singular designs solved with the default lambda
  SearchCounter search;
};

namespace detail {

struct RowWork {
  std::vector<double> c1, c2;  // [d_out x n_macro]
  QuantizeStats stats;
};

inline void quantize_rows(const Matrix& w_proc, const Matrix* x_comp, const QuantConfig& cfg, const LatticeSpec& spec,
                          std::size_t row_begin, std::size_t row_end, QuantizedTensor& qt, RowWork& work,
                          QuantizeStats& stats) {
  StrideTables tables(cfg.micro);
  const std::size_t n_macro = qt.macro_count();
  const std::size_t n_micro = qt.micro_count();
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const auto row = w_proc.row(i);
    double row_norm = 1.0;
    if (cfg.norm_scope == NormScope::per_channel) {
      row_norm = static_cast<float>(max_abs_scale(row));
      qt.s_norm[i] = static_cast<float>(row_norm);
    }
    for (std::size_t m = 0; m < n_macro; ++m) {
      const std::size_t b0 = qt.block_begin(m);
      const auto block = row.subspan(b0, qt.block_length(m));
      double s_norm = row_norm;
      if (cfg.norm_scope == NormScope::per_macro_block) {
        s_norm = static_cast<float>(max_abs_scale(block));
        qt.s_norm[i * n_macro + m] = static_cast<float>(s_norm);
      }
      const PrimaryProjection p = project_primary(block, spec, s_norm);
      std::copy(p.b1_codes.begin(), p.b1_codes.end(), qt.codes.begin() + static_cast<std::ptrdiff_t>(i * qt.d_in + b0));

      std::vector<double> b2;
      if (cfg.k == 2) {
        const OrthogonalResidual r = residual(block, p);
        MacroBasis basis = search_basis(p.b1_values, r.r_perp, tables, &stats.search);
        const std::size_t first = i * n_micro + m * qt.micro_per_macro();
        for (std::size_t u = 0; u < basis.micro.size(); ++u)
          qt.micro[first + u] = {basis.micro[u].stride, basis.micro[u].signs, 0.0};
        b2 = std::move(basis.b2_values);
      }

      ScalePair sp = solve_geo(block, p.b1_values, b2);
      if (cfg.mode == SolveMode::ref) {
        const RefDesign d = make_ref_design(*x_comp, b0, block, p.b1_values, b2, cfg.lambda);
        const ScalePair ref = solve_ref(d);
        if (ref.note == SolveNote::ill_conditioned) {
          ++stats.ref_geo_fallbacks;
        } else {
          if (ref.note == SolveNote::ridge_fallback) ++stats.ridge_fallbacks;
          sp = ref;
        }
      }
      work.c1[i * n_macro + m] = sp.c1;
      if (cfg.k == 2) work.c2[i * n_macro + m] = sp.c2;
    }
  }
}

/// Per-tensor symmetric quantization of one scale population; returns the float scale.
/// The header keeps alpha and lambda as f32, so the tensor carries them f32-rounded.
inline QuantConfig stored_config(const QuantConfig& cfg) {
  // Written as one volatile round trip each: GCC 11's SLP vectorizer at -O3 otherwise
  // folds the paired double->float->double conversions away.
  volatile float alpha = static_cast<float>(cfg.alpha);
  volatile float lambda = static_cast<float>(cfg.lambda);
  QuantConfig out = cfg;
  out.alpha = alpha;
  out.lambda = lambda;
  return out;
}

inline float quantize_scales(std::span<const double> c, int bits, std::vector<std::int32_t>& out) {
  const auto qmax = symmetric_qmax(bits);
  double m = 0.0;
  for (double x : c) m = std::max(m, std::abs(x));
  const float scale = m > 0.0 ? static_cast<float>(m / static_cast<double>(qmax)) : 1.0f;
  out.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double q = round_half_away(c[i] / static_cast<double>(scale));
    out[i] = static_cast<std::int32_t>(std::clamp<double>(q, -static_cast<double>(qmax), static_cast<double>(qmax)));
  }
  return scale;
}

}  // namespace detail

/// Runs precondition -> normalize -> b1 -> r_perp -> b2 -> scales -> scale quantization on W [d_out x d_in].
/// `stats` may be null (no smoothing); REF mode requires it with retained activation rows.
inline QuantizedTensor quantize_tensor(const Matrix& w, const CalibStats* stats, const QuantConfig& cfg,
                                       QuantizeStats* diag = nullptr, unsigned threads = 1,
                                       std::string name = {}) {
  cfg.validate();
  if (w.cols == 0) throw Error(Errc::data, "quantize_tensor: d_in must be >= 1");
  if (!all_finite(w.data)) throw Error(Errc::data, "quantize_tensor: non-finite weight");
  if (cfg.mode == SolveMode::ref && (stats == nullptr || stats->rows.rows == 0))
    throw Error(Errc::usage, "quantize_tensor: REF mode requires calibration activations");
  if (stats && stats->channels() != w.cols) throw Error(Errc::data, "quantize_tensor: calibration d_in mismatch");

  const LatticeSpec spec = cfg.lattice();
  QuantizedTensor qt;
  qt.name = std::move(name);
  qt.d_out = w.rows;
  qt.d_in = w.cols;
  qt.config = detail::stored_config(cfg);

  std::vector<double> s_vec(w.cols, 1.0);
  if (stats) {
    const auto sv = smoothing_vector(*stats, column_max_abs(w), cfg.alpha);
    for (std::size_t j = 0; j < w.cols; ++j) s_vec[j] = static_cast<float>(sv.s_vec[j]);
  }
  qt.s_vec.assign(s_vec.begin(), s_vec.end());
  const Matrix w_proc = apply_smoothing(w, s_vec);
  Matrix x_comp;
  if (cfg.mode == SolveMode::ref) x_comp = compensate(stats->rows, s_vec);

  const std::size_t n_macro = qt.macro_count();
  qt.s_norm.assign(cfg.norm_scope == NormScope::per_channel ? w.rows : w.rows * n_macro, 1.0f);
  qt.codes.assign(w.rows * w.cols, spec.zero_code());
  if (cfg.k == 2) qt.micro.assign(w.rows * qt.micro_count(), MicroBlockBasis{});

  detail::RowWork work;
  work.c1.assign(w.rows * n_macro, 0.0);
  if (cfg.k == 2) work.c2.assign(w.rows * n_macro, 0.0);

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(w.rows, 1))));
  std::vector<QuantizeStats> per_thread(threads);
  if (threads == 1) {
    detail::quantize_rows(w_proc, &x_comp, cfg, spec, 0, w.rows, qt, work, per_thread[0]);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (w.rows + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t lo = std::min(w.rows, t * chunk), hi = std::min(w.rows, lo + chunk);
      pool.emplace_back([&, lo, hi, t] { detail::quantize_rows(w_proc, &x_comp, cfg, spec, lo, hi, qt, work, per_thread[t]); });
    }
  }

  qt.s_c1 = detail::quantize_scales(work.c1, cfg.scale_bits, qt.c1q);
  if (cfg.k == 2) qt.s_c2 = detail::quantize_scales(work.c2, cfg.scale_bits, qt.c2q);

  if (diag) {
    *diag = QuantizeStats{};
    for (const auto& s : per_thread) {
      diag->ref_geo_fallbacks += s.ref_geo_fallbacks;
      diag->ridge_fallbacks += s.ridge_fallbacks;
      diag->search.pair_evaluations += s.search.pair_evaluations;
      diag->search.strides_evaluated += s.search.strides_evaluated;
      diag->search.micro_blocks += s.search.micro_blocks;
    }
  }
  return qt;
}

inline QuantizedTensor quantize_tensor(const Matrix& w, const CalibStats* stats, const QuantConfig& cfg,
                                       std::string name) {
  return quantize_tensor(w, stats, cfg, nullptr, 1, std::move(name));
}

/// Checks array sizes and code ranges against the header fields.
inline void validate_tensor(const QuantizedTensor& qt) {
  qt.config.validate();
  const LatticeSpec spec = qt.config.lattice();
  const std::size_t n_macro = qt.macro_count();
  const std::size_t expect_norm = qt.config.norm_scope == NormScope::per_channel ? qt.d_out : qt.d_out * n_macro;
  auto bad = [&](const char* m) { throw Error(Errc::corrupt, std::string("tensor '") + qt.name + "': " + m); };
  if (qt.d_in == 0) bad("d_in is zero");
  if (qt.s_norm.size() != expect_norm) bad("s_norm size");
  if (qt.s_vec.size() != qt.d_in) bad("s_vec size");
  if (qt.codes.size() != qt.d_out * qt.d_in) bad("code count");
  if (qt.c1q.size() != qt.d_out * n_macro) bad("c1 count");
  if (qt.config.k == 2) {
    if (qt.micro.size() != qt.d_out * qt.micro_count()) bad("micro-block count");
    if (qt.c2q.size() != qt.d_out * n_macro) bad("c2 count");
  } else if (!qt.micro.empty() || !qt.c2q.empty()) {
    bad("K=1 tensor carries secondary basis data");
  }
  for (auto c : qt.codes)
    if (c >= spec.size()) bad("lattice code out of range");
  const auto qmax = symmetric_qmax(qt.config.scale_bits);
  for (auto c : qt.c1q)
    if (std::abs(c) > qmax) bad("c1 exceeds scale bits");
  for (auto c : qt.c2q)
    if (std::abs(c) > qmax) bad("c2 exceeds scale bits");
}

/// Reconstruction in the smoothed (processed) weight space: c1~ s_c1 b1 + c2~ s_c2 b2.
inline Matrix dequantize_processed(const QuantizedTensor& qt) {
  validate_tensor(qt);
  const LatticeSpec spec = qt.config.lattice();
  StrideTables tables(qt.config.micro);
  const std::size_t n_macro = qt.macro_count();
  Matrix out(qt.d_out, qt.d_in);
  for (std::size_t i = 0; i < qt.d_out; ++i) {
    const auto codes = qt.row_codes(i);
    for (std::size_t m = 0; m < n_macro; ++m) {
      const std::size_t b0 = qt.block_begin(m), len = qt.block_length(m);
      std::vector<double> b1(len);
      for (std::size_t u = 0; u < len; ++u) b1[u] = spec.value_unchecked(codes[b0 + u]);
      const double c1 = static_cast<double>(qt.c1q[i * n_macro + m]) * static_cast<double>(qt.s_c1);
      for (std::size_t u = 0; u < len; ++u) out(i, b0 + u) = c1 * b1[u];
      if (qt.config.k == 2) {
        const auto b2 = derive_b2<double>(b1, qt.macro_micro(i, m), tables);
        const double c2 = static_cast<double>(qt.c2q[i * n_macro + m]) * static_cast<double>(qt.s_c2);
        for (std::size_t u = 0; u < len; ++u) out(i, b0 + u) += c2 * b2[u];
      }
    }
  }
  return out;
}

/// Reconstruction mapped back to the original weight space (divides by s_vec).
inline Matrix dequantize(const QuantizedTensor& qt) {
  Matrix out = dequantize_processed(qt);
  for (std::size_t i = 0; i < out.rows; ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) row[j] /= static_cast<double>(qt.s_vec[j]);
  }
  return out;
}

/// Exact <b1, b2> = 0 on integerized lattice values, for every macro-block.
inline bool audit_orthogonality(const QuantizedTensor& qt) {
  if (qt.config.k == 1) return true;
  const LatticeSpec spec = qt.config.lattice();
  StrideTables tables(qt.config.micro);
  for (std::size_t i = 0; i < qt.d_out; ++i) {
    const auto codes = qt.row_codes(i);
    for (std::size_t m = 0; m < qt.macro_count(); ++m) {
      const auto block = codes.subspan(qt.block_begin(m), qt.block_length(m));
      if (integer_cross(spec, block, qt.macro_micro(i, m), tables) != 0) return false;
    }
  }
  return true;
}

struct ErrorReport {
  double frobenius_rel = 0.0;
  double mean_cosine = 0.0;
  std::vector<double> per_block_mse;  ///< [d_out x n_macro]
  std::size_t rows_skipped = 0;       ///< zero rows excluded from mean_cosine
  std::vector<double> row_cosine;     ///< NaN for skipped rows
};

inline ErrorReport error_report(const Matrix& w, const Matrix& w_hat, std::size_t macro) {
  if (w.rows != w_hat.rows || w.cols != w_hat.cols) throw Error(Errc::data, "error_report: shape mismatch");
  ErrorReport r;
  const std::size_t n_macro = (w.cols + macro - 1) / macro;
  r.per_block_mse.assign(w.rows * n_macro, 0.0);
  r.row_cosine.assign(w.rows, std::nan(""));
  double err = 0.0, ref = 0.0, cos_sum = 0.0;
  std::size_t cos_rows = 0;
  for (std::size_t i = 0; i < w.rows; ++i) {
    const auto a = w.row(i), b = w_hat.row(i);
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < w.cols; ++j) {
      const double d = a[j] - b[j];
      err += d * d;
      ref += a[j] * a[j];
      ab += a[j] * b[j];
      aa += a[j] * a[j];
      bb += b[j] * b[j];
      r.per_block_mse[i * n_macro + j / macro] += d * d;
    }
    for (std::size_t m = 0; m < n_macro; ++m)
      r.per_block_mse[i * n_macro + m] /= static_cast<double>(std::min(macro, w.cols - m * macro));
    if (aa == 0.0) {
      ++r.rows_skipped;
      continue;
    }
    const double c = bb == 0.0 ? 0.0 : ab / std::sqrt(aa * bb);
    r.row_cosine[i] = c;
    cos_sum += c;
    ++cos_rows;
  }
  r.frobenius_rel = ref > 0.0 ? std::sqrt(err / ref) : std::sqrt(err);
  r.mean_cosine = cos_rows ? cos_sum / static_cast<double>(cos_rows) : 0.0;
  return r;
}

inline ErrorReport error_report(const Matrix& w, const QuantizedTensor& qt) {
  return error_report(w, dequantize(qt), qt.config.macro);
}

// ---------------------------------------------------------------------------
// Storage accounting
// ---------------------------------------------------------------------------

inline constexpr std::size_t kStrideFieldBits = 4;

/// Bits per row of packed payload: codes, then (K = 2) 4-bit stride + G/2 sign bits per
/// micro-block, then K scale integers of b_c bits per macro-block.
inline std::size_t row_payload_bits(const QuantConfig& cfg, std::size_t d_in) {
  const std::size_t n_macro = (d_in + cfg.macro - 1) / cfg.macro;
  const std::size_t n_micro = (d_in + cfg.micro - 1) / cfg.micro;
  std::size_t bits = d_in * static_cast<std::size_t>(cfg.bits);
  if (cfg.k == 2) bits += n_micro * (kStrideFieldBits + cfg.micro / 2);
  bits += static_cast<std::size_t>(cfg.k) * n_macro * static_cast<std::size_t>(cfg.scale_bits);
  return bits;
}

inline std::size_t row_payload_bytes(const QuantConfig& cfg, std::size_t d_in) {
  return (row_payload_bits(cfg, d_in) + 7) / 8;
}

/// bits + 20/G + 2 b_c / N for K = 2 when d_in is a multiple of N (exact in general for the packed layout).
inline double bits_per_weight(const QuantConfig& cfg, std::size_t d_in) {
  return static_cast<double>(row_payload_bits(cfg, d_in)) / static_cast<double>(d_in);
}

}  // namespace goquant
