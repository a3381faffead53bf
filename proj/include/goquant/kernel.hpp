// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/geometry.hpp"
#include "goquant/lattice.hpp"
#include "goquant/matrix.hpp"
#include "goquant/precondition.hpp"
#include "goquant/quantizer.hpp"

namespace goquant {

inline constexpr int kAccumulatorBits = 32;

enum class ActScaleSource : std::uint8_t { calib, dynamic };

/// Integer activations after smoothing compensation: x ~ x_int * s_x * s_vec.
struct QuantizedActivations {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> x_int;
  double s_x = 1.0;
  int bits = 8;

  std::int32_t operator()(std::size_t n, std::size_t k) const { return x_int[n * cols + k]; }
  std::span<const std::int32_t> row(std::size_t n) const { return {x_int.data() + n * cols, cols}; }
};

/// Symmetric per-tensor quantization of X / s_vec. `calib` takes the range from
/// calibration statistics (values outside it saturate), `dynamic` from this batch.
inline QuantizedActivations quantize_activations(const Matrix& x, std::span<const double> s_vec, int bits,
                                                 ActScaleSource source, const CalibStats* stats = nullptr) {
  if (bits != 4 && bits != 6 && bits != 8 && bits != 16) throw Error(Errc::usage, "activation bits must be 4, 6, 8 or 16");
  if (s_vec.size() != x.cols) throw Error(Errc::data, "quantize_activations: s_vec length mismatch");
  if (!all_finite(x.data)) throw Error(Errc::data, "quantize_activations: non-finite activation");
  const Matrix xc = compensate(x, s_vec);

  double absmax = 0.0;
  if (source == ActScaleSource::calib) {
    if (!stats) throw Error(Errc::usage, "calib activation scale requires calibration statistics");
    if (stats->channel_absmax.size() != x.cols) throw Error(Errc::data, "quantize_activations: calibration d_in mismatch");
    for (std::size_t j = 0; j < x.cols; ++j) absmax = std::max(absmax, stats->channel_absmax[j] / s_vec[j]);
  } else {
    for (double v : xc.data) absmax = std::max(absmax, std::abs(v));
  }

  QuantizedActivations qa;
  qa.rows = x.rows;
  qa.cols = x.cols;
  qa.bits = bits;
  qa.x_int.assign(x.rows * x.cols, 0);
  const auto qmax = static_cast<double>(symmetric_qmax(bits));
  if (absmax == 0.0) {
    qa.s_x = 1.0;
    return qa;
  }
  qa.s_x = absmax / qmax;
  for (std::size_t i = 0; i < xc.data.size(); ++i)
    qa.x_int[i] = static_cast<std::int32_t>(std::clamp(round_half_away(xc.data[i] / qa.s_x), -qmax, qmax));
  return qa;
}

inline QuantizedActivations quantize_activations(const Matrix& x, const QuantizedTensor& qt, ActScaleSource source,
                                                 const CalibStats* stats = nullptr) {
  const std::vector<double> s_vec(qt.s_vec.begin(), qt.s_vec.end());
  return quantize_activations(x, s_vec, qt.config.act_bits, source, stats);
}

/// Primitive-operation counts; the hardware proxy for the datapath.
struct OpCounters {
  std::uint64_t shifts = 0;
  std::uint64_t adds = 0;
  std::uint64_t int_muls = 0;       ///< integer multiplies outside the element loop (diag scaling)
  std::uint64_t skipped_zeros = 0;
  std::uint64_t float_muls = 0;     ///< final global rescaling only
  std::uint64_t inner_muls = 0;     ///< multiplies inside the per-element accumulation loop

  OpCounters& operator+=(const OpCounters& o) {
    shifts += o.shifts;
    adds += o.adds;
    int_muls += o.int_muls;
    skipped_zeros += o.skipped_zeros;
    float_muls += o.float_muls;
    inner_muls += o.inner_muls;
    return *this;
  }
};

/// Integer intermediates of one GEMM, indexed [n][o] (totals) and [n][o][m] (block sums).
struct KernelTrace {
  std::size_t batch = 0, d_out = 0, n_macro = 0;
  std::vector<std::int64_t> p1, p2;                 ///< sum over blocks of acc * c~
  std::vector<std::int64_t> block_acc1, block_acc2; ///< per-block accumulators before diag scaling

  void resize(std::size_t n, std::size_t o, std::size_t m, bool second) {
    batch = n;
    d_out = o;
    n_macro = m;
    p1.assign(n * o, 0);
    block_acc1.assign(n * o * m, 0);
    p2.assign(second ? n * o : 0, 0);
    block_acc2.assign(second ? n * o * m : 0, 0);
  }

  friend bool operator==(const KernelTrace&, const KernelTrace&) = default;
};

/// Rejects configurations whose worst-case sums cannot fit the accumulators:
/// block sums on `acc_bits`, diag-scaled row totals on 64 bits.
inline void check_accumulator_budget(const QuantizedTensor& qt, int act_bits, int acc_bits = kAccumulatorBits) {
  const LatticeSpec spec = qt.config.lattice();
  const long double block = static_cast<long double>(symmetric_qmax(act_bits)) * spec.lambda() *
                            static_cast<long double>(std::min(qt.config.macro, qt.d_in));
  const long double acc_limit = std::ldexp(1.0L, acc_bits - 1) - 1;
  if (block > acc_limit)
    throw Error(Errc::overflow, "accumulator budget: b_a=" + std::to_string(act_bits) + " lattice=" + spec.name() +
                                    " N=" + std::to_string(qt.config.macro) + " exceeds " + std::to_string(acc_bits) +
                                    "-bit accumulator");
  const long double total = block * static_cast<long double>(symmetric_qmax(qt.config.scale_bits)) *
                            static_cast<long double>(qt.macro_count());
  if (total > std::ldexp(1.0L, 63) - 1) throw Error(Errc::overflow, "accumulator budget: row total exceeds 64 bits");
}

namespace detail {

struct RowExchange {
  std::int32_t src = -1;  // absolute column within the row, -1 for a zero entry
  bool flip = false;
};

inline std::vector<RowExchange> row_exchange(const QuantizedTensor& qt, std::size_t o, StrideTables& tables) {
  std::vector<RowExchange> map(qt.d_in);
  const std::size_t g = qt.config.micro;
  const auto metas = std::span<const MicroBlockBasis>(qt.micro).subspan(o * qt.micro_count(), qt.micro_count());
  for (std::size_t u = 0; u < metas.size(); ++u) {
    const std::size_t start = u * g, len = std::min(g, qt.d_in - start);
    const auto local = exchange_map(len, metas[u], tables.for_length(len));
    for (std::size_t k = 0; k < len; ++k)
      if (local[k].src >= 0)
        map[start + k] = {static_cast<std::int32_t>(start + static_cast<std::size_t>(local[k].src)), local[k].flip};
  }
  return map;
}

inline void checked_accumulate(std::int64_t& acc, std::int64_t term, int acc_bits) {
  acc += term;
  if (!fits_signed(acc, acc_bits)) throw Error(Errc::overflow, "shift-add accumulator overflow");
}

inline Matrix finalize(const KernelTrace& t, double s_x, const QuantizedTensor& qt, OpCounters* counters) {
  const double lambda = qt.config.lattice().lambda();
  const double g1 = s_x * static_cast<double>(qt.s_c1) / lambda;
  const double g2 = s_x * static_cast<double>(qt.s_c2) / lambda;
  Matrix y(t.batch, t.d_out);
  for (std::size_t i = 0; i < t.batch * t.d_out; ++i) {
    double v = g1 * static_cast<double>(t.p1[i]);
    if (!t.p2.empty()) v += g2 * static_cast<double>(t.p2[i]);
    y.data[i] = v;
  }
  if (counters) counters->float_muls += t.batch * t.d_out * (t.p2.empty() ? 1u : 2u);
  return y;
}

inline void require_kernel_inputs(const QuantizedActivations& qa, const QuantizedTensor& qt) {
  if (qa.cols != qt.d_in) throw Error(Errc::data, "kernel: activation width does not match d_in");
  if (!qt.config.lattice().is_pot()) throw Error(Errc::usage, "kernel: shift-add datapath requires a PoT lattice");
  validate_tensor(qt);
}

}  // namespace detail

/// Y~ = (s_x s_c1 / L) [(X~ B1) diag(c1~)] + (s_x s_c2 / L) [(X~ B2) diag(c2~)], per macro-block.
/// The element loop uses only shifts, sign toggles, zero-skips and adds; one integer multiply
/// per (row, macro-block, basis) applies c~; float multiplies appear only in the final scaling.
inline Matrix shiftadd_gemm(const QuantizedActivations& qa, const QuantizedTensor& qt, OpCounters& counters,
                            KernelTrace* trace = nullptr, int acc_bits = kAccumulatorBits) {
  detail::require_kernel_inputs(qa, qt);
  check_accumulator_budget(qt, qa.bits, acc_bits);
  const LatticeSpec spec = qt.config.lattice();
  const bool second = qt.config.k == 2;
  const std::size_t n_macro = qt.macro_count();
  StrideTables tables(qt.config.micro);

  KernelTrace local;
  KernelTrace& t = trace ? *trace : local;
  t.resize(qa.rows, qt.d_out, n_macro, second);

  std::vector<ShiftCode> sc(qt.d_in);
  for (std::size_t o = 0; o < qt.d_out; ++o) {
    const auto codes = qt.row_codes(o);
    for (std::size_t k = 0; k < qt.d_in; ++k) sc[k] = spec.shift_code_unchecked(codes[k]);
    const auto xmap = second ? detail::row_exchange(qt, o, tables) : std::vector<detail::RowExchange>{};

    for (std::size_t n = 0; n < qa.rows; ++n) {
      const auto x = qa.row(n);
      std::int64_t p1 = 0, p2 = 0;
      for (std::size_t m = 0; m < n_macro; ++m) {
        const std::size_t b0 = qt.block_begin(m), b1 = b0 + qt.block_length(m);
        std::int64_t acc1 = 0, acc2 = 0;
        for (std::size_t k = b0; k < b1; ++k) {
          if (sc[k].zero) {
            ++counters.skipped_zeros;
          } else {
            detail::checked_accumulate(acc1, apply_shift(x[k], sc[k], false), acc_bits);
            ++counters.shifts;
            ++counters.adds;
          }
        }
        if (second) {
          for (std::size_t k = b0; k < b1; ++k) {
            const detail::RowExchange e = xmap[k];
            if (e.src < 0 || sc[static_cast<std::size_t>(e.src)].zero) {
              ++counters.skipped_zeros;
            } else {
              detail::checked_accumulate(acc2, apply_shift(x[k], sc[static_cast<std::size_t>(e.src)], e.flip), acc_bits);
              ++counters.shifts;
              ++counters.adds;
            }
          }
        }
        const std::size_t bi = (n * qt.d_out + o) * n_macro + m;
        t.block_acc1[bi] = acc1;
        p1 += acc1 * qt.c1q[o * n_macro + m];
        ++counters.int_muls;
        ++counters.adds;
        if (second) {
          t.block_acc2[bi] = acc2;
          p2 += acc2 * qt.c2q[o * n_macro + m];
          ++counters.int_muls;
          ++counters.adds;
        }
      }
      t.p1[n * qt.d_out + o] = p1;
      if (second) t.p2[n * qt.d_out + o] = p2;
    }
  }
  return detail::finalize(t, qa.s_x, qt, &counters);
}

/// Plain multiply-accumulate over integerized lattice values (the MAC baseline and the
/// bit-exactness reference for shiftadd_gemm). Every element costs one inner multiply.
inline Matrix integer_reference_gemm(const QuantizedActivations& qa, const QuantizedTensor& qt, OpCounters& counters,
                                     KernelTrace* trace = nullptr) {
  detail::require_kernel_inputs(qa, qt);
  const LatticeSpec spec = qt.config.lattice();
  const bool second = qt.config.k == 2;
  const std::size_t n_macro = qt.macro_count();
  StrideTables tables(qt.config.micro);

  KernelTrace local;
  KernelTrace& t = trace ? *trace : local;
  t.resize(qa.rows, qt.d_out, n_macro, second);

  for (std::size_t o = 0; o < qt.d_out; ++o) {
    const auto codes = qt.row_codes(o);
    std::vector<std::int64_t> b1(qt.d_in), b2(qt.d_in, 0);
    for (std::size_t k = 0; k < qt.d_in; ++k) b1[k] = spec.int_value(codes[k]);
    if (second) {
      for (std::size_t m = 0; m < n_macro; ++m) {
        const std::size_t b0 = qt.block_begin(m), len = qt.block_length(m);
        const auto y = derive_b2<std::int64_t>(std::span<const std::int64_t>(b1).subspan(b0, len), qt.macro_micro(o, m), tables);
        std::copy(y.begin(), y.end(), b2.begin() + static_cast<std::ptrdiff_t>(b0));
      }
    }
    for (std::size_t n = 0; n < qa.rows; ++n) {
      const auto x = qa.row(n);
      std::int64_t p1 = 0, p2 = 0;
      for (std::size_t m = 0; m < n_macro; ++m) {
        const std::size_t b0 = qt.block_begin(m), end = b0 + qt.block_length(m);
        std::int64_t acc1 = 0, acc2 = 0;
        for (std::size_t k = b0; k < end; ++k) {
          acc1 += static_cast<std::int64_t>(x[k]) * b1[k];
          ++counters.inner_muls;
          ++counters.adds;
          if (second) {
            acc2 += static_cast<std::int64_t>(x[k]) * b2[k];
            ++counters.inner_muls;
            ++counters.adds;
          }
        }
        const std::size_t bi = (n * qt.d_out + o) * n_macro + m;
        t.block_acc1[bi] = acc1;
        p1 += acc1 * qt.c1q[o * n_macro + m];
        ++counters.int_muls;
        if (second) {
          t.block_acc2[bi] = acc2;
          p2 += acc2 * qt.c2q[o * n_macro + m];
          ++counters.int_muls;
        }
      }
      t.p1[n * qt.d_out + o] = p1;
      if (second) t.p2[n * qt.d_out + o] = p2;
    }
  }
  return detail::finalize(t, qa.s_x, qt, &counters);
}

/// Float oracle: y = X W^T.
inline Matrix reference_gemm(const Matrix& x, const Matrix& w) { return matmul_nt(x, w); }

/// Float path over the same integers: (x_int s_x) against the processed-space reconstruction.
inline Matrix reference_gemm(const QuantizedActivations& qa, const QuantizedTensor& qt) {
  Matrix xd(qa.rows, qa.cols);
  for (std::size_t i = 0; i < qa.x_int.size(); ++i) xd.data[i] = static_cast<double>(qa.x_int[i]) * qa.s_x;
  return matmul_nt(xd, dequantize_processed(qt));
}

struct CounterReport {
  OpCounters counters;
  std::size_t outputs = 0;           ///< batch x d_out
  std::size_t d_in = 0;
  double int_muls_per_output = 0.0;
  double expected_int_muls = 0.0;    ///< K * ceil(d_in / N)
  double mac_muls_per_output = 0.0;  ///< d_in for a dense MAC datapath
  double mul_reduction = 0.0;        ///< mac / shift-add multiplies
  double inner_muls_per_output = 0.0;
  double skipped_fraction = 0.0;
};

inline CounterReport report_counters(const OpCounters& c, const QuantizedTensor& qt, std::size_t batch) {
  CounterReport r;
  r.counters = c;
  r.outputs = batch * qt.d_out;
  r.d_in = qt.d_in;
  const double outs = r.outputs ? static_cast<double>(r.outputs) : 1.0;
  r.int_muls_per_output = static_cast<double>(c.int_muls) / outs;
  r.expected_int_muls = static_cast<double>(qt.config.k) * static_cast<double>(qt.macro_count());
  r.mac_muls_per_output = static_cast<double>(qt.d_in);
  r.mul_reduction = r.int_muls_per_output > 0 ? r.mac_muls_per_output / r.int_muls_per_output : 0.0;
  r.inner_muls_per_output = static_cast<double>(c.inner_muls) / outs;
  const double slots = static_cast<double>(c.shifts + c.skipped_zeros);
  r.skipped_fraction = slots > 0 ? static_cast<double>(c.skipped_zeros) / slots : 0.0;
  return r;
}

}  // namespace goquant
