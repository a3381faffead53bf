// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/matrix.hpp"

namespace goquant {

enum class StatKind : std::uint8_t { max_abs, rms };

/// Per-input-channel activation statistics gathered from calibration data.
struct CalibStats {
  std::vector<double> a_stat;         ///< per-channel max-abs or RMS, depending on `kind`
  StatKind kind = StatKind::max_abs;
  std::size_t n_samples = 0;          ///< total activation rows seen
  double x_absmax = 0.0;              ///< global max |x|
  std::vector<double> channel_absmax; ///< per-channel max |x|, independent of `kind`
  Matrix rows;                        ///< retained activation rows (evenly subsampled), for REF solves

  std::size_t channels() const noexcept { return a_stat.size(); }
};

inline constexpr std::size_t kDefaultRetainedRows = 512;

/// Reduces a set of activation matrices [n x d_in] to per-channel statistics.
/// At most `max_rows` rows are retained, picked at an even stride over the concatenated samples.
inline CalibStats collect_stats(std::span<const Matrix> samples, StatKind kind,
                                std::size_t max_rows = kDefaultRetainedRows) {
  if (samples.empty()) throw Error(Errc::data, "collect_stats: no calibration samples");
  const std::size_t d_in = samples.front().cols;
  std::size_t total = 0;
  for (const auto& s : samples) {
    if (s.cols != d_in) throw Error(Errc::data, "collect_stats: samples disagree on d_in");
    if (!all_finite(s.data)) throw Error(Errc::data, "collect_stats: non-finite activation");
    total += s.rows;
  }
  if (total == 0 || d_in == 0) throw Error(Errc::data, "collect_stats: empty calibration data");

  CalibStats st;
  st.kind = kind;
  st.n_samples = total;
  st.channel_absmax.assign(d_in, 0.0);
  std::vector<double> sumsq(d_in, 0.0);

  const std::size_t keep = std::min(total, max_rows);
  st.rows = Matrix(keep, d_in);
  std::size_t global = 0, kept = 0;
  for (const auto& s : samples) {
    for (std::size_t r = 0; r < s.rows; ++r, ++global) {
      const auto row = s.row(r);
      for (std::size_t j = 0; j < d_in; ++j) {
        st.channel_absmax[j] = std::max(st.channel_absmax[j], std::abs(row[j]));
        sumsq[j] += row[j] * row[j];
      }
      // row `global` is retained when it is the first row at or past slot kept * total / keep
      if (kept < keep && global * keep >= kept * total) {
        std::copy(row.begin(), row.end(), st.rows.row(kept).begin());
        ++kept;
      }
    }
  }

  st.x_absmax = *std::max_element(st.channel_absmax.begin(), st.channel_absmax.end());
  if (kind == StatKind::max_abs) {
    st.a_stat = st.channel_absmax;
  } else {
    st.a_stat.resize(d_in);
    for (std::size_t j = 0; j < d_in; ++j) st.a_stat[j] = std::sqrt(sumsq[j] / static_cast<double>(total));
  }
  return st;
}

inline CalibStats collect_stats(const Matrix& sample, StatKind kind, std::size_t max_rows = kDefaultRetainedRows) {
  return collect_stats(std::span<const Matrix>(&sample, 1), kind, max_rows);
}

/// Channel-wise smoothing factors; all entries are positive and finite.
struct SmoothingVector {
  std::vector<double> s_vec;
  double alpha = 0.5;

  static SmoothingVector identity(std::size_t d_in) { return {std::vector<double>(d_in, 1.0), 0.0}; }
};

/// Column-wise max |W| over output rows, W stored [d_out x d_in].
inline std::vector<double> column_max_abs(const Matrix& w) {
  std::vector<double> m(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const auto row = w.row(i);
    for (std::size_t j = 0; j < w.cols; ++j) m[j] = std::max(m[j], std::abs(row[j]));
  }
  return m;
}

/// s[j] = a[j]^alpha / w_max[j]^(1 - alpha); channels with a zero statistic or an
/// all-zero weight column get 1.
inline SmoothingVector smoothing_vector(const CalibStats& stats, std::span<const double> w_max, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::usage, "smoothing alpha must lie in [0, 1]");
  if (w_max.size() != stats.channels()) throw Error(Errc::data, "smoothing_vector: channel count mismatch");
  SmoothingVector sv;
  sv.alpha = alpha;
  sv.s_vec.resize(w_max.size());
  for (std::size_t j = 0; j < w_max.size(); ++j) {
    const double a = stats.a_stat[j];
    const double w = w_max[j];
    double s = 1.0;
    if (a > 0.0 && w > 0.0) s = std::pow(a, alpha) / std::pow(w, 1.0 - alpha);
    if (!std::isfinite(s) || s <= 0.0) s = 1.0;
    sv.s_vec[j] = s;
  }
  return sv;
}

/// W_proc[i, j] = W[i, j] * s_vec[j].
inline Matrix apply_smoothing(const Matrix& w, std::span<const double> s_vec) {
  if (s_vec.size() != w.cols) throw Error(Errc::data, "apply: s_vec length does not match d_in");
  Matrix out = w;
  for (std::size_t i = 0; i < w.rows; ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < w.cols; ++j) row[j] *= s_vec[j];
  }
  return out;
}

inline Matrix apply_smoothing(const Matrix& w, const SmoothingVector& sv) { return apply_smoothing(w, std::span<const double>(sv.s_vec)); }

/// X[n, j] / s_vec[j]; the inverse transform on the activation side.
inline Matrix compensate(const Matrix& x, std::span<const double> s_vec) {
  if (s_vec.size() != x.cols) throw Error(Errc::data, "compensate: s_vec length does not match d_in");
  Matrix out = x;
  for (std::size_t n = 0; n < x.rows; ++n) {
    auto row = out.row(n);
    for (std::size_t j = 0; j < x.cols; ++j) row[j] /= s_vec[j];
  }
  return out;
}

}  // namespace goquant
