// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "goquant/error.hpp"

namespace goquant {

enum class Topology : std::uint8_t { pot, linear };

using LatticeCode = std::uint8_t;

/// Sign-magnitude form of a PoT integer level: value = (-1)^negative * (1 << shift), or 0.
struct ShiftCode {
  bool zero = true;
  bool negative = false;
  std::uint8_t shift = 0;
};

/// A discrete value set in [-1, 1] with its integerized form `values * lambda`.
///
/// PoT lattices are asymmetric: the smallest positive bin is given up for an
/// exact zero state, so the 3-bit set is {-1, -1/2, -1/4, -1/8, 0, 1/4, 1/2, 1}
/// and the 4-bit set extends the same construction to 2^-7 / 2^-6.
/// Linear lattices are the symmetric grid {-m..m}/m with m = 2^(bits-1) - 1;
/// they have one reserved code and never enter the shift datapath.
///
/// Codes are assigned in ascending value order.
class LatticeSpec {
 public:
  static LatticeSpec pot(int bits) {
    if (bits != 3 && bits != 4) throw Error(Errc::usage, "PoT lattice supports 3 or 4 bits");
    const int neg_exponents = bits == 3 ? 4 : 8;  // -2^0 .. -2^-(n-1)
    const int pos_exponents = neg_exponents - 1;  // +2^-(n-2) .. +2^0
    LatticeSpec s;
    s.topology_ = Topology::pot;
    s.bits_ = bits;
    s.lambda_ = 1 << (neg_exponents - 1);
    for (int e = 0; e < neg_exponents; ++e) s.push_pot(true, e);
    s.push_zero();
    for (int e = pos_exponents - 1; e >= 0; --e) s.push_pot(false, e);
    return s;
  }

  static LatticeSpec linear(int bits) {
    if (bits != 3 && bits != 4) throw Error(Errc::usage, "linear lattice supports 3 or 4 bits");
    LatticeSpec s;
    s.topology_ = Topology::linear;
    s.bits_ = bits;
    const int m = (1 << (bits - 1)) - 1;
    s.lambda_ = m;
    for (int k = -m; k <= m; ++k) {
      s.values_.push_back(static_cast<double>(k) / m);
      s.int_values_.push_back(k);
      s.shift_codes_.push_back(ShiftCode{});
    }
    return s;
  }

  static LatticeSpec make(Topology t, int bits) { return t == Topology::pot ? pot(bits) : linear(bits); }

  /// File-format lattice id: 0=PoT3, 1=PoT4, 2=Lin3, 3=Lin4.
  static LatticeSpec from_id(std::uint8_t id) {
    switch (id) {
      case 0: return pot(3);
      case 1: return pot(4);
      case 2: return linear(3);
      case 3: return linear(4);
      default: throw Error(Errc::corrupt, "unknown lattice id " + std::to_string(id));
    }
  }

  std::uint8_t id() const noexcept {
    return static_cast<std::uint8_t>((topology_ == Topology::pot ? 0 : 2) + (bits_ == 4 ? 1 : 0));
  }

  std::string name() const {
    return std::string(topology_ == Topology::pot ? "pot" : "linear") + std::to_string(bits_);
  }

  Topology topology() const noexcept { return topology_; }
  int bits() const noexcept { return bits_; }
  int lambda() const noexcept { return lambda_; }
  bool is_pot() const noexcept { return topology_ == Topology::pot; }

  /// Number of decodable states (2^bits for PoT, 2^bits - 1 for linear).
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const std::int32_t> int_values() const noexcept { return int_values_; }

  double value(LatticeCode c) const { return values_[checked(c)]; }
  std::int32_t int_value(LatticeCode c) const { return int_values_[checked(c)]; }
  const ShiftCode& shift_code(LatticeCode c) const { return shift_codes_[checked(c)]; }

  /// Unchecked accessors for hot loops; callers guarantee c < size().
  double value_unchecked(LatticeCode c) const noexcept { return values_[c]; }
  std::int32_t int_value_unchecked(LatticeCode c) const noexcept { return int_values_[c]; }
  const ShiftCode& shift_code_unchecked(LatticeCode c) const noexcept { return shift_codes_[c]; }

  LatticeCode zero_code() const noexcept {
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (values_[i] == 0.0) return static_cast<LatticeCode>(i);
    return 0;
  }

  friend bool operator==(const LatticeSpec& a, const LatticeSpec& b) {
    return a.topology_ == b.topology_ && a.bits_ == b.bits_;
  }

 private:
  std::size_t checked(LatticeCode c) const {
    if (c >= values_.size())
      throw Error(Errc::corrupt, "lattice code " + std::to_string(c) + " out of range for " + name());
    return c;
  }

  void push_pot(bool negative, int exponent) {
    values_.push_back((negative ? -1.0 : 1.0) * std::ldexp(1.0, -exponent));
    const int shift = lambda_shift() - exponent;
    int_values_.push_back((negative ? -1 : 1) * (1 << shift));
    shift_codes_.push_back(ShiftCode{false, negative, static_cast<std::uint8_t>(shift)});
  }

  void push_zero() {
    values_.push_back(0.0);
    int_values_.push_back(0);
    shift_codes_.push_back(ShiftCode{});
  }

  int lambda_shift() const noexcept {
    int s = 0;
    while ((1 << s) < lambda_) ++s;
    return s;
  }

  Topology topology_ = Topology::pot;
  int bits_ = 3;
  int lambda_ = 1;
  std::vector<double> values_;
  std::vector<std::int32_t> int_values_;
  std::vector<ShiftCode> shift_codes_;
};

/// Nearest lattice level to x (clamped to [-1, 1]); ties go to the larger magnitude.
inline LatticeCode nearest(const LatticeSpec& spec, double x) noexcept {
  if (x > 1.0) x = 1.0;
  if (x < -1.0) x = -1.0;
  const auto values = spec.values();
  std::size_t best = 0;
  double best_dist = std::abs(values[0] - x);
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double d = std::abs(values[i] - x);
    if (d < best_dist || (d == best_dist && std::abs(values[i]) > std::abs(values[best]))) {
      best = i;
      best_dist = d;
    }
  }
  return static_cast<LatticeCode>(best);
}

inline double decode(const LatticeSpec& spec, LatticeCode c) { return spec.value(c); }

inline bool fits_signed(std::int64_t v, int width) noexcept {
  const std::int64_t hi = (std::int64_t{1} << (width - 1)) - 1;
  return v >= -hi - 1 && v <= hi;
}

/// a * level, using the sign-magnitude shift form; `flip` toggles the sign bit.
/// Zero levels return 0 without shifting.
inline std::int64_t apply_shift(std::int64_t a, const ShiftCode& sc, bool flip) noexcept {
  if (sc.zero) return 0;
  const std::int64_t m = a << sc.shift;
  return (sc.negative != flip) ? -m : m;
}

/// Exact a * int_values[c] * (-1)^flip on a `acc_bits`-wide signed accumulator.
inline std::int64_t shift_mul(const LatticeSpec& spec, std::int64_t a, LatticeCode c, bool flip,
                              int acc_bits = 32) {
  if (!spec.is_pot()) throw Error(Errc::usage, "shift_mul requires a PoT lattice");
  if (!fits_signed(a, acc_bits)) throw Error(Errc::overflow, "shift_mul operand exceeds accumulator width");
  const std::int64_t r = apply_shift(a, spec.shift_code(c), flip);
  if (!fits_signed(r, acc_bits)) throw Error(Errc::overflow, "shift_mul result exceeds accumulator width");
  return r;
}

}  // namespace goquant
