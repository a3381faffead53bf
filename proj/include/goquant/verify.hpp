// SPDX-License-Identifier: Apache-2.0
#pragma once

// Oracle suite behind `goquant verify`: each check pits a production routine
// against its brute-force counterpart on seeded random inputs.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/geometry.hpp"
#include "goquant/kernel.hpp"
#include "goquant/lattice.hpp"
#include "goquant/oracle.hpp"
#include "goquant/quantizer.hpp"
#include "goquant/sampling.hpp"
#include "goquant/solver.hpp"

namespace goquant::verify {

enum class Fault : std::uint8_t { none, sign_flip };

struct Options {
  std::uint64_t seed = 20240601;
  std::size_t max_group = 8;  ///< largest G for exhaustive sign/stride enumeration
  bool big = false;           ///< allow G > 16
  std::size_t trials = 200;
  Fault fault = Fault::none;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::uint64_t cases = 0;
  std::uint64_t failures = 0;
  std::string detail;
};

inline CheckResult named(std::string name) {
  CheckResult r;
  r.name = std::move(name);
  return r;
}

inline void check_options(const Options& o) {
  if (o.max_group < 2 || (o.max_group & (o.max_group - 1)) != 0 || o.max_group > kMaxMicroBlock)
    throw Error(Errc::usage, "verify: micro-block size must be a power of two in [2, 32]");
  if (o.max_group > oracle::kMaxExhaustiveGroup && !o.big)
    throw Error(Errc::usage, "verify: G > 16 enumerates 2^(G/2) sign vectors per stride; pass --big to allow it");
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline double rel_dev(double a, double b) {
  const double den = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / den;
}

namespace detail {

inline std::vector<std::size_t> groups_up_to(std::size_t g) {
  std::vector<std::size_t> out;
  for (std::size_t x = 2; x <= g; x *= 2) out.push_back(x);
  return out;
}

inline std::uint32_t inject(std::uint32_t signs, Fault f) { return f == Fault::sign_flip ? signs ^ 1u : signs; }

}  // namespace detail

/// Every stride pairing is a perfect matching with j = (i + s) mod G.
inline CheckResult check_pairing_partition(const Options& o) {
  CheckResult r = named("pairing_partition");
  for (std::size_t g = 2; g <= kMaxMicroBlock; g += 2) {
    for (std::size_t s = 1; s <= g / 2; ++s) {
      if (!stride_feasible(g, s)) continue;
      ++r.cases;
      const auto pairs = pairing_for_stride(g, s);
      std::vector<int> hit(g, 0);
      bool ok = pairs.size() == g / 2;
      for (const auto& p : pairs) {
        ok = ok && p.j == (p.i + s) % g;
        ++hit[p.i];
        ++hit[p.j];
      }
      for (int h : hit) ok = ok && h == 1;
      if (!ok) ++r.failures;
    }
  }
  (void)o;
  r.pass = r.failures == 0;
  return r;
}

/// <v, exchange(v)> == 0 on the integerized lattice for random blocks, strides and signs.
inline CheckResult check_exact_orthogonality(const Options& o, std::size_t g = kMaxMicroBlock) {
  CheckResult r = named("exact_orthogonality");
  sampling::Rng rng(o.seed);
  const LatticeSpec specs[] = {LatticeSpec::pot(3), LatticeSpec::pot(4), LatticeSpec::linear(3), LatticeSpec::linear(4)};
  StrideTable table(g);
  for (std::size_t t = 0; t < o.trials * 10; ++t) {
    const LatticeSpec& spec = specs[t % 4];
    const auto codes = sampling::random_codes(rng, spec, g);
    std::vector<std::int64_t> v(g);
    for (std::size_t i = 0; i < g; ++i) v[i] = spec.int_value(codes[i]);
    for (const auto& e : table.entries()) {
      const auto signs = sampling::random_bits(rng, e.pairs.size());
      const auto y = dual_exchange<std::int64_t>(v, e.pairs, signs);
      std::int64_t s = 0;
      for (std::size_t i = 0; i < g; ++i) s += v[i] * y[i];
      ++r.cases;
      if (s != 0) ++r.failures;
    }
  }
  r.pass = r.failures == 0;
  return r;
}

/// Analytical sign choice reaches the exhaustive optimum for every feasible stride.
inline CheckResult check_sign_optimality(const Options& o) {
  check_options(o);
  CheckResult r = named("sign_optimality");
  sampling::Rng rng(o.seed + 1);
  const LatticeSpec spec = LatticeSpec::pot(3);
  for (std::size_t g : detail::groups_up_to(o.max_group)) {
    StrideTable table(g);
    const std::size_t trials = g > 16 ? std::max<std::size_t>(1, o.trials / 50) : o.trials;
    for (const auto& e : table.entries()) {
      for (std::size_t t = 0; t < trials; ++t) {
        const auto v = sampling::decode_all(spec, sampling::random_codes(rng, spec, g));
        const auto res = sampling::gaussian_vector(rng, g);
        const auto best = oracle::exhaustive_sign_search(v, res, e.pairs, o.big);
        const auto mine = detail::inject(optimal_signs(v, res, e.pairs).signs, o.fault);
        ++r.cases;
        if (oracle::evaluate_alignment(v, res, e.pairs, mine) != best.alignment) ++r.failures;
      }
    }
  }
  r.pass = r.failures == 0;
  return r;
}

/// Stride search reaches the exhaustive optimum over strides x signs.
inline CheckResult check_stride_optimality(const Options& o) {
  check_options(o);
  CheckResult r = named("stride_optimality");
  sampling::Rng rng(o.seed + 2);
  const LatticeSpec spec = LatticeSpec::pot(4);
  double worst = 0.0;
  for (std::size_t g : detail::groups_up_to(o.max_group)) {
    StrideTable table(g);
    const std::size_t trials = g > 16 ? std::max<std::size_t>(1, o.trials / 100) : o.trials;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto v = sampling::decode_all(spec, sampling::random_codes(rng, spec, g));
      const auto res = sampling::gaussian_vector(rng, g);
      const auto best = oracle::exhaustive_stride_search(v, res, o.big);
      const auto mb = search_micro(v, res, table);
      const auto signs = detail::inject(mb.signs, o.fault);
      const auto got = oracle::evaluate_alignment(v, res, *table.find(mb.stride), signs);
      const double dev = rel_dev(got, best.alignment);
      worst = std::max(worst, dev);
      ++r.cases;
      if (dev > 1e-12) ++r.failures;
    }
  }
  r.detail = "max_rel_dev=" + sci(worst);
  r.pass = r.failures == 0;
  return r;
}

/// Closed-form GEO and REF scales against the dense normal-equations oracle.
inline CheckResult check_solvers(const Options& o) {
  CheckResult r = named("solver_equivalence");
  sampling::Rng rng(o.seed + 3);
  const LatticeSpec spec = LatticeSpec::pot(3);
  double worst_geo = 0.0, worst_ref = 0.0;
  StrideTables tables(32);
  for (std::size_t t = 0; t < o.trials; ++t) {
    const auto w = sampling::gaussian_vector(rng, 128);
    const auto p = project_primary(w, spec, max_abs_scale(w));
    const auto rr = residual(w, p);
    const auto basis = search_basis(p.b1_values, rr.r_perp, tables);
    const auto geo = solve_geo(w, p.b1_values, basis.b2_values);
    const auto dense = oracle::dense_lstsq_2col(oracle::stack_columns(p.b1_values, basis.b2_values), w, 0.0);
    worst_geo = std::max({worst_geo, rel_dev(geo.c1, dense.c1), rel_dev(geo.c2, dense.c2)});

    const Matrix x = sampling::gaussian_matrix(rng, 64, 128);
    const RefDesign d = make_ref_design(x, 0, w, p.b1_values, basis.b2_values, kDefaultLambda);
    const auto ref = solve_ref(d);
    const auto dref = oracle::dense_lstsq_2col(d.a, d.y, kDefaultLambda);
    worst_ref = std::max({worst_ref, rel_dev(ref.c1, dref.c1), rel_dev(ref.c2, dref.c2)});
    r.cases += 2;
  }
  r.failures = (worst_geo > 1e-10) + (worst_ref > 1e-8);
  r.detail = "geo_max_rel=" + sci(worst_geo) + " ref_max_rel=" + sci(worst_ref);
  r.pass = r.failures == 0;
  return r;
}

/// shiftadd_gemm and the integer-multiply reference agree on every intermediate integer.
inline CheckResult check_kernel(const Options& o) {
  CheckResult r = named("kernel_bit_exact");
  sampling::Rng rng(o.seed + 4);
  for (std::size_t t = 0; t < std::max<std::size_t>(1, o.trials / 20); ++t) {
    QuantConfig cfg;
    cfg.bits = t % 2 ? 4 : 3;
    cfg.macro = 64;
    cfg.micro = 16;
    const std::size_t d_in = 40 + 13 * t % 150;
    const Matrix w = sampling::gaussian_matrix(rng, 8, d_in);
    const auto qt = quantize_tensor(w, nullptr, cfg);
    const Matrix x = sampling::gaussian_matrix(rng, 4, d_in);
    const auto qa = quantize_activations(x, qt, ActScaleSource::dynamic);
    OpCounters c1, c2;
    KernelTrace t1, t2;
    shiftadd_gemm(qa, qt, c1, &t1);
    integer_reference_gemm(qa, qt, c2, &t2);
    ++r.cases;
    if (!(t1 == t2) || c1.inner_muls != 0) ++r.failures;
  }
  r.pass = r.failures == 0;
  return r;
}

inline std::vector<CheckResult> run_all(const Options& o) {
  check_options(o);
  return {check_pairing_partition(o), check_exact_orthogonality(o), check_sign_optimality(o),
          check_stride_optimality(o), check_solvers(o),             check_kernel(o)};
}

}  // namespace goquant::verify
