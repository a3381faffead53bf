// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "goquant/kernel.hpp"
#include "goquant/sampling.hpp"

using namespace goquant;

namespace {

double rel_l2(const Matrix& a, const Matrix& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    den += b.data[i] * b.data[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

QuantizedTensor hand_tensor() {
  QuantizedTensor qt;
  qt.d_out = 1;
  qt.d_in = 2;
  qt.s_norm = {1.0f};
  qt.s_vec = {1.0f, 1.0f};
  qt.s_c1 = 0.01f;
  qt.s_c2 = 0.01f;
  qt.codes = {7, 5};  // +1 (int 8), +0.25 (int 2)
  qt.micro = {MicroBlockBasis{}};
  qt.c1q = {5};
  qt.c2q = {0};
  return qt;
}

}  // namespace

TEST(Kernel, HandEvaluation) {
  const auto qt = hand_tensor();
  QuantizedActivations qa;
  qa.rows = 1;
  qa.cols = 2;
  qa.x_int = {3, -2};
  qa.s_x = 0.1;
  OpCounters c;
  KernelTrace t;
  const auto y = shiftadd_gemm(qa, qt, c, &t);
  EXPECT_EQ(t.block_acc1[0], 20);
  EXPECT_EQ(t.p1[0], 100);
  EXPECT_NEAR(y(0, 0), 0.0125, 1e-9);
  EXPECT_EQ(c.int_muls, 2u);
  EXPECT_EQ(c.inner_muls, 0u);
}

TEST(Kernel, ZeroColumnSkipped) {
  QuantConfig cfg;
  cfg.k = 1;
  const Matrix w(1, 10);
  const auto qt = quantize_tensor(w, nullptr, cfg);
  sampling::Rng rng(5);
  const auto x = sampling::gaussian_matrix(rng, 1, 10);
  const auto qa = quantize_activations(x, qt, ActScaleSource::dynamic);
  OpCounters c;
  const auto y = shiftadd_gemm(qa, qt, c);
  EXPECT_EQ(c.skipped_zeros, 10u);
  EXPECT_EQ(c.shifts, 0u);
  EXPECT_EQ(y(0, 0), 0.0);
}

TEST(Kernel, MatchesFloatReference) {
  sampling::Rng rng(7);
  for (int bits : {3, 4}) {
    QuantConfig cfg;
    cfg.bits = bits;
    const auto w = sampling::gaussian_matrix(rng, 8, 128);
    const auto qt = quantize_tensor(w, nullptr, cfg);
    const auto x = sampling::gaussian_matrix(rng, 16, 128);
    const auto qa = quantize_activations(x, qt, ActScaleSource::dynamic);
    OpCounters c;
    const auto y = shiftadd_gemm(qa, qt, c);
    EXPECT_LE(rel_l2(y, reference_gemm(qa, qt)), 1e-6);
  }
}

TEST(Kernel, BitExactAgainstIntegerReference) {
  sampling::Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    QuantConfig cfg;
    cfg.bits = t % 2 ? 4 : 3;
    cfg.k = t % 3 ? 2 : 1;
    const std::size_t d_in = 1 + static_cast<std::size_t>(rng() % 400);
    const auto w = sampling::gaussian_matrix(rng, 5, d_in);
    const auto qt = quantize_tensor(w, nullptr, cfg);
    const auto qa = quantize_activations(sampling::gaussian_matrix(rng, 3, d_in), qt, ActScaleSource::dynamic);
    OpCounters c1, c2;
    KernelTrace t1, t2;
    const auto y1 = shiftadd_gemm(qa, qt, c1, &t1);
    const auto y2 = integer_reference_gemm(qa, qt, c2, &t2);
    ASSERT_EQ(t1, t2);
    ASSERT_EQ(y1, y2);
    EXPECT_EQ(c1.inner_muls, 0u);
    EXPECT_GT(c2.inner_muls, 0u);
  }
}

TEST(Kernel, CounterReport) {
  sampling::Rng rng(13);
  for (std::size_t d_in : {128u, 256u}) {
    for (int k : {1, 2}) {
      QuantConfig cfg;
      cfg.k = k;
      const auto qt = quantize_tensor(sampling::gaussian_matrix(rng, 4, d_in), nullptr, cfg);
      const auto qa = quantize_activations(sampling::gaussian_matrix(rng, 2, d_in), qt, ActScaleSource::dynamic);
      OpCounters c;
      shiftadd_gemm(qa, qt, c);
      const auto r = report_counters(c, qt, 2);
      EXPECT_EQ(r.int_muls_per_output, static_cast<double>(k) * static_cast<double>(d_in / 128));
      EXPECT_EQ(r.expected_int_muls, r.int_muls_per_output);
      EXPECT_EQ(r.mac_muls_per_output, static_cast<double>(d_in));
      EXPECT_EQ(c.inner_muls, 0u);
      EXPECT_EQ(c.float_muls, static_cast<std::uint64_t>(k) * 8u);
    }
  }
}

TEST(Activations, Examples) {
  const Matrix z(2, 3);
  const std::vector<double> ones(3, 1.0);
  const auto q0 = quantize_activations(z, ones, 8, ActScaleSource::dynamic);
  EXPECT_EQ(q0.s_x, 1.0);
  for (auto v : q0.x_int) EXPECT_EQ(v, 0);

  Matrix x(1, 3);
  x(0, 0) = 1.27;
  x(0, 1) = -0.5;
  const auto q = quantize_activations(x, ones, 8, ActScaleSource::dynamic);
  EXPECT_NEAR(q.s_x, 0.01, 1e-15);
  EXPECT_EQ(q.x_int[0], 127);
  EXPECT_EQ(q.x_int[1], -50);
  EXPECT_THROW(quantize_activations(x, ones, 5, ActScaleSource::dynamic), Error);
  EXPECT_THROW(quantize_activations(x, ones, 8, ActScaleSource::calib), Error);
}

TEST(Activations, RoundTripBound) {
  sampling::Rng rng(17);
  const auto x = sampling::gaussian_matrix(rng, 8, 16);
  std::vector<double> s(16);
  for (auto& v : s) v = std::exp(std::uniform_real_distribution<double>(-1, 1)(rng));
  for (int bits : {4, 6, 8, 16}) {
    const auto q = quantize_activations(x, s, bits, ActScaleSource::dynamic);
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t k = 0; k < 16; ++k) {
        EXPECT_LE(std::abs(q(n, k)), symmetric_qmax(bits));
        EXPECT_LE(std::abs(x(n, k) - q(n, k) * q.s_x * s[k]), q.s_x * s[k] / 2 * (1 + 1e-9));
      }
  }
}

TEST(Activations, CalibSourceSaturates) {
  Matrix calib(1, 2);
  calib(0, 0) = 1.0;
  calib(0, 1) = -0.5;
  const auto st = collect_stats(calib, StatKind::max_abs);
  Matrix x(1, 2);
  x(0, 0) = 3.0;
  const std::vector<double> ones(2, 1.0);
  const auto q = quantize_activations(x, ones, 8, ActScaleSource::calib, &st);
  EXPECT_NEAR(q.s_x, 1.0 / 127, 1e-15);
  EXPECT_EQ(q.x_int[0], 127);
}

TEST(Kernel, ExtremeValuesFitAccumulator) {
  QuantConfig cfg;
  const std::size_t d_in = std::size_t{1} << 14;
  Matrix w(2, d_in, 1.0);
  for (std::size_t j = 0; j < d_in; ++j) w(1, j) = j % 2 ? -1.0 : 1.0;
  const auto qt = quantize_tensor(w, nullptr, cfg);
  Matrix x(2, d_in, 1.0);
  for (std::size_t j = 0; j < d_in; ++j) x(1, j) = j % 2 ? -1.0 : 1.0;
  const auto qa = quantize_activations(x, qt, ActScaleSource::dynamic);
  EXPECT_NO_THROW(check_accumulator_budget(qt, 8));
  OpCounters c1, c2;
  KernelTrace t1, t2;
  shiftadd_gemm(qa, qt, c1, &t1);
  integer_reference_gemm(qa, qt, c2, &t2);
  EXPECT_EQ(t1, t2);
  EXPECT_EQ(t1.block_acc1[0], 127 * 8 * 128);
}

TEST(Kernel, BudgetRejectsWideConfigs) {
  QuantConfig cfg;
  cfg.bits = 4;
  cfg.macro = 1024;
  cfg.act_bits = 16;
  const auto qt = quantize_tensor(Matrix(1, 1024, 0.5), nullptr, cfg);
  try {
    check_accumulator_budget(qt, 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::overflow);
  }
}

TEST(Kernel, LinearLatticeRejected) {
  QuantConfig cfg;
  cfg.topology = Topology::linear;
  const auto qt = quantize_tensor(Matrix(1, 4, 0.5), nullptr, cfg);
  const auto qa = quantize_activations(Matrix(1, 4, 1.0), qt, ActScaleSource::dynamic);
  OpCounters c;
  EXPECT_THROW(shiftadd_gemm(qa, qt, c), Error);
}

TEST(ReferenceGemm, Identity) {
  sampling::Rng rng(19);
  const auto x = sampling::gaussian_matrix(rng, 3, 4);
  Matrix eye(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  EXPECT_EQ(reference_gemm(x, eye), x);
}
