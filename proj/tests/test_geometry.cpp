// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "goquant/geometry.hpp"
#include "goquant/oracle.hpp"
#include "goquant/sampling.hpp"

using namespace goquant;

TEST(Projection, Examples) {
  const auto s = LatticeSpec::pot(3);
  const std::vector<double> w{0.9, -0.3};
  const auto p = project_primary(w, s, 0.9);
  EXPECT_EQ(p.b1_values, (std::vector<double>{1.0, -0.25}));

  const std::vector<double> lat{0.5, -1.0, 0.0, 0.125 * 2, -0.125};
  std::vector<double> scaled(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) scaled[i] = 3.0 * lat[i];
  EXPECT_EQ(project_primary(scaled, s, 3.0).b1_values, lat);

  const std::vector<double> zero(5, 0.0);
  for (double v : project_primary(zero, s, max_abs_scale(zero)).b1_values) EXPECT_EQ(v, 0.0);
  const std::vector<double> bad{1.0, std::nan("")};
  EXPECT_THROW(project_primary(bad, s, 1.0), Error);
}

TEST(Residual, Examples) {
  const std::vector<double> w{1, 1}, b{1, 0};
  EXPECT_EQ(residual(w, b).r_perp, (std::vector<double>{0, 1}));
  const std::vector<double> z{0, 0};
  EXPECT_EQ(residual(w, z).r_perp, w);
  const std::vector<double> par{0.5, -1, 0.25}, scaled{1.5, -3, 0.75};
  for (double v : residual(scaled, par).r_perp) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Residual, OrthogonalToPrimary) {
  sampling::Rng rng(7);
  const auto s = LatticeSpec::pot(3);
  for (int t = 0; t < 200; ++t) {
    const auto w = sampling::gaussian_vector(rng, 128);
    const auto p = project_primary(w, s, max_abs_scale(w));
    const auto r = residual(w, p);
    EXPECT_LE(std::abs(dot(r.r_perp, p.b1_values)), 1e-9 * std::sqrt(norm2(r.r_perp) * norm2(p.b1_values)));
  }
}

TEST(Pairing, Examples) {
  EXPECT_EQ(pairing_for_stride(4, 1), (std::vector<IndexPair>{{0, 1}, {2, 3}}));
  EXPECT_EQ(pairing_for_stride(4, 2), (std::vector<IndexPair>{{0, 2}, {1, 3}}));
  EXPECT_EQ(pairing_for_stride(8, 3), (std::vector<IndexPair>{{0, 3}, {6, 1}, {4, 7}, {2, 5}}));
  EXPECT_THROW(pairing_for_stride(6, 2), Error);  // cycles of length 3
  EXPECT_THROW(pairing_for_stride(4, 3), Error);
  EXPECT_THROW(pairing_for_stride(5, 1), Error);
}

TEST(Pairing, PartitionCoverage) {
  for (std::size_t g = 2; g <= 32; g *= 2) {
    for (std::size_t s = 1; s <= g / 2; ++s) {
      ASSERT_TRUE(stride_feasible(g, s));
      const auto pairs = pairing_for_stride(g, s);
      ASSERT_EQ(pairs.size(), g / 2);
      std::vector<int> hit(g, 0);
      for (const auto& p : pairs) {
        EXPECT_EQ(p.j, (p.i + s) % g);
        ++hit[p.i];
        ++hit[p.j];
      }
      for (int h : hit) EXPECT_EQ(h, 1);
    }
  }
  EXPECT_EQ(StrideTable(32).entries().size(), 16u);
}

TEST(DualExchange, Examples) {
  const std::vector<double> v2{3.0, -5.0};
  const auto p2 = pairing_for_stride(2, 1);
  EXPECT_EQ(dual_exchange<double>(v2, p2, 0), (std::vector<double>{5.0, 3.0}));
  EXPECT_EQ(dual_exchange<double>(v2, p2, 1), (std::vector<double>{-5.0, -3.0}));

  const std::vector<double> v{1, 0.5, -0.25, 0};
  const auto y = dual_exchange<double>(v, pairing_for_stride(4, 2), 0);
  EXPECT_EQ(y, (std::vector<double>{0.25, 0, 1, 0.5}));
  EXPECT_EQ(dot(v, y), 0.0);
}

TEST(DualExchange, ExactOrthogonalityAllStrides) {
  sampling::Rng rng(17);
  const auto s = LatticeSpec::pot(4);
  const StrideTable table(32);
  for (int t = 0; t < 500; ++t) {
    const auto codes = sampling::random_codes(rng, s, 32);
    std::vector<std::int64_t> v(32);
    for (std::size_t i = 0; i < 32; ++i) v[i] = s.int_value(codes[i]);
    for (const auto& e : table.entries()) {
      const auto y = dual_exchange<std::int64_t>(v, e.pairs, sampling::random_bits(rng, 16));
      std::int64_t acc = 0;
      for (std::size_t i = 0; i < 32; ++i) acc += v[i] * y[i];
      ASSERT_EQ(acc, 0);
      auto a = v, b = y;
      for (auto& x : a) x = std::abs(x);
      for (auto& x : b) x = std::abs(x);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      ASSERT_EQ(a, b) << "magnitudes are permuted, not changed";
    }
  }
}

TEST(OptimalSigns, Examples) {
  const std::vector<double> x{1, 0.5}, r{0.2, -0.3};
  const auto p = pairing_for_stride(2, 1);
  const auto sc = optimal_signs(x, r, p);
  EXPECT_EQ(sc.signs, 1u);
  EXPECT_NEAR(sc.alignment, 0.4, 1e-15);
  EXPECT_NEAR(oracle::evaluate_alignment(x, r, p, 1), 0.4, 1e-15);
  EXPECT_NEAR(oracle::evaluate_alignment(x, r, p, 0), -0.4, 1e-15);

  const std::vector<double> r0(8, 0.0), x8{1, -1, 0.5, 0.25, 0, 0.125, -0.5, 1};
  const auto z = optimal_signs(x8, r0, pairing_for_stride(8, 1));
  EXPECT_EQ(z.signs, 0u);
  EXPECT_EQ(z.alignment, 0.0);

  const std::vector<double> xz{0, 0}, rz{0.7, -0.1};
  EXPECT_EQ(optimal_signs(xz, rz, p).signs, 0u);
}

TEST(OptimalSigns, MatchesExhaustive) {
  sampling::Rng rng(19);
  const auto s = LatticeSpec::pot(3);
  for (std::size_t g : {2u, 4u, 8u, 16u}) {
    const StrideTable table(g);
    for (const auto& e : table.entries()) {
      for (int t = 0; t < 100; ++t) {
        const auto v = sampling::decode_all(s, sampling::random_codes(rng, s, g));
        const auto r = sampling::gaussian_vector(rng, g);
        const auto best = oracle::exhaustive_sign_search(v, r, e.pairs);
        const auto mine = optimal_signs(v, r, e.pairs);
        ASSERT_EQ(oracle::evaluate_alignment(v, r, e.pairs, mine.signs), best.alignment);
      }
    }
  }
}

TEST(SearchBasis, ZeroResidualTieBreak) {
  const std::vector<double> b1{1, -0.5, 0.25, 0, 1, 1, -1, 0.125}, r(8, 0.0);
  const auto mb = search_basis(b1, r, 4);
  ASSERT_EQ(mb.micro.size(), 2u);
  for (const auto& m : mb.micro) {
    EXPECT_EQ(m.stride, 1);
    EXPECT_EQ(m.signs, 0);
  }
}

TEST(SearchBasis, MatchesExhaustivePerBlock) {
  sampling::Rng rng(23);
  const auto s = LatticeSpec::pot(3);
  for (int t = 0; t < 300; ++t) {
    const auto b1 = sampling::decode_all(s, sampling::random_codes(rng, s, 8));
    const auto r = sampling::gaussian_vector(rng, 8);
    const auto mb = search_basis(b1, r, 4);
    double expect = 0.0;
    for (std::size_t start : {0u, 4u}) {
      const auto sub_v = std::span<const double>(b1).subspan(start, 4);
      const auto sub_r = std::span<const double>(r).subspan(start, 4);
      expect += oracle::exhaustive_stride_search(sub_v, sub_r).alignment;
    }
    EXPECT_NEAR(dot(mb.b2_values, r), expect, 1e-12);
    EXPECT_EQ(dot(mb.b2_values, b1), 0.0);
  }
}

TEST(SearchBasis, NormPreservedAndCounterBound) {
  sampling::Rng rng(29);
  const auto s = LatticeSpec::pot(4);
  for (std::size_t n : {32u, 128u, 1024u}) {
    const auto w = sampling::gaussian_vector(rng, n);
    const auto p = project_primary(w, s, max_abs_scale(w));
    const auto r = residual(w, p);
    SearchCounter c;
    const auto mb = search_basis(p.b1_values, r.r_perp, 32, &c);
    EXPECT_EQ(c.micro_blocks, n / 32);
    EXPECT_LE(c.pair_evaluations, c.micro_blocks * 16 * 32);
    for (std::size_t start = 0; start < n; start += 32) {
      const auto a = std::span<const double>(p.b1_values).subspan(start, 32);
      const auto b = std::span<const double>(mb.b2_values).subspan(start, 32);
      EXPECT_EQ(norm2(a), norm2(b));
    }
  }
}

TEST(SearchBasis, RaggedTail) {
  sampling::Rng rng(31);
  const auto s = LatticeSpec::pot(3);
  const auto b1 = sampling::decode_all(s, sampling::random_codes(rng, s, 39));  // 32 + 7
  const auto r = sampling::gaussian_vector(rng, 39);
  StrideTables tables(32);
  const auto mb = search_basis(b1, r, tables);
  ASSERT_EQ(mb.micro.size(), 2u);
  EXPECT_EQ(mb.b2_values[38], 0.0);
  EXPECT_LE(mb.micro[1].stride, 3);
  EXPECT_EQ(dot(mb.b2_values, b1), 0.0);
  EXPECT_EQ(derive_b2<double>(b1, mb.micro, tables), mb.b2_values);

  const std::vector<double> one{0.5}, r1{0.3};
  const auto single = search_basis(one, r1, 32);
  EXPECT_EQ(single.b2_values, (std::vector<double>{0.0}));
}

TEST(SearchBasis, IntegerCrossIsZero) {
  sampling::Rng rng(37);
  const auto s = LatticeSpec::pot(3);
  StrideTables tables(32);
  for (int t = 0; t < 100; ++t) {
    const auto codes = sampling::random_codes(rng, s, 128);
    const auto b1 = sampling::decode_all(s, codes);
    const auto mb = search_basis(b1, sampling::gaussian_vector(rng, 128), tables);
    EXPECT_EQ(integer_cross(s, codes, mb.micro, tables), 0);
  }
}

TEST(SearchBasis, StrideHistogramCoversManyStrides) {
  sampling::Rng rng(41);
  const auto s = LatticeSpec::pot(3);
  std::map<int, int> hist;
  for (int t = 0; t < 400; ++t) {
    const auto w = sampling::gaussian_vector(rng, 32);
    const auto p = project_primary(w, s, max_abs_scale(w));
    ++hist[search_basis(p.b1_values, residual(w, p).r_perp, 32).micro[0].stride];
  }
  EXPECT_GT(hist.size(), 8u);
}
