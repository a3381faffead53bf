// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "goquant/geometry.hpp"
#include "goquant/oracle.hpp"
#include "goquant/sampling.hpp"
#include "goquant/solver.hpp"

using namespace goquant;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

struct Block {
  std::vector<double> w, b1, b2;
};

Block random_block(sampling::Rng& rng, std::size_t n) {
  const auto s = LatticeSpec::pot(3);
  Block b;
  b.w = sampling::gaussian_vector(rng, n);
  const auto p = project_primary(b.w, s, max_abs_scale(b.w));
  b.b1 = p.b1_values;
  b.b2 = search_basis(b.b1, residual(b.w, p).r_perp, std::min<std::size_t>(n, 32)).b2_values;
  return b;
}

}  // namespace

TEST(SolveGeo, Examples) {
  const std::vector<double> b1{1, 0.5, -0.25, 0}, b2{0.25, 0, 1, 0.5};
  auto s = solve_geo(b1, b1, b2);
  EXPECT_EQ(s.c1, 1.0);
  EXPECT_EQ(s.c2, 0.0);
  std::vector<double> w(4);
  for (int i = 0; i < 4; ++i) w[i] = 2 * b1[i] + 3 * b2[i];
  s = solve_geo(w, b1, b2);
  EXPECT_DOUBLE_EQ(s.c1, 2.0);
  EXPECT_DOUBLE_EQ(s.c2, 3.0);
  const std::vector<double> z(4, 0.0);
  EXPECT_EQ(solve_geo(w, z, z).c1, 0.0);
}

TEST(SolveGeo, MatchesDenseOracle) {
  sampling::Rng rng(43);
  for (int t = 0; t < 1000; ++t) {
    const auto b = random_block(rng, 8);
    if (norm2(b.b2) == 0.0) continue;
    const auto s = solve_geo(b.w, b.b1, b.b2);
    const auto d = oracle::dense_lstsq_2col(oracle::stack_columns(b.b1, b.b2), b.w, 0.0);
    ASSERT_LE(rel(s.c1, d.c1), 1e-10);
    ASSERT_LE(rel(s.c2, d.c2), 1e-10);
  }
}

TEST(SolveGeo, SecondBasisNeverHurts) {
  sampling::Rng rng(47);
  for (int t = 0; t < 500; ++t) {
    const auto b = random_block(rng, 128);
    const auto k2 = solve_geo(b.w, b.b1, b.b2);
    const auto k1 = solve_geo(b.w, b.b1, {});
    const double e2 = squared_error(b.w, reconstruction(b.b1, b.b2, k2));
    const double e1 = squared_error(b.w, reconstruction(b.b1, {}, k1));
    EXPECT_LE(e2, e1 + 1e-12);
  }
}

TEST(SolveRef, OrthogonalColumnsNoRidge) {
  RefDesign d;
  d.a = oracle::stack_columns(std::vector<double>{1, 0, 2}, std::vector<double>{0, 3, 0});
  d.y = {1, 2, 3};
  d.lambda = 0.0;
  const auto s = solve_ref(d);
  EXPECT_DOUBLE_EQ(s.c1, 7.0 / 5.0);
  EXPECT_DOUBLE_EQ(s.c2, 6.0 / 9.0);
  EXPECT_EQ(s.note, SolveNote::none);
}

TEST(SolveRef, RidgeShrinksToZero) {
  RefDesign d;
  d.a = oracle::stack_columns(std::vector<double>{1, 2, 3}, std::vector<double>{1, -1, 0.5});
  d.y = {1, 1, 1};
  d.lambda = 1e12;
  const auto s = solve_ref(d);
  EXPECT_LT(std::abs(s.c1), 1e-10);
  EXPECT_LT(std::abs(s.c2), 1e-10);
}

TEST(SolveRef, MatchesDenseOracle) {
  sampling::Rng rng(53);
  for (int t = 0; t < 500; ++t) {
    RefDesign d;
    d.a = sampling::gaussian_matrix(rng, 16, 2);
    d.y = sampling::gaussian_vector(rng, 16);
    d.lambda = kDefaultLambda;
    const auto s = solve_ref(d);
    const auto o = oracle::dense_lstsq_2col(d.a, d.y, d.lambda);
    ASSERT_LE(rel(s.c1, o.c1), 1e-8);
    ASSERT_LE(rel(s.c2, o.c2), 1e-8);
  }
}

TEST(SolveRef, SecondBasisNeverHurtsObjective) {
  sampling::Rng rng(59);
  for (int t = 0; t < 200; ++t) {
    const auto b = random_block(rng, 128);
    const auto x = sampling::gaussian_matrix(rng, 64, 128);
    const auto d2 = make_ref_design(x, 0, b.w, b.b1, b.b2, kDefaultLambda);
    const auto d1 = make_ref_design(x, 0, b.w, b.b1, {}, kDefaultLambda);
    const auto s2 = solve_ref(d2), s1 = solve_ref(d1);
    EXPECT_LE(ridge_objective(d2, s2.c1, s2.c2), ridge_objective(d1, s1.c1, 0.0) * (1 + 1e-12) + 1e-12);
  }
}

TEST(SolveRef, IdentityDesignEqualsGeo) {
  sampling::Rng rng(61);
  const auto b = random_block(rng, 32);
  Matrix eye(32, 32);
  for (std::size_t i = 0; i < 32; ++i) eye(i, i) = 1.0;
  const auto d = make_ref_design(eye, 0, b.w, b.b1, b.b2, 0.0);
  const auto r = solve_ref(d);
  const auto g = solve_geo(b.w, b.b1, b.b2);
  EXPECT_LE(rel(r.c1, g.c1), 1e-12);
  EXPECT_LE(rel(r.c2, g.c2), 1e-12);
}

TEST(SolveRef, SingularWithoutRidgeFallsBack) {
  RefDesign d;
  d.a = oracle::stack_columns(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6});
  d.y = {1, 2, 3};
  d.lambda = 0.0;
  const auto s = solve_ref(d);
  EXPECT_TRUE(std::isfinite(s.c1) && std::isfinite(s.c2));
  EXPECT_NE(s.note, SolveNote::none);
}

TEST(SolveRef, IllConditionedFlagged) {
  RefDesign d;
  d.a = oracle::stack_columns(std::vector<double>{1, 0}, std::vector<double>{0, 1e-9});
  d.y = {1, 1};
  d.lambda = 0.0;
  EXPECT_EQ(solve_ref(d).note, SolveNote::ill_conditioned);
}

TEST(SolveRef, Errors) {
  RefDesign d;
  EXPECT_THROW(solve_ref(d), Error);
  d.a = Matrix(1, 2);
  d.a(0, 0) = std::nan("");
  d.y = {1};
  try {
    solve_ref(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::numeric);
  }
}

TEST(Reconstruction, Examples) {
  const std::vector<double> b1{1, -0.5}, b2{0.5, 1};
  EXPECT_EQ(reconstruction(b1, b2, ScalePair{}), (std::vector<double>{0, 0}));
  EXPECT_EQ(reconstruction(b1, b2, ScalePair{1.0, 0.0}), b1);
}
