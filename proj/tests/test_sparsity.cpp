#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spregret/model.hpp"
#include "spregret/sparsity.hpp"

namespace {

using spregret::SparsityPattern;

SparsityPattern from_rows(const std::string& text) { return SparsityPattern::from_text(text); }

TEST(Sparsity, TextAndJsonRoundTrip) {
  const auto p = from_rows("1000\n0111\n");
  EXPECT_EQ(p.rows(), 2);
  EXPECT_EQ(p.cols(), 4);
  EXPECT_EQ(p.card(), 4);
  EXPECT_EQ(SparsityPattern::from_text(p.to_text()), p);
  auto q = p;
  q.set_block_meta({1, 2, 2});
  const auto r = SparsityPattern::from_json(q.to_json());
  EXPECT_EQ(r, q);
  ASSERT_TRUE(r.block_meta().has_value());
  EXPECT_EQ(r.block_meta()->T, 2);
}

TEST(Sparsity, MalformedTextIsRejected) {
  EXPECT_THROW(from_rows("10\n1\n"), spregret::ValidationError);
  EXPECT_THROW(from_rows("12\n"), spregret::ValidationError);
}

TEST(Sparsity, OrderAndUnion) {
  const auto a = from_rows("10\n01\n");
  const auto b = from_rows("11\n01\n");
  EXPECT_TRUE(a.leq(b));
  EXPECT_FALSE(b.leq(a));
  EXPECT_EQ(a | b, b);
  EXPECT_THROW(a.leq(SparsityPattern::ones(3, 3)), spregret::ValidationError);
}

TEST(Sparsity, TrilAndKron) {
  const auto L = SparsityPattern::tril(3);
  EXPECT_EQ(L.card(), 6);
  const auto K = spregret::kron(L, SparsityPattern::ones(1, 2));
  EXPECT_EQ(K.rows(), 3);
  EXPECT_EQ(K.cols(), 6);
  EXPECT_EQ(K.card(), 12);
  EXPECT_TRUE(K.is_lower_block_triangular({1, 2, 3}));
  EXPECT_FALSE(SparsityPattern::ones(3, 6).is_lower_block_triangular({1, 2, 3}));
}

TEST(Sparsity, BooleanProductMatchesPositiveMatrixProduct) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_pattern(rng, 4, 5, 0.4);
    const auto b = oracle::random_pattern(rng, 5, 3, 0.4);
    const Eigen::MatrixXd prod = a.to_matrix() * b.to_matrix();
    EXPECT_EQ(spregret::boolean_product(a, b), spregret::struct_of(prod));
  }
}

TEST(Sparsity, LeakageAndProjection) {
  const auto X = from_rows("10\n01\n");
  Eigen::MatrixXd Y(2, 2);
  Y << 1.0, 2e-3, -5.0, 3.0;
  const auto lk = spregret::leakage(Y, X, 1e-2);
  EXPECT_DOUBLE_EQ(lk.max_abs, 5.0);
  EXPECT_EQ(lk.row, 1);
  EXPECT_EQ(lk.col, 0);
  EXPECT_TRUE(lk.flagged);
  const Eigen::MatrixXd P = spregret::project(Y, X);
  EXPECT_TRUE(spregret::is_member(P, X));
  EXPECT_DOUBLE_EQ(P(1, 1), 3.0);
  EXPECT_FALSE(spregret::is_member(Y, X));
}

// The 3x3 example with Delta = I: V_x patterns, ill-posedness witness, closure.
TEST(Sparsity, IllPosedOraclePairRegression) {
  const auto S = from_rows("100\n110\n001\n");
  const auto S_hat = from_rows("100\n110\n011\n");
  const auto Delta = SparsityPattern::identity(3);
  EXPECT_EQ(spregret::generate_vx(S), from_rows("100\n110\n001\n"));
  EXPECT_EQ(spregret::generate_vx(S_hat), from_rows("100\n010\n011\n"));
  EXPECT_FALSE(spregret::generate_vx(S).leq(spregret::generate_vx(S_hat)));
  EXPECT_FALSE(spregret::is_qi(S_hat, Delta));
  EXPECT_EQ(spregret::nearest_qi_superset(S_hat, Delta), from_rows("100\n110\n111\n"));
}

TEST(Sparsity, IsQiAgreesWithSamplingOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_real_distribution<double> dens(0.1, 0.8);
  int qi = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = dim(rng), n = dim(rng);
    const auto S = oracle::random_pattern(rng, m, n, dens(rng));
    const auto D = oracle::random_pattern(rng, n, m, dens(rng));
    const bool expect = oracle::qi_by_sampling(S, D, rng);
    EXPECT_EQ(spregret::is_qi(S, D), expect) << S.to_text() << "--\n" << D.to_text();
    qi += expect;
  }
  // Both outcomes must be exercised.
  EXPECT_GT(qi, 10);
  EXPECT_LT(qi, 190);
}

TEST(Sparsity, NearestQiSupersetIsTheExhaustiveMinimum) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(2, 4);
  int done = 0;
  while (done < 50) {
    const int m = dim(rng), n = dim(rng);
    const auto S = oracle::random_pattern(rng, m, n, 0.45);
    if (S.rows() * S.cols() - S.card() > 12) continue;
    const auto D = oracle::random_pattern(rng, n, m, 0.35);
    const auto best = oracle::exhaustive_min_qi_supersets(S, D);
    ASSERT_EQ(best.size(), 1u) << "minimum QI superset should be unique";
    EXPECT_EQ(spregret::nearest_qi_superset(S, D), best.front());
    ++done;
  }
}

TEST(Sparsity, NearestQiSupersetProperties) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto S = oracle::random_pattern(rng, 5, 4, 0.3);
    const auto D = oracle::random_pattern(rng, 4, 5, 0.3);
    const auto Q = spregret::nearest_qi_superset(S, D);
    EXPECT_TRUE(S.leq(Q));
    EXPECT_TRUE(spregret::is_qi(Q, D));
    EXPECT_EQ(spregret::nearest_qi_superset(Q, D), Q);
  }
}

TEST(Sparsity, QiViolationNamesAnEntryOutsideS) {
  const auto S = from_rows("100\n110\n011\n");
  const auto v = spregret::qi_violation(S, SparsityPattern::identity(3));
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(*v, std::make_pair(2, 0));
  EXPECT_THROW(spregret::is_qi(S, SparsityPattern::ones(2, 2)), spregret::ValidationError);
}

// For QI S, Sparse(I + Delta S) sits inside Sparse(V_x).
TEST(Sparsity, GeneratedVxCoversClosedLoopSupportForQiPatterns) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 4, m = 3;
    const auto D = oracle::random_pattern(rng, n, m, 0.3);
    const auto S = spregret::nearest_qi_superset(oracle::random_pattern(rng, m, n, 0.3), D);
    const auto support =
        SparsityPattern::identity(n) | spregret::boolean_product(D, S);
    EXPECT_TRUE(support.leq(spregret::generate_vx(S))) << S.to_text();
  }
}

// Sparsity invariance: K = Phi_u Phi_x^-1 in S whenever Phi_u in S, Phi_x in V_x.
TEST(Sparsity, GeneratedVxGivesSparseController) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 5, m = 3;
    const auto S = oracle::random_pattern(rng, m, n, 0.4);
    const auto Vx = spregret::generate_vx(S);
    bool diag_ok = true;
    for (int i = 0; i < n; ++i) diag_ok &= Vx(i, i);
    if (!diag_ok) continue;  // SI needs an invertible Phi_x inside V_x
    Eigen::MatrixXd Px = oracle::random_on(rng, Vx, false);
    Px.diagonal().array() += 10.0;
    const Eigen::MatrixXd Pu = oracle::random_on(rng, S, false);
    const Eigen::MatrixXd K = Pu * Px.inverse();
    EXPECT_LE(spregret::leakage(K, S, 0.0).max_abs, 1e-9) << S.to_text();
  }
}

TEST(Sparsity, ChainPatternShape) {
  const auto s = spregret::chain_spatial_pattern(4);
  EXPECT_EQ(s.to_text(),
            "11100011\n"
            "00111011\n"
            "00001111\n"
            "00000011\n");
  const auto S = spregret::chain_sparsity(4, 3);
  EXPECT_EQ(S.rows(), 12);
  EXPECT_EQ(S.cols(), 24);
  EXPECT_TRUE(S.is_lower_block_triangular(*S.block_meta()));
  EXPECT_EQ(S.card(), 6 * s.card());
}

TEST(Sparsity, ChainPatternIsNotQiButItsClosureIs) {
  const auto sys = spregret::spring_mass_chain(4, 0.5, 0.5, 1.0, 0.5, 4);
  const auto lift = spregret::build_block_lift(sys);
  const auto S = spregret::chain_sparsity(4, 4);
  EXPECT_FALSE(spregret::is_qi(S, lift.Delta));
  const auto Q = spregret::nearest_qi_superset(S, lift.Delta);
  EXPECT_TRUE(spregret::is_qi(Q, lift.Delta));
  EXPECT_GT(Q.card(), S.card());
}

}  // namespace
