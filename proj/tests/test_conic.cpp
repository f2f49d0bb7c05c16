#include <gtest/gtest.h>

#include "spregret/conic.hpp"

namespace {

using spregret::conic::SdpProblem;
using spregret::conic::Status;
using spregret::conic::solve;

TEST(Conic, EigenvalueBoundIsLargestEigenvalue) {
  SdpProblem p;
  const int lam = p.add_variable("lambda");
  p.set_objective(lam, 1.0);
  auto& blk = p.add_psd_block(3);
  blk.set_constant(-Eigen::Vector3d(1.0, 2.0, 3.0).asDiagonal().toDenseMatrix());
  for (int i = 0; i < 3; ++i) blk.add_entry(lam, i, i, 1.0);
  const auto sol = solve(p);
  ASSERT_EQ(sol.status, Status::optimal) << sol.message;
  EXPECT_NEAR(sol.x(lam), 3.0, 1e-7);
  EXPECT_LE(sol.relative_gap, 1e-8);
  EXPECT_GE(sol.min_eigenvalues[0], -1e-7);
}

TEST(Conic, EqualityFixedScalarIsFeasible) {
  SdpProblem p;
  const int x = p.add_variable("x");
  p.add_equality({{x, 1.0}}, 1.0);
  auto& blk = p.add_psd_block(1);
  blk.add_entry(x, 0, 0, 1.0);
  const auto sol = solve(p);
  ASSERT_EQ(sol.status, Status::optimal) << sol.message;
  EXPECT_NEAR(sol.x(x), 1.0, 1e-12);
  EXPECT_LE(sol.eq_residual, 1e-8);
}

TEST(Conic, InfeasibleEqualityAgainstCone) {
  SdpProblem p;
  const int x = p.add_variable();
  p.add_equality({{x, 1.0}}, -1.0);
  p.add_psd_block(1).add_entry(x, 0, 0, 1.0);
  EXPECT_EQ(solve(p).status, Status::infeasible);
}

TEST(Conic, InconsistentEqualities) {
  SdpProblem p;
  const int x = p.add_variable();
  const int y = p.add_variable();
  p.add_equality({{x, 1.0}, {y, 1.0}}, 1.0);
  p.add_equality({{x, 2.0}, {y, 2.0}}, 3.0);
  EXPECT_EQ(solve(p).status, Status::infeasible);
}

TEST(Conic, InfeasibleLmiDetectedByPhaseOne) {
  // [[x, 1], [1, -x]] >= 0 needs x >= 0 and -x >= 0 and -x^2 - 1 >= 0.
  SdpProblem p;
  const int x = p.add_variable();
  auto& blk = p.add_psd_block(2);
  Eigen::Matrix2d F0;
  F0 << 0, 1, 1, 0;
  blk.set_constant(F0);
  blk.add_entry(x, 0, 0, 1.0);
  blk.add_entry(x, 1, 1, -1.0);
  EXPECT_EQ(solve(p).status, Status::infeasible);
}

TEST(Conic, UnboundedBelow) {
  SdpProblem p;
  const int x = p.add_variable();
  p.set_objective(x, -1.0);
  p.add_psd_block(1).add_entry(x, 0, 0, 1.0);
  EXPECT_EQ(solve(p).status, Status::unbounded);
}

TEST(Conic, OffDiagonalCouplingNeedsPhaseOne) {
  // min x s.t. [[x, 1], [1, x]] >= 0 -> x = 1, starting from x = 0 (infeasible).
  SdpProblem p;
  const int x = p.add_variable();
  p.set_objective(x, 1.0);
  auto& blk = p.add_psd_block(2);
  Eigen::Matrix2d F0;
  F0 << 0, 1, 1, 0;
  blk.set_constant(F0);
  blk.add_entry(x, 0, 0, 1.0);
  blk.add_entry(x, 1, 1, 1.0);
  const auto sol = solve(p);
  ASSERT_EQ(sol.status, Status::optimal) << sol.message;
  EXPECT_NEAR(sol.x(x), 1.0, 1e-7);
}

TEST(Conic, SpectralNormOfAffineMatrix) {
  // min t s.t. [[t I, M(y)], [M(y)^T, t I]] >= 0 with M(y) = [[1, y], [0, 1]]:
  // ||M(y)|| is minimised at y = 0 with value 1.
  SdpProblem p;
  const int t = p.add_variable("t");
  const int y = p.add_variable("y");
  p.set_objective(t, 1.0);
  auto& blk = p.add_psd_block(4);
  Eigen::Matrix4d F0 = Eigen::Matrix4d::Zero();
  F0(0, 2) = F0(2, 0) = 1.0;
  F0(1, 3) = F0(3, 1) = 1.0;
  blk.set_constant(F0);
  for (int i = 0; i < 4; ++i) blk.add_entry(t, i, i, 1.0);
  blk.add_entry(y, 0, 3, 1.0);
  const auto sol = solve(p);
  ASSERT_EQ(sol.status, Status::optimal) << sol.message;
  EXPECT_NEAR(sol.x(t), 1.0, 1e-7);
  EXPECT_NEAR(sol.x(y), 0.0, 1e-4);
}

TEST(Conic, LowRankTermsMatchEntrywiseTerms) {
  // The same LMI described with dense atoms and with unit entries.
  Eigen::Vector3d u(1.0, -2.0, 0.5), v(0.0, 1.0, 3.0);
  Eigen::Matrix3d F0 = Eigen::Matrix3d::Identity() * 4.0;
  auto build = [&](bool atoms) {
    SdpProblem p;
    const int a = p.add_variable();
    const int lam = p.add_variable();
    p.set_objective(lam, 1.0);
    auto& blk = p.add_psd_block(3);
    blk.set_constant(F0);
    if (atoms) {
      blk.add_term(a, blk.add_atom(Eigen::VectorXd(u)), blk.add_atom(Eigen::VectorXd(v)), 2.0);
    } else {
      const Eigen::Matrix3d S = u * v.transpose() + v * u.transpose();
      for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) blk.add_entry(a, i, j, S(i, j));
    }
    for (int i = 0; i < 3; ++i) blk.add_entry(lam, i, i, 1.0);
    p.add_equality({{a, 1.0}}, 0.7);
    return solve(p);
  };
  const auto s1 = build(true);
  const auto s2 = build(false);
  ASSERT_EQ(s1.status, Status::optimal);
  ASSERT_EQ(s2.status, Status::optimal);
  EXPECT_NEAR(s1.objective, s2.objective, 1e-7);
  // lambda = -lambda_min(F0 + 0.7 (u v^T + v u^T))
  const Eigen::Matrix3d F = F0 + 0.7 * (u * v.transpose() + v * u.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(F);
  EXPECT_NEAR(s1.objective, -es.eigenvalues()(0), 1e-7);
}

TEST(Conic, FrobeniusObjectiveIsLeastSquares) {
  // min ||R0 + x0 u0 v0^T + x1 u1 v1^T||_F^2 s.t. x0 + x1 = 1, compared to a
  // direct KKT solve on the vectorised problem.
  Eigen::MatrixXd R0(2, 3);
  R0 << 1, 2, 0, -1, 0.5, 3;
  Eigen::Vector2d u0(1, 0), u1(1, 1);
  Eigen::Vector3d v0(1, 2, 3), v1(0, 1, -1);
  SdpProblem p;
  const int a = p.add_variable(), b = p.add_variable();
  auto& f = p.set_frobenius_objective(2, 3);
  f.set_constant(R0);
  f.add_term(a, f.add_left_atom(u0), f.add_right_atom(v0), 1.0);
  f.add_term(b, f.add_left_atom(u1), f.add_right_atom(v1), 1.0);
  p.add_equality({{a, 1.0}, {b, 1.0}}, 1.0);
  const auto sol = solve(p);
  ASSERT_EQ(sol.status, Status::optimal);

  Eigen::MatrixXd M(6, 2);
  Eigen::MatrixXd m0 = u0 * v0.transpose(), m1 = u1 * v1.transpose();
  M.col(0) = Eigen::Map<Eigen::VectorXd>(m0.data(), 6);
  M.col(1) = Eigen::Map<Eigen::VectorXd>(m1.data(), 6);
  const Eigen::VectorXd r = Eigen::Map<Eigen::VectorXd>(R0.data(), 6);
  Eigen::Matrix3d K = Eigen::Matrix3d::Zero();
  K.topLeftCorner(2, 2) = 2.0 * M.transpose() * M;
  K(0, 2) = K(1, 2) = K(2, 0) = K(2, 1) = 1.0;
  Eigen::Vector3d rhs;
  rhs.head(2) = -2.0 * M.transpose() * r;
  rhs(2) = 1.0;
  const Eigen::Vector3d kkt = K.fullPivLu().solve(rhs);
  EXPECT_NEAR(sol.x(a), kkt(0), 1e-10);
  EXPECT_NEAR(sol.x(b), kkt(1), 1e-10);
  EXPECT_NEAR(sol.objective, (r + M * kkt.head(2)).squaredNorm(), 1e-10);
}

TEST(Conic, DeterministicAcrossRuns) {
  SdpProblem p;
  const int t = p.add_variable();
  const int y = p.add_variable();
  p.set_objective(t, 1.0);
  auto& blk = p.add_psd_block(3);
  Eigen::Matrix3d F0;
  F0 << 0, 1, 2, 1, 0, 0.5, 2, 0.5, 0;
  blk.set_constant(F0);
  for (int i = 0; i < 3; ++i) blk.add_entry(t, i, i, 1.0);
  blk.add_entry(y, 0, 1, 1.0);
  blk.add_entry(y, 2, 2, -0.3);
  const auto s1 = solve(p);
  const auto s2 = solve(p);
  ASSERT_EQ(s1.status, Status::optimal);
  EXPECT_EQ(s1.x, s2.x);
  EXPECT_EQ(s1.objective, s2.objective);
  EXPECT_LE(s1.objective - s1.dual_bound, 1e-8 * std::max(1.0, std::abs(s1.objective)));
}

TEST(Conic, DumpIsSelfDescribing) {
  SdpProblem p;
  const int x = p.add_variable("x");
  p.add_equality({{x, 2.0}}, 1.0);
  p.add_psd_block(1).add_entry(x, 0, 0, 1.0);
  const auto j = p.to_json();
  EXPECT_EQ(j["variables"][0], "x");
  EXPECT_EQ(j["equality_triplets"].size(), 1u);
  EXPECT_EQ(j["psd_blocks"][0]["dim"], 1);
}

}  // namespace
