#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spregret/sls.hpp"

namespace {

using spregret::BlockLift;
using spregret::ClosedLoopMap;

ClosedLoopMap split(const Eigen::MatrixXd& Phi, int nT) {
  return {Phi.topRows(nT), Phi.bottomRows(Phi.rows() - nT)};
}

TEST(Sls, ClosedLoopMatchesSimulation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = oracle::random_plant(rng, 3, 2, 5);
    const auto lift = spregret::build_block_lift(sys);
    const Eigen::MatrixXd K = oracle::random_causal_k(rng, 3, 2, 5);
    const auto phi = spregret::closed_loop_from_controller(K, lift);
    const Eigen::MatrixXd ref = oracle::simulate_phi(sys, K);
    EXPECT_LE((phi.stacked() - ref).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + ref.norm()));
  }
}

TEST(Sls, RoundTripThroughClosedLoop) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 4), hor(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = dim(rng), m = dim(rng), T = hor(rng);
    const auto lift = spregret::build_block_lift(oracle::random_plant(rng, n, m, T));
    const Eigen::MatrixXd K = oracle::random_causal_k(rng, n, m, T);
    const auto phi = spregret::closed_loop_from_controller(K, lift);
    EXPECT_LE(spregret::achievability_residual(phi, lift), 1e-10);
    EXPECT_LE((spregret::controller_from_map(phi, lift) - K).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Sls, MapsFromYAreAchievableAndFactorY) {
  std::mt19937_64 rng(8);
  const auto lift = spregret::build_block_lift(oracle::random_plant(rng, 2, 2, 4));
  const Eigen::MatrixXd Y = oracle::random_causal_k(rng, 2, 2, 4);
  const auto phi = spregret::closed_loop_from_y(Y, lift);
  EXPECT_LE(spregret::achievability_residual(phi, lift), 1e-12);
  EXPECT_LE((phi.Phi_u * lift.Gamma - Y).norm(), 1e-12);
  // Phi_x Gamma = I + G Y.
  EXPECT_LE((phi.Phi_x * lift.Gamma - Eigen::MatrixXd::Identity(8, 8) - lift.G * Y).norm(), 1e-12);
}

TEST(Sls, NonCausalControllerIsRejected) {
  std::mt19937_64 rng(1);
  const auto lift = spregret::build_block_lift(oracle::random_plant(rng, 2, 1, 3));
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(3, 6);
  K(0, 2) = 1.0;  // u_0 reading x_1
  EXPECT_THROW(spregret::closed_loop_from_controller(K, lift), spregret::ValidationError);
  EXPECT_THROW(spregret::closed_loop_from_controller(Eigen::MatrixXd::Zero(2, 6), lift),
               spregret::ValidationError);
}

TEST(Sls, UnachievableMapIsRefused) {
  std::mt19937_64 rng(2);
  const auto lift = spregret::build_block_lift(oracle::random_plant(rng, 2, 1, 3));
  auto phi = spregret::closed_loop_from_controller(oracle::random_causal_k(rng, 2, 1, 3), lift);
  phi.Phi_x(3, 0) += 1e-3;
  EXPECT_THROW(spregret::controller_from_map(phi, lift), spregret::InvariantError);
}

TEST(Sls, LinearAchievabilityConstraintsMatchResidual) {
  std::mt19937_64 rng(5);
  const auto lift = spregret::build_block_lift(oracle::random_plant(rng, 2, 2, 3));
  const spregret::PhiLayout layout(lift);
  const auto cons = spregret::achievability_constraints(lift);
  // One equality per lower block-triangular entry of Phi_x.
  EXPECT_EQ(cons.size(), static_cast<size_t>(2 * 2 * 3 * 4 / 2));
  auto phi = spregret::closed_loop_from_controller(oracle::random_causal_k(rng, 2, 2, 3), lift);
  EXPECT_LE(cons.residual(phi, layout), 1e-12);
  phi.Phi_u(2, 0) += 0.1;
  EXPECT_GT(cons.residual(phi, layout), 1e-3);
}

TEST(Sls, SiConstraintsHoldForSiParameterisedMaps) {
  std::mt19937_64 rng(6);
  const int n = 2, m = 2, T = 3;
  const auto lift = spregret::build_block_lift(oracle::random_plant(rng, n, m, T));
  const auto S = spregret::centralized_pattern(m, n, T);
  const auto Vx = spregret::generate_vx(S);
  const auto cons = spregret::si_constraints(S, Vx, lift);
  const spregret::PhiLayout layout(lift);
  const auto phi = spregret::closed_loop_from_y(oracle::random_causal_k(rng, n, m, T), lift);
  EXPECT_LE(cons.residual(phi, layout), 1e-12);

  // A diagonal S forbids off-diagonal entries of Phi_u Gamma (V_x left free).
  spregret::SparsityPattern D(m * T, n * T);
  for (int i = 0; i < m * T; ++i) D.set(i, i);
  const auto cd = spregret::si_constraints(D, spregret::SparsityPattern::ones(n * T, n * T), lift);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(m * T, n * T);
  for (int i = 0; i < m * T; ++i) Y(i, i) = 1.0 + i;
  EXPECT_LE(cd.residual(spregret::closed_loop_from_y(Y, lift), layout), 1e-12);
  Y(1, 0) = 0.5;
  EXPECT_GT(cd.residual(spregret::closed_loop_from_y(Y, lift), layout), 0.1);
  EXPECT_THROW(spregret::si_constraints(D, spregret::SparsityPattern(3, 3), lift),
               spregret::ValidationError);
}

TEST(Sls, ToeplitzRestrictionLeavesMnTFreeScalars) {
  const int n = 2, m = 1, T = 4;
  const auto cons = spregret::toeplitz_restriction(T, n, m);
  // Lower block-triangular Phi_u has m n T(T+1)/2 entries.
  EXPECT_EQ(static_cast<int>(cons.size()), m * n * T * (T + 1) / 2 - m * n * T);

  // Controller of an LTI plant with a Toeplitz K has a Toeplitz Phi_u.
  const auto sys = spregret::spring_mass_chain(2, 0.5, 0.5, 1.0, 0.5, T);
  const auto lift = spregret::build_block_lift(sys);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(2 * T, 4 * T);
  Eigen::MatrixXd K0(2, 4), K1(2, 4);
  K0 << -1, -1, 0, 0, 0, 0, -1, -1;
  K1 << 0.1, 0, 0, 0.2, 0, 0.1, 0, 0;
  for (int t = 0; t < T; ++t) {
    K.block(t * 2, t * 4, 2, 4) = K0;
    if (t > 0) K.block(t * 2, (t - 1) * 4, 2, 4) = K1;
  }
  const auto phi = spregret::closed_loop_from_controller(K, lift);
  const spregret::PhiLayout layout(lift);
  EXPECT_LE(spregret::toeplitz_restriction(sys).residual(phi, layout), 1e-12);
}

TEST(Sls, ToeplitzRestrictionNeedsTimeInvariance) {
  std::mt19937_64 rng(3);
  const auto ltv = oracle::random_plant(rng, 2, 1, 4);
  EXPECT_THROW(spregret::toeplitz_restriction(ltv), spregret::UnsupportedError);
}

TEST(Sls, ControllerJsonRoundTrip) {
  std::mt19937_64 rng(4);
  spregret::Controller c;
  c.K = oracle::random_causal_k(rng, 2, 1, 3);
  c.pattern = spregret::struct_of(c.K);
  c.provenance = {{"method", "test"}};
  const auto back = spregret::Controller::from_json(c.to_json());
  EXPECT_EQ(back.K, c.K);
  EXPECT_EQ(back.pattern, c.pattern);
  EXPECT_EQ(back.provenance, c.provenance);

  auto j = c.to_json();
  j["pattern"] = spregret::SparsityPattern(3, 6).to_json();
  EXPECT_THROW(spregret::Controller::from_json(j), spregret::ValidationError);

  const auto phi = split(Eigen::MatrixXd::Identity(9, 6), 6);
  EXPECT_EQ(ClosedLoopMap::from_json(phi.to_json()).Phi_x, phi.Phi_x);
}

}  // namespace
