#pragma once

// Controller synthesis in the closed-loop parametrization.
//
// All programs are written over Y = Phi_u Gamma (mT x nT, lower
// block-triangular). Achievability then holds by construction:
//   Phi_u = Y Gamma^-1,  Phi_x = (I + G Y) Gamma^-1,
// so Phi = ([I; 0] + [G; I] Y) Gamma^-1 and C^1/2 Phi is affine in Y with
// rank-one coefficients L_a rho_b^T (L = C^1/2 [G; I], rho_b = row b of
// Gamma^-1). The sparsity-invariance conditions become
//   Y in Sparse(S)               -> variables exist only inside S,
//   I + G Y in Sparse(V_x)       -> linear equalities.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "spregret/conic.hpp"
#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"
#include "spregret/model.hpp"
#include "spregret/sls.hpp"
#include "spregret/sparsity.hpp"

namespace spregret {

enum class Objective { h2, hinf, spregret };
enum class Restriction { none, toeplitz };
enum class OracleChoice { nearest_qi, centralized };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::h2: return "h2";
    case Objective::hinf: return "hinf";
    case Objective::spregret: return "spregret";
  }
  return "unknown";
}
inline std::string to_string(Restriction r) { return r == Restriction::toeplitz ? "toeplitz" : "none"; }
inline std::string to_string(OracleChoice o) {
  return o == OracleChoice::centralized ? "centralized" : "nearest-qi";
}

struct SynthesisOptions {
  Restriction restriction = Restriction::none;
  conic::ToleranceConfig tol;
  double tol_ach = 1e-8;     // achievability residual accepted by h(Phi)
  double tol_leak = 1e-6;    // max |K_ij| outside S before projection is refused
  double tol_check = 1e-6;   // post-check tolerance (epigraph exactness, regret sign)
  Eigen::MatrixXd Sigma;     // H2 disturbance weight; empty means identity
  std::optional<SparsityPattern> Vx;  // overrides generate_vx(S)

  io::json to_json() const {
    return {{"restriction", to_string(restriction)},
            {"tol_eq", tol.eq},
            {"tol_psd", tol.psd},
            {"tol_gap", tol.gap},
            {"max_newton", tol.max_newton},
            {"tol_ach", tol_ach},
            {"tol_leak", tol_leak},
            {"tol_check", tol_check},
            {"sigma", Sigma.size() == 0 ? "identity" : "custom"},
            {"vx", Vx ? "override" : "generated"}};
  }
};

struct SynthesisResult {
  Controller controller;
  ClosedLoopMap phi;
  double value = 0.0;  // h2: squared Frobenius cost; hinf: gamma^2; spregret: lambda*
  conic::SdpSolution solution;
  int declared_variables = 0;
  int equalities = 0;
  Leakage leak;

  io::json stats() const {
    io::json j = solution.to_json();
    j["declared_variables"] = declared_variables;
    j["equalities"] = equalities;
    j["leakage_max_abs"] = leak.max_abs;
    return j;
  }
};

inline bool lift_is_lti(const BlockLift& lift) {
  const int n = lift.n, m = lift.m;
  for (int t = 1; t + 1 < lift.T; ++t) {
    if (lift.A.block(t * n, t * n, n, n) != lift.A.block(0, 0, n, n)) return false;
    if (lift.B.block(t * n, t * m, n, m) != lift.B.block(0, 0, n, m)) return false;
  }
  return true;
}

// Largest eigenvalue of the symmetric part of a square matrix.
inline double lambda_max(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

namespace detail {

// Y entry (a, b) carried by variable `var`.
struct YEntry {
  int a, b, var;
};

struct YParam {
  std::vector<YEntry> entries;
  std::vector<int> vars;  // declared Y variables
  int equalities = 0;
};

inline void require_causal_pattern(const SparsityPattern& S, const BlockLift& lift) {
  if (S.rows() != lift.mT() || S.cols() != lift.nT())
    throw ValidationError("controller pattern must be " + std::to_string(lift.mT()) + "x" +
                          std::to_string(lift.nT()) + ", got " + S.shape_string());
  if (!S.is_lower_block_triangular({lift.m, lift.n, lift.T}))
    throw ValidationError("controller pattern is not lower block-triangular (non-causal)");
}

// Declares the Y variables and the S / V_x equalities.
inline YParam build_y_param(conic::SdpProblem& prob, const BlockLift& lift,
                            const SparsityPattern& S, const SparsityPattern& Vx,
                            Restriction restriction) {
  const int n = lift.n, m = lift.m, T = lift.T, nT = lift.nT();
  if (Vx.rows() != nT || Vx.cols() != nT)
    throw ValidationError("V_x must be " + std::to_string(nT) + "x" + std::to_string(nT) +
                          ", got " + Vx.shape_string());
  YParam yp;

  if (restriction == Restriction::none) {
    for (int a = 0; a < lift.mT(); ++a)
      for (int b = 0; b < nT; ++b)
        if (S(a, b) && b / n <= a / m) {
          const int v = prob.add_variable("Y[" + std::to_string(a) + "," + std::to_string(b) + "]");
          yp.entries.push_back({a, b, v});
          yp.vars.push_back(v);
        }
    // Column index: entries of Y by column.
    std::vector<std::vector<std::pair<int, int>>> col(static_cast<size_t>(nT));
    for (const auto& e : yp.entries) col[static_cast<size_t>(e.b)].emplace_back(e.a, e.var);
    for (int j = 0; j < nT; ++j)
      for (int k = 0; k < nT; ++k) {
        if (Vx(j, k) || k / n > j / n) continue;
        std::vector<std::pair<int, double>> coeffs;
        for (const auto& [a, v] : col[static_cast<size_t>(k)])
          if (const double g = lift.G(j, a); g != 0.0) coeffs.emplace_back(v, g);
        const double rhs = j == k ? -1.0 : 0.0;
        if (coeffs.empty()) {
          if (rhs != 0.0)
            throw StructureError("V_x forbids diagonal entry " + std::to_string(j) +
                                 " of Phi_x Gamma; the program is infeasible");
          continue;
        }
        prob.add_equality(std::move(coeffs), rhs);
        ++yp.equalities;
      }
    return yp;
  }

  if (!lift_is_lti(lift))
    throw UnsupportedError(
        "the Toeplitz restriction needs a time-invariant plant (A_t, B_t constant)");
  // One variable per (lag k, input r, state c); covers Y[(t+k)m + r, t n + c].
  auto param = [&](int k, int r, int c) { return (k * m + r) * n + c; };
  const int first = prob.num_variables();
  for (int k = 0; k < T; ++k)
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) {
        const int v = prob.add_variable("Ytoep[" + std::to_string(k) + "," + std::to_string(r) +
                                        "," + std::to_string(c) + "]");
        yp.vars.push_back(v);
        for (int t = 0; t + k < T; ++t) yp.entries.push_back({(t + k) * m + r, t * n + c, v});
      }
  std::set<int> forced_zero;
  for (const auto& e : yp.entries)
    if (!S(e.a, e.b)) forced_zero.insert(e.var);
  for (int v : forced_zero) {
    prob.add_equality({{v, 1.0}}, 0.0);
    ++yp.equalities;
  }
  // (I + G Y) is block Toeplitz under the restriction, so a V_x zero at block
  // (J, K) constrains the same linear form as block (J - K, 0).
  std::set<std::pair<int, int>> canonical;
  for (int j = 0; j < nT; ++j)
    for (int k = 0; k < nT; ++k) {
      if (Vx(j, k) || k / n > j / n) continue;
      const int lag = j / n - k / n;
      canonical.emplace(lag * n + j % n, k % n);
    }
  for (const auto& [j, c] : canonical) {
    // (G Y)_{j,c} = sum_a G(j, a) Y(a, c), with Y(a, c) = param(a / m, a % m, c).
    std::map<int, double> acc;
    for (int a = 0; a < lift.mT(); ++a)
      if (const double g = lift.G(j, a); g != 0.0) acc[first + param(a / m, a % m, c)] += g;
    std::vector<std::pair<int, double>> coeffs;
    for (const auto& [v, g] : acc)
      if (g != 0.0 && !forced_zero.count(v)) coeffs.emplace_back(v, g);
    const double rhs = j == c ? -1.0 : 0.0;
    if (coeffs.empty()) {
      if (rhs != 0.0)
        throw StructureError("V_x forbids a diagonal entry of Phi_x Gamma; the program is infeasible");
      continue;
    }
    prob.add_equality(std::move(coeffs), rhs);
    ++yp.equalities;
  }
  return yp;
}

inline Eigen::MatrixXd y_from_solution(const YParam& yp, const BlockLift& lift,
                                       const Eigen::VectorXd& x) {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(lift.mT(), lift.nT());
  for (const auto& e : yp.entries) Y(e.a, e.b) = x(e.var);
  return Y;
}

// Pieces of C^1/2 Phi = M0 + sum Y_ab L_a rho_b^T.
struct AffineMap {
  Eigen::MatrixXd M0;  // (n+m)T x nT
  Eigen::MatrixXd L;   // (n+m)T x mT
  Eigen::MatrixXd R;   // nT x nT, rows rho_b
};

inline AffineMap affine_map(const BlockLift& lift, const CostWeights& cost) {
  const int nT = lift.nT(), mT = lift.mT();
  if (cost.dim() != nT + mT)
    throw ValidationError("cost matrix must be " + std::to_string(nT + mT) + " square, got " +
                          std::to_string(cost.dim()));
  AffineMap am;
  Eigen::MatrixXd top(nT + mT, nT);
  top << lift.Gamma_inv, Eigen::MatrixXd::Zero(mT, nT);
  am.M0 = cost.C_half() * top;
  Eigen::MatrixXd GI(nT + mT, mT);
  GI << lift.G, Eigen::MatrixXd::Identity(mT, mT);
  am.L = cost.C_half() * GI;
  am.R = lift.Gamma_inv;
  return am;
}

// Adds [[top_left, M], [M^T, bottom_right]] with M = C^1/2 Phi(Y) as PSD block.
// Returns the block so callers can attach their scalar variable.
inline conic::PsdBlock& add_schur_block(conic::SdpProblem& prob, const YParam& yp,
                                        const AffineMap& am, const Eigen::MatrixXd& top_left,
                                        const Eigen::MatrixXd& bottom_right) {
  const auto p = am.M0.rows(), q = am.M0.cols();
  auto& blk = prob.add_psd_block(static_cast<int>(p + q));
  Eigen::MatrixXd F0(p + q, p + q);
  F0 << top_left, am.M0, am.M0.transpose(), bottom_right;
  blk.set_constant(F0);
  std::map<int, int> left_atom, right_atom;
  for (const auto& e : yp.entries) {
    auto li = left_atom.find(e.a);
    if (li == left_atom.end()) {
      Eigen::VectorXd u = Eigen::VectorXd::Zero(p + q);
      u.head(p) = am.L.col(e.a);
      li = left_atom.emplace(e.a, blk.add_atom(u)).first;
    }
    auto ri = right_atom.find(e.b);
    if (ri == right_atom.end()) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(p + q);
      w.tail(q) = am.R.row(e.b).transpose();
      ri = right_atom.emplace(e.b, blk.add_atom(w)).first;
    }
    blk.add_term(e.var, li->second, ri->second, 2.0);
  }
  return blk;
}

inline void require_optimal(const conic::SdpSolution& sol, const std::string& stage) {
  if (sol.status != conic::Status::optimal)
    throw SolverError(stage + ": solver returned " + conic::to_string(sol.status) +
                      (sol.message.empty() ? "" : " (" + sol.message + ")"));
}

// Map and projected controller from the solved Y.
inline void finish_result(SynthesisResult& res, const YParam& yp, const BlockLift& lift,
                          const SparsityPattern& S, const SynthesisOptions& opt,
                          const std::string& method) {
  const Eigen::MatrixXd Y = y_from_solution(yp, lift, res.solution.x);
  res.phi = closed_loop_from_y(Y, lift);
  const Eigen::MatrixXd K = controller_from_map(res.phi, lift, opt.tol_ach);
  res.leak = leakage(K, S, 1e-9);
  if (res.leak.max_abs > opt.tol_leak)
    throw InvariantError("synthesized controller leaks outside its pattern: |K(" +
                         std::to_string(res.leak.row) + "," + std::to_string(res.leak.col) +
                         ")| = " + std::to_string(res.leak.max_abs));
  res.controller.K = project(K, S);
  res.controller.pattern = S;
  res.controller.pattern.set_block_meta(lift.controller_meta());
  res.controller.provenance = {{"method", method}, {"options", opt.to_json()}};
}

inline Eigen::MatrixXd sigma_or_identity(const SynthesisOptions& opt, int nT) {
  if (opt.Sigma.size() == 0) return Eigen::MatrixXd::Identity(nT, nT);
  if (opt.Sigma.rows() != nT || opt.Sigma.cols() != nT)
    throw ValidationError("Sigma must be " + std::to_string(nT) + " square");
  if ((opt.Sigma - opt.Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ValidationError("Sigma must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(opt.Sigma, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()(0) < -opt.tol.psd) throw ValidationError("Sigma must be PSD");
  return opt.Sigma;
}

}  // namespace detail

// Worst-case cost over the unit ball: lambda_max(Phi^T C Phi).
inline double worst_case_cost(const ClosedLoopMap& phi, const CostWeights& cost) {
  const Eigen::MatrixXd M = cost.C_half() * phi.stacked();
  return lambda_max(M.transpose() * M);
}

// min ||C^1/2 Phi Sigma||_F^2 over the SI-parameterised set.
inline SynthesisResult synthesize_h2(const BlockLift& lift, const CostWeights& cost,
                                     const SparsityPattern& S, const SynthesisOptions& opt = {}) {
  detail::require_causal_pattern(S, lift);
  const SparsityPattern Vx = opt.Vx ? *opt.Vx : generate_vx(S);
  conic::SdpProblem prob;
  const auto yp = detail::build_y_param(prob, lift, S, Vx, opt.restriction);
  const auto am = detail::affine_map(lift, cost);
  const Eigen::MatrixXd Sigma = detail::sigma_or_identity(opt, lift.nT());
  auto& f = prob.set_frobenius_objective(static_cast<int>(am.M0.rows()), lift.nT());
  f.set_constant(am.M0 * Sigma);
  const Eigen::MatrixXd RS = am.R * Sigma;
  std::map<int, int> left_atom, right_atom;
  for (const auto& e : yp.entries) {
    auto li = left_atom.find(e.a);
    if (li == left_atom.end())
      li = left_atom.emplace(e.a, f.add_left_atom(am.L.col(e.a))).first;
    auto ri = right_atom.find(e.b);
    if (ri == right_atom.end())
      ri = right_atom.emplace(e.b, f.add_right_atom(RS.row(e.b).transpose())).first;
    f.add_term(e.var, li->second, ri->second, 1.0);
  }
  SynthesisResult res;
  res.declared_variables = prob.num_variables();
  res.equalities = yp.equalities;
  res.solution = conic::solve(prob, opt.tol);
  detail::require_optimal(res.solution, "h2 synthesis");
  detail::finish_result(res, yp, lift, S, opt, "h2");
  const Eigen::MatrixXd R = cost.C_half() * res.phi.stacked() * Sigma;
  res.value = R.squaredNorm();
  return res;
}

// min gamma s.t. [[gamma I, C^1/2 Phi], [Phi^T C^1/2, gamma I]] >= 0; value = gamma^2.
inline SynthesisResult synthesize_hinf(const BlockLift& lift, const CostWeights& cost,
                                       const SparsityPattern& S, const SynthesisOptions& opt = {}) {
  detail::require_causal_pattern(S, lift);
  const SparsityPattern Vx = opt.Vx ? *opt.Vx : generate_vx(S);
  conic::SdpProblem prob;
  const auto yp = detail::build_y_param(prob, lift, S, Vx, opt.restriction);
  const int gamma = prob.add_variable("gamma");
  prob.set_objective(gamma, 1.0);
  const auto am = detail::affine_map(lift, cost);
  const auto p = am.M0.rows(), q = am.M0.cols();
  auto& blk = detail::add_schur_block(prob, yp, am, Eigen::MatrixXd::Zero(p, p),
                                      Eigen::MatrixXd::Zero(q, q));
  blk.add_identity(gamma, 1.0);
  // Y = 0 with gamma above ||M0|| is strictly feasible.
  const double s0 = am.M0.size() > 0 ? std::sqrt(std::max(0.0, lambda_max(am.M0.transpose() * am.M0))) : 0.0;
  prob.set_start(gamma, 1.5 * s0 + 1.0);
  SynthesisResult res;
  res.declared_variables = prob.num_variables();
  res.equalities = yp.equalities;
  res.solution = conic::solve(prob, opt.tol);
  detail::require_optimal(res.solution, "hinf synthesis");
  detail::finish_result(res, yp, lift, S, opt, "hinf");
  const double g = res.solution.x(gamma);
  res.value = g * g;
  const double actual = worst_case_cost(res.phi, cost);
  if (std::abs(res.value - actual) > opt.tol_check * std::max(1.0, std::abs(actual)))
    throw InvariantError("hinf epigraph is not tight: gamma^2 = " + std::to_string(res.value) +
                         ", lambda_max = " + std::to_string(actual));
  return res;
}

// Oracle over a QI pattern S_hat; refuses non-QI patterns.
inline SynthesisResult synthesize_oracle(const BlockLift& lift, const CostWeights& cost,
                                         const SparsityPattern& S_hat, Objective objective,
                                         const SynthesisOptions& opt = {}) {
  detail::require_causal_pattern(S_hat, lift);
  if (const auto v = qi_violation(S_hat, lift.Delta))
    throw StructureError("oracle pattern is not quadratically invariant: (S Delta S)(" +
                         std::to_string(v->first) + "," + std::to_string(v->second) +
                         ") = 1 but S(" + std::to_string(v->first) + "," +
                         std::to_string(v->second) + ") = 0");
  SynthesisOptions o = opt;
  o.Vx.reset();
  SynthesisResult res;
  switch (objective) {
    case Objective::h2: res = synthesize_h2(lift, cost, S_hat, o); break;
    case Objective::hinf: res = synthesize_hinf(lift, cost, S_hat, o); break;
    default: throw ValidationError("oracle objective must be h2 or hinf");
  }
  res.controller.provenance["method"] = "oracle";
  res.controller.provenance["oracle_objective"] = to_string(objective);
  return res;
}

// Largest eigenvalue of Phi^T C Phi - Phi_hat^T C Phi_hat.
inline double regret_lambda_max(const ClosedLoopMap& phi, const ClosedLoopMap& phi_hat,
                                const CostWeights& cost) {
  const Eigen::MatrixXd M = cost.C_half() * phi.stacked();
  const Eigen::MatrixXd Mh = cost.C_half() * phi_hat.stacked();
  return lambda_max(M.transpose() * M - Mh.transpose() * Mh);
}

// min lambda s.t. [[I, C^1/2 Phi], [Phi^T C^1/2, lambda I + Phi_hat^T C Phi_hat]] >= 0.
// `oracle_is_qi_superset` enables the sign check lambda* >= -tol_check.
inline SynthesisResult synthesize_spregret(const BlockLift& lift, const CostWeights& cost,
                                           const SparsityPattern& S,
                                           const ClosedLoopMap& phi_hat,
                                           bool oracle_is_qi_superset,
                                           const SynthesisOptions& opt = {}) {
  detail::require_causal_pattern(S, lift);
  if (phi_hat.Phi_x.rows() != lift.nT() || phi_hat.Phi_u.rows() != lift.mT() ||
      phi_hat.Phi_x.cols() != lift.nT())
    throw ValidationError("oracle map has the wrong shape");
  const SparsityPattern Vx = opt.Vx ? *opt.Vx : generate_vx(S);
  conic::SdpProblem prob;
  const auto yp = detail::build_y_param(prob, lift, S, Vx, opt.restriction);
  const int lambda = prob.add_variable("lambda");
  prob.set_objective(lambda, 1.0);
  const auto am = detail::affine_map(lift, cost);
  const auto p = am.M0.rows(), q = am.M0.cols();
  const Eigen::MatrixXd Mh = cost.C_half() * phi_hat.stacked();
  auto& blk = detail::add_schur_block(prob, yp, am, Eigen::MatrixXd::Identity(p, p),
                                      Mh.transpose() * Mh);
  blk.add_identity(lambda, 1.0, static_cast<int>(p), static_cast<int>(p + q));
  // Y = 0 is strictly feasible once lambda I exceeds M0^T M0 - Mh^T Mh.
  const double l0 = lambda_max(am.M0.transpose() * am.M0 - Mh.transpose() * Mh);
  prob.set_start(lambda, l0 + 0.5 * std::abs(l0) + 1.0);
  SynthesisResult res;
  res.declared_variables = prob.num_variables();
  res.equalities = yp.equalities;
  res.solution = conic::solve(prob, opt.tol);
  detail::require_optimal(res.solution, "spregret synthesis");
  detail::finish_result(res, yp, lift, S, opt, "spregret");
  res.value = res.solution.x(lambda);
  const double actual = regret_lambda_max(res.phi, phi_hat, cost);
  if (std::abs(res.value - actual) > opt.tol_check)
    throw InvariantError("spregret epigraph is not tight: lambda* = " + std::to_string(res.value) +
                         ", lambda_max(Pi) = " + std::to_string(actual));
  if (oracle_is_qi_superset && res.value < -opt.tol_check)
    throw InvariantError("negative spatial regret " + std::to_string(res.value) +
                         " against a QI oracle");
  return res;
}

struct PipelineConfig {
  OracleChoice oracle = OracleChoice::nearest_qi;
  Objective oracle_objective = Objective::hinf;
  std::optional<SparsityPattern> oracle_pattern;  // caller-supplied S_hat
  SynthesisOptions options;

  io::json to_json() const {
    io::json j{{"oracle", oracle_pattern ? "custom" : to_string(oracle)},
               {"oracle_objective", to_string(oracle_objective)},
               {"options", options.to_json()}};
    return j;
  }
};

struct PipelineResult {
  SynthesisResult oracle;
  SynthesisResult controller;
  SparsityPattern S, S_hat, Vx, Vx_hat;
  io::json report;
};

inline io::json pattern_rows(const SparsityPattern& P) {
  io::json rows = io::json::array();
  for (int i = 0; i < P.rows(); ++i) {
    std::string r;
    for (int j = 0; j < P.cols(); ++j) r.push_back(P(i, j) ? '1' : '0');
    rows.push_back(std::move(r));
  }
  return rows;
}

// Oracle pattern, SI patterns, oracle synthesis, then the spatial-regret SDP.
inline PipelineResult pipeline(const SparsityPattern& S, const BlockLift& lift,
                               const CostWeights& cost, const PipelineConfig& cfg = {}) {
  PipelineResult out;
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const StructureError& e) {
      throw StructureError(std::string(name) + ": " + e.what());
    } catch (const SolverError& e) {
      throw SolverError(std::string(name) + ": " + e.what());
    } catch (const InvariantError& e) {
      throw InvariantError(std::string(name) + ": " + e.what());
    } catch (const UnsupportedError& e) {
      throw UnsupportedError(std::string(name) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(name) + ": " + e.what());
    }
  };
  detail::require_causal_pattern(S, lift);
  out.S = S;
  out.S.set_block_meta(lift.controller_meta());
  out.S_hat = stage("oracle pattern", [&] {
    if (cfg.oracle_pattern) {
      SparsityPattern p = *cfg.oracle_pattern;
      detail::require_causal_pattern(p, lift);
      if (!S.leq(p)) throw ValidationError("oracle pattern does not contain S");
      p.set_block_meta(lift.controller_meta());
      return p;
    }
    if (cfg.oracle == OracleChoice::centralized)
      return centralized_pattern(lift.m, lift.n, lift.T);
    return nearest_qi_superset(out.S, lift.Delta);
  });
  out.Vx = cfg.options.Vx ? *cfg.options.Vx : generate_vx(out.S);
  out.Vx_hat = generate_vx(out.S_hat);
  out.oracle = stage("oracle synthesis", [&] {
    return synthesize_oracle(lift, cost, out.S_hat, cfg.oracle_objective, cfg.options);
  });
  out.controller = stage("spregret synthesis", [&] {
    return synthesize_spregret(lift, cost, out.S, out.oracle.phi, true, cfg.options);
  });
  out.controller.controller.provenance["oracle"] =
      cfg.oracle_pattern ? "custom" : to_string(cfg.oracle);
  out.controller.controller.provenance["oracle_objective"] = to_string(cfg.oracle_objective);

  const bool s_qi = is_qi(out.S, lift.Delta);
  io::json r;
  r["config"] = cfg.to_json();
  r["dims"] = {{"n", lift.n}, {"m", lift.m}, {"T", lift.T}};
  r["card_S"] = out.S.card();
  r["card_S_hat"] = out.S_hat.card();
  r["card_gap"] = out.S_hat.card() - out.S.card();
  r["S_is_qi"] = s_qi;
  r["optimality_scope"] = s_qi ? "global over Sparse(S)"
                               : "restricted to the SI-parameterised subset of Sparse(S)";
  r["oracle_value"] = out.oracle.value;
  r["oracle_worst_case_cost"] = worst_case_cost(out.oracle.phi, cost);
  r["lambda_star"] = out.controller.value;
  r["controller_worst_case_cost"] = worst_case_cost(out.controller.phi, cost);
  r["oracle_solver"] = out.oracle.stats();
  r["spregret_solver"] = out.controller.stats();
  r["patterns"] = {{"S", pattern_rows(out.S)},
                   {"S_hat", pattern_rows(out.S_hat)},
                   {"V_x", pattern_rows(out.Vx)},
                   {"V_x_hat", pattern_rows(out.Vx_hat)}};
  out.report = std::move(r);
  return out;
}

}  // namespace spregret
