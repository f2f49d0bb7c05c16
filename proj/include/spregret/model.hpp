#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <string>
#include <unsupported/Eigen/MatrixFunctions>
#include <utility>
#include <vector>

#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"
#include "spregret/sparsity.hpp"

namespace spregret {

enum class Discretization { zoh, euler };

inline std::string to_string(Discretization d) { return d == Discretization::zoh ? "zoh" : "euler"; }

inline Discretization discretization_from_string(const std::string& s) {
  if (s == "zoh") return Discretization::zoh;
  if (s == "euler") return Discretization::euler;
  throw ValidationError("unknown discretization '" + s + "' (expected zoh|euler)");
}

// Provenance of a plant; echoed into every artifact built from it.
struct ModelMeta {
  std::string discretization;  // "zoh", "euler", or empty for hand-built plants
  double Ts = 0.0;
  int masses = 0;  // > 0 for spring-mass chains
  double spring = 0.0;
  double damper = 0.0;
  double mass = 0.0;
};

// Finite-horizon LTV plant x_{t+1} = A_t x_t + B_t u_t + w_t, t = 0..T-1.
class HorizonSystem {
 public:
  HorizonSystem(std::vector<Eigen::MatrixXd> A_seq, std::vector<Eigen::MatrixXd> B_seq,
                ModelMeta meta = {})
      : A_(std::move(A_seq)), B_(std::move(B_seq)), meta_(std::move(meta)) {
    detail::require(!A_.empty(), "horizon T must be positive");
    detail::require(A_.size() == B_.size(), "A_seq and B_seq lengths differ");
    n_ = static_cast<int>(A_[0].rows());
    m_ = static_cast<int>(B_[0].cols());
    detail::require(n_ > 0 && m_ > 0, "state and input dimensions must be positive");
    for (size_t t = 0; t < A_.size(); ++t) {
      if (A_[t].rows() != n_ || A_[t].cols() != n_)
        throw ValidationError("A_" + std::to_string(t) + " is not " + std::to_string(n_) + "x" +
                              std::to_string(n_));
      if (B_[t].rows() != n_ || B_[t].cols() != m_)
        throw ValidationError("B_" + std::to_string(t) + " is not " + std::to_string(n_) + "x" +
                              std::to_string(m_));
    }
  }

  // Time-invariant plant repeated over T steps.
  static HorizonSystem lti(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int T,
                           ModelMeta meta = {}) {
    detail::require(T > 0, "horizon T must be positive");
    return {std::vector<Eigen::MatrixXd>(static_cast<size_t>(T), A),
            std::vector<Eigen::MatrixXd>(static_cast<size_t>(T), B), std::move(meta)};
  }

  int horizon() const { return static_cast<int>(A_.size()); }
  int state_dim() const { return n_; }
  int input_dim() const { return m_; }
  const Eigen::MatrixXd& A(int t) const { return A_.at(static_cast<size_t>(t)); }
  const Eigen::MatrixXd& B(int t) const { return B_.at(static_cast<size_t>(t)); }
  const ModelMeta& meta() const { return meta_; }

  // Only A_0..A_{T-2}, B_0..B_{T-2} enter the lifted operators.
  bool is_lti() const {
    for (int t = 1; t + 1 < horizon(); ++t)
      if (A(t) != A(0) || B(t) != B(0)) return false;
    return true;
  }

  io::json to_json() const {
    io::json A = io::json::array();
    io::json B = io::json::array();
    for (int t = 0; t < horizon(); ++t) {
      A.push_back(io::matrix_to_json(this->A(t)));
      B.push_back(io::matrix_to_json(this->B(t)));
    }
    io::json meta = {{"discretization", meta_.discretization}, {"Ts", meta_.Ts}};
    if (meta_.masses > 0) {
      meta["masses"] = meta_.masses;
      meta["k"] = meta_.spring;
      meta["c"] = meta_.damper;
      meta["mass"] = meta_.mass;
    }
    return {{"T", horizon()}, {"n", n_}, {"m", m_}, {"A_seq", A}, {"B_seq", B}, {"meta", meta}};
  }

  static HorizonSystem from_json(const io::json& j) {
    try {
      const int T = j.at("T").get<int>();
      const int n = j.at("n").get<int>();
      const int m = j.at("m").get<int>();
      if (j.contains("E_seq")) {
        for (const auto& e : j.at("E_seq")) {
          const Eigen::MatrixXd E = io::matrix_from_json(e, "E_seq");
          if (E.rows() != n || E.cols() != n || !E.isIdentity(0.0))
            throw UnsupportedError(
                "non-identity E_t is not supported: disturbances enter as E_t = I "
                "(shape the disturbance through the plant instead)");
        }
      }
      std::vector<Eigen::MatrixXd> A, B;
      for (const auto& a : j.at("A_seq")) A.push_back(io::matrix_from_json(a, "A_seq"));
      for (const auto& b : j.at("B_seq")) B.push_back(io::matrix_from_json(b, "B_seq"));
      if (static_cast<int>(A.size()) != T || static_cast<int>(B.size()) != T)
        throw ValidationError("model JSON: sequence length differs from T");
      ModelMeta meta;
      if (j.contains("meta")) {
        const auto& mj = j.at("meta");
        meta.discretization = mj.value("discretization", std::string{});
        meta.Ts = mj.value("Ts", 0.0);
        meta.masses = mj.value("masses", 0);
        meta.spring = mj.value("k", 0.0);
        meta.damper = mj.value("c", 0.0);
        meta.mass = mj.value("mass", 0.0);
      }
      HorizonSystem sys(std::move(A), std::move(B), meta);
      if (sys.state_dim() != n || sys.input_dim() != m)
        throw ValidationError("model JSON: matrix sizes disagree with n/m");
      return sys;
    } catch (const io::json::exception& e) {
      throw ValidationError(std::string("model JSON: ") + e.what());
    }
  }

 private:
  std::vector<Eigen::MatrixXd> A_;
  std::vector<Eigen::MatrixXd> B_;
  ModelMeta meta_;
  int n_ = 0;
  int m_ = 0;
};

// Lifted operators over the horizon.
struct BlockLift {
  int n = 0;
  int m = 0;
  int T = 0;
  Eigen::MatrixXd Z;          // nT x nT block-downshift
  Eigen::MatrixXd A;          // blkdiag(A_0..A_{T-2}, 0)
  Eigen::MatrixXd B;          // blkdiag(B_0..B_{T-2}, 0), nT x mT
  Eigen::MatrixXd Gamma;      // I - Z A
  Eigen::MatrixXd Gamma_inv;  // unit lower-block-triangular
  Eigen::MatrixXd G;          // Gamma^-1 Z B, strictly lower-block-triangular
  SparsityPattern Delta;      // Struct(G)

  int nT() const { return n * T; }
  int mT() const { return m * T; }
  BlockMeta controller_meta() const { return {m, n, T}; }
};

inline BlockLift build_block_lift(const HorizonSystem& sys) {
  BlockLift L;
  L.n = sys.state_dim();
  L.m = sys.input_dim();
  L.T = sys.horizon();
  const int n = L.n, m = L.m, T = L.T;
  L.Z = Eigen::MatrixXd::Zero(n * T, n * T);
  L.A = Eigen::MatrixXd::Zero(n * T, n * T);
  L.B = Eigen::MatrixXd::Zero(n * T, m * T);
  for (int t = 0; t + 1 < T; ++t) {
    L.Z.block((t + 1) * n, t * n, n, n).setIdentity();
    L.A.block(t * n, t * n, n, n) = sys.A(t);
    L.B.block(t * n, t * m, n, m) = sys.B(t);
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n * T, n * T);
  L.Gamma = I - L.Z * L.A;
  L.Gamma_inv = L.Gamma.triangularView<Eigen::UnitLower>().solve(I);
  L.G = L.Gamma_inv * (L.Z * L.B);
  L.Delta = struct_of(L.G);
  L.Delta.set_block_meta({n, m, T});
  return L;
}

// Quadratic weight on the stacked [x; u] trajectory and a symmetric root.
class CostWeights {
 public:
  CostWeights() = default;

  explicit CostWeights(Eigen::MatrixXd C, double tol_psd = 1e-7) : C_(std::move(C)) {
    detail::require(C_.rows() == C_.cols(), "cost matrix must be square");
    if (C_.size() > 0 && (C_ - C_.transpose()).cwiseAbs().maxCoeff() >
                             1e-12 * std::max(1.0, C_.cwiseAbs().maxCoeff()))
      throw ValidationError("cost matrix must be symmetric");
    if (C_.isDiagonal(0.0)) {
      const Eigen::VectorXd d = C_.diagonal();
      if (d.size() > 0 && d.minCoeff() < -tol_psd)
        throw ValidationError("cost matrix is not positive semidefinite");
      C_half_ = d.cwiseMax(0.0).cwiseSqrt().asDiagonal();
      return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C_ + C_.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() < -tol_psd)
      throw ValidationError("cost matrix is not positive semidefinite (min eigenvalue " +
                            std::to_string(ev.minCoeff()) + ")");
    C_half_ = es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
              es.eigenvectors().transpose();
  }

  static CostWeights identity(int dim) {
    return CostWeights(Eigen::MatrixXd::Identity(dim, dim));
  }

  const Eigen::MatrixXd& C() const { return C_; }
  const Eigen::MatrixXd& C_half() const { return C_half_; }
  int dim() const { return static_cast<int>(C_.rows()); }

 private:
  Eigen::MatrixXd C_;
  Eigen::MatrixXd C_half_;
};

// Continuous-time chain of N masses coupled to neighbours by springs k and
// dampers c; state per mass (position, velocity), one force input per mass.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> spring_mass_continuous(int N, double k,
                                                                          double c, double mass) {
  detail::require(N >= 2, "spring-mass chain needs at least 2 masses");
  detail::require(mass > 0.0, "mass must be positive");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * N, 2 * N);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(2 * N, N);
  for (int i = 0; i < N; ++i) {
    const int p = 2 * i, v = 2 * i + 1;
    A(p, v) = 1.0;
    int neighbours = 0;
    for (int j : {i - 1, i + 1}) {
      if (j < 0 || j >= N) continue;
      ++neighbours;
      A(v, 2 * j) = k / mass;
      A(v, 2 * j + 1) = c / mass;
    }
    A(v, p) = -neighbours * k / mass;
    A(v, v) = -neighbours * c / mass;
    B(v, i) = 1.0 / mass;
  }
  return {A, B};
}

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> discretize(const Eigen::MatrixXd& Ac,
                                                              const Eigen::MatrixXd& Bc,
                                                              double Ts, Discretization method) {
  detail::require(Ts > 0.0, "sampling time must be positive");
  const auto n = Ac.rows(), m = Bc.cols();
  if (method == Discretization::euler)
    return {Eigen::MatrixXd::Identity(n, n) + Ts * Ac, Ts * Bc};
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + m, n + m);
  M.topLeftCorner(n, n) = Ac * Ts;
  M.topRightCorner(n, m) = Bc * Ts;
  const Eigen::MatrixXd E = M.exp();
  return {E.topLeftCorner(n, n), E.topRightCorner(n, m)};
}

inline HorizonSystem spring_mass_chain(int N, double k, double c, double mass, double Ts, int T,
                                       Discretization method = Discretization::zoh) {
  detail::require(N >= 2, "spring-mass chain needs at least 2 masses");
  detail::require(Ts > 0.0, "sampling time must be positive");
  detail::require(T > 0, "horizon must be positive");
  detail::require(k >= 0.0 && c >= 0.0, "spring and damper constants must be non-negative");
  const auto [Ac, Bc] = spring_mass_continuous(N, k, c, mass);
  const auto [Ad, Bd] = discretize(Ac, Bc, Ts, method);
  ModelMeta meta{to_string(method), Ts, N, k, c, mass};
  return HorizonSystem::lti(Ad, Bd, T, meta);
}

// Per-step pattern: controller i sees its own mass, its right neighbour's
// position, and the full state of the last mass.
inline SparsityPattern chain_spatial_pattern(int N) {
  detail::require(N >= 2, "spring-mass chain needs at least 2 masses");
  SparsityPattern s(N, 2 * N);
  for (int i = 0; i < N; ++i) {
    s.set(i, 2 * i);
    s.set(i, 2 * i + 1);
    if (i + 1 < N) s.set(i, 2 * (i + 1));
    s.set(i, 2 * (N - 1));
    s.set(i, 2 * (N - 1) + 1);
  }
  return s;
}

inline SparsityPattern chain_sparsity(int N, int T) {
  detail::require(T > 0, "horizon must be positive");
  SparsityPattern S = kron(SparsityPattern::tril(T), chain_spatial_pattern(N));
  S.set_block_meta({N, 2 * N, T});
  return S;
}

// Tril(T) (x) ones(m, n): every causal entry allowed.
inline SparsityPattern centralized_pattern(int m, int n, int T) {
  SparsityPattern S = kron(SparsityPattern::tril(T), SparsityPattern::ones(m, n));
  S.set_block_meta({m, n, T});
  return S;
}

}  // namespace spregret
