#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"
#include "spregret/model.hpp"
#include "spregret/sparsity.hpp"

namespace spregret {

// Closed-loop responses from delta = [x0; w] to the stacked state and input.
struct ClosedLoopMap {
  Eigen::MatrixXd Phi_x;  // nT x nT
  Eigen::MatrixXd Phi_u;  // mT x nT

  Eigen::MatrixXd stacked() const {
    Eigen::MatrixXd P(Phi_x.rows() + Phi_u.rows(), Phi_x.cols());
    P << Phi_x, Phi_u;
    return P;
  }

  io::json to_json() const {
    return {{"Phi_x", io::matrix_envelope(Phi_x)}, {"Phi_u", io::matrix_envelope(Phi_u)}};
  }

  static ClosedLoopMap from_json(const io::json& j) {
    if (!j.is_object() || !j.contains("Phi_x") || !j.contains("Phi_u"))
      throw ValidationError("closed-loop map JSON needs 'Phi_x' and 'Phi_u'");
    ClosedLoopMap m{io::matrix_from_envelope(j.at("Phi_x"), "Phi_x"),
                    io::matrix_from_envelope(j.at("Phi_u"), "Phi_u")};
    if (m.Phi_x.rows() != m.Phi_x.cols() || m.Phi_u.cols() != m.Phi_x.cols())
      throw ValidationError("closed-loop map: inconsistent shapes");
    return m;
  }
};

struct Controller {
  Eigen::MatrixXd K;  // mT x nT
  SparsityPattern pattern;
  io::json provenance = io::json::object();

  io::json to_json() const {
    return {{"K", io::matrix_envelope(K)},
            {"pattern", pattern.to_json()},
            {"provenance", provenance}};
  }

  static Controller from_json(const io::json& j) {
    if (!j.is_object() || !j.contains("K")) throw ValidationError("controller JSON needs 'K'");
    Controller c;
    c.K = io::matrix_from_envelope(j.at("K"), "K");
    c.pattern = j.contains("pattern") ? SparsityPattern::from_json(j.at("pattern"))
                                      : struct_of(c.K);
    if (j.contains("provenance")) c.provenance = j.at("provenance");
    if (c.pattern.rows() != c.K.rows() || c.pattern.cols() != c.K.cols())
      throw ValidationError("controller JSON: pattern shape differs from K");
    if (!is_member(c.K, c.pattern)) throw ValidationError("controller JSON: K leaves its pattern");
    return c;
  }
};

namespace detail {

inline void require_lift_shapes(const BlockLift& lift, Eigen::Index rows_u, Eigen::Index cols) {
  if (rows_u != lift.mT() || cols != lift.nT())
    throw ValidationError("expected an " + std::to_string(lift.mT()) + "x" +
                          std::to_string(lift.nT()) + " matrix, got " + std::to_string(rows_u) +
                          "x" + std::to_string(cols));
}

// K = Phi_u Phi_x^-1 through a triangular solve (Phi_x is lower triangular).
inline Eigen::MatrixXd right_divide_lower(const Eigen::MatrixXd& U, const Eigen::MatrixXd& L) {
  return L.transpose().triangularView<Eigen::Upper>().solve(U.transpose()).transpose();
}

}  // namespace detail

inline bool is_lower_block_triangular(const Eigen::MatrixXd& M, int row_block, int col_block) {
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      if (M(i, j) != 0.0 && j / col_block > i / row_block) return false;
  return true;
}

// Frobenius norm of (I - ZA) Phi_x - ZB Phi_u - I.
inline double achievability_residual(const ClosedLoopMap& phi, const BlockLift& lift) {
  const Eigen::MatrixXd R = lift.Gamma * phi.Phi_x - lift.Z * lift.B * phi.Phi_u -
                            Eigen::MatrixXd::Identity(lift.nT(), lift.nT());
  return R.norm();
}

inline ClosedLoopMap closed_loop_from_controller(const Eigen::MatrixXd& K, const BlockLift& lift) {
  detail::require_lift_shapes(lift, K.rows(), K.cols());
  if (!is_lower_block_triangular(K, lift.m, lift.n))
    throw ValidationError("controller is not lower block-triangular (non-causal)");
  const int nT = lift.nT();
  // I - Z(A + BK) is unit lower triangular.
  const Eigen::MatrixXd L =
      Eigen::MatrixXd::Identity(nT, nT) - lift.Z * (lift.A + lift.B * K);
  ClosedLoopMap phi;
  phi.Phi_x = L.triangularView<Eigen::UnitLower>().solve(Eigen::MatrixXd::Identity(nT, nT));
  phi.Phi_u = K * phi.Phi_x;
  return phi;
}

inline ClosedLoopMap closed_loop_from_controller(const Controller& c, const BlockLift& lift) {
  return closed_loop_from_controller(c.K, lift);
}

// Closed loop from Y = Phi_u Gamma: Phi_u = Y Gamma^-1, Phi_x = Gamma^-1 (I + ZB Phi_u).
// Achievability holds by construction.
inline ClosedLoopMap closed_loop_from_y(const Eigen::MatrixXd& Y, const BlockLift& lift) {
  detail::require_lift_shapes(lift, Y.rows(), Y.cols());
  ClosedLoopMap phi;
  phi.Phi_u = Y * lift.Gamma_inv;
  phi.Phi_x = lift.Gamma_inv *
              (Eigen::MatrixXd::Identity(lift.nT(), lift.nT()) + lift.Z * lift.B * phi.Phi_u);
  return phi;
}

// K = h(Phi). Refuses maps whose achievability residual exceeds tol_ach.
inline Eigen::MatrixXd controller_from_map(const ClosedLoopMap& phi, const BlockLift& lift,
                                           double tol_ach = 1e-8) {
  detail::require_lift_shapes(lift, phi.Phi_u.rows(), phi.Phi_u.cols());
  if (phi.Phi_x.rows() != lift.nT() || phi.Phi_x.cols() != lift.nT())
    throw ValidationError("Phi_x has the wrong shape");
  const double res = achievability_residual(phi, lift);
  if (!(res <= tol_ach))
    throw InvariantError("closed-loop map is not achievable (residual " + std::to_string(res) +
                         " > " + std::to_string(tol_ach) + ")");
  return detail::right_divide_lower(phi.Phi_u, phi.Phi_x);
}

// Index of the decision variables of Phi: one per entry of the lower
// block-triangular support, Phi_x entries first.
class PhiLayout {
 public:
  explicit PhiLayout(const BlockLift& lift) : n_(lift.n), m_(lift.m), T_(lift.T) {
    const int nT = n_ * T_, mT = m_ * T_;
    x_index_.assign(static_cast<size_t>(nT) * nT, -1);
    u_index_.assign(static_cast<size_t>(mT) * nT, -1);
    for (int i = 0; i < nT; ++i)
      for (int j = 0; j < nT; ++j)
        if (j / n_ <= i / n_) x_index_[static_cast<size_t>(i) * nT + j] = count_++;
    num_x_ = count_;
    for (int i = 0; i < mT; ++i)
      for (int j = 0; j < nT; ++j)
        if (j / n_ <= i / m_) u_index_[static_cast<size_t>(i) * nT + j] = count_++;
  }

  int size() const { return count_; }
  int num_x() const { return num_x_; }
  // -1 when the entry is structurally zero.
  int x(int i, int j) const { return x_index_[static_cast<size_t>(i) * (n_ * T_) + j]; }
  int u(int i, int j) const { return u_index_[static_cast<size_t>(i) * (n_ * T_) + j]; }

  Eigen::VectorXd to_vector(const ClosedLoopMap& phi) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(count_);
    const int nT = n_ * T_, mT = m_ * T_;
    for (int i = 0; i < nT; ++i)
      for (int j = 0; j < nT; ++j)
        if (const int k = x(i, j); k >= 0) v(k) = phi.Phi_x(i, j);
    for (int i = 0; i < mT; ++i)
      for (int j = 0; j < nT; ++j)
        if (const int k = u(i, j); k >= 0) v(k) = phi.Phi_u(i, j);
    return v;
  }

 private:
  int n_, m_, T_;
  int count_ = 0;
  int num_x_ = 0;
  std::vector<int> x_index_, u_index_;
};

// Affine equalities sum_k a_k v_k = b over the variables of a PhiLayout.
struct LinearConstraintSet {
  struct Row {
    std::vector<std::pair<int, double>> coeffs;
    double rhs = 0.0;
  };
  std::vector<Row> rows;

  size_t size() const { return rows.size(); }

  double residual(const Eigen::VectorXd& v) const {
    double r = 0.0;
    for (const auto& row : rows) {
      double s = -row.rhs;
      for (const auto& [k, a] : row.coeffs) s += a * v(k);
      r = std::max(r, std::abs(s));
    }
    return r;
  }

  double residual(const ClosedLoopMap& phi, const PhiLayout& layout) const {
    return residual(layout.to_vector(phi));
  }
};

namespace detail {

// Row (M X)_{i,j} over variables of a layout-indexed X, where M is dense and
// X ranges over column j; `var(a, j)` returns the variable index or -1.
template <class VarFn>
void append_product_row(LinearConstraintSet::Row& row, const Eigen::MatrixXd& M, int i, int j,
                        int inner, VarFn var, double scale = 1.0) {
  for (int a = 0; a < inner; ++a) {
    const double c = M(i, a);
    if (c == 0.0) continue;
    const int k = var(a, j);
    if (k >= 0) row.coeffs.emplace_back(k, scale * c);
  }
}

}  // namespace detail

// (I - ZA) Phi_x - ZB Phi_u = I on the lower block-triangular support.
inline LinearConstraintSet achievability_constraints(const BlockLift& lift) {
  const PhiLayout layout(lift);
  const int nT = lift.nT(), mT = lift.mT();
  const Eigen::MatrixXd ZB = lift.Z * lift.B;
  LinearConstraintSet set;
  for (int i = 0; i < nT; ++i)
    for (int j = 0; j < nT; ++j) {
      if (j / lift.n > i / lift.n) continue;
      LinearConstraintSet::Row row;
      row.rhs = i == j ? 1.0 : 0.0;
      detail::append_product_row(row, lift.Gamma, i, j, nT,
                                 [&](int a, int c) { return layout.x(a, c); });
      detail::append_product_row(row, ZB, i, j, mT,
                                 [&](int a, int c) { return layout.u(a, c); }, -1.0);
      set.rows.push_back(std::move(row));
    }
  return set;
}

// (Phi_u Gamma)_{ij} = 0 where S_{ij} = 0 and (Phi_x Gamma)_{ij} = 0 where
// (V_x)_{ij} = 0. Entries above the block diagonal vanish identically and
// are skipped.
inline LinearConstraintSet si_constraints(const SparsityPattern& S, const SparsityPattern& Vx,
                                          const BlockLift& lift) {
  const int nT = lift.nT(), mT = lift.mT();
  if (S.rows() != mT || S.cols() != nT)
    throw ValidationError("S must be " + std::to_string(mT) + "x" + std::to_string(nT) +
                          ", got " + S.shape_string());
  if (Vx.rows() != nT || Vx.cols() != nT)
    throw ValidationError("V_x must be " + std::to_string(nT) + "x" + std::to_string(nT) +
                          ", got " + Vx.shape_string());
  const PhiLayout layout(lift);
  LinearConstraintSet set;
  // (X Gamma)_{ij} = sum_c X_{ic} Gamma_{cj}.
  auto emit = [&](int i, int j, auto var) {
    LinearConstraintSet::Row row;
    for (int c = 0; c < nT; ++c) {
      const double g = lift.Gamma(c, j);
      if (g == 0.0) continue;
      const int k = var(i, c);
      if (k >= 0) row.coeffs.emplace_back(k, g);
    }
    if (!row.coeffs.empty()) set.rows.push_back(std::move(row));
  };
  for (int i = 0; i < mT; ++i)
    for (int j = 0; j < nT; ++j)
      if (!S(i, j) && j / lift.n <= i / lift.m)
        emit(i, j, [&](int a, int c) { return layout.u(a, c); });
  for (int i = 0; i < nT; ++i)
    for (int j = 0; j < nT; ++j)
      if (!Vx(i, j) && j / lift.n <= i / lift.n)
        emit(i, j, [&](int a, int c) { return layout.x(a, c); });
  return set;
}

// Ties Phi_u entries along block diagonals: Phi_u[(t+k)m + r, t n + c] equals
// Phi_u[k m + r, c]. Leaves m n T free Phi_u scalars.
inline LinearConstraintSet toeplitz_restriction(int T, int n, int m) {
  detail::require(T > 0 && n > 0 && m > 0, "Toeplitz restriction needs positive T, n, m");
  // Layout of Phi_u variables only matters through PhiLayout; build a dummy lift shape.
  BlockLift shape;
  shape.n = n;
  shape.m = m;
  shape.T = T;
  const PhiLayout layout(shape);
  LinearConstraintSet set;
  for (int k = 0; k < T; ++k)
    for (int t = 1; t + k < T; ++t)
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) {
          LinearConstraintSet::Row row;
          row.coeffs.emplace_back(layout.u((t + k) * m + r, t * n + c), 1.0);
          row.coeffs.emplace_back(layout.u(k * m + r, c), -1.0);
          set.rows.push_back(std::move(row));
        }
  return set;
}

inline void require_lti(const HorizonSystem& sys) {
  if (!sys.is_lti())
    throw UnsupportedError(
        "the Toeplitz restriction needs a time-invariant plant (A_t, B_t constant)");
}

inline LinearConstraintSet toeplitz_restriction(const HorizonSystem& sys) {
  require_lti(sys);
  return toeplitz_restriction(sys.horizon(), sys.state_dim(), sys.input_dim());
}

}  // namespace spregret
