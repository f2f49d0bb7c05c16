#pragma once

// Minimal semidefinite-programming facade.
//
// A problem is a set of scalar variables x with
//   - affine equalities            a_r^T x = b_r
//   - PSD blocks                   F_j(x) = F_j0 + sum_i x_i F_ji  >= 0
//   - objective                    c^T x + ||R0 + sum_i x_i R_i||_F^2   (Frobenius part optional)
//
// Each F_ji is a sum of low-rank symmetric terms coef * sym(u v^T) where u, v
// come from a per-block dictionary of sparse "atoms". Frobenius terms are
// coef * u v^T over a left and a right dictionary. With this representation
// the barrier Hessian tr(W F_i W F_j) only needs the small Gram matrix A^T W A
// of the atoms, so problems whose PSD blocks are a few hundred wide stay cheap.
//
// The backend is a primal log-barrier path-following method with Newton
// centering. Equalities are eliminated up front (x = x0 + N z). A phase-I
// problem finds a strictly feasible start when x0 is not one.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"

namespace spregret::conic {

struct ToleranceConfig {
  double eq = 1e-8;    // max |a_r^T x - b_r|
  double psd = 1e-7;   // min eigenvalue of each PSD block >= -psd
  double gap = 1e-8;   // duality gap / max(1, |objective|)
  int max_newton = 600;
  double barrier_growth = 20.0;
};

enum class Status { optimal, infeasible, unbounded, max_iter };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::infeasible: return "infeasible";
    case Status::unbounded: return "unbounded";
    case Status::max_iter: return "max_iter";
  }
  return "unknown";
}

struct Term {
  int u = 0;
  int v = 0;
  double coef = 0.0;
};

// Symmetric affine matrix expression of fixed dimension.
class PsdBlock {
 public:
  explicit PsdBlock(int dim) : dim_(dim), constant_(Eigen::MatrixXd::Zero(dim, dim)) {
    spregret::detail::require(dim > 0, "PSD block dimension must be positive");
  }

  int dim() const { return dim_; }
  const Eigen::MatrixXd& constant() const { return constant_; }
  int num_atoms() const { return static_cast<int>(atoms_.size()); }
  const Eigen::SparseVector<double>& atom(int k) const { return atoms_.at(static_cast<size_t>(k)); }
  const std::vector<std::pair<int, Term>>& terms() const { return terms_; }

  void set_constant(const Eigen::MatrixXd& F0) {
    spregret::detail::require(F0.rows() == dim_ && F0.cols() == dim_, "PSD constant has wrong size");
    constant_ = 0.5 * (F0 + F0.transpose());
  }

  int add_atom(const Eigen::VectorXd& dense) {
    spregret::detail::require(dense.size() == dim_, "atom has wrong length");
    Eigen::SparseVector<double> s(dim_);
    for (int i = 0; i < dim_; ++i)
      if (dense(i) != 0.0) s.insert(i) = dense(i);
    atoms_.push_back(std::move(s));
    return num_atoms() - 1;
  }

  int add_atom(const Eigen::SparseVector<double>& s) {
    spregret::detail::require(s.size() == dim_, "atom has wrong length");
    atoms_.push_back(s);
    return num_atoms() - 1;
  }

  // e_k, created once per index.
  int unit_atom(int k) {
    spregret::detail::require(k >= 0 && k < dim_, "unit atom index out of range");
    auto it = units_.find(k);
    if (it != units_.end()) return it->second;
    Eigen::SparseVector<double> s(dim_);
    s.insert(k) = 1.0;
    atoms_.push_back(std::move(s));
    units_[k] = num_atoms() - 1;
    return num_atoms() - 1;
  }

  // x_var * coef * (u v^T + v u^T) / 2.
  void add_term(int var, int u, int v, double coef) {
    spregret::detail::require(u >= 0 && u < num_atoms() && v >= 0 && v < num_atoms(),
                    "term references unknown atom");
    if (coef != 0.0) terms_.push_back({var, Term{u, v, coef}});
  }

  // x_var * coef on the diagonal entries begin..end-1 (end < 0: to dim).
  void add_identity(int var, double coef, int begin = 0, int end = -1) {
    if (end < 0) end = dim_;
    spregret::detail::require(0 <= begin && begin < end && end <= dim_,
                              "identity term range out of bounds");
    if (coef != 0.0) ident_.push_back({var, coef, begin, end});
  }
  struct Identity {
    int var;
    double coef;
    int begin, end;
  };
  const std::vector<Identity>& identity_terms() const { return ident_; }

  // x_var * value at (i, j) and (j, i).
  void add_entry(int var, int i, int j, double value) {
    const int a = unit_atom(i), b = unit_atom(j);
    add_term(var, a, b, i == j ? value : 2.0 * value);
  }

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const {
    const int r = num_atoms();
    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(r, r);
    for (const auto& [var, t] : terms_) {
      const double w = 0.5 * t.coef * x(var);
      coef(t.u, t.v) += w;
      coef(t.v, t.u) += w;
    }
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < r; ++k)
      for (Eigen::SparseVector<double>::InnerIterator it(atoms_[static_cast<size_t>(k)]); it; ++it)
        trip.emplace_back(static_cast<int>(it.index()), k, it.value());
    Eigen::SparseMatrix<double> A(dim_, r);
    A.setFromTriplets(trip.begin(), trip.end());
    const Eigen::MatrixXd AC = A * coef;
    Eigen::MatrixXd F = constant_;
    F.noalias() += AC * A.transpose();
    for (const auto& d : ident_)
      F.diagonal().segment(d.begin, d.end - d.begin).array() += d.coef * x(d.var);
    return 0.5 * (F + F.transpose());
  }

 private:
  int dim_;
  Eigen::MatrixXd constant_;
  std::vector<Eigen::SparseVector<double>> atoms_;
  std::map<int, int> units_;
  std::vector<std::pair<int, Term>> terms_;
  std::vector<Identity> ident_;
};

// ||R0 + sum_i x_i R_i||_F^2 with R_i = sum coef * u v^T.
class FrobeniusObjective {
 public:
  FrobeniusObjective(int rows, int cols)
      : rows_(rows), cols_(cols), constant_(Eigen::MatrixXd::Zero(rows, cols)) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const Eigen::MatrixXd& constant() const { return constant_; }
  const std::vector<Eigen::SparseVector<double>>& left_atoms() const { return left_; }
  const std::vector<Eigen::SparseVector<double>>& right_atoms() const { return right_; }
  const std::vector<std::pair<int, Term>>& terms() const { return terms_; }

  void set_constant(const Eigen::MatrixXd& R0) {
    spregret::detail::require(R0.rows() == rows_ && R0.cols() == cols_, "Frobenius constant has wrong size");
    constant_ = R0;
  }
  int add_left_atom(const Eigen::VectorXd& u) { return push(left_, u, rows_); }
  int add_right_atom(const Eigen::VectorXd& v) { return push(right_, v, cols_); }
  void add_term(int var, int left, int right, double coef) {
    spregret::detail::require(left >= 0 && left < static_cast<int>(left_.size()) && right >= 0 &&
                        right < static_cast<int>(right_.size()),
                    "Frobenius term references unknown atom");
    if (coef != 0.0) terms_.push_back({var, Term{left, right, coef}});
  }

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(left_.size()),
                                                 static_cast<Eigen::Index>(right_.size()));
    for (const auto& [var, t] : terms_) coef(t.u, t.v) += t.coef * x(var);
    Eigen::MatrixXd R = constant_;
    R.noalias() += stack(left_, rows_) * (coef * stack(right_, cols_).transpose());
    return R;
  }

  // Atoms as columns of a sparse matrix.
  static Eigen::SparseMatrix<double> stack(const std::vector<Eigen::SparseVector<double>>& atoms,
                                           int len) {
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t k = 0; k < atoms.size(); ++k)
      for (Eigen::SparseVector<double>::InnerIterator it(atoms[k]); it; ++it)
        trip.emplace_back(static_cast<int>(it.index()), static_cast<int>(k), it.value());
    Eigen::SparseMatrix<double> M(len, static_cast<int>(atoms.size()));
    M.setFromTriplets(trip.begin(), trip.end());
    return M;
  }

 private:
  static int push(std::vector<Eigen::SparseVector<double>>& dict, const Eigen::VectorXd& d,
                  int len) {
    spregret::detail::require(d.size() == len, "Frobenius atom has wrong length");
    Eigen::SparseVector<double> s(len);
    for (int i = 0; i < len; ++i)
      if (d(i) != 0.0) s.insert(i) = d(i);
    dict.push_back(std::move(s));
    return static_cast<int>(dict.size()) - 1;
  }

  int rows_, cols_;
  Eigen::MatrixXd constant_;
  std::vector<Eigen::SparseVector<double>> left_, right_;
  std::vector<std::pair<int, Term>> terms_;
};

struct Equality {
  std::vector<std::pair<int, double>> coeffs;
  double rhs = 0.0;
};

class SdpProblem {
 public:
  int add_variable(std::string name = {}) {
    names_.push_back(name.empty() ? "x" + std::to_string(names_.size()) : std::move(name));
    objective_.push_back(0.0);
    return num_variables() - 1;
  }
  int num_variables() const { return static_cast<int>(names_.size()); }

  // Optional starting value. Points that are strictly feasible for the PSD
  // blocks let the solver skip phase I.
  void set_start(int var, double value) {
    check_var(var);
    start_.resize(names_.size(), std::numeric_limits<double>::quiet_NaN());
    start_[static_cast<size_t>(var)] = value;
  }
  std::optional<double> start(int var) const {
    if (static_cast<size_t>(var) >= start_.size() || std::isnan(start_[static_cast<size_t>(var)]))
      return std::nullopt;
    return start_[static_cast<size_t>(var)];
  }
  const std::string& variable_name(int i) const { return names_.at(static_cast<size_t>(i)); }

  void add_equality(std::vector<std::pair<int, double>> coeffs, double rhs) {
    for (const auto& [v, a] : coeffs) check_var(v);
    equalities_.push_back({std::move(coeffs), rhs});
  }
  const std::vector<Equality>& equalities() const { return equalities_; }

  // References stay valid: blocks live in a deque.
  PsdBlock& add_psd_block(int dim) { return blocks_.emplace_back(dim); }
  const std::deque<PsdBlock>& psd_blocks() const { return blocks_; }

  void set_objective(int var, double coef) {
    check_var(var);
    objective_[static_cast<size_t>(var)] = coef;
  }
  Eigen::VectorXd linear_objective() const {
    return Eigen::Map<const Eigen::VectorXd>(objective_.data(),
                                             static_cast<Eigen::Index>(objective_.size()));
  }

  FrobeniusObjective& set_frobenius_objective(int rows, int cols) {
    frobenius_.clear();
    return frobenius_.emplace_back(rows, cols);
  }
  const FrobeniusObjective* frobenius() const {
    return frobenius_.empty() ? nullptr : &frobenius_.front();
  }

  // Self-describing dump for debugging.
  io::json to_json() const {
    io::json j;
    j["variables"] = names_;
    j["objective"] = objective_;
    io::json eqs = io::json::array();
    for (size_t r = 0; r < equalities_.size(); ++r)
      for (const auto& [v, a] : equalities_[r].coeffs) eqs.push_back({r, v, a});
    j["equality_triplets"] = eqs;
    io::json rhs = io::json::array();
    for (const auto& e : equalities_) rhs.push_back(e.rhs);
    j["equality_rhs"] = rhs;
    auto atoms_json = [](const std::vector<Eigen::SparseVector<double>>& atoms) {
      io::json arr = io::json::array();
      for (const auto& a : atoms) {
        io::json entries = io::json::array();
        for (Eigen::SparseVector<double>::InnerIterator it(a); it; ++it)
          entries.push_back({it.index(), it.value()});
        arr.push_back(entries);
      }
      return arr;
    };
    auto terms_json = [](const std::vector<std::pair<int, Term>>& terms) {
      io::json arr = io::json::array();
      for (const auto& [v, t] : terms) arr.push_back({v, t.u, t.v, t.coef});
      return arr;
    };
    io::json blocks = io::json::array();
    for (const auto& b : blocks_) {
      std::vector<Eigen::SparseVector<double>> atoms;
      for (int k = 0; k < b.num_atoms(); ++k) atoms.push_back(b.atom(k));
      blocks.push_back({{"dim", b.dim()},
                        {"constant", io::matrix_to_json(b.constant())},
                        {"atoms", atoms_json(atoms)},
                        {"terms", terms_json(b.terms())},
                        {"identity_terms", [&] {
                           io::json arr = io::json::array();
                           for (const auto& d : b.identity_terms())
                             arr.push_back({d.var, d.coef, d.begin, d.end});
                           return arr;
                         }()},
                        {"term_meaning", "x[var] * coef * (u v^T + v u^T) / 2"}});
    }
    j["psd_blocks"] = blocks;
    if (const auto* f = frobenius()) {
      j["frobenius"] = {{"rows", f->rows()},
                        {"cols", f->cols()},
                        {"constant", io::matrix_to_json(f->constant())},
                        {"left_atoms", atoms_json(f->left_atoms())},
                        {"right_atoms", atoms_json(f->right_atoms())},
                        {"terms", terms_json(f->terms())},
                        {"term_meaning", "x[var] * coef * u v^T"}};
    }
    return j;
  }

 private:
  void check_var(int v) const {
    if (v < 0 || v >= num_variables())
      throw ValidationError("reference to undeclared variable " + std::to_string(v));
  }

  std::vector<std::string> names_;
  std::vector<double> objective_;
  std::vector<double> start_;
  std::vector<Equality> equalities_;
  std::deque<PsdBlock> blocks_;
  std::deque<FrobeniusObjective> frobenius_;
};

struct SdpSolution {
  Status status = Status::max_iter;
  Eigen::VectorXd x;
  double objective = 0.0;
  double dual_bound = -std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();  // absolute
  double relative_gap = std::numeric_limits<double>::infinity();
  double eq_residual = 0.0;
  std::vector<double> min_eigenvalues;
  int iterations = 0;
  int reduced_variables = 0;
  std::string message;

  io::json to_json() const {
    return {{"status", to_string(status)},   {"objective", objective},
            {"dual_bound", dual_bound},      {"gap", gap},
            {"relative_gap", relative_gap},  {"eq_residual", eq_residual},
            {"min_eigenvalues", min_eigenvalues}, {"newton_iterations", iterations},
            {"reduced_variables", reduced_variables}, {"message", message}};
  }
};

namespace detail {

// x = x0 + N z.
struct Elimination {
  bool consistent = true;
  double residual = 0.0;
  Eigen::VectorXd x0;
  Eigen::SparseMatrix<double> N;
};

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

inline Elimination eliminate_equalities(int nvar, const std::vector<Equality>& eqs, double tol) {
  Elimination out;
  out.x0 = Eigen::VectorXd::Zero(nvar);

  // Merge duplicate coefficients within a row, drop exact-zero coefficients.
  std::vector<Equality> rows;
  rows.reserve(eqs.size());
  for (const auto& e : eqs) {
    std::map<int, double> acc;
    for (const auto& [v, a] : e.coeffs) acc[v] += a;
    Equality r;
    r.rhs = e.rhs;
    for (const auto& [v, a] : acc)
      if (a != 0.0) r.coeffs.emplace_back(v, a);
    if (r.coeffs.empty()) {
      out.residual = std::max(out.residual, std::abs(r.rhs));
      continue;
    }
    rows.push_back(std::move(r));
  }
  // Exact duplicates carry no information.
  std::sort(rows.begin(), rows.end(), [](const Equality& a, const Equality& b) {
    if (a.coeffs != b.coeffs) return a.coeffs < b.coeffs;
    return a.rhs < b.rhs;
  });
  rows.erase(std::unique(rows.begin(), rows.end(),
                         [](const Equality& a, const Equality& b) {
                           return a.coeffs == b.coeffs && a.rhs == b.rhs;
                         }),
             rows.end());

  UnionFind uf(nvar);
  for (const auto& r : rows)
    for (size_t k = 1; k < r.coeffs.size(); ++k) uf.unite(r.coeffs[0].first, r.coeffs[k].first);

  std::map<int, std::vector<int>> comp_vars;
  for (int v = 0; v < nvar; ++v) comp_vars[uf.find(v)].push_back(v);
  std::map<int, std::vector<size_t>> comp_rows;
  for (size_t r = 0; r < rows.size(); ++r) comp_rows[uf.find(rows[r].coeffs[0].first)].push_back(r);

  std::vector<Eigen::Triplet<double>> trip;
  int next_col = 0;
  for (const auto& [root, vars] : comp_vars) {
    auto it = comp_rows.find(root);
    if (it == comp_rows.end()) {
      for (int v : vars) trip.emplace_back(v, next_col++, 1.0);
      continue;
    }
    const auto& rids = it->second;
    std::map<int, int> local;
    for (size_t k = 0; k < vars.size(); ++k) local[vars[k]] = static_cast<int>(k);
    const auto nv = static_cast<Eigen::Index>(vars.size());
    const auto nr = static_cast<Eigen::Index>(rids.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nr, nv);
    Eigen::VectorXd b(nr);
    for (Eigen::Index r = 0; r < nr; ++r) {
      const auto& row = rows[rids[static_cast<size_t>(r)]];
      for (const auto& [v, a] : row.coeffs) A(r, local[v]) = a;
      b(r) = row.rhs;
    }
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    cod.setThreshold(1e-11);
    const Eigen::VectorXd xc = cod.solve(b);
    const double res = (A * xc - b).cwiseAbs().maxCoeff();
    out.residual = std::max(out.residual, res);
    if (res > tol * std::max(1.0, b.cwiseAbs().maxCoeff()) * scale) out.consistent = false;
    for (Eigen::Index k = 0; k < nv; ++k) out.x0(vars[static_cast<size_t>(k)]) = xc(k);

    // Null space of A from a pivoted QR of A^T.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
    qr.setThreshold(1e-11);
    const Eigen::Index rank = qr.rank();
    if (rank < nv) {
      const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(nv, nv);
      for (Eigen::Index c = rank; c < nv; ++c) {
        for (Eigen::Index k = 0; k < nv; ++k)
          if (std::abs(Q(k, c)) > 1e-15) trip.emplace_back(vars[static_cast<size_t>(k)], next_col, Q(k, c));
        ++next_col;
      }
    }
  }
  out.N.resize(nvar, next_col);
  out.N.setFromTriplets(trip.begin(), trip.end());
  out.N.makeCompressed();
  return out;
}

// A PSD block evaluated at x = x0 + N z. Terms stay in the original
// coordinates (variable index -> terms); N is applied to derivatives, which
// keeps term lists short even when the null-space basis is dense.
struct ReducedBlock {
  int dim = 0;
  Eigen::MatrixXd constant;                // F(x0)
  Eigen::SparseMatrix<double> atoms;       // dim x r
  std::vector<std::vector<Term>> terms;    // per original variable
  std::vector<int> active;                 // variables with terms
  std::vector<PsdBlock::Identity> ident;   // x_var * coef * I on a diagonal range
};

struct ReducedProblem {
  int nz = 0;
  Eigen::SparseMatrix<double> N;     // nx x nz
  Eigen::VectorXd c;                 // linear objective (reduced)
  Eigen::MatrixXd P;                 // quadratic objective 0.5 z^T P z (empty when absent)
  Eigen::VectorXd q;                 // linear part of the quadratic objective
  double constant = 0.0;
  std::vector<ReducedBlock> blocks;

  int barrier_degree() const {
    int d = 0;
    for (const auto& b : blocks) d += b.dim;
    return d;
  }
  double objective(const Eigen::VectorXd& z) const {
    double f = constant + c.dot(z);
    if (P.size() > 0) f += 0.5 * z.dot(P * z) + q.dot(z);
    return f;
  }
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z) const {
    Eigen::VectorXd g = c;
    if (P.size() > 0) g += P * z + q;
    return g;
  }
};

inline void finalize_block(ReducedBlock& b) {
  b.active.clear();
  for (size_t k = 0; k < b.terms.size(); ++k)
    if (!b.terms[k].empty()) b.active.push_back(static_cast<int>(k));
}

// F = F(x0) + A * Coef(dx) * A^T with dx = N z.
inline Eigen::MatrixXd block_value(const ReducedBlock& b, const Eigen::VectorXd& dx) {
  const auto r = b.atoms.cols();
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(r, r);
  for (int k : b.active) {
    const double xk = dx(k);
    if (xk == 0.0) continue;
    for (const auto& t : b.terms[static_cast<size_t>(k)]) {
      coef(t.u, t.v) += 0.5 * t.coef * xk;
      coef(t.v, t.u) += 0.5 * t.coef * xk;
    }
  }
  const Eigen::MatrixXd AC = b.atoms * coef;  // dim x r
  Eigen::MatrixXd F = b.constant;
  F.noalias() += AC * b.atoms.transpose();
  for (const auto& d : b.ident)
    F.diagonal().segment(d.begin, d.end - d.begin).array() += d.coef * dx(d.var);
  return 0.5 * (F + F.transpose());
}

// Sum of log det over blocks; false when some block is not PD.
inline bool barrier_value(const ReducedProblem& p, const Eigen::VectorXd& z, double& logdet) {
  logdet = 0.0;
  const Eigen::VectorXd dx = p.N * z;
  for (const auto& b : p.blocks) {
    Eigen::LLT<Eigen::MatrixXd> llt(block_value(b, dx));
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = llt.matrixLLT().diagonal();
    if (d.minCoeff() <= 0.0 || !std::isfinite(d.sum())) return false;
    logdet += 2.0 * d.array().log().sum();
  }
  return true;
}

// Gradient and Hessian of -sum log det F_j(x0 + N z).
inline void barrier_derivatives(const ReducedProblem& p, const Eigen::VectorXd& z,
                                Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
  const auto nx = p.N.rows();
  const Eigen::VectorXd dx = p.N * z;
  Eigen::VectorXd gx = Eigen::VectorXd::Zero(nx);
  Eigen::MatrixXd hx = Eigen::MatrixXd::Zero(nx, nx);
  for (const auto& b : p.blocks) {
    const Eigen::MatrixXd F = block_value(b, dx);
    Eigen::LLT<Eigen::MatrixXd> llt(F);
    const Eigen::MatrixXd WA = llt.solve(Eigen::MatrixXd(b.atoms));
    Eigen::MatrixXd Q = b.atoms.transpose() * WA;
    Q = 0.5 * (Q + Q.transpose());
    if (!b.ident.empty()) {
      // tr(W D_k W D_l) = sum of W(i, j)^2 over the two ranges;
      // tr(W D_k W S_l) = sum_t c_t (WA_R^T WA_R)(u_t, v_t).
      const Eigen::MatrixXd W = llt.solve(Eigen::MatrixXd::Identity(b.dim, b.dim));
      for (size_t ik = 0; ik < b.ident.size(); ++ik) {
        const auto& dk = b.ident[ik];
        const int lk = dk.end - dk.begin;
        gx(dk.var) -= dk.coef * W.diagonal().segment(dk.begin, lk).sum();
        for (size_t il = 0; il < b.ident.size(); ++il) {
          const auto& dl = b.ident[il];
          hx(dk.var, dl.var) += dk.coef * dl.coef *
              W.block(dk.begin, dl.begin, lk, dl.end - dl.begin).squaredNorm();
        }
        if (b.active.empty()) continue;
        const Eigen::MatrixXd WAr = WA.middleRows(dk.begin, lk);
        const Eigen::MatrixXd Q2 = WAr.transpose() * WAr;
        for (int l : b.active) {
          double h = 0.0;
          for (const auto& t : b.terms[static_cast<size_t>(l)]) h += t.coef * Q2(t.u, t.v);
          hx(dk.var, l) += dk.coef * h;
          hx(l, dk.var) += dk.coef * h;
        }
      }
    }
    const auto na = b.active.size();
    for (size_t ik = 0; ik < na; ++ik) {
      const int k = b.active[ik];
      const auto& tk = b.terms[static_cast<size_t>(k)];
      double g = 0.0;
      for (const auto& s : tk) g += s.coef * Q(s.u, s.v);
      gx(k) -= g;
      for (size_t il = ik; il < na; ++il) {
        const int l = b.active[il];
        double h = 0.0;
        for (const auto& s : tk)
          for (const auto& t : b.terms[static_cast<size_t>(l)])
            h += s.coef * t.coef * (Q(s.v, t.u) * Q(t.v, s.u) + Q(s.v, t.v) * Q(s.u, t.u));
        hx(k, l) += 0.5 * h;
        if (l != k) hx(l, k) += 0.5 * h;
      }
    }
  }
  grad = p.N.transpose() * gx;
  const Eigen::MatrixXd HN = hx * p.N;
  hess = p.N.transpose() * HN;
  hess = 0.5 * (hess + hess.transpose());
}

inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() == Eigen::Success) {
    Eigen::VectorXd d = llt.solve(-g);
    if (d.allFinite()) return d;
  }
  const double scale = std::max(1e-300, H.diagonal().cwiseAbs().maxCoeff());
  for (double ridge = 1e-14; ridge < 1e2; ridge *= 100.0) {
    Eigen::MatrixXd Hr = H;
    Hr.diagonal().array() += ridge * scale;
    Eigen::LLT<Eigen::MatrixXd> l2(Hr);
    if (l2.info() == Eigen::Success) return l2.solve(-g);
  }
  return -g / scale;
}

struct BarrierResult {
  Status status = Status::max_iter;
  Eigen::VectorXd z;
  double t = 0.0;
  int iterations = 0;
  bool stopped_early = false;
  Eigen::VectorXd z_prev;  // last iterate before the early stop fired
};

// Path following from a strictly feasible z0. `early_stop` is polled after
// every accepted Newton step (used by phase I).
template <class EarlyStop>
BarrierResult barrier_minimize(const ReducedProblem& p, Eigen::VectorXd z,
                               const ToleranceConfig& tol, int iteration_budget,
                               EarlyStop early_stop) {
  BarrierResult res;
  const double D = p.barrier_degree();
  double logdet = 0.0;
  if (!barrier_value(p, z, logdet)) {
    res.status = Status::infeasible;
    res.z = z;
    return res;
  }

  // Initial t balancing objective and barrier gradients.
  Eigen::VectorXd gb;
  Eigen::MatrixXd Hb;
  barrier_derivatives(p, z, gb, Hb);
  const Eigen::VectorXd gf = p.objective_gradient(z);
  double t = 1.0;
  if (gf.squaredNorm() > 0.0) {
    const double cand = -gf.dot(gb) / gf.squaredNorm();
    t = std::clamp(cand > 0.0 ? cand : D / std::max(1.0, std::abs(p.objective(z))), 1e-6, 1e6);
  }

  int iters = 0;
  const double big = 1e14;
  bool have_derivs = true;
  for (;;) {
    // Centering.
    for (;;) {
      if (iters >= iteration_budget) {
        res.status = Status::max_iter;
        res.z = z;
        res.t = t;
        res.iterations = iters;
        return res;
      }
      if (!have_derivs) barrier_derivatives(p, z, gb, Hb);
      have_derivs = false;
      Eigen::VectorXd g = t * p.objective_gradient(z) + gb;
      Eigen::MatrixXd H = Hb;
      if (p.P.size() > 0) H += t * p.P;
      const Eigen::VectorXd dz = newton_direction(H, g);
      const double dec2 = -g.dot(dz);
      ++iters;
      if (!(dec2 > 1e-10)) {
        have_derivs = true;  // z unchanged
        break;
      }
      const double phi0 = t * p.objective(z) - logdet;
      double step = 1.0;
      bool accepted = false;
      bool stalled = false;
      for (int ls = 0; ls < 80; ++ls) {
        const Eigen::VectorXd zn = z + step * dz;
        double ld = 0.0;
        if (barrier_value(p, zn, ld)) {
          const double phi = t * p.objective(zn) - ld;
          // The slack absorbs roundoff in phi, which is O(t |f|) at high t.
          const double slack = 1e-13 * (std::abs(phi0) + 1.0);
          if (phi <= phi0 - 0.01 * step * dec2 + slack) {
            stalled = phi0 - phi <= 2.0 * slack;
            z = zn;
            logdet = ld;
            accepted = true;
            break;
          }
        }
        step *= 0.5;
      }
      if (!accepted) {  // numerically centred
        have_derivs = true;
        break;
      }
      if (early_stop(z)) {
        res.z_prev = z - step * dz;
        res.status = Status::optimal;
        res.stopped_early = true;
        res.z = z;
        res.t = t;
        res.iterations = iters;
        return res;
      }
      if (!z.allFinite() || z.cwiseAbs().maxCoeff() > big || p.objective(z) < -big) {
        res.status = Status::unbounded;
        res.z = z;
        res.t = t;
        res.iterations = iters;
        return res;
      }
      // Roundoff-level progress: as centred as the arithmetic allows.
      if (dec2 < 1e-9 || stalled || step * std::sqrt(dec2) < 1e-12) break;
    }
    const double f = p.objective(z);
    if (D / t <= tol.gap * std::max(1.0, std::abs(f))) break;
    t *= tol.barrier_growth;
  }
  res.status = Status::optimal;
  res.z = z;
  res.t = t;
  res.iterations = iters;
  return res;
}

inline double min_eigenvalue(const Eigen::MatrixXd& F) {
  if (F.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(F, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Dense Gram-type sum over per-variable term lists:
// out(k, l) = sum_{s in k, t in l} s.coef t.coef GL(s.u, t.u) GR(s.v, t.v).
inline Eigen::MatrixXd frobenius_quadratic(const std::vector<std::vector<Term>>& terms,
                                           const std::vector<int>& active,
                                           const Eigen::MatrixXd& GL, const Eigen::MatrixXd& GR,
                                           Eigen::Index nx) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(nx, nx);
  for (size_t ik = 0; ik < active.size(); ++ik) {
    const int k = active[ik];
    for (size_t il = ik; il < active.size(); ++il) {
      const int l = active[il];
      double h = 0.0;
      for (const auto& s : terms[static_cast<size_t>(k)])
        for (const auto& t : terms[static_cast<size_t>(l)])
          h += s.coef * t.coef * GL(s.u, t.u) * GR(s.v, t.v);
      P(k, l) = h;
      P(l, k) = h;
    }
  }
  return P;
}

}  // namespace detail

inline SdpSolution solve(const SdpProblem& problem, const ToleranceConfig& tol = {}) {
  SdpSolution sol;
  const int nvar = problem.num_variables();
  for (const auto& b : problem.psd_blocks())
    for (const auto& [v, t] : b.terms())
      if (v < 0 || v >= nvar) throw ValidationError("PSD term references undeclared variable");
  for (const auto& b : problem.psd_blocks())
    for (const auto& d : b.identity_terms())
      if (d.var < 0 || d.var >= nvar)
        throw ValidationError("PSD identity term references undeclared variable");
  if (const auto* f = problem.frobenius())
    for (const auto& [v, t] : f->terms())
      if (v < 0 || v >= nvar) throw ValidationError("Frobenius term references undeclared variable");

  const auto elim = detail::eliminate_equalities(nvar, problem.equalities(), tol.eq);
  sol.x = elim.x0;
  if (!elim.consistent) {
    sol.status = Status::infeasible;
    sol.eq_residual = elim.residual;
    sol.message = "equality constraints are inconsistent";
    return sol;
  }
  const Eigen::SparseMatrix<double>& N = elim.N;
  const int nz = static_cast<int>(N.cols());
  sol.reduced_variables = nz;

  detail::ReducedProblem rp;
  rp.nz = nz;
  rp.N = N;
  const Eigen::VectorXd c = problem.linear_objective();
  rp.c = N.transpose() * c;
  rp.constant = c.dot(elim.x0);

  for (const auto& b : problem.psd_blocks()) {
    detail::ReducedBlock rb;
    rb.dim = b.dim();
    rb.constant = b.evaluate(elim.x0);
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < b.num_atoms(); ++k)
      for (Eigen::SparseVector<double>::InnerIterator it(b.atom(k)); it; ++it)
        trip.emplace_back(static_cast<int>(it.index()), k, it.value());
    rb.atoms.resize(b.dim(), b.num_atoms());
    rb.atoms.setFromTriplets(trip.begin(), trip.end());
    rb.terms.assign(static_cast<size_t>(nvar), {});
    for (const auto& [v, t] : b.terms()) rb.terms[static_cast<size_t>(v)].push_back(t);
    rb.ident = b.identity_terms();
    detail::finalize_block(rb);
    rp.blocks.push_back(std::move(rb));
  }

  if (const auto* f = problem.frobenius()) {
    // Lower ||R(x0 + N z)||_F^2 to 0.5 z^T P z + q^T z + const.
    const Eigen::SparseMatrix<double> U = FrobeniusObjective::stack(f->left_atoms(), f->rows());
    const Eigen::SparseMatrix<double> V = FrobeniusObjective::stack(f->right_atoms(), f->cols());
    const Eigen::MatrixXd R0 = f->evaluate(elim.x0);
    const Eigen::MatrixXd GU = Eigen::MatrixXd(U.transpose() * U);
    const Eigen::MatrixXd GV = Eigen::MatrixXd(V.transpose() * V);
    const Eigen::MatrixXd UR0V = U.transpose() * (R0 * V);
    std::vector<std::vector<Term>> fterms(static_cast<size_t>(nvar));
    for (const auto& [v, t] : f->terms()) fterms[static_cast<size_t>(v)].push_back(t);
    std::vector<int> active;
    for (int k = 0; k < nvar; ++k)
      if (!fterms[static_cast<size_t>(k)].empty()) active.push_back(k);
    Eigen::VectorXd qx = Eigen::VectorXd::Zero(nvar);
    for (int k : active)
      for (const auto& s : fterms[static_cast<size_t>(k)]) qx(k) += 2.0 * s.coef * UR0V(s.u, s.v);
    const Eigen::MatrixXd Px = 2.0 * detail::frobenius_quadratic(fterms, active, GU, GV, nvar);
    const Eigen::MatrixXd PN = Px * N;
    rp.P = N.transpose() * PN;
    rp.P = 0.5 * (rp.P + rp.P.transpose());
    rp.q = N.transpose() * qx;
    rp.constant += R0.squaredNorm();
  }

  auto finish = [&](const Eigen::VectorXd& z, Status st, double gap, int iters) {
    sol.status = st;
    sol.x = elim.x0 + N * z;
    sol.iterations = iters;
    sol.objective = c.dot(sol.x);
    if (const auto* f = problem.frobenius()) sol.objective += f->evaluate(sol.x).squaredNorm();
    sol.gap = gap;
    sol.relative_gap = gap / std::max(1.0, std::abs(sol.objective));
    sol.dual_bound = sol.objective - gap;
    double eqres = elim.residual;
    for (const auto& e : problem.equalities()) {
      double s = -e.rhs;
      for (const auto& [v, a] : e.coeffs) s += a * sol.x(v);
      eqres = std::max(eqres, std::abs(s));
    }
    sol.eq_residual = eqres;
    sol.min_eigenvalues.clear();
    for (const auto& b : problem.psd_blocks())
      sol.min_eigenvalues.push_back(detail::min_eigenvalue(b.evaluate(sol.x)));
    if (st == Status::optimal) {
      const bool psd_ok = std::all_of(sol.min_eigenvalues.begin(), sol.min_eigenvalues.end(),
                                      [&](double e) { return e >= -tol.psd; });
      if (eqres > tol.eq || !psd_ok || sol.relative_gap > tol.gap) {
        sol.status = Status::max_iter;
        sol.message = "tolerances not met at termination";
      }
    }
    return sol;
  };

  // Pure quadratic / linear program: closed form.
  if (rp.blocks.empty()) {
    if (nz == 0) return finish(Eigen::VectorXd::Zero(0), Status::optimal, 0.0, 0);
    if (rp.P.size() == 0) {
      if (rp.c.cwiseAbs().maxCoeff() > 0.0) {
        sol.message = "linear objective with free variables and no cone";
        return finish(Eigen::VectorXd::Zero(nz), Status::unbounded, 0.0, 0);
      }
      return finish(Eigen::VectorXd::Zero(nz), Status::optimal, 0.0, 0);
    }
    const Eigen::VectorXd rhs = -(rp.c + rp.q);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(rp.P);
    Eigen::VectorXd z;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      z = ldlt.solve(rhs);
    } else {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(rp.P);
      z = cod.solve(rhs);
      if ((rp.P * z - rhs).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff())) {
        sol.message = "objective decreases along a recession direction";
        return finish(z, Status::unbounded, 0.0, 0);
      }
    }
    return finish(z, Status::optimal, 0.0, 1);
  }

  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(nz);
  {
    // N has orthonormal columns, so N^T (x_start - x0) is the closest
    // affine-feasible point to the requested start.
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(nvar);
    bool any = false;
    for (int v = 0; v < nvar; ++v)
      if (const auto s0 = problem.start(v)) {
        dx(v) = *s0 - elim.x0(v);
        any = true;
      }
    if (any) z0 = N.transpose() * dx;
  }
  int used = 0;
  double ld = 0.0;
  if (!detail::barrier_value(rp, z0, ld)) {
    // Phase I: minimise s subject to F_j(x) + s I > 0, with s appended as an
    // extra original variable mapped one-to-one to an extra reduced one.
    detail::ReducedProblem ph;
    ph.nz = nz + 1;
    {
      std::vector<Eigen::Triplet<double>> trip;
      for (int k = 0; k < N.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(N, k); it; ++it)
          trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trip.emplace_back(nvar, nz, 1.0);
      ph.N.resize(nvar + 1, nz + 1);
      ph.N.setFromTriplets(trip.begin(), trip.end());
    }
    ph.c = Eigen::VectorXd::Zero(nz + 1);
    ph.c(nz) = 1.0;
    double s0 = 0.0;
    const Eigen::VectorXd dx0 = N * z0;
    for (const auto& b : rp.blocks) {
      detail::ReducedBlock pb = b;
      s0 = std::max(s0, -detail::min_eigenvalue(detail::block_value(b, dx0)));
      pb.terms.emplace_back();
      pb.ident.push_back({nvar, 1.0, 0, b.dim});
      detail::finalize_block(pb);
      ph.blocks.push_back(std::move(pb));
    }
    Eigen::VectorXd w0 = Eigen::VectorXd::Zero(nz + 1);
    w0.head(nz) = z0;
    w0(nz) = s0 + 1.0;
    auto below_zero = [nz](const Eigen::VectorXd& w) { return w(nz) < 0.0; };
    // A small proximal term keeps the Newton system regular along directions
    // that trade z against the slack; it is dropped before declaring
    // infeasibility.
    detail::BarrierResult r1;
    for (double eps : {1e-6, 0.0}) {
      ph.P = Eigen::MatrixXd::Zero(nz + 1, nz + 1);
      ph.q = Eigen::VectorXd::Zero(nz + 1);
      if (eps > 0.0) {
        ph.P.diagonal().head(nz).setConstant(eps);
        ph.q.head(nz) = -eps * w0.head(nz);
      }
      r1 = detail::barrier_minimize(ph, w0, tol, tol.max_newton - used, below_zero);
      used += r1.iterations;
      if (r1.stopped_early || r1.status == Status::unbounded) break;
      w0 = r1.z;
      double ldw = 0.0;
      if (!detail::barrier_value(ph, w0, ldw)) break;
    }
    if (r1.stopped_early) {
      // Pull back along the last step so the starting point is not pushed far
      // out by a long Newton step: any point of the segment with negative
      // slack is strictly feasible.
      const Eigen::VectorXd& a = r1.z_prev;
      const Eigen::VectorXd& b = r1.z;
      const double target = -std::min(-b(nz), std::max(1.0, std::abs(a(nz))));
      const double alpha = (a(nz) - target) / (a(nz) - b(nz));
      r1.z = a + std::clamp(alpha, 0.0, 1.0) * (b - a);
    }
    if (!r1.stopped_early) {
      if (r1.status == Status::optimal && r1.z(nz) > tol.psd) {
        sol.message = "phase I: no feasible point (min slack " + std::to_string(r1.z(nz)) + ")";
        return finish(r1.z.head(nz), Status::infeasible, 0.0, used);
      }
      if (r1.status == Status::optimal) {
        sol.message = "phase I: feasible set has no strict interior";
        return finish(r1.z.head(nz), Status::infeasible, 0.0, used);
      }
      sol.message = "phase I did not converge";
      return finish(r1.z.head(nz), Status::max_iter, 0.0, used);
    }
    z0 = r1.z.head(nz);
  }

  auto never = [](const Eigen::VectorXd&) { return false; };
  auto r2 = detail::barrier_minimize(rp, z0, tol, tol.max_newton - used, never);
  used += r2.iterations;
  const double gap = r2.t > 0.0 ? rp.barrier_degree() / r2.t : std::numeric_limits<double>::infinity();
  if (r2.status == Status::unbounded) sol.message = "objective unbounded below";
  if (r2.status == Status::max_iter) sol.message = "Newton iteration budget exhausted";
  return finish(r2.z, r2.status, gap, used);
}

}  // namespace spregret::conic
