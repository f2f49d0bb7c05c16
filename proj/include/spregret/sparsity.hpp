#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"

namespace spregret {

// Spatio-temporal block grid of a pattern: `T` time blocks of
// `row_block` x `col_block` entries each.
struct BlockMeta {
  int row_block = 1;
  int col_block = 1;
  int T = 1;

  friend bool operator==(const BlockMeta&, const BlockMeta&) = default;
};

// Binary matrix describing an information structure (controller pattern S,
// state-map pattern V_x, plant structure Delta, ...).
class SparsityPattern {
 public:
  SparsityPattern() = default;
  SparsityPattern(int rows, int cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(static_cast<size_t>(rows) * cols, fill ? 1 : 0) {
    detail::require(rows >= 0 && cols >= 0, "pattern dimensions must be non-negative");
  }

  static SparsityPattern zeros(int rows, int cols) { return {rows, cols, false}; }
  static SparsityPattern ones(int rows, int cols) { return {rows, cols, true}; }
  static SparsityPattern identity(int n) {
    SparsityPattern p(n, n);
    for (int i = 0; i < n; ++i) p.set(i, i);
    return p;
  }
  // All-ones lower-triangular T x T.
  static SparsityPattern tril(int T) {
    SparsityPattern p(T, T);
    for (int i = 0; i < T; ++i)
      for (int j = 0; j <= i; ++j) p.set(i, j);
    return p;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  bool operator()(int i, int j) const { return bits_[index(i, j)] != 0; }
  void set(int i, int j, bool v = true) { bits_[index(i, j)] = v ? 1 : 0; }

  const std::optional<BlockMeta>& block_meta() const { return meta_; }
  void set_block_meta(BlockMeta meta) {
    detail::require(meta.row_block * meta.T == rows_ && meta.col_block * meta.T == cols_,
                    "block_meta does not tile the pattern");
    meta_ = meta;
  }

  // card(X): number of ones.
  int card() const {
    int c = 0;
    for (auto b : bits_) c += b;
    return c;
  }

  // Partial order X <= Y (entrywise).
  bool leq(const SparsityPattern& other) const {
    require_same_shape(other);
    for (size_t k = 0; k < bits_.size(); ++k)
      if (bits_[k] > other.bits_[k]) return false;
    return true;
  }

  SparsityPattern operator|(const SparsityPattern& other) const {
    require_same_shape(other);
    SparsityPattern out = *this;
    for (size_t k = 0; k < bits_.size(); ++k) out.bits_[k] |= other.bits_[k];
    return out;
  }

  friend bool operator==(const SparsityPattern& a, const SparsityPattern& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.bits_ == b.bits_;
  }

  Eigen::MatrixXd to_matrix() const {
    Eigen::MatrixXd M(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) M(i, j) = (*this)(i, j) ? 1.0 : 0.0;
    return M;
  }

  // True when every one lies on or below the block diagonal of `meta`.
  bool is_lower_block_triangular(const BlockMeta& meta) const {
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j)
        if ((*this)(i, j) && j / meta.col_block > i / meta.row_block) return false;
    return true;
  }

  // Compact fixture form: one line of 0/1 characters per row.
  std::string to_text() const {
    std::string s;
    s.reserve(static_cast<size_t>(rows_) * (cols_ + 1));
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) s.push_back((*this)(i, j) ? '1' : '0');
      s.push_back('\n');
    }
    return s;
  }

  static SparsityPattern from_text(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) return {};
    SparsityPattern p(static_cast<int>(lines.size()), static_cast<int>(lines[0].size()));
    for (int i = 0; i < p.rows_; ++i) {
      const auto& l = lines[static_cast<size_t>(i)];
      if (static_cast<int>(l.size()) != p.cols_)
        throw ValidationError("pattern text: ragged row " + std::to_string(i));
      for (int j = 0; j < p.cols_; ++j) {
        if (l[static_cast<size_t>(j)] != '0' && l[static_cast<size_t>(j)] != '1')
          throw ValidationError("pattern text: entries must be 0 or 1");
        p.set(i, j, l[static_cast<size_t>(j)] == '1');
      }
    }
    return p;
  }

  io::json to_json() const {
    io::json bits = io::json::array();
    for (int i = 0; i < rows_; ++i) {
      io::json row = io::json::array();
      for (int j = 0; j < cols_; ++j) row.push_back((*this)(i, j) ? 1 : 0);
      bits.push_back(std::move(row));
    }
    io::json j{{"rows", rows_}, {"cols", cols_}, {"bits", std::move(bits)}};
    if (meta_)
      j["block_meta"] = {{"row_block", meta_->row_block},
                         {"col_block", meta_->col_block},
                         {"T", meta_->T}};
    return j;
  }

  static SparsityPattern from_json(const io::json& j) {
    if (!j.is_object() || !j.contains("bits")) throw ValidationError("pattern JSON: missing 'bits'");
    const auto& bits = j.at("bits");
    const int r = static_cast<int>(bits.size());
    const int c = r > 0 ? static_cast<int>(bits[0].size()) : 0;
    if (j.contains("rows") && j.at("rows").get<int>() != r)
      throw ValidationError("pattern JSON: 'rows' disagrees with 'bits'");
    if (j.contains("cols") && j.at("cols").get<int>() != c)
      throw ValidationError("pattern JSON: 'cols' disagrees with 'bits'");
    SparsityPattern p(r, c);
    for (int i = 0; i < r; ++i) {
      const auto& row = bits[static_cast<size_t>(i)];
      if (static_cast<int>(row.size()) != c) throw ValidationError("pattern JSON: ragged bits");
      for (int k = 0; k < c; ++k) {
        const int v = row[static_cast<size_t>(k)].get<int>();
        if (v != 0 && v != 1) throw ValidationError("pattern JSON: entries must be 0 or 1");
        p.set(i, k, v == 1);
      }
    }
    if (j.contains("block_meta")) {
      const auto& m = j.at("block_meta");
      p.set_block_meta({m.at("row_block").get<int>(), m.at("col_block").get<int>(),
                        m.at("T").get<int>()});
    }
    return p;
  }

  void require_same_shape(const SparsityPattern& other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_)
      throw ValidationError("pattern shape mismatch: " + shape_string() + " vs " +
                            other.shape_string());
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  size_t index(int i, int j) const {
    return static_cast<size_t>(i) * static_cast<size_t>(cols_) + static_cast<size_t>(j);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> bits_;
  std::optional<BlockMeta> meta_;
};

// Product over the {0,1} semiring (OR of ANDs); never overflows.
inline SparsityPattern boolean_product(const SparsityPattern& a, const SparsityPattern& b) {
  if (a.cols() != b.rows())
    throw ValidationError("boolean product: inner dimensions " + a.shape_string() + " * " +
                          b.shape_string());
  SparsityPattern out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int k = 0; k < a.cols(); ++k) {
      if (!a(i, k)) continue;
      for (int j = 0; j < b.cols(); ++j)
        if (b(k, j)) out.set(i, j);
    }
  return out;
}

inline SparsityPattern kron(const SparsityPattern& a, const SparsityPattern& b) {
  SparsityPattern out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      if (!a(i, j)) continue;
      for (int r = 0; r < b.rows(); ++r)
        for (int c = 0; c < b.cols(); ++c)
          if (b(r, c)) out.set(i * b.rows() + r, j * b.cols() + c);
    }
  return out;
}

// Struct(Z): exact zero test, anything else (subnormals included) maps to 1.
inline SparsityPattern struct_of(const Eigen::MatrixXd& Z) {
  SparsityPattern p(static_cast<int>(Z.rows()), static_cast<int>(Z.cols()));
  for (int i = 0; i < p.rows(); ++i)
    for (int j = 0; j < p.cols(); ++j) p.set(i, j, Z(i, j) != 0.0);
  return p;
}

inline void require_shape(const Eigen::MatrixXd& Y, const SparsityPattern& X, const char* what) {
  if (Y.rows() != X.rows() || Y.cols() != X.cols())
    throw ValidationError(std::string(what) + ": matrix " + std::to_string(Y.rows()) + "x" +
                          std::to_string(Y.cols()) + " vs pattern " + X.shape_string());
}

// Y in Sparse(X), exact.
inline bool is_member(const Eigen::MatrixXd& Y, const SparsityPattern& X) {
  require_shape(Y, X, "is_member");
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j)
      if (!X(i, j) && Y(i, j) != 0.0) return false;
  return true;
}

struct Leakage {
  double max_abs = 0.0;
  int row = -1;
  int col = -1;
  // True when max_abs exceeds the report threshold.
  bool flagged = false;
};

// Largest-magnitude entry of Y outside X, for auditing solver output.
inline Leakage leakage(const Eigen::MatrixXd& Y, const SparsityPattern& X,
                       double report_threshold = 1e-9) {
  require_shape(Y, X, "leakage");
  Leakage out;
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j)
      if (!X(i, j) && std::abs(Y(i, j)) > out.max_abs) out = {std::abs(Y(i, j)), i, j, false};
  out.flagged = out.max_abs > report_threshold;
  return out;
}

// Zero every entry outside X.
inline Eigen::MatrixXd project(const Eigen::MatrixXd& Y, const SparsityPattern& X) {
  require_shape(Y, X, "project");
  Eigen::MatrixXd out = Y;
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j)
      if (!X(i, j)) out(i, j) = 0.0;
  return out;
}

namespace detail {

inline void require_qi_shapes(const SparsityPattern& S, const SparsityPattern& Delta) {
  if (S.rows() != Delta.cols() || S.cols() != Delta.rows())
    throw ValidationError("QI test needs S (mT x nT) and Delta (nT x mT); got " +
                          S.shape_string() + " and " + Delta.shape_string());
}

}  // namespace detail

// First entry (row-major) where S.Delta.S has support outside S, if any.
inline std::optional<std::pair<int, int>> qi_violation(const SparsityPattern& S,
                                                      const SparsityPattern& Delta) {
  detail::require_qi_shapes(S, Delta);
  const SparsityPattern sds = boolean_product(boolean_product(S, Delta), S);
  for (int i = 0; i < S.rows(); ++i)
    for (int j = 0; j < S.cols(); ++j)
      if (sds(i, j) && !S(i, j)) return std::make_pair(i, j);
  return std::nullopt;
}

// Binary QI test: K G K in Sparse(S) for all K in Sparse(S), G in Sparse(Delta).
inline bool is_qi(const SparsityPattern& S, const SparsityPattern& Delta) {
  return !qi_violation(S, Delta).has_value();
}

// Fixpoint of S <- S | S.Delta.S; the smallest QI pattern containing S.
inline SparsityPattern nearest_qi_superset(const SparsityPattern& S,
                                           const SparsityPattern& Delta) {
  detail::require_qi_shapes(S, Delta);
  SparsityPattern cur = S;
  for (;;) {
    SparsityPattern next = cur | boolean_product(boolean_product(cur, Delta), cur);
    if (next == cur) break;
    cur = std::move(next);
  }
  if (S.block_meta()) cur.set_block_meta(*S.block_meta());
  return cur;
}

// V_x generation: start from all ones; whenever S(i,k) = 0, clear (V_x)(j,k)
// for every j with S(i,j) = 1.
inline SparsityPattern generate_vx(const SparsityPattern& S) {
  const int mT = S.rows();
  const int nT = S.cols();
  SparsityPattern vx = SparsityPattern::ones(nT, nT);
  for (int i = 0; i < mT; ++i)
    for (int k = 0; k < nT; ++k) {
      if (S(i, k)) continue;
      for (int j = 0; j < nT; ++j)
        if (S(i, j)) vx.set(j, k, false);
    }
  if (S.block_meta()) {
    const auto& m = *S.block_meta();
    vx.set_block_meta({m.col_block, m.col_block, m.T});
  }
  return vx;
}

}  // namespace spregret
