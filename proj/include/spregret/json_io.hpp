#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "spregret/errors.hpp"

namespace spregret::io {

using nlohmann::json;

// Row-major nested array.
inline json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + ": expected nested array");
  const auto r = static_cast<Eigen::Index>(j.size());
  if (r == 0) return Eigen::MatrixXd(0, 0);
  if (!j[0].is_array()) throw ValidationError(what + ": expected nested array");
  const auto c = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j[static_cast<size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c)
      throw ValidationError(what + ": ragged row " + std::to_string(i));
    for (Eigen::Index k = 0; k < c; ++k) {
      const auto& v = row[static_cast<size_t>(k)];
      if (!v.is_number()) throw ValidationError(what + ": non-numeric entry");
      M(i, k) = v.get<double>();
    }
  }
  return M;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

// Envelope shared by controllers and closed-loop maps.
inline json matrix_envelope(const Eigen::MatrixXd& M) {
  return json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", matrix_to_json(M)}};
}

inline Eigen::MatrixXd matrix_from_envelope(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("data"))
    throw ValidationError(what + ": missing 'data'");
  Eigen::MatrixXd M = matrix_from_json(j.at("data"), what);
  if (j.contains("rows") && j.at("rows").get<Eigen::Index>() != M.rows())
    throw ValidationError(what + ": row count mismatch");
  if (j.contains("cols") && j.at("cols").get<Eigen::Index>() != M.cols())
    throw ValidationError(what + ": column count mismatch");
  return M;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << text;
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace spregret::io
