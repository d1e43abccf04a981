#pragma once

// Correlation graph over attribute and part nodes: the four blocks, the
// assembled matrix M and its self-loop normalization.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "gps/error.hpp"
#include "gps/ontology.hpp"
#include "json.hpp"

namespace gps {

struct GraphBlocks {
  Eigen::MatrixXd aa;  // N_A x N_A, conditional co-occurrence
  Eigen::MatrixXd pp;  // N_P x N_P, all ones
  Eigen::MatrixXd pa;  // N_P x N_A, prevalence of attached attributes
  Eigen::MatrixXd ap;  // N_A x N_P, attachment indicator

  Eigen::Index num_attributes() const { return aa.rows(); }
  Eigen::Index num_parts() const { return pp.rows(); }
};

enum class DegreeMode { row, col, sym };

inline DegreeMode parse_degree_mode(const std::string& s) {
  if (s == "row") return DegreeMode::row;
  if (s == "col") return DegreeMode::col;
  if (s == "sym") return DegreeMode::sym;
  throw ConfigError("degree must be row|col|sym, got \"" + s + "\"");
}

inline const char* to_string(DegreeMode m) {
  switch (m) {
    case DegreeMode::row: return "row";
    case DegreeMode::col: return "col";
    case DegreeMode::sym: return "sym";
  }
  return "?";
}

/// AA_ij = L_ij / K_i, rows of never-occurring attributes are zero.
inline GraphBlocks build_blocks(const AttributeStats& stats, const AttachmentTable& table) {
  const auto na = stats.occurrence.size();
  const auto np = table.num_parts();
  if (table.num_attributes() != na || stats.cooccurrence.rows() != na ||
      stats.cooccurrence.cols() != na || stats.prevalence.size() != na)
    throw InvalidArgument("build_blocks: dimension mismatch between stats and attachment");

  GraphBlocks b;
  b.aa = Eigen::MatrixXd::Zero(na, na);
  for (Eigen::Index i = 0; i < na; ++i) {
    const int ki = stats.occurrence(i);
    if (ki == 0) continue;
    for (Eigen::Index j = 0; j < na; ++j)
      b.aa(i, j) = double(stats.cooccurrence(i, j)) / double(ki);
  }
  b.pp = Eigen::MatrixXd::Ones(np, np);
  b.pa = Eigen::MatrixXd::Zero(np, na);
  for (Eigen::Index i = 0; i < np; ++i)
    for (Eigen::Index j = 0; j < na; ++j)
      if (table.attach(i, j)) b.pa(i, j) = stats.prevalence(j);
  b.ap = table.attach.transpose().cast<double>();
  return b;
}

/// M = [[AA, AP], [PA, PP]], attribute nodes first.
inline Eigen::MatrixXd assemble(const GraphBlocks& b) {
  const auto na = b.aa.rows(), np = b.pp.rows();
  if (b.aa.cols() != na || b.pp.cols() != np || b.ap.rows() != na || b.ap.cols() != np ||
      b.pa.rows() != np || b.pa.cols() != na)
    throw InvalidArgument("assemble: block shape mismatch");
  Eigen::MatrixXd m(na + np, na + np);
  m.topLeftCorner(na, na) = b.aa;
  m.topRightCorner(na, np) = b.ap;
  m.bottomLeftCorner(np, na) = b.pa;
  m.bottomRightCorner(np, np) = b.pp;
  return m;
}

inline GraphBlocks extract_blocks(const Eigen::MatrixXd& m, Eigen::Index num_attributes) {
  const auto na = num_attributes, np = m.rows() - na;
  if (m.rows() != m.cols() || na < 0 || np < 0) throw InvalidArgument("extract_blocks: bad shape");
  return {m.topLeftCorner(na, na), m.bottomRightCorner(np, np), m.bottomLeftCorner(np, na),
          m.topRightCorner(na, np)};
}

struct Normalized {
  Eigen::MatrixXd matrix;  // M̂
  Eigen::VectorXd degree;  // D, taken from M without the self-loop
};

/// M̂ = (I+D)^{-1/2} (M+I) (I+D)^{-1/2}.
inline Normalized normalize(const Eigen::MatrixXd& m, DegreeMode mode = DegreeMode::row) {
  if (m.rows() != m.cols()) throw InvalidArgument("normalize: matrix must be square");
  if (!m.allFinite()) throw InvalidArgument("normalize: non-finite entry");
  if ((m.array() < 0.0).any()) throw InvalidArgument("normalize: negative entry in M");
  Normalized out;
  switch (mode) {
    case DegreeMode::row: out.degree = m.rowwise().sum(); break;
    case DegreeMode::col: out.degree = m.colwise().sum().transpose(); break;
    case DegreeMode::sym:
      out.degree = 0.5 * (m.rowwise().sum() + m.colwise().sum().transpose());
      break;
  }
  const Eigen::VectorXd scale = (1.0 + out.degree.array()).rsqrt();
  const auto n = m.rows();
  out.matrix.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out.matrix(i, j) = scale(i) * (m(i, j) + (i == j ? 1.0 : 0.0)) * scale(j);
  return out;
}

struct CorrelationGraph {
  std::vector<std::string> node_names;  // attributes then parts
  GraphBlocks blocks;
  Eigen::MatrixXd m;
  Eigen::VectorXd degree;
  Eigen::MatrixXd normalized;
  DegreeMode degree_mode = DegreeMode::row;

  Eigen::Index num_nodes() const { return m.rows(); }
  Eigen::Index num_attributes() const { return blocks.num_attributes(); }
};

inline CorrelationGraph build_graph(const Schema& schema, const AttributeStats& stats,
                                    DegreeMode mode = DegreeMode::row) {
  CorrelationGraph g;
  g.node_names = schema.attributes.names();
  g.node_names.insert(g.node_names.end(), schema.parts.names().begin(), schema.parts.names().end());
  g.blocks = build_blocks(stats, schema.attachment);
  g.m = assemble(g.blocks);
  auto n = normalize(g.m, mode);
  g.degree = std::move(n.degree);
  g.normalized = std::move(n.matrix);
  g.degree_mode = mode;
  return g;
}

namespace detail {

inline nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::ordered_json& j) {
  const auto rows = Eigen::Index(j.size());
  const auto cols = rows ? Eigen::Index(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (Eigen::Index(j[std::size_t(i)].size()) != cols) throw IoError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[std::size_t(i)][std::size_t(c)].get<double>();
  }
  return m;
}

}  // namespace detail

/// Graph export document. Doubles are printed with round-trip precision so a
/// reload reproduces every entry bit-exactly.
inline nlohmann::ordered_json graph_to_json(const CorrelationGraph& g) {
  nlohmann::ordered_json j;
  j["num_attributes"] = g.num_attributes();
  j["num_parts"] = g.blocks.num_parts();
  j["nodes"] = g.node_names;
  j["degree_mode"] = to_string(g.degree_mode);
  j["blocks"] = {{"AA", detail::matrix_to_json(g.blocks.aa)},
                 {"PP", detail::matrix_to_json(g.blocks.pp)},
                 {"PA", detail::matrix_to_json(g.blocks.pa)},
                 {"AP", detail::matrix_to_json(g.blocks.ap)}};
  j["M"] = detail::matrix_to_json(g.m);
  j["D"] = std::vector<double>(g.degree.data(), g.degree.data() + g.degree.size());
  j["M_hat"] = detail::matrix_to_json(g.normalized);
  return j;
}

inline CorrelationGraph graph_from_json(const nlohmann::ordered_json& j) {
  try {
    CorrelationGraph g;
    g.node_names = j.at("nodes").get<std::vector<std::string>>();
    g.degree_mode = parse_degree_mode(j.at("degree_mode").get<std::string>());
    const auto& b = j.at("blocks");
    g.blocks = {detail::matrix_from_json(b.at("AA")), detail::matrix_from_json(b.at("PP")),
                detail::matrix_from_json(b.at("PA")), detail::matrix_from_json(b.at("AP"))};
    g.m = detail::matrix_from_json(j.at("M"));
    auto d = j.at("D").get<std::vector<double>>();
    g.degree = Eigen::Map<Eigen::VectorXd>(d.data(), Eigen::Index(d.size()));
    g.normalized = detail::matrix_from_json(j.at("M_hat"));
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("graph JSON: ") + e.what());
  }
}

}  // namespace gps
