#pragma once

// Graph reasoning: node inputs, stacked LeakyReLU graph convolutions, graph
// pooling and the node-parameterized attribute classifier.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gps/error.hpp"
#include "gps/ontology.hpp"
#include "gps/types.hpp"
#include "gps/util.hpp"

namespace gps {

/// N_A x D_w attribute embeddings, rows in schema order.
struct WordEmbeddings {
  Matd z;
  Eigen::Index dim() const { return z.cols(); }
};

/// Deterministic unit-length embedding per attribute name: a standard-normal
/// draw from a stream keyed on (seed, name), scaled to norm 1.
inline WordEmbeddings synthesize_embeddings(const AttributeSchema& attrs, Eigen::Index dim,
                                            std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("embedding dim must be >= 1");
  WordEmbeddings e{Matd(Eigen::Index(attrs.size()), dim)};
  for (std::size_t a = 0; a < attrs.size(); ++a) {
    auto rng = substream(seed, "embedding/" + attrs[a]);
    std::normal_distribution<double> normal;
    for (Eigen::Index d = 0; d < dim; ++d) e.z(Eigen::Index(a), d) = normal(rng);
    e.z.row(Eigen::Index(a)).normalize();
  }
  return e;
}

/// Parses `name v1 ... v_Dw` lines. Every schema attribute must be present;
/// extra names are ignored.
inline WordEmbeddings parse_embeddings(std::string_view text, const AttributeSchema& attrs,
                                       const std::string& source = "embeddings") {
  std::unordered_map<std::string, std::vector<double>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t dim = 0, lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    std::vector<double> v;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IoError(source + ":" + std::to_string(lineno) + ": bad number \"" + tok + "\"");
      }
      if (!std::isfinite(v.back()))
        throw IoError(source + ":" + std::to_string(lineno) + ": non-finite value");
    }
    if (v.empty()) throw IoError(source + ":" + std::to_string(lineno) + ": no values");
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw IoError(source + ":" + std::to_string(lineno) + ": inconsistent dim");
    rows[name] = std::move(v);
  }
  if (dim == 0) throw IoError(source + ": no embeddings");
  WordEmbeddings e{Matd(Eigen::Index(attrs.size()), Eigen::Index(dim))};
  for (std::size_t a = 0; a < attrs.size(); ++a) {
    auto it = rows.find(attrs[a]);
    if (it == rows.end()) throw IoError(source + ": no embedding for attribute " + attrs[a]);
    for (std::size_t d = 0; d < dim; ++d) e.z(Eigen::Index(a), Eigen::Index(d)) = it->second[d];
  }
  return e;
}

inline WordEmbeddings load_embeddings(const std::filesystem::path& p, const AttributeSchema& attrs) {
  if (!std::filesystem::exists(p)) throw IoError("embedding file not found: " + p.string());
  return parse_embeddings(read_file(p), attrs, p.string());
}

/// X = [Z; parts], attribute rows first.
template <typename S>
Mat<S> build_node_inputs(const Mat<S>& z, const Mat<S>& parts) {
  if (z.cols() != parts.cols()) throw InvalidArgument("build_node_inputs: D_w mismatch");
  Mat<S> x(z.rows() + parts.rows(), z.cols());
  x.topRows(z.rows()) = z;
  x.bottomRows(parts.rows()) = parts;
  return x;
}

template <typename S>
Mat<S> leaky_relu(const Mat<S>& a, S slope) {
  return a.unaryExpr([slope](S v) { return v >= S(0) ? v : slope * v; });
}

/// H' = LeakyReLU(M̂ H Θ).
template <typename S>
Mat<S> gcn_layer(const Mat<S>& h, const Mat<S>& mhat, const Mat<S>& theta, S slope) {
  if (mhat.rows() != mhat.cols() || mhat.cols() != h.rows() || h.cols() != theta.rows())
    throw InvalidArgument("gcn_layer: shape mismatch");
  if (!h.allFinite()) throw InvalidArgument("gcn_layer: non-finite input");
  return leaky_relu<S>(mhat * h * theta, slope);
}

template <typename S>
struct GcnParams {
  std::vector<Mat<S>> weights;  // Θ^(k): d_k x d_{k+1}
  S slope = S(0.2);

  GcnParams() = default;
  GcnParams(std::vector<Mat<S>> w, S leaky_slope, Eigen::Index input_dim, Eigen::Index output_dim)
      : weights(std::move(w)), slope(leaky_slope) {
    if (weights.empty() || weights.size() > 4)
      throw InvalidArgument("GCN layer count must be in 1..4");
    if (!(slope > S(0) && slope <= S(1))) throw InvalidArgument("leaky slope must be in (0, 1]");
    Eigen::Index d = input_dim;
    for (const auto& t : weights) {
      if (t.rows() != d) throw InvalidArgument("GCN weight chain dims inconsistent");
      d = t.cols();
    }
    if (d != output_dim)
      throw InvalidArgument("final GCN width " + std::to_string(d) +
                            " must equal global feature dim " + std::to_string(output_dim));
  }

  std::size_t layers() const { return weights.size(); }
};

/// Activations kept for the backward pass.
template <typename S>
struct GcnTrace {
  std::vector<Mat<S>> propagated;  // M̂ H^(k)
  std::vector<Mat<S>> pre;         // M̂ H^(k) Θ^(k)
  Mat<S> output;                   // H^(L)
};

template <typename S>
struct GraphOutputs {
  Mat<S> classifier;  // W: attribute rows of H^(L)
  Vec<S> graph_feature;
};

template <typename S>
GcnTrace<S> gcn_forward(const Mat<S>& x, const Mat<S>& mhat, const GcnParams<S>& p) {
  if (p.weights.empty()) throw InvalidArgument("GCN needs at least one layer");
  GcnTrace<S> t;
  Mat<S> h = x;
  for (const auto& theta : p.weights) {
    if (mhat.cols() != h.rows() || h.cols() != theta.rows())
      throw InvalidArgument("gcn_forward: shape mismatch");
    if (!h.allFinite()) throw InvalidArgument("gcn_forward: non-finite activation");
    t.propagated.push_back(mhat * h);
    t.pre.push_back(t.propagated.back() * theta);
    h = leaky_relu<S>(t.pre.back(), p.slope);
  }
  t.output = std::move(h);
  return t;
}

template <typename S>
GraphOutputs<S> graph_outputs(const Mat<S>& out, Eigen::Index num_attributes) {
  return {out.topRows(num_attributes), out.colwise().mean().transpose()};
}

/// Gradients of the GCN stack given dL/dH^(L). Accumulates into `dweights`
/// and returns dL/dX.
template <typename S>
Mat<S> gcn_backward(const GcnTrace<S>& t, const Mat<S>& mhat, const GcnParams<S>& p,
                    const Mat<S>& dout, std::vector<Mat<S>>& dweights) {
  Mat<S> dh = dout;
  for (std::size_t l = p.weights.size(); l-- > 0;) {
    const S slope = p.slope;
    Mat<S> da = dh.binaryExpr(t.pre[l], [slope](S g, S a) { return a >= S(0) ? g : slope * g; });
    dweights[l].noalias() += t.propagated[l].transpose() * da;
    dh = mhat.transpose() * (da * p.weights[l].transpose());
  }
  return dh;
}

/// ŷ = W f_bnn.
template <typename S>
Vec<S> attribute_logits(const Mat<S>& w, const Vec<S>& fbnn) {
  if (w.cols() != fbnn.size()) throw InvalidArgument("attribute_logits: dim mismatch");
  return w * fbnn;
}

}  // namespace gps
