#pragma once

// Training objectives: multi-label attribute BCE, identity cross-entropy,
// triplet, center loss and their weighted sum.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gps/error.hpp"
#include "gps/types.hpp"

namespace gps {

/// Loss values are reduced and carried in extended precision: the
/// finite-difference check differences them across a 2e-5 step.
using LossAcc = long double;

/// Loss value together with its gradient w.r.t. the loss input.
/// `branches` records the discrete choices taken (argmax picks, active
/// hinges) so callers can tell when a perturbation crosses a kink.
template <typename S>
struct LossGrad {
  LossAcc value = 0;
  Mat<S> grad;
  std::vector<int> branches;
};

template <typename S>
S softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

/// Mean over the batch of the per-image mean binary cross-entropy over
/// attributes, evaluated through softplus so saturated logits stay finite.
template <typename S>
LossGrad<S> attribute_loss(const Mat<S>& logits, const Mat<S>& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw InvalidArgument("attribute_loss: shape mismatch");
  if (logits.size() == 0) throw InvalidArgument("attribute_loss: empty batch");
  const auto b = logits.rows(), na = logits.cols();
  LossGrad<S> r;
  r.grad.resize(b, na);
  const S scale = S(1) / S(b * na);
  LossAcc sum = 0;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index c = 0; c < na; ++c) {
      const S y = labels(i, c), x = logits(i, c);
      if (y != S(0) && y != S(1)) throw InvalidArgument("attribute_loss: non-binary label");
      // -[y log σ(x) + (1-y) log(1-σ(x))] = softplus(x) - y x
      sum += softplus(LossAcc(x)) - LossAcc(y) * LossAcc(x);
      r.grad(i, c) = (sigmoid(x) - y) * scale;
    }
  r.value = sum / LossAcc(b * na);
  return r;
}

/// Identity head: FC over concat(f_bnn, f_graph), optional bias.
template <typename S>
struct IdentityHead {
  Mat<S> weight;  // C x 2D
  Vec<S> bias;    // C (zeros when disabled)
  bool use_bias = true;

  Eigen::Index classes() const { return weight.rows(); }
};

template <typename S>
Vec<S> concat(const Vec<S>& a, const Vec<S>& b) {
  Vec<S> out(a.size() + b.size());
  out << a, b;
  return out;
}

template <typename S>
Vec<S> identity_scores(const Vec<S>& fbnn, const Vec<S>& fgraph, const IdentityHead<S>& head) {
  if (head.weight.cols() != fbnn.size() + fgraph.size())
    throw InvalidArgument("identity head: input dim mismatch");
  Vec<S> z = head.weight * concat(fbnn, fgraph);
  if (head.use_bias) z += head.bias;
  return z;
}

template <typename S>
Vec<S> softmax(const Vec<S>& z) {
  Vec<S> e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

template <typename S>
Vec<S> log_softmax(const Vec<S>& z) {
  const S m = z.maxCoeff();
  const S lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

/// p = softmax(FC(f_bnn ⊙ f_graph)).
template <typename S>
Vec<S> identity_logits(const Vec<S>& fbnn, const Vec<S>& fgraph, const IdentityHead<S>& head) {
  return softmax<S>(identity_scores(fbnn, fgraph, head));
}

/// Cross-entropy from raw scores (B x C) via log-softmax.
template <typename S>
LossGrad<S> identity_loss_from_scores(const Mat<S>& scores, const std::vector<int>& targets) {
  if (scores.rows() != Eigen::Index(targets.size()) || scores.rows() == 0)
    throw InvalidArgument("identity_loss: batch size mismatch");
  const auto b = scores.rows(), c = scores.cols();
  LossGrad<S> r;
  r.grad.resize(b, c);
  LossAcc sum = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int t = targets[std::size_t(i)];
    if (t < 0 || t >= c) throw InvalidArgument("identity_loss: target out of range");
    const Vec<S> lsm = log_softmax<S>(scores.row(i).transpose());
    const LossAcc m = scores.row(i).maxCoeff();
    LossAcc e = 0;
    for (Eigen::Index k = 0; k < c; ++k) e += std::exp(LossAcc(scores(i, k)) - m);
    sum += m + std::log(e) - LossAcc(scores(i, t));
    r.grad.row(i) = lsm.array().exp().transpose();
    r.grad(i, t) -= S(1);
  }
  r.value = sum / LossAcc(b);
  r.grad /= S(b);
  return r;
}

/// Cross-entropy from probabilities p (B x C) and one-hot targets q (B x C).
template <typename S>
S identity_loss(const Mat<S>& p, const Mat<S>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols() || p.rows() == 0)
    throw InvalidArgument("identity_loss: shape mismatch");
  S total = S(0);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      if (q(i, c) == S(0)) continue;
      if (p(i, c) <= S(0))
        throw InvalidArgument("identity_loss: zero probability on the true class");
      total -= q(i, c) * std::log(p(i, c));
    }
  return total / S(p.rows());
}

enum class TripletMining { hard, all };

inline TripletMining parse_mining(const std::string& s) {
  if (s == "hard") return TripletMining::hard;
  if (s == "all") return TripletMining::all;
  throw ConfigError("triplet mining must be hard|all, got \"" + s + "\"");
}

namespace detail {

inline void check_pk_structure(const std::vector<int>& ids) {
  std::map<int, int> count;
  for (int id : ids) ++count[id];
  if (count.size() < 2) throw InvalidArgument("triplet_loss: batch needs at least two identities");
  for (auto [id, n] : count)
    if (n < 2)
      throw InvalidArgument("triplet_loss: identity " + std::to_string(id) +
                            " has a single instance in the batch");
}

template <typename S>
void add_distance_grad(Mat<S>& g, const Mat<S>& e, Eigen::Index a, Eigen::Index b, S dist,
                       S coeff) {
  if (dist <= S(0)) return;
  const auto dir = ((e.row(a) - e.row(b)) / dist).eval();
  g.row(a) += coeff * dir;
  g.row(b) -= coeff * dir;
}

}  // namespace detail

/// Euclidean triplet loss over a PK batch (B x E embeddings).
/// hard: mean over anchors of [max_p d(a,p) - min_n d(a,n) + margin]_+.
/// all: mean over every (a, p, n) of [d(a,p) - d(a,n) + margin]_+.
template <typename S>
LossGrad<S> triplet_loss(const Mat<S>& emb, const std::vector<int>& ids, S margin,
                         TripletMining mining = TripletMining::hard) {
  if (emb.rows() != Eigen::Index(ids.size())) throw InvalidArgument("triplet_loss: size mismatch");
  detail::check_pk_structure(ids);
  const auto b = emb.rows();
  Mat<S> dist(b, b);
  Eigen::Matrix<LossAcc, Eigen::Dynamic, Eigen::Dynamic> exact(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) {
      exact(i, j) = (emb.row(i).template cast<LossAcc>() - emb.row(j).template cast<LossAcc>()).norm();
      dist(i, j) = S(exact(i, j));
    }
  LossAcc sum = 0;

  LossGrad<S> r;
  r.grad = Mat<S>::Zero(b, emb.cols());
  if (mining == TripletMining::hard) {
    for (Eigen::Index a = 0; a < b; ++a) {
      Eigen::Index hp = -1, hn = -1;
      for (Eigen::Index j = 0; j < b; ++j) {
        if (j == a) continue;
        if (ids[std::size_t(j)] == ids[std::size_t(a)]) {
          if (hp < 0 || dist(a, j) > dist(a, hp)) hp = j;
        } else if (hn < 0 || dist(a, j) < dist(a, hn)) {
          hn = j;
        }
      }
      const LossAcc term = exact(a, hp) - exact(a, hn) + LossAcc(margin);
      const bool active = term > 0;
      r.branches.push_back(int(hp));
      r.branches.push_back(int(hn));
      r.branches.push_back(active);
      if (!active) continue;
      sum += term;
      detail::add_distance_grad<S>(r.grad, emb, a, hp, dist(a, hp), S(1) / S(b));
      detail::add_distance_grad<S>(r.grad, emb, a, hn, dist(a, hn), -S(1) / S(b));
    }
    r.value = sum / LossAcc(b);
    return r;
  }

  std::size_t triplets = 0;
  for (Eigen::Index a = 0; a < b; ++a)
    for (Eigen::Index p = 0; p < b; ++p) {
      if (p == a || ids[std::size_t(p)] != ids[std::size_t(a)]) continue;
      for (Eigen::Index n = 0; n < b; ++n)
        if (ids[std::size_t(n)] != ids[std::size_t(a)]) ++triplets;
    }
  const S w = S(1) / S(triplets);
  for (Eigen::Index a = 0; a < b; ++a)
    for (Eigen::Index p = 0; p < b; ++p) {
      if (p == a || ids[std::size_t(p)] != ids[std::size_t(a)]) continue;
      for (Eigen::Index n = 0; n < b; ++n) {
        if (ids[std::size_t(n)] == ids[std::size_t(a)]) continue;
        const LossAcc term = exact(a, p) - exact(a, n) + LossAcc(margin);
        r.branches.push_back(term > 0);
        if (term <= 0) continue;
        sum += term;
        detail::add_distance_grad<S>(r.grad, emb, a, p, dist(a, p), w);
        detail::add_distance_grad<S>(r.grad, emb, a, n, dist(a, n), -w);
      }
    }
  r.value = sum / LossAcc(triplets);
  return r;
}

/// Per-identity class centers in embedding space.
template <typename S>
struct CenterState {
  Mat<S> centers;  // C x E
  S learning_rate = S(0.5);
};

template <typename S>
struct CenterLoss {
  LossAcc value = 0;
  Mat<S> grad_embeddings;
  Mat<S> grad_centers;
};

/// (1 / 2B) sum_i ||x_i - c_{y_i}||^2.
template <typename S>
CenterLoss<S> center_loss(const Mat<S>& emb, const std::vector<int>& ids, const Mat<S>& centers) {
  if (emb.rows() != Eigen::Index(ids.size()) || emb.rows() == 0)
    throw InvalidArgument("center_loss: size mismatch");
  if (emb.cols() != centers.cols()) throw InvalidArgument("center_loss: dim mismatch");
  const auto b = emb.rows();
  CenterLoss<S> r;
  r.grad_embeddings.resize(b, emb.cols());
  r.grad_centers = Mat<S>::Zero(centers.rows(), centers.cols());
  LossAcc sum = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = ids[std::size_t(i)];
    if (y < 0 || y >= centers.rows())
      throw InvalidArgument("center_loss: unknown identity " + std::to_string(y));
    const auto diff = (emb.row(i) - centers.row(y)).eval();
    sum += (emb.row(i).template cast<LossAcc>() - centers.row(y).template cast<LossAcc>()).squaredNorm();
    r.grad_embeddings.row(i) = diff / S(b);
    r.grad_centers.row(y) -= diff / S(b);
  }
  r.value = sum / LossAcc(2 * b);
  return r;
}

/// c_j <- c_j - lr * sum_{i: y_i = j} (c_j - x_i) / (1 + n_j), for the
/// identities present in the batch only.
template <typename S>
void update_centers(CenterState<S>& state, const Mat<S>& emb, const std::vector<int>& ids) {
  const auto c = state.centers.rows();
  Mat<S> delta = Mat<S>::Zero(c, state.centers.cols());
  std::vector<int> count(std::size_t(c), 0);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    const int y = ids[std::size_t(i)];
    if (y < 0 || y >= c) throw InvalidArgument("update_centers: unknown identity");
    delta.row(y) += state.centers.row(y) - emb.row(i);
    ++count[std::size_t(y)];
  }
  for (Eigen::Index j = 0; j < c; ++j)
    if (count[std::size_t(j)] > 0)
      state.centers.row(j) -= state.learning_rate * delta.row(j) / S(1 + count[std::size_t(j)]);
}

/// α1..α4 for identity, triplet, center and attribute terms.
struct LossWeights {
  double id = 1.0;
  double triplet = 1.0;
  double center = 0.0005;
  double attribute = 1.0;

  void validate() const {
    for (double a : {id, triplet, center, attribute})
      if (!std::isfinite(a) || a < 0) throw ConfigError("loss weights must be finite and >= 0");
  }
};

template <typename S>
struct LossParts {
  LossAcc id = 0;
  LossAcc triplet = 0;
  LossAcc center = 0;
  LossAcc attribute = 0;
};

template <typename S>
LossAcc total_loss(const LossParts<S>& p, const LossWeights& w) {
  return LossAcc(w.id) * p.id + LossAcc(w.triplet) * p.triplet + LossAcc(w.center) * p.center +
         LossAcc(w.attribute) * p.attribute;
}

}  // namespace gps
