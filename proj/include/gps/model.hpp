#pragma once

// The full multi-branch model: parameter registry, batched forward pass with
// hand-derived reverse-mode gradients, and eval-mode inference.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gps/corrgraph.hpp"
#include "gps/error.hpp"
#include "gps/featops.hpp"
#include "gps/gcn.hpp"
#include "gps/losses.hpp"
#include "gps/types.hpp"
#include "gps/util.hpp"

namespace gps {

struct ModelConfig {
  Eigen::Index embedding_dim = 16;           // D_w
  std::vector<Eigen::Index> hidden = {16};   // widths of all but the last GCN layer
  double leaky_slope = 0.2;
  DegreeMode degree = DegreeMode::row;
  bool bnneck = true;
  bool train_embeddings = false;
  bool identity_bias = true;
  bool per_part_projection = false;

  std::size_t gcn_layers() const { return hidden.size() + 1; }

  void validate() const {
    if (embedding_dim < 1) throw ConfigError("model.embedding_dim must be >= 1");
    if (gcn_layers() > 4) throw ConfigError("model.hidden allows at most 3 entries (1..4 layers)");
    for (auto h : hidden)
      if (h < 1) throw ConfigError("model.hidden widths must be >= 1");
    if (!(leaky_slope > 0 && leaky_slope <= 1)) throw ConfigError("model.leaky_slope must be in (0, 1]");
  }
};

/// Named tensors with fixed shapes. Buffers (running statistics, the graph)
/// are stored alongside parameters but never receive gradients.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat<S> value;
    bool trainable = true;
    bool buffer = false;
  };

  std::size_t add(std::string name, Mat<S> value, bool trainable, bool buffer = false) {
    if (find(name)) throw InvalidArgument("duplicate tensor name: " + name);
    entries_.push_back({std::move(name), std::move(value), trainable && !buffer, buffer});
    return entries_.size() - 1;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index(const std::string& name) const {
    auto i = find(name);
    if (!i) throw InvalidArgument("unknown tensor: " + name);
    return *i;
  }

  const Mat<S>& operator[](std::size_t i) const { return entries_[i].value; }
  const Mat<S>& get(const std::string& name) const { return entries_[index(name)].value; }

  void set(std::size_t i, const Mat<S>& v) {
    auto& e = entries_[i];
    if (v.rows() != e.value.rows() || v.cols() != e.value.cols())
      throw InvalidArgument("shape change for tensor " + e.name);
    e.value = v;
  }
  Mat<S>& mutable_value(std::size_t i) { return entries_[i].value; }

  void set_trainable(const std::string& name, bool t) {
    auto& e = entries_[index(name)];
    if (e.buffer && t) throw InvalidArgument("buffer " + name + " cannot be trainable");
    e.trainable = t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

/// Pre-pooled inputs of a batch: B global features, B part-feature matrices,
/// attribute labels and dense identity targets.
template <typename S>
struct Batch {
  Mat<S> global;              // B x D
  std::vector<Mat<S>> parts;  // B of N_P x D
  Mat<S> labels;              // B x N_A
  std::vector<int> ids;

  Eigen::Index size() const { return global.rows(); }
};

struct TripletOptions {
  double margin = 0.3;
  TripletMining mining = TripletMining::hard;
};

template <typename S>
struct StepResult {
  LossParts<S> parts;
  LossAcc total = 0;
  std::vector<Mat<S>> grads;  // aligned with ParamStore entries
  std::vector<int> branches;
  Mat<S> embeddings;  // B x 2D metric embeddings (global ⊙ graph)
  Vec<S> batch_mean, batch_var;
};

template <typename S>
struct Inference {
  Vec<S> global;
  Vec<S> bnn;
  Vec<S> graph;
  Vec<S> attribute_logits;
};

template <typename S>
class Model {
 public:
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  /// Builds and initializes every tensor from the named stream
  /// "init/<tensor>" of `seed`.
  Model(const ModelConfig& cfg, const Matd& mhat, Eigen::Index num_attributes,
        Eigen::Index num_parts, Eigen::Index feature_dim, Eigen::Index num_classes,
        const Matd& embeddings, std::uint64_t seed)
      : cfg_(cfg), na_(num_attributes), np_(num_parts), d_(feature_dim), classes_(num_classes) {
    cfg_.validate();
    if (mhat.rows() != na_ + np_ || mhat.cols() != na_ + np_)
      throw InvalidArgument("normalized graph size != N_A + N_P");
    if (embeddings.rows() != na_ || embeddings.cols() != cfg_.embedding_dim)
      throw InvalidArgument("embedding matrix must be N_A x embedding_dim");
    if (feature_dim < 1 || num_classes < 1) throw InvalidArgument("model dims must be >= 1");

    auto uniform = [seed](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          Eigen::Index fan_in) {
      auto rng = substream(seed, "init/" + name);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double bound = 1.0 / std::sqrt(double(fan_in));
      Mat<S> m(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = S(bound * u(rng));
      return m;
    };

    const auto dw = cfg_.embedding_dim;
    idx_.embeddings = params_.add("embeddings", embeddings.cast<S>(), cfg_.train_embeddings);
    idx_.projection = params_.add(
        "part_projection",
        uniform("part_projection", cfg_.per_part_projection ? np_ * dw : dw, d_, d_), true);
    Eigen::Index in = dw;
    for (std::size_t l = 0; l < cfg_.gcn_layers(); ++l) {
      const Eigen::Index out = l < cfg_.hidden.size() ? cfg_.hidden[l] : d_;
      const std::string name = "gcn." + std::to_string(l);
      idx_.gcn.push_back(params_.add(name, uniform(name, in, out, in), true));
      in = out;
    }
    if (cfg_.bnneck) {
      idx_.gamma = params_.add("bnneck.gamma", Mat<S>::Ones(d_, 1), true);
      idx_.running_mean = params_.add("bnneck.running_mean", Mat<S>::Zero(d_, 1), false, true);
      idx_.running_var = params_.add("bnneck.running_var", Mat<S>::Ones(d_, 1), false, true);
    }
    idx_.fc_weight = params_.add("id_head.weight", uniform("id_head.weight", classes_, 2 * d_, 2 * d_), true);
    if (cfg_.identity_bias)
      idx_.fc_bias = params_.add("id_head.bias", uniform("id_head.bias", classes_, 1, 2 * d_), true);
    idx_.centers = params_.add("centers", Mat<S>::Zero(classes_, 2 * d_), true);
    idx_.graph = params_.add("graph.normalized", mhat.cast<S>(), false, true);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  Eigen::Index num_attributes() const { return na_; }
  Eigen::Index num_parts() const { return np_; }
  Eigen::Index feature_dim() const { return d_; }
  Eigen::Index num_classes() const { return classes_; }
  std::size_t centers_index() const { return idx_.centers; }
  const Mat<S>& normalized_graph() const { return params_[idx_.graph]; }

  GcnParams<S> gcn_params() const {
    std::vector<Mat<S>> w;
    for (auto i : idx_.gcn) w.push_back(params_[i]);
    return GcnParams<S>(std::move(w), S(cfg_.leaky_slope), cfg_.embedding_dim, d_);
  }

  IdentityHead<S> identity_head() const {
    IdentityHead<S> h;
    h.weight = params_[idx_.fc_weight];
    h.use_bias = cfg_.identity_bias;
    h.bias = cfg_.identity_bias ? Vec<S>(params_[*idx_.fc_bias]) : Vec<S>::Zero(classes_);
    return h;
  }

  /// Computes the weighted loss on a training batch (BNNeck in train mode)
  /// and, when `with_grad`, exact gradients for every non-buffer tensor.
  /// The correlation graph is a constant.
  StepResult<S> forward_backward(const Batch<S>& batch, const LossWeights& w,
                                 const TripletOptions& trip, bool with_grad = true) const {
    const auto b = batch.size();
    check_batch(batch);
    const auto& mhat = params_[idx_.graph];
    const auto gcn = gcn_params();
    const auto head = identity_head();
    const auto ng = na_ + np_;
    StepResult<S> r;

    Mat<S> fb;
    Mat<S> xhat;
    if (cfg_.bnneck) {
      Vec<S> gamma = params_[*idx_.gamma];
      auto bn = batchnorm_train<S>(batch.global, gamma, S(kBnEps));
      fb = std::move(bn.output);
      xhat = std::move(bn.xhat);
      r.batch_mean = std::move(bn.mean);
      r.batch_var = std::move(bn.var);
    } else {
      fb = batch.global;
    }

    std::vector<GcnTrace<S>> traces;
    traces.reserve(std::size_t(b));
    Mat<S> yhat(b, na_), scores(b, classes_), sig(b, 2 * d_), emb(b, 2 * d_);
    for (Eigen::Index i = 0; i < b; ++i) {
      const Mat<S> u = project_parts<S>(batch.parts[std::size_t(i)], params_[idx_.projection],
                                        cfg_.embedding_dim);
      traces.push_back(gcn_forward<S>(build_node_inputs<S>(params_[idx_.embeddings], u), mhat, gcn));
      const auto& out = traces.back().output;
      const Vec<S> fgraph = out.colwise().mean().transpose();
      const Vec<S> fbi = fb.row(i).transpose();
      yhat.row(i) = attribute_logits<S>(out.topRows(na_), fbi).transpose();
      sig.row(i) = concat<S>(fbi, fgraph).transpose();
      emb.row(i) = concat<S>(Vec<S>(batch.global.row(i).transpose()), fgraph).transpose();
      if (cfg_.leaky_slope != 1.0)
        for (const auto& pre : traces.back().pre)
          for (Eigen::Index k = 0; k < pre.size(); ++k) r.branches.push_back(pre.data()[k] >= S(0));
    }
    scores = sig * head.weight.transpose();
    if (head.use_bias) scores.rowwise() += head.bias.transpose();

    auto attr = attribute_loss<S>(yhat, batch.labels);
    auto id = identity_loss_from_scores<S>(scores, batch.ids);
    auto tri = triplet_loss<S>(emb, batch.ids, S(trip.margin), trip.mining);
    auto cen = center_loss<S>(emb, batch.ids, params_[idx_.centers]);
    r.parts = {id.value, tri.value, cen.value, attr.value};
    r.total = total_loss(r.parts, w);
    r.branches.insert(r.branches.end(), tri.branches.begin(), tri.branches.end());
    check_finite(r.parts);
    r.embeddings = emb;
    if (!with_grad) return r;

    r.grads.resize(params_.size());
    for (std::size_t t = 0; t < params_.size(); ++t)
      r.grads[t] = Mat<S>::Zero(params_[t].rows(), params_[t].cols());

    const Mat<S> dscores = S(w.id) * id.grad;
    r.grads[idx_.fc_weight] = dscores.transpose() * sig;
    if (head.use_bias) r.grads[*idx_.fc_bias] = dscores.colwise().sum().transpose();
    const Mat<S> dsig = dscores * head.weight;
    const Mat<S> dyhat = S(w.attribute) * attr.grad;
    const Mat<S> demb = S(w.triplet) * tri.grad + S(w.center) * cen.grad_embeddings;
    r.grads[idx_.centers] = S(w.center) * cen.grad_centers;

    Mat<S> dfb = dsig.leftCols(d_);
    std::vector<Mat<S>> dgcn(gcn.layers());
    for (std::size_t l = 0; l < gcn.layers(); ++l) dgcn[l] = Mat<S>::Zero(gcn.weights[l].rows(), gcn.weights[l].cols());
    Mat<S>& dz = r.grads[idx_.embeddings];
    Mat<S>& dproj = r.grads[idx_.projection];
    const auto dw = cfg_.embedding_dim;

    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& tr = traces[std::size_t(i)];
      const Vec<S> dyi = dyhat.row(i).transpose();
      dfb.row(i) += (tr.output.topRows(na_).transpose() * dyi).transpose();
      const Vec<S> dfgraph = (dsig.row(i).tail(d_) + demb.row(i).tail(d_)).transpose() / S(ng);
      Mat<S> dout = dfgraph.transpose().replicate(ng, 1);
      dout.topRows(na_) += dyi * fb.row(i);
      const Mat<S> dx = gcn_backward<S>(tr, mhat, gcn, dout, dgcn);
      dz += dx.topRows(na_);
      const Mat<S> du = dx.bottomRows(np_);
      const auto& pooled = batch.parts[std::size_t(i)];
      if (cfg_.per_part_projection) {
        for (Eigen::Index k = 0; k < np_; ++k)
          dproj.middleRows(k * dw, dw) += du.row(k).transpose() * pooled.row(k);
      } else {
        dproj += du.transpose() * pooled;
      }
    }
    for (std::size_t l = 0; l < gcn.layers(); ++l) r.grads[idx_.gcn[l]] = std::move(dgcn[l]);
    if (cfg_.bnneck) r.grads[*idx_.gamma] = (dfb.array() * xhat.array()).colwise().sum().transpose();
    return r;
  }

  /// Folds batch statistics from a training step into the running estimates.
  void update_running_stats(const StepResult<S>& r, Eigen::Index batch_size) {
    if (!cfg_.bnneck) return;
    const S unbias = S(batch_size) / S(batch_size - 1);
    auto& m = params_.mutable_value(*idx_.running_mean);
    auto& v = params_.mutable_value(*idx_.running_var);
    m = S(1 - kBnMomentum) * m + S(kBnMomentum) * r.batch_mean;
    v = S(1 - kBnMomentum) * v + S(kBnMomentum) * (r.batch_var * unbias);
  }

  /// Eval-mode forward of one image (BNNeck with running statistics).
  Inference<S> infer(const Vec<S>& global, const Mat<S>& parts) const {
    if (global.size() != d_ || parts.rows() != np_ || parts.cols() != d_)
      throw InvalidArgument("infer: input dims do not match the model");
    Inference<S> out;
    out.global = global;
    if (cfg_.bnneck) {
      const Vec<S> gamma = params_[*idx_.gamma];
      const Vec<S> mean = params_[*idx_.running_mean];
      const Vec<S> var = params_[*idx_.running_var];
      out.bnn = (global - mean).cwiseProduct((var.array() + S(kBnEps)).rsqrt().matrix()).cwiseProduct(gamma);
    } else {
      out.bnn = global;
    }
    const Mat<S> u = project_parts<S>(parts, params_[idx_.projection], cfg_.embedding_dim);
    const auto tr = gcn_forward<S>(build_node_inputs<S>(params_[idx_.embeddings], u),
                                   params_[idx_.graph], gcn_params());
    out.graph = tr.output.colwise().mean().transpose();
    out.attribute_logits = attribute_logits<S>(tr.output.topRows(na_), out.bnn);
    return out;
  }

 private:
  void check_batch(const Batch<S>& batch) const {
    const auto b = batch.size();
    if (b < 1 || batch.global.cols() != d_ || Eigen::Index(batch.parts.size()) != b ||
        batch.labels.rows() != b || batch.labels.cols() != na_ || Eigen::Index(batch.ids.size()) != b)
      throw InvalidArgument("batch dims do not match the model");
    for (const auto& p : batch.parts)
      if (p.rows() != np_ || p.cols() != d_) throw InvalidArgument("batch part features have wrong shape");
  }

  static void check_finite(const LossParts<S>& p) {
    const std::pair<const char*, LossAcc> terms[] = {
        {"identity", p.id}, {"triplet", p.triplet}, {"center", p.center}, {"attribute", p.attribute}};
    for (const auto& [name, v] : terms)
      if (!std::isfinite(double(v))) throw Error(std::string("non-finite ") + name + " loss");
  }

  struct Indices {
    std::size_t embeddings = 0, projection = 0, fc_weight = 0, centers = 0, graph = 0;
    std::vector<std::size_t> gcn;
    std::optional<std::size_t> gamma, running_mean, running_var, fc_bias;
  };

  ModelConfig cfg_;
  Eigen::Index na_, np_, d_, classes_;
  ParamStore<S> params_;
  Indices idx_;
};

}  // namespace gps
