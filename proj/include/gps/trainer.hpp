#pragma once

// Datasets on disk and in memory, the optimizer loop, checkpoints and
// held-out evaluation.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gps/config.hpp"
#include "gps/corrgraph.hpp"
#include "gps/featops.hpp"
#include "gps/gcn.hpp"
#include "gps/model.hpp"
#include "gps/ontology.hpp"
#include "gps/retrieval.hpp"
#include "gps/sampler.hpp"
#include "gps/synthgen.hpp"
#include "gps/util.hpp"
#include "json.hpp"

namespace gps {

/// Annotated images with their pooled inputs.
struct Dataset {
  Schema schema;
  AnnotationSet annotations;
  std::vector<PooledSample> pooled;
  std::optional<Eigen::MatrixXi> ground_truth;  // dense identity x N_A, when known

  std::size_t size() const { return pooled.size(); }
};

inline Dataset dataset_from_synth(const SynthDataset& s) {
  Dataset d;
  d.schema = s.schema;
  d.annotations = s.annotations;
  for (std::size_t i = 0; i < s.features.size(); ++i)
    d.pooled.push_back(pool_sample(s.features[i], s.masks[i]));
  // records are emitted identity by identity, so dense ids equal generator ids
  d.ground_truth = s.ground_truth;
  return d;
}

namespace dataset_files {
inline constexpr const char* annotations = "annotations.csv";
inline constexpr const char* schema = "schema.json";
inline constexpr const char* manifest = "manifest.json";
inline std::string feature(const std::string& id) { return "features/" + id + ".gpsf"; }
inline std::string mask(const std::string& id) { return "masks/" + id + ".gpsm"; }
}  // namespace dataset_files

/// Writes the dataset directory and returns its manifest (every file with
/// its SHA-256, plus the noise-free attribute table).
inline nlohmann::ordered_json write_dataset(const std::filesystem::path& dir, const SynthDataset& s,
                                            bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir)) {
    if (!force) throw IoError("output directory exists (use --force): " + dir.string());
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back(dataset_files::schema, s.schema.to_json().dump(2) + "\n");
  files.emplace_back(dataset_files::annotations, format_annotations(s.annotations, s.schema.attributes));
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    const auto& id = s.annotations.records[i].image_id;
    files.emplace_back(dataset_files::feature(id), encode_feature_map(s.features[i]));
    files.emplace_back(dataset_files::mask(id), encode_masks(s.masks[i]));
  }
  nlohmann::ordered_json manifest;
  auto list = nlohmann::ordered_json::array();
  for (const auto& [rel, bytes] : files) {
    write_file(dir / rel, bytes);
    list.push_back({{"path", rel}, {"sha256", to_hex(sha256(bytes))}});
  }
  manifest["files"] = list;
  auto gt = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < s.ground_truth.rows(); ++i) {
    std::vector<int> row(s.ground_truth.cols());
    for (Eigen::Index j = 0; j < s.ground_truth.cols(); ++j) row[std::size_t(j)] = s.ground_truth(i, j);
    gt.push_back(row);
  }
  manifest["ground_truth"] = gt;
  write_file(dir / dataset_files::manifest, manifest.dump(2) + "\n");
  return manifest;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset d;
  d.schema = load_schema(dir / dataset_files::schema);
  d.annotations = load_annotations(dir / dataset_files::annotations, d.schema.attributes);
  for (const auto& r : d.annotations.records) {
    auto f = load_feature_map(dir / dataset_files::feature(r.image_id));
    auto masks = load_masks(dir / dataset_files::mask(r.image_id));
    if (masks.size() != d.schema.parts.size())
      throw IoError("mask file for " + r.image_id + " has " + std::to_string(masks.size()) +
                    " parts, schema has " + std::to_string(d.schema.parts.size()));
    d.pooled.push_back(pool_sample(f, masks));
    if (d.pooled.back().global.size() != d.pooled.front().global.size())
      throw IoError("feature map " + r.image_id + " has a different channel count");
  }
  const auto mpath = dir / dataset_files::manifest;
  if (fs::exists(mpath)) {
    try {
      auto m = nlohmann::json::parse(read_file(mpath));
      if (m.contains("ground_truth")) {
        auto rows = m["ground_truth"].get<std::vector<std::vector<int>>>();
        // ground truth is indexed by original identity; map onto dense ids
        Eigen::MatrixXi gt(d.annotations.num_identities, Eigen::Index(d.schema.attributes.size()));
        for (const auto& r : d.annotations.records) {
          const auto& row = rows.at(std::size_t(r.original_identity));
          if (row.size() != d.schema.attributes.size()) throw IoError("manifest ground truth width");
          for (std::size_t j = 0; j < row.size(); ++j) gt(r.identity, Eigen::Index(j)) = row[j];
        }
        d.ground_truth = gt;
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(mpath.string() + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw IoError(mpath.string() + ": ground truth misses an identity");
    }
  }
  return d;
}

struct Split {
  std::vector<std::size_t> train, test;
  std::vector<int> train_class;  // dense class index of each train sample
  int classes = 0;
};

/// Image split: the last `test_images` images of each identity (in file
/// order) are held out. Identity split: dense ids below `train_identities`
/// train, the rest are held out. Train classes are numbered by first use.
inline Split split_dataset(const Dataset& d, const SplitSpec& spec) {
  Split s;
  std::map<int, int> cls, total, seen;
  for (const auto& r : d.annotations.records) ++total[r.identity];
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int id = d.annotations.records[i].identity;
    const int nth = seen[id]++;
    const bool train = spec.mode == SplitMode::images ? nth < total[id] - spec.test_images
                                                      : id < spec.train_identities;
    if (train) {
      s.train.push_back(i);
      auto [it, _] = cls.try_emplace(id, int(cls.size()));
      s.train_class.push_back(it->second);
    } else {
      s.test.push_back(i);
    }
  }
  s.classes = int(cls.size());
  if (s.classes < 2 || s.test.empty()) throw InvalidArgument("split leaves too few identities");
  return s;
}

template <typename S>
Batch<S> make_batch(const Dataset& d, const std::vector<std::size_t>& indices,
                    const std::vector<int>& classes) {
  const auto b = Eigen::Index(indices.size());
  const auto dim = d.pooled.front().global.size();
  const auto na = Eigen::Index(d.schema.attributes.size());
  Batch<S> batch;
  batch.global.resize(b, dim);
  batch.labels.resize(b, na);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& p = d.pooled[indices[std::size_t(i)]];
    batch.global.row(i) = p.global.cast<S>().transpose();
    batch.parts.push_back(p.parts.cast<S>());
    const auto& labels = d.annotations.records[indices[std::size_t(i)]].labels;
    for (Eigen::Index j = 0; j < na; ++j) batch.labels(i, j) = S(labels[std::size_t(j)]);
    batch.ids.push_back(classes[std::size_t(i)]);
  }
  return batch;
}

struct LossRow {
  int step = 0;
  double id = 0, triplet = 0, center = 0, attribute = 0, total = 0;
};

inline std::string format_loss_log(const std::vector<LossRow>& rows) {
  std::string out = "step,l_id,l_triplet,l_center,l_attr,total\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + fmt_double(r.id) + "," + fmt_double(r.triplet) + "," +
           fmt_double(r.center) + "," + fmt_double(r.attribute) + "," + fmt_double(r.total) + "\n";
  return out;
}

/// Graph built from the training split's annotation statistics.
inline CorrelationGraph training_graph(const Dataset& d, const Split& s, DegreeMode mode) {
  std::vector<AnnotationRecord> recs;
  for (auto i : s.train) recs.push_back(d.annotations.records[i]);
  const auto stats = compute_stats(make_annotation_set(std::move(recs), d.annotations.num_attributes));
  return build_graph(d.schema, stats, mode);
}

inline WordEmbeddings resolve_embeddings(const RunConfig& cfg, const Schema& schema) {
  auto e = cfg.embeddings_file.empty()
               ? synthesize_embeddings(schema.attributes, cfg.model.embedding_dim, cfg.seed)
               : load_embeddings(cfg.embeddings_file, schema.attributes);
  if (e.dim() != cfg.model.embedding_dim)
    throw ConfigError("embedding file dim " + std::to_string(e.dim()) + " != model.embedding_dim");
  return e;
}

template <typename S>
Model<S> build_model(const RunConfig& cfg, const Dataset& d, const Split& s) {
  const auto graph = training_graph(d, s, cfg.model.degree);
  Model<S> m(cfg.model, graph.normalized, Eigen::Index(d.schema.attributes.size()),
             Eigen::Index(d.schema.parts.size()), d.pooled.front().global.size(), s.classes,
             resolve_embeddings(cfg, d.schema).z, cfg.seed);
  for (const auto& name : cfg.frozen) m.params().set_trainable(name, false);
  return m;
}

/// Momentum SGD or Adam over every trainable tensor except the class centers,
/// which follow the averaged-difference center update.
template <typename S>
class ParamOptimizer {
 public:
  ParamOptimizer(const OptimConfig& cfg, const ParamStore<S>& store) : cfg_(cfg) {
    for (const auto& e : store.entries()) {
      m_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
      v_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
    }
  }

  void step(ParamStore<S>& store, const std::vector<Mat<S>>& grads, std::size_t skip) {
    ++t_;
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& e = store.entries()[i];
      if (!e.trainable || i == skip) continue;
      Mat<S> g = grads[i];
      if (cfg_.weight_decay > 0) g += S(cfg_.weight_decay) * e.value;
      auto& w = store.mutable_value(i);
      if (cfg_.optimizer == Optimizer::sgd) {
        m_[i] = S(cfg_.momentum) * m_[i] + g;
        w -= S(cfg_.lr) * m_[i];
      } else {
        m_[i] = S(cfg_.beta1) * m_[i] + S(1 - cfg_.beta1) * g;
        v_[i] = S(cfg_.beta2) * v_[i] + S(1 - cfg_.beta2) * g.cwiseAbs2();
        const S c1 = S(1 - std::pow(cfg_.beta1, t_)), c2 = S(1 - std::pow(cfg_.beta2, t_));
        w.array() -= S(cfg_.lr) * (m_[i].array() / c1) /
                     ((v_[i].array() / c2).sqrt() + S(cfg_.adam_eps));
      }
    }
  }

 private:
  OptimConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  int t_ = 0;
};

template <typename S>
struct TrainResult {
  Model<S> model;
  std::vector<LossRow> log;
};

/// Runs `cfg.optim.steps` PK-batch steps. Deterministic for a fixed seed.
template <typename S>
TrainResult<S> train(const RunConfig& cfg, const Dataset& d) {
  const Split split = split_dataset(d, cfg.split);
  TrainResult<S> res{build_model<S>(cfg, d, split), {}};
  auto& model = res.model;
  PkSampler sampler(split.train_class, cfg.optim.batch, substream(cfg.seed, "sampler"));
  ParamOptimizer<S> opt(cfg.optim, model.params());
  CenterState<S> centers{model.params()[model.centers_index()], S(cfg.loss.center_lr)};
  const bool centers_trainable = model.params().entries()[model.centers_index()].trainable;

  for (int step = 1; step <= cfg.optim.steps; ++step) {
    const auto picks = sampler.next();
    std::vector<std::size_t> idx;
    std::vector<int> cls;
    for (auto p : picks) {
      idx.push_back(split.train[p]);
      cls.push_back(split.train_class[p]);
    }
    const auto batch = make_batch<S>(d, idx, cls);
    StepResult<S> r;
    try {
      r = model.forward_backward(batch, cfg.loss.weights, cfg.loss.triplet, true);
    } catch (const Error& e) {
      throw Error("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    res.log.push_back({step, double(r.parts.id), double(r.parts.triplet), double(r.parts.center),
                       double(r.parts.attribute), double(r.total)});
    opt.step(model.params(), r.grads, model.centers_index());
    if (centers_trainable) {
      centers.centers = model.params()[model.centers_index()];
      update_centers(centers, r.embeddings, batch.ids);
      model.params().set(model.centers_index(), centers.centers);
    }
    model.update_running_stats(r, batch.size());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: "GPSC", u64 schema hash, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64 row-major.

struct Checkpoint {
  std::uint64_t schema_hash = 0;
  std::vector<std::pair<std::string, Matd>> tensors;

  const Matd* find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  }
  const Matd& at(const std::string& name) const {
    auto m = find(name);
    if (!m) throw IoError("checkpoint lacks tensor " + name);
    return *m;
  }
};

template <typename S>
Checkpoint make_checkpoint(const Model<S>& m, std::uint64_t schema_hash) {
  Checkpoint c{schema_hash, {}};
  for (const auto& e : m.params().entries()) c.tensors.emplace_back(e.name, e.value.template cast<double>());
  return c;
}

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string buf;
  binio::put_magic(buf, "GPSC");
  binio::put<std::uint64_t>(buf, c.schema_hash);
  binio::put<std::uint32_t>(buf, std::uint32_t(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    binio::put<std::uint32_t>(buf, std::uint32_t(name.size()));
    buf += name;
    binio::put<std::uint32_t>(buf, std::uint32_t(m.rows()));
    binio::put<std::uint32_t>(buf, std::uint32_t(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) binio::put<double>(buf, m(i, j));
  }
  return buf;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  binio::Reader rd(bytes, source);
  rd.expect_magic("GPSC");
  Checkpoint c;
  c.schema_hash = rd.get<std::uint64_t>();
  const auto n = rd.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < n; ++t) {
    const auto len = rd.get<std::uint32_t>();
    std::string name(rd.take(len));
    const auto rows = rd.get<std::uint32_t>(), cols = rd.get<std::uint32_t>();
    if (std::uint64_t(rows) * cols > (1ull << 28)) throw IoError(source + ": tensor too large");
    Matd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rd.get<double>();
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  rd.expect_end();
  return c;
}

inline void save_checkpoint(const std::filesystem::path& p, const Checkpoint& c) {
  write_file(p, encode_checkpoint(c));
}
inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint(read_file(p), p.string());
}

/// Rebuilds a model from checkpoint tensors. Dimensions come from the
/// tensors; hyper-parameters (slope, layer widths, toggles) from `cfg`.
template <typename S>
Model<S> model_from_checkpoint(const Checkpoint& c, const ModelConfig& cfg, const Schema& schema) {
  if (c.schema_hash != schema.hash()) throw IoError("checkpoint was trained on a different schema");
  const auto& fc = c.at("id_head.weight");
  const auto& graph = c.at("graph.normalized");
  const auto& z = c.at("embeddings");
  if (fc.cols() % 2 != 0) throw IoError("checkpoint: identity head width must be even");
  Model<S> m(cfg, graph, z.rows(), graph.rows() - z.rows(), fc.cols() / 2, fc.rows(), z, 0);
  auto& store = m.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.entries()[i].name;
    const auto& v = c.at(name);
    if (v.rows() != store[i].rows() || v.cols() != store[i].cols())
      throw IoError("checkpoint tensor " + name + " does not match the model config");
    store.set(i, v.template cast<S>());
  }
  if (c.tensors.size() != store.size()) throw IoError("checkpoint has tensors the model config does not use");
  return m;
}

enum class FeatureKind { bnn, concat };

inline FeatureKind parse_feature(const std::string& s) {
  if (s == "bnn") return FeatureKind::bnn;
  if (s == "concat") return FeatureKind::concat;
  throw ConfigError("feature must be bnn|concat, got \"" + s + "\"");
}
inline const char* to_string(FeatureKind f) { return f == FeatureKind::bnn ? "bnn" : "concat"; }

template <typename S>
Signature extract_signature(const Model<S>& m, const PooledSample& p, const AnnotationRecord& rec,
                            FeatureKind kind) {
  const auto inf = m.infer(p.global.cast<S>(), p.parts.cast<S>());
  Signature s;
  s.vector = kind == FeatureKind::bnn ? Vecd(inf.bnn.template cast<double>())
                                      : Vecd(concat<S>(inf.bnn, inf.graph).template cast<double>());
  s.identity = rec.identity;
  s.camera = rec.camera;
  return s;
}

struct EvalReport {
  FeatureKind feature = FeatureKind::concat;
  Distance distance = Distance::euclidean;
  RetrievalRun run;
  double attribute_accuracy = 0;
  bool accuracy_vs_ground_truth = false;
  std::size_t images = 0;
};

/// Held-out evaluation: every test image queries all other test images;
/// attribute accuracy is measured against the noise-free table when known.
template <typename S>
EvalReport evaluate_model(const Model<S>& m, const Dataset& d, const std::vector<std::size_t>& test,
                          FeatureKind feature, Distance dist = Distance::euclidean) {
  EvalReport rep;
  rep.feature = feature;
  rep.distance = dist;
  rep.images = test.size();
  rep.accuracy_vs_ground_truth = d.ground_truth.has_value();
  std::vector<Signature> sigs;
  std::size_t correct = 0, total = 0;
  for (auto i : test) {
    const auto& rec = d.annotations.records[i];
    sigs.push_back(extract_signature(m, d.pooled[i], rec, feature));
    const auto inf = m.infer(d.pooled[i].global.cast<S>(), d.pooled[i].parts.cast<S>());
    for (Eigen::Index j = 0; j < inf.attribute_logits.size(); ++j) {
      const int truth = d.ground_truth ? (*d.ground_truth)(rec.identity, j) : rec.labels[std::size_t(j)];
      correct += (inf.attribute_logits(j) > S(0)) == (truth != 0);
      ++total;
    }
  }
  rep.attribute_accuracy = double(correct) / double(total);
  rep.run = evaluate(sigs, sigs, dist);
  return rep;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["feature"] = to_string(r.feature);
  j["distance"] = r.distance == Distance::euclidean ? "euclidean" : "cosine";
  j["images"] = r.images;
  j["attribute_accuracy"] = r.attribute_accuracy;
  j["attribute_reference"] = r.accuracy_vs_ground_truth ? "ground_truth" : "labels";
  const auto run = run_to_json(r.run);
  for (const auto& [k, v] : run.items()) j[k] = v;
  return j;
}

inline std::string report_csv(const EvalReport& r) {
  return "feature,mAP,R1,R5,R10,attr_acc\n" + std::string(to_string(r.feature)) + "," +
         fmt_double(r.run.map) + "," + fmt_double(r.run.rank_k(1)) + "," + fmt_double(r.run.rank_k(5)) +
         "," + fmt_double(r.run.rank_k(10)) + "," + fmt_double(r.attribute_accuracy) + "\n";
}

}  // namespace gps
