#pragma once

// Run configuration: JSON sections data / model / loss / optim / seed.
// Unknown keys are rejected before anything else happens.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "gps/corrgraph.hpp"
#include "gps/error.hpp"
#include "gps/losses.hpp"
#include "gps/model.hpp"
#include "gps/sampler.hpp"
#include "gps/synthgen.hpp"
#include "gps/util.hpp"
#include "json.hpp"

namespace gps {

enum class Optimizer { sgd, adam };
enum class Precision { f64, f32 };

struct OptimConfig {
  Optimizer optimizer = Optimizer::sgd;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int steps = 2000;
  BatchSpec batch{4, 4};
  Precision precision = Precision::f64;
};

struct LossConfig {
  LossWeights weights;
  TripletOptions triplet;
  double center_lr = 0.5;
};

// images: the last `test_images` images of every identity are held out.
// identities: identities [0, train_identities) train, the rest are held out.
enum class SplitMode { images, identities };

struct SplitSpec {
  SplitMode mode = SplitMode::images;
  int test_images = 4;
  int train_identities = 14;
};

struct RunConfig {
  SynthConfig data;
  SplitSpec split;
  ModelConfig model;
  std::string embeddings_file;  // empty: synthesize from the seed
  std::vector<std::string> frozen;
  LossConfig loss;
  OptimConfig optim;
  std::uint64_t seed = 7;

  void validate() const {
    data.validate();
    model.validate();
    loss.weights.validate();
    optim.batch.validate();
    if (split.train_identities < 2 || split.train_identities >= data.identities)
      throw ConfigError("data.train_identities must be in [2, identities)");
    if (split.test_images < 1 || split.test_images >= data.images_per_identity)
      throw ConfigError("data.test_images must be in [1, images_per_identity)");
    if (!(loss.triplet.margin >= 0)) throw ConfigError("loss.margin must be >= 0");
    if (!(loss.center_lr >= 0)) throw ConfigError("loss.center_lr must be >= 0");
    if (!(optim.lr >= 0) || !(optim.momentum >= 0 && optim.momentum < 1))
      throw ConfigError("optim.lr must be >= 0 and optim.momentum in [0, 1)");
    if (optim.steps < 0) throw ConfigError("optim.steps must be >= 0");
    const bool by_image = split.mode == SplitMode::images;
    if (optim.batch.p > (by_image ? data.identities : split.train_identities))
      throw ConfigError("optim.P exceeds the number of training identities");
    if (optim.batch.k > data.images_per_identity - (by_image ? split.test_images : 0))
      throw ConfigError("optim.K exceeds training images per identity");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& section,
                           std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config section \"" + section + "\" must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown config key \"" + section + "." + k + "\"");
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key \"" + section + "." + key + "\" has the wrong type");
  }
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  RunConfig c;
  detail::reject_unknown(j, "<root>", {"data", "model", "loss", "optim", "seed"});
  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::reject_unknown(d, "data", {"identities", "images_per_identity", "num_attributes", "width",
                                       "height", "channels", "mask_scale", "cameras", "attribute_noise",
                                       "feature_noise", "split", "test_images",
                                       "train_identities"});
    read(d, "identities", c.data.identities, "data");
    read(d, "images_per_identity", c.data.images_per_identity, "data");
    read(d, "num_attributes", c.data.num_attributes, "data");
    read(d, "width", c.data.width, "data");
    read(d, "height", c.data.height, "data");
    read(d, "channels", c.data.channels, "data");
    read(d, "mask_scale", c.data.mask_scale, "data");
    read(d, "cameras", c.data.cameras, "data");
    read(d, "attribute_noise", c.data.attribute_noise, "data");
    read(d, "feature_noise", c.data.feature_noise, "data");
    std::string split = "images";
    read(d, "split", split, "data");
    if (split != "images" && split != "identities") throw ConfigError("data.split must be images|identities");
    c.split.mode = split == "images" ? SplitMode::images : SplitMode::identities;
    read(d, "test_images", c.split.test_images, "data");
    read(d, "train_identities", c.split.train_identities, "data");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model", {"embedding_dim", "hidden", "leaky_slope", "degree", "bnneck",
                                        "train_embeddings", "identity_bias", "projection",
                                        "embeddings_file", "frozen"});
    read(m, "embedding_dim", c.model.embedding_dim, "model");
    read(m, "hidden", c.model.hidden, "model");
    read(m, "leaky_slope", c.model.leaky_slope, "model");
    std::string degree = to_string(c.model.degree), projection = "shared";
    read(m, "degree", degree, "model");
    c.model.degree = parse_degree_mode(degree);
    read(m, "bnneck", c.model.bnneck, "model");
    read(m, "train_embeddings", c.model.train_embeddings, "model");
    read(m, "identity_bias", c.model.identity_bias, "model");
    read(m, "projection", projection, "model");
    if (projection != "shared" && projection != "per_part")
      throw ConfigError("model.projection must be shared|per_part");
    c.model.per_part_projection = projection == "per_part";
    read(m, "embeddings_file", c.embeddings_file, "model");
    read(m, "frozen", c.frozen, "model");
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    detail::reject_unknown(l, "loss", {"id", "triplet", "center", "attribute", "margin", "mining", "center_lr"});
    read(l, "id", c.loss.weights.id, "loss");
    read(l, "triplet", c.loss.weights.triplet, "loss");
    read(l, "center", c.loss.weights.center, "loss");
    read(l, "attribute", c.loss.weights.attribute, "loss");
    read(l, "margin", c.loss.triplet.margin, "loss");
    std::string mining = "hard";
    read(l, "mining", mining, "loss");
    c.loss.triplet.mining = parse_mining(mining);
    read(l, "center_lr", c.loss.center_lr, "loss");
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    detail::reject_unknown(o, "optim", {"optimizer", "lr", "momentum", "beta1", "beta2", "weight_decay",
                                        "steps", "P", "K", "precision"});
    std::string opt = "sgd", prec = "f64";
    read(o, "optimizer", opt, "optim");
    if (opt != "sgd" && opt != "adam") throw ConfigError("optim.optimizer must be sgd|adam");
    c.optim.optimizer = opt == "sgd" ? Optimizer::sgd : Optimizer::adam;
    read(o, "lr", c.optim.lr, "optim");
    read(o, "momentum", c.optim.momentum, "optim");
    read(o, "beta1", c.optim.beta1, "optim");
    read(o, "beta2", c.optim.beta2, "optim");
    read(o, "weight_decay", c.optim.weight_decay, "optim");
    read(o, "steps", c.optim.steps, "optim");
    read(o, "P", c.optim.batch.p, "optim");
    read(o, "K", c.optim.batch.k, "optim");
    read(o, "precision", prec, "optim");
    if (prec != "f64" && prec != "f32") throw ConfigError("optim.precision must be f64|f32");
    c.optim.precision = prec == "f64" ? Precision::f64 : Precision::f32;
  }
  read(j, "seed", c.seed, "<root>");
  c.data.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw IoError("config file not found: " + p.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + p.string() + ": " + e.what());
  }
  return parse_config(j);
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["data"] = {{"identities", c.data.identities},
               {"images_per_identity", c.data.images_per_identity},
               {"num_attributes", c.data.num_attributes},
               {"width", c.data.width},
               {"height", c.data.height},
               {"channels", c.data.channels},
               {"mask_scale", c.data.mask_scale},
               {"cameras", c.data.cameras},
               {"attribute_noise", c.data.attribute_noise},
               {"feature_noise", c.data.feature_noise},
               {"split", c.split.mode == SplitMode::images ? "images" : "identities"},
               {"test_images", c.split.test_images},
               {"train_identities", c.split.train_identities}};
  j["model"] = {{"embedding_dim", c.model.embedding_dim},
                {"hidden", c.model.hidden},
                {"leaky_slope", c.model.leaky_slope},
                {"degree", to_string(c.model.degree)},
                {"bnneck", c.model.bnneck},
                {"train_embeddings", c.model.train_embeddings},
                {"identity_bias", c.model.identity_bias},
                {"projection", c.model.per_part_projection ? "per_part" : "shared"},
                {"embeddings_file", c.embeddings_file},
                {"frozen", c.frozen}};
  j["loss"] = {{"id", c.loss.weights.id},
               {"triplet", c.loss.weights.triplet},
               {"center", c.loss.weights.center},
               {"attribute", c.loss.weights.attribute},
               {"margin", c.loss.triplet.margin},
               {"mining", c.loss.triplet.mining == TripletMining::hard ? "hard" : "all"},
               {"center_lr", c.loss.center_lr}};
  j["optim"] = {{"optimizer", c.optim.optimizer == Optimizer::sgd ? "sgd" : "adam"},
                {"lr", c.optim.lr},
                {"momentum", c.optim.momentum},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"weight_decay", c.optim.weight_decay},
                {"steps", c.optim.steps},
                {"P", c.optim.batch.p},
                {"K", c.optim.batch.k},
                {"precision", c.optim.precision == Precision::f64 ? "f64" : "f32"}};
  j["seed"] = c.seed;
  return j;
}

}  // namespace gps
