#pragma once

// Deterministic synthetic identities: per-identity attribute vectors,
// feature maps built from attribute templates placed in part regions plus an
// identity signal and noise, and rectangular part masks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gps/error.hpp"
#include "gps/featops.hpp"
#include "gps/ontology.hpp"
#include "gps/util.hpp"

namespace gps {

struct SynthConfig {
  int identities = 20;
  int images_per_identity = 10;
  int num_attributes = 8;
  int width = 8;
  int height = 4;
  int channels = 32;
  int mask_scale = 2;  // masks are emitted at mask_scale x the feature resolution
  int cameras = 2;
  double attribute_noise = 0.05;
  double feature_noise = 1.0;
  std::uint64_t seed = 7;

  int num_images() const { return identities * images_per_identity; }

  void validate() const {
    if (identities < 2) throw ConfigError("data.identities must be >= 2");
    if (images_per_identity < 2) throw ConfigError("data.images_per_identity must be >= 2");
    if (num_attributes < 1) throw ConfigError("data.num_attributes must be >= 1");
    if (width < 3 || height < 4) throw ConfigError("data.width must be >= 3 and data.height >= 4");
    if (channels <= num_attributes)
      throw ConfigError("data.channels must exceed data.num_attributes");
    if (mask_scale < 1) throw ConfigError("data.mask_scale must be >= 1");
    if (cameras < 1) throw ConfigError("data.cameras must be >= 1");
    if (!(attribute_noise >= 0 && attribute_noise < 1))
      throw ConfigError("data.attribute_noise must be in [0, 1)");
    if (!(feature_noise >= 0) || !std::isfinite(feature_noise))
      throw ConfigError("data.feature_noise must be >= 0");
  }
};

/// Attribute names grouped by the part they attach to.
inline const std::vector<std::pair<std::string, std::vector<std::string>>>& part_attribute_table() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> t = {
      {"foreground", {"gender", "age"}},
      {"head", {"hair_length", "hat"}},
      {"upper", {"upper_type", "upper_color", "backpack"}},
      {"lower", {"lower_type", "lower_color", "lower_length"}},
      {"arm", {"sleeve_length", "bag", "handbag"}},
  };
  return t;
}

/// Schema with `n` attributes taken round-robin over the five parts so every
/// part gets attributes early; generic names beyond the table.
inline Schema synthetic_schema(int n) {
  const auto& table = part_attribute_table();
  std::vector<std::string> names;
  AttachmentSpec spec;
  for (const auto& [part, _] : table) spec.emplace_back(part, std::vector<std::string>{});
  std::vector<std::size_t> cursor(table.size(), 0);
  for (int j = 0; j < n; ++j) {
    std::size_t part = std::size_t(j) % table.size();
    // skip parts whose named list ran out
    std::size_t tries = 0;
    while (cursor[part] >= table[part].second.size() && tries < table.size()) {
      part = (part + 1) % table.size();
      ++tries;
    }
    std::string name;
    if (tries < table.size()) {
      name = table[part].second[cursor[part]++];
    } else {
      part = std::size_t(j) % table.size();
      name = "attr_" + std::to_string(j);
    }
    names.push_back(name);
    spec[part].second.push_back(name);
  }
  return Schema(AttributeSchema(names), PartSchema::canonical(), std::move(spec));
}

/// Feature-resolution region of each canonical part: foreground excludes the
/// outer columns; head/upper/lower/arm are horizontal bands inside it.
inline std::vector<Mask> part_regions(int width, int height) {
  std::vector<Mask> regions(5, Mask::Zero(width, height));
  for (int x = 1; x + 1 < width; ++x)
    for (int y = 0; y < height; ++y) {
      regions[0](x, y) = 1;
      const int band = (4 * y) / height;
      regions[std::size_t(1 + band)](x, y) = 1;
    }
  return regions;
}

struct SynthDataset {
  SynthConfig config;
  Schema schema;
  AnnotationSet annotations;
  std::vector<FeatureMap> features;
  std::vector<std::vector<Mask>> masks;  // raw masks at mask_scale resolution
  Eigen::MatrixXi ground_truth;          // identities x N_A, noise-free attributes
  Vecd target_prevalence;
};

inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset ds;
  ds.config = cfg;
  ds.schema = synthetic_schema(cfg.num_attributes);
  const int na = cfg.num_attributes, n_ids = cfg.identities, d = cfg.channels;
  const int w = cfg.width, h = cfg.height, locs = w * h;

  // Per-attribute target prevalence; exactly round(p * identities) identities
  // carry each attribute.
  ds.target_prevalence.resize(na);
  ds.ground_truth = Eigen::MatrixXi::Zero(n_ids, na);
  {
    auto rng = substream(cfg.seed, "synth/prevalence");
    std::uniform_real_distribution<double> u(0.2, 0.8);
    for (int j = 0; j < na; ++j) ds.target_prevalence(j) = u(rng);
    auto pick = substream(cfg.seed, "synth/attributes");
    std::vector<int> order(static_cast<std::size_t>(n_ids));
    for (int j = 0; j < na; ++j) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), pick);
      const int count = std::clamp(int(std::lround(ds.target_prevalence(j) * n_ids)), 1, n_ids - 1);
      for (int c = 0; c < count; ++c) ds.ground_truth(order[std::size_t(c)], j) = 1;
    }
  }

  Matd identity_signal(n_ids, d - na);
  {
    auto rng = substream(cfg.seed, "synth/identity");
    std::normal_distribution<double> normal;
    for (int i = 0; i < n_ids; ++i)
      for (int c = 0; c < d - na; ++c) identity_signal(i, c) = normal(rng);
  }

  const auto regions = part_regions(w, h);
  std::vector<Mask> raw_masks;
  for (const auto& r : regions) {
    Mask m(w * cfg.mask_scale, h * cfg.mask_scale);
    for (int x = 0; x < m.rows(); ++x)
      for (int y = 0; y < m.cols(); ++y) m(x, y) = r(x / cfg.mask_scale, y / cfg.mask_scale);
    raw_masks.push_back(std::move(m));
  }
  // Template amplitude makes every attribute contribute exactly 1 to the
  // global average of its channel.
  std::vector<int> owner(static_cast<std::size_t>(na));
  std::vector<double> amplitude(static_cast<std::size_t>(na));
  for (int j = 0; j < na; ++j) {
    owner[std::size_t(j)] = int(ds.schema.attachment.part_of(j));
    amplitude[std::size_t(j)] = double(locs) / regions[std::size_t(owner[std::size_t(j)])].sum();
  }

  auto label_rng = substream(cfg.seed, "synth/labels");
  std::bernoulli_distribution flip(cfg.attribute_noise);
  std::vector<AnnotationRecord> records;
  for (int id = 0; id < n_ids; ++id)
    for (int m = 0; m < cfg.images_per_identity; ++m) {
      const int index = id * cfg.images_per_identity + m;
      Matd f = Matd::Zero(locs, d);
      for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
          const int loc = x + w * y;
          if (regions[0](x, y) > 0) f.row(loc).tail(d - na) = identity_signal.row(id);
          for (int j = 0; j < na; ++j)
            if (ds.ground_truth(id, j) && regions[std::size_t(owner[std::size_t(j)])](x, y) > 0)
              f(loc, j) += amplitude[std::size_t(j)];
        }
      if (cfg.feature_noise > 0) {
        auto rng = substream(cfg.seed, "synth/image/" + std::to_string(index));
        std::normal_distribution<double> normal(0.0, cfg.feature_noise);
        for (Eigen::Index c = 0; c < f.cols(); ++c)
          for (Eigen::Index r = 0; r < f.rows(); ++r) f(r, c) += normal(rng);
      }
      // Stored as 32-bit floats on disk; keep the in-memory copy identical.
      f = f.cast<float>().cast<double>();
      ds.features.emplace_back(w, h, std::move(f));
      ds.masks.push_back(raw_masks);

      AnnotationRecord rec;
      char buf[64];
      std::snprintf(buf, sizeof buf, "id%03d_img%03d", id, m);
      rec.image_id = buf;
      rec.original_identity = id;
      rec.camera = m % cfg.cameras;
      rec.labels.resize(std::size_t(na));
      for (int j = 0; j < na; ++j) {
        const bool v = ds.ground_truth(id, j) != 0;
        rec.labels[std::size_t(j)] = flip(label_rng) ? !v : v;
      }
      records.push_back(std::move(rec));
    }
  ds.annotations = make_annotation_set(std::move(records), std::size_t(na));
  return ds;
}

}  // namespace gps
