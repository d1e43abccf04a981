#pragma once

// Shared test fixtures: the 4-image toy corpus and a small trainable model.

#include <filesystem>
#include <random>
#include <string>

#include "gps/gps.hpp"

namespace fixtures {

inline const std::string kToyCsv =
    "image_id,identity,camera,a1,a2,a3\n"
    "img0,10,0,1,1,0\n"
    "img1,10,1,1,0,0\n"
    "img2,11,0,1,1,1\n"
    "img3,11,1,0,1,0\n";

inline gps::Schema toy_schema() {
  return gps::Schema(gps::AttributeSchema({"a1", "a2", "a3"}), gps::PartSchema::canonical(),
                     {{"foreground", {"a3"}}, {"head", {"a1"}}, {"upper", {"a2"}}});
}

inline gps::AnnotationSet toy_annotations() {
  return gps::parse_annotations(kToyCsv, toy_schema().attributes);
}

inline gps::Matd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed,
                               double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  gps::Matd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gps_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

/// Small synthetic dataset + model + one PK batch, for gradient and training tests.
struct Toy {
  gps::RunConfig cfg;
  gps::Dataset data;
  gps::Split split;

  explicit Toy(std::uint64_t seed, nlohmann::json overrides = nlohmann::json::object()) {
    overrides["seed"] = seed;
    cfg = gps::parse_config(overrides);
    data = gps::dataset_from_synth(gps::generate(cfg.data));
    split = gps::split_dataset(data, cfg.split);
  }

  template <typename S = double>
  gps::Model<S> model() const {
    return gps::build_model<S>(cfg, data, split);
  }

  template <typename S = double>
  gps::Batch<S> batch(std::uint64_t stream = 0) const {
    gps::PkSampler sampler(split.train_class, cfg.optim.batch,
                           gps::substream(cfg.seed + stream, "sampler"));
    std::vector<std::size_t> idx;
    std::vector<int> cls;
    for (auto p : sampler.next()) {
      idx.push_back(split.train[p]);
      cls.push_back(split.train_class[p]);
    }
    return gps::make_batch<S>(data, idx, cls);
  }
};

}  // namespace fixtures
