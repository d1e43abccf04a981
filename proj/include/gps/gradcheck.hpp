#pragma once

// Central finite-difference verification of the analytic gradients.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gps/model.hpp"

namespace gps {

struct TensorCheck {
  std::string name;
  std::size_t entries = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // coordinates whose ±step crossed a non-smooth point
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradReport {
  std::vector<TensorCheck> tensors;
  double step = 1e-5;
  double tolerance = 1e-5;
  bool passed = true;

  double max_rel_error() const {
    double m = 0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  double sample_fraction = 0.05;
  std::size_t full_sweep_below = 200;
  std::string corrupt;  // tensor whose analytic gradient is scaled by 1.01
  std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares analytic gradients of every trainable tensor against central
/// differences. Large tensors are checked on a random coordinate sample.
/// Coordinates whose perturbation changes a discrete branch (LeakyReLU sign,
/// triplet selection or hinge) are re-listed as skipped: the difference
/// quotient is not a derivative there.
inline GradReport finite_diff_check(Model<double>& model, const Batch<double>& batch,
                                    const LossWeights& w, const TripletOptions& trip,
                                    const GradCheckOptions& opt = {}) {
  GradReport rep;
  rep.step = opt.step;
  rep.tolerance = opt.tolerance;
  const auto base = model.forward_backward(batch, w, trip, true);
  auto rng = substream(opt.seed, "gradcheck");
  auto& store = model.params();
  if (!opt.corrupt.empty()) store.index(opt.corrupt);

  for (std::size_t t = 0; t < store.size(); ++t) {
    const auto& e = store.entries()[t];
    if (!e.trainable) continue;
    TensorCheck tc;
    tc.name = e.name;
    tc.entries = std::size_t(e.value.size());
    Matd analytic = base.grads[t];
    if (e.name == opt.corrupt) analytic *= 1.01;

    std::vector<Eigen::Index> coords(tc.entries);
    std::iota(coords.begin(), coords.end(), Eigen::Index(0));
    if (tc.entries >= opt.full_sweep_below) {
      std::shuffle(coords.begin(), coords.end(), rng);
      const auto n = std::max<std::size_t>(1, std::size_t(std::ceil(opt.sample_fraction * double(tc.entries))));
      coords.resize(n);
      std::sort(coords.begin(), coords.end());
    }
    for (auto c : coords) {
      double& x = store.mutable_value(t).data()[c];
      const double saved = x;
      x = saved + opt.step;
      const auto plus = model.forward_backward(batch, w, trip, false);
      x = saved - opt.step;
      const auto minus = model.forward_backward(batch, w, trip, false);
      x = saved;
      if (plus.branches != base.branches || minus.branches != base.branches) {
        ++tc.skipped_kinks;
        continue;
      }
      // Differenced per term, then weighted: a small-weight term is not swamped
      // by rounding in the larger ones.
      const double h2 = 2 * opt.step;
      const double numeric = w.id * ((plus.parts.id - minus.parts.id) / h2) +
                             w.triplet * ((plus.parts.triplet - minus.parts.triplet) / h2) +
                             w.center * ((plus.parts.center - minus.parts.center) / h2) +
                             w.attribute * ((plus.parts.attribute - minus.parts.attribute) / h2);
      const double err = relative_error(analytic.data()[c], numeric);
      tc.max_rel_error = std::max(tc.max_rel_error, err);
      ++tc.checked;
    }
    tc.passed = tc.max_rel_error <= opt.tolerance && tc.checked > 0;
    rep.passed = rep.passed && tc.passed;
    rep.tensors.push_back(std::move(tc));
  }
  return rep;
}

}  // namespace gps
