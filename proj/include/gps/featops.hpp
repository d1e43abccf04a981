#pragma once

// Feature maps, part masks, masked part pooling, global pooling, BNNeck and
// the part projection.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gps/error.hpp"
#include "gps/types.hpp"
#include "gps/util.hpp"

namespace gps {

/// W x H x D feature map. Row i of `values` is the feature vector at grid
/// location i = x + W * y.
struct FeatureMap {
  int width = 0;
  int height = 0;
  Matd values;  // (W*H) x D

  FeatureMap() = default;
  FeatureMap(int w, int h, Matd v) : width(w), height(h), values(std::move(v)) { validate(); }

  int channels() const { return int(values.cols()); }
  int locations() const { return width * height; }

  void validate() const {
    if (width < 1 || height < 1 || values.cols() < 1)
      throw InvalidArgument("feature map dims must be >= 1");
    if (values.rows() != Eigen::Index(width) * height)
      throw InvalidArgument("feature map row count != W*H");
    if (!values.allFinite()) throw InvalidArgument("feature map has non-finite entries");
  }
};

/// Masks are W x H matrices, entry (x, y) for grid location x + W * y.
using Mask = Matd;

struct NormalizedMask {
  Mask weights;
  bool absent = false;
};

inline NormalizedMask l1_normalize(const Mask& mask) {
  if ((mask.array() < 0.0).any()) throw InvalidArgument("l1_normalize: negative mask entry");
  const double sum = mask.sum();
  if (sum == 0.0) return {mask, true};
  return {mask / sum, false};
}

namespace detail {

/// Row-stochastic area-overlap weights mapping `src` cells onto `dst` cells.
inline Matd area_weights(int dst, int src) {
  Matd w = Matd::Zero(dst, src);
  const double ratio = double(src) / double(dst);
  for (int t = 0; t < dst; ++t) {
    const double lo = t * ratio, hi = (t + 1) * ratio;
    for (int s = int(std::floor(lo)); s < src && s < hi; ++s) {
      const double overlap = std::min(hi, double(s + 1)) - std::max(lo, double(s));
      if (overlap > 0) w(t, s) = overlap / ratio;
    }
  }
  return w;
}

}  // namespace detail

/// Area-averaged resampling to `width` x `height`.
inline Mask resize_mask(const Mask& mask, int width, int height) {
  if (width < 1 || height < 1) throw InvalidArgument("resize_mask: target dims must be >= 1");
  if (mask.rows() < 1 || mask.cols() < 1) throw InvalidArgument("resize_mask: empty source mask");
  if (mask.rows() == width && mask.cols() == height) return mask;
  return detail::area_weights(width, int(mask.rows())) * mask *
         detail::area_weights(height, int(mask.cols())).transpose();
}

/// f_part = sum_i h_i f_i over all W*H locations.
inline Vecd masked_pool(const FeatureMap& f, const Mask& mask) {
  if (mask.rows() != f.width || mask.cols() != f.height)
    throw InvalidArgument("masked_pool: mask dims do not match feature map");
  const Eigen::Map<const Vecd> h(mask.data(), mask.size());
  return f.values.transpose() * h;
}

inline Vecd global_pool(const FeatureMap& f) {
  return f.values.colwise().mean().transpose();
}

/// Pooled part features (N_P x D) projected into the word-embedding space.
/// `projection` is either one shared D_w x D map or N_P maps stacked
/// vertically ((N_P*D_w) x D).
template <typename S>
Mat<S> project_parts(const Mat<S>& pooled, const Mat<S>& projection, Eigen::Index dw) {
  const auto np = pooled.rows();
  if (projection.cols() != pooled.cols())
    throw InvalidArgument("project_parts: projection width != feature dim");
  if (projection.rows() == dw) return pooled * projection.transpose();
  if (projection.rows() != np * dw) throw InvalidArgument("project_parts: projection shape mismatch");
  Mat<S> out(np, dw);
  for (Eigen::Index k = 0; k < np; ++k)
    out.row(k) = (projection.middleRows(k * dw, dw) * pooled.row(k).transpose()).transpose();
  return out;
}

template <typename S>
struct BatchNormResult {
  Mat<S> output;  // B x D
  Mat<S> xhat;    // standardized input
  Vec<S> mean;
  Vec<S> var;     // biased batch variance
};

/// Train-mode BNNeck: per-channel standardization with batch statistics,
/// scaled by gamma, no shift.
template <typename S>
BatchNormResult<S> batchnorm_train(const Mat<S>& batch, const Vec<S>& gamma, S eps) {
  if (batch.rows() < 2) throw InvalidArgument("bnneck: train mode needs a batch of at least 2");
  if (gamma.size() != batch.cols()) throw InvalidArgument("bnneck: gamma size != feature dim");
  BatchNormResult<S> r;
  r.mean = batch.colwise().mean().transpose();
  const Mat<S> centered = batch.rowwise() - r.mean.transpose();
  r.var = centered.array().square().colwise().mean().transpose();
  const Vec<S> inv = (r.var.array() + eps).rsqrt();
  r.xhat = centered * inv.asDiagonal();
  r.output = r.xhat * gamma.asDiagonal();
  return r;
}

enum class BnMode { train, eval };

/// BNNeck with running statistics.
struct BnNeck {
  Vecd gamma;
  Vecd running_mean;
  Vecd running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BnNeck(Eigen::Index dim = 0)
      : gamma(Vecd::Ones(dim)), running_mean(Vecd::Zero(dim)), running_var(Vecd::Ones(dim)) {}

  /// Running variance tracks the unbiased batch variance.
  void update_running(const Vecd& mean, const Vecd& biased_var, Eigen::Index batch) {
    const double unbias = double(batch) / double(batch - 1);
    running_mean = (1.0 - momentum) * running_mean + momentum * mean;
    running_var = (1.0 - momentum) * running_var + momentum * (biased_var * unbias);
  }

  Vecd eval_one(const Vecd& x) const {
    return (x - running_mean).cwiseProduct((running_var.array() + eps).rsqrt().matrix())
        .cwiseProduct(gamma);
  }

  Matd forward(const Matd& batch, BnMode mode) {
    if (batch.cols() != gamma.size()) throw InvalidArgument("bnneck: feature dim mismatch");
    if (mode == BnMode::train) {
      auto r = batchnorm_train<double>(batch, gamma, eps);
      update_running(r.mean, r.var, batch.rows());
      return r.output;
    }
    Matd out(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      out.row(i) = eval_one(batch.row(i).transpose()).transpose();
    return out;
  }
};

// ---------------------------------------------------------------------------
// Binary files. All integers and floats little-endian.
//   GPSF: "GPSF", u32 W, u32 H, u32 D, W*H*D f32 (location-major, then channel)
//   GPSM: "GPSM", u32 N_P, u32 W, u32 H, N_P*W*H f32 (part-major, then location)

inline std::string encode_feature_map(const FeatureMap& f) {
  std::string buf;
  binio::put_magic(buf, "GPSF");
  binio::put<std::uint32_t>(buf, std::uint32_t(f.width));
  binio::put<std::uint32_t>(buf, std::uint32_t(f.height));
  binio::put<std::uint32_t>(buf, std::uint32_t(f.channels()));
  for (Eigen::Index i = 0; i < f.values.rows(); ++i)
    for (Eigen::Index d = 0; d < f.values.cols(); ++d)
      binio::put<float>(buf, float(f.values(i, d)));
  return buf;
}

inline FeatureMap decode_feature_map(std::string_view bytes, const std::string& source) {
  binio::Reader rd(bytes, source);
  rd.expect_magic("GPSF");
  const auto w = rd.get<std::uint32_t>(), h = rd.get<std::uint32_t>(), d = rd.get<std::uint32_t>();
  if (w == 0 || h == 0 || d == 0 || std::uint64_t(w) * h * d > (1ull << 28))
    throw IoError(source + ": invalid feature map dims");
  Matd v(Eigen::Index(w) * h, d);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index c = 0; c < v.cols(); ++c) v(i, c) = rd.get<float>();
  rd.expect_end();
  try {
    return FeatureMap(int(w), int(h), std::move(v));
  } catch (const InvalidArgument& e) {
    throw IoError(source + ": " + e.what());
  }
}

inline void save_feature_map(const std::filesystem::path& p, const FeatureMap& f) {
  write_file(p, encode_feature_map(f));
}
inline FeatureMap load_feature_map(const std::filesystem::path& p) {
  return decode_feature_map(read_file(p), p.string());
}

inline std::string encode_masks(const std::vector<Mask>& masks) {
  if (masks.empty()) throw InvalidArgument("encode_masks: no masks");
  const auto w = masks[0].rows(), h = masks[0].cols();
  std::string buf;
  binio::put_magic(buf, "GPSM");
  binio::put<std::uint32_t>(buf, std::uint32_t(masks.size()));
  binio::put<std::uint32_t>(buf, std::uint32_t(w));
  binio::put<std::uint32_t>(buf, std::uint32_t(h));
  for (const auto& m : masks) {
    if (m.rows() != w || m.cols() != h) throw InvalidArgument("encode_masks: ragged masks");
    for (Eigen::Index i = 0; i < m.size(); ++i) binio::put<float>(buf, float(m.data()[i]));
  }
  return buf;
}

inline std::vector<Mask> decode_masks(std::string_view bytes, const std::string& source) {
  binio::Reader rd(bytes, source);
  rd.expect_magic("GPSM");
  const auto np = rd.get<std::uint32_t>(), w = rd.get<std::uint32_t>(), h = rd.get<std::uint32_t>();
  if (np == 0 || w == 0 || h == 0 || std::uint64_t(np) * w * h > (1ull << 28))
    throw IoError(source + ": invalid mask dims");
  std::vector<Mask> masks(np, Mask(w, h));
  for (auto& m : masks)
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = rd.get<float>();
      if (!std::isfinite(m.data()[i]) || m.data()[i] < 0)
        throw IoError(source + ": mask entries must be finite and non-negative");
    }
  rd.expect_end();
  return masks;
}

inline void save_masks(const std::filesystem::path& p, const std::vector<Mask>& masks) {
  write_file(p, encode_masks(masks));
}
inline std::vector<Mask> load_masks(const std::filesystem::path& p) {
  return decode_masks(read_file(p), p.string());
}

/// Pooled inputs of one image: global feature and one pooled vector per part.
struct PooledSample {
  Vecd global;  // D
  Matd parts;   // N_P x D
};

/// Resize, normalize and pool every part mask against `f`.
inline PooledSample pool_sample(const FeatureMap& f, const std::vector<Mask>& raw_masks) {
  PooledSample s;
  s.global = global_pool(f);
  s.parts.resize(Eigen::Index(raw_masks.size()), f.channels());
  for (std::size_t k = 0; k < raw_masks.size(); ++k) {
    auto m = l1_normalize(resize_mask(raw_masks[k], f.width, f.height));
    s.parts.row(Eigen::Index(k)) = masked_pool(f, m.weights).transpose();
  }
  return s;
}

}  // namespace gps
