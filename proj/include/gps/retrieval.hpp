#pragma once

// Query/gallery ranking and CMC / mAP with same-camera and junk exclusion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gps/error.hpp"
#include "gps/types.hpp"
#include "gps/util.hpp"
#include "json.hpp"

namespace gps {

struct Signature {
  Vecd vector;
  int identity = 0;
  int camera = 0;
  bool junk = false;
};

enum class Distance { euclidean, cosine };

inline Distance parse_distance(const std::string& s) {
  if (s == "euclidean") return Distance::euclidean;
  if (s == "cosine") return Distance::cosine;
  throw ConfigError("distance must be euclidean|cosine, got \"" + s + "\"");
}

inline double distance(const Vecd& a, const Vecd& b, Distance kind) {
  if (a.size() != b.size()) throw InvalidArgument("signature dim mismatch");
  if (kind == Distance::euclidean) return (a - b).norm();
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

/// Whether gallery entry `g` takes part in the ranking for `q`: junk entries
/// and same-identity same-camera entries are dropped.
inline bool admissible(const Signature& q, const Signature& g) {
  return !g.junk && !(g.identity == q.identity && g.camera == q.camera);
}

/// Admissible gallery indices by ascending distance, ties by gallery index.
inline std::vector<std::size_t> rank(const Signature& query, const std::vector<Signature>& gallery,
                                     Distance kind = Distance::euclidean) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t g = 0; g < gallery.size(); ++g)
    if (admissible(query, gallery[g]))
      scored.emplace_back(distance(query.vector, gallery[g].vector, kind), g);
  if (scored.empty()) throw InvalidArgument("empty gallery after exclusions");
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

/// Average precision of a ranked relevance list: mean over positives of the
/// precision at that positive's rank. Empty when there is no positive.
inline std::optional<double> average_precision(const std::vector<bool>& relevant) {
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevant.size(); ++r)
    if (relevant[r]) {
      ++hits;
      sum += double(hits) / double(r + 1);
    }
  if (hits == 0) return std::nullopt;
  return sum / double(hits);
}

struct RetrievalRun {
  std::vector<std::vector<std::size_t>> rankings;  // per query, empty if skipped
  std::vector<std::optional<double>> ap;           // per query
  std::vector<double> cmc;                         // cmc[r] = hit rate within rank r+1
  double map = 0;
  std::size_t valid_queries = 0;
  std::size_t skipped_queries = 0;

  double rank_k(std::size_t k) const {
    if (cmc.empty() || k == 0) return 0.0;
    return cmc[std::min(k, cmc.size()) - 1];
  }
};

/// Single-query evaluation. Queries with no admissible positive are skipped
/// and counted.
inline RetrievalRun evaluate(const std::vector<Signature>& queries,
                             const std::vector<Signature>& gallery,
                             Distance kind = Distance::euclidean) {
  RetrievalRun run;
  std::vector<std::size_t> first_hit_count(gallery.size() + 1, 0);
  double ap_sum = 0;
  for (const auto& q : queries) {
    std::vector<std::size_t> ranked;
    bool any_admissible = std::any_of(gallery.begin(), gallery.end(),
                                      [&](const Signature& g) { return admissible(q, g); });
    if (any_admissible) ranked = rank(q, gallery, kind);
    std::vector<bool> rel(ranked.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) rel[r] = gallery[ranked[r]].identity == q.identity;
    auto ap = average_precision(rel);
    run.ap.push_back(ap);
    if (!ap) {
      ++run.skipped_queries;
      run.rankings.emplace_back();
      continue;
    }
    ++run.valid_queries;
    ap_sum += *ap;
    const auto first = std::size_t(std::find(rel.begin(), rel.end(), true) - rel.begin());
    ++first_hit_count[first];
    run.rankings.push_back(std::move(ranked));
  }
  if (run.valid_queries == 0) throw InvalidArgument("no valid queries");
  run.map = ap_sum / double(run.valid_queries);
  run.cmc.resize(gallery.size());
  std::size_t cumulative = 0;
  for (std::size_t r = 0; r < gallery.size(); ++r) {
    cumulative += first_hit_count[r];
    run.cmc[r] = double(cumulative) / double(run.valid_queries);
  }
  return run;
}

// GPSS: "GPSS", u32 count, u32 dim, then per entry i32 identity, i32 camera,
// u8 junk, dim f64. Little-endian.
inline std::string encode_signatures(const std::vector<Signature>& sigs) {
  const std::uint32_t dim = sigs.empty() ? 0 : std::uint32_t(sigs[0].vector.size());
  std::string buf;
  binio::put_magic(buf, "GPSS");
  binio::put<std::uint32_t>(buf, std::uint32_t(sigs.size()));
  binio::put<std::uint32_t>(buf, dim);
  for (const auto& s : sigs) {
    if (std::uint32_t(s.vector.size()) != dim) throw InvalidArgument("ragged signatures");
    binio::put<std::int32_t>(buf, s.identity);
    binio::put<std::int32_t>(buf, s.camera);
    binio::put<std::uint8_t>(buf, s.junk ? 1 : 0);
    for (Eigen::Index d = 0; d < s.vector.size(); ++d) binio::put<double>(buf, s.vector(d));
  }
  return buf;
}

inline std::vector<Signature> decode_signatures(std::string_view bytes, const std::string& source) {
  binio::Reader rd(bytes, source);
  rd.expect_magic("GPSS");
  const auto count = rd.get<std::uint32_t>(), dim = rd.get<std::uint32_t>();
  std::vector<Signature> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Signature s;
    s.identity = rd.get<std::int32_t>();
    s.camera = rd.get<std::int32_t>();
    const auto junk = rd.get<std::uint8_t>();
    if (junk > 1) throw IoError(source + ": bad junk flag");
    s.junk = junk == 1;
    s.vector.resize(dim);
    for (std::uint32_t d = 0; d < dim; ++d) s.vector(d) = rd.get<double>();
    if (!s.vector.allFinite()) throw IoError(source + ": non-finite signature");
    out.push_back(std::move(s));
  }
  rd.expect_end();
  return out;
}

inline void save_signatures(const std::filesystem::path& p, const std::vector<Signature>& s) {
  write_file(p, encode_signatures(s));
}
inline std::vector<Signature> load_signatures(const std::filesystem::path& p) {
  return decode_signatures(read_file(p), p.string());
}

inline nlohmann::ordered_json run_to_json(const RetrievalRun& run) {
  nlohmann::ordered_json j;
  j["mAP"] = run.map;
  j["R1"] = run.rank_k(1);
  j["R5"] = run.rank_k(5);
  j["R10"] = run.rank_k(10);
  j["valid_queries"] = run.valid_queries;
  j["skipped_queries"] = run.skipped_queries;
  auto ap = nlohmann::ordered_json::array();
  for (const auto& a : run.ap) ap.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json());
  j["per_query_ap"] = ap;
  return j;
}

}  // namespace gps
