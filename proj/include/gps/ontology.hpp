#pragma once

// Attribute and body-part schemas, annotation ingestion and the occurrence
// statistics that feed the correlation graph.

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "gps/error.hpp"
#include "gps/util.hpp"
#include "json.hpp"

namespace gps {

/// Ordered, unique list of names (attributes or parts).
class NameList {
 public:
  NameList() = default;
  explicit NameList(std::vector<std::string> names, const char* what = "name")
      : names_(std::move(names)) {
    if (names_.empty()) throw InvalidArgument(std::string("empty ") + what + " list");
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw InvalidArgument(std::string("empty ") + what);
      if (!seen.insert(n).second)
        throw InvalidArgument(std::string("duplicate ") + what + ": " + n);
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::string& operator[](std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return std::size_t(it - names_.begin());
  }

  bool operator==(const NameList&) const = default;

 private:
  std::vector<std::string> names_;
};

struct AttributeSchema : NameList {
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<std::string> names)
      : NameList(std::move(names), "attribute") {}
};

/// Body-part schema. Foreground always sits at index 0.
struct PartSchema : NameList {
  PartSchema() = default;
  explicit PartSchema(std::vector<std::string> names) : NameList(std::move(names), "part") {
    if ((*this)[0] != "foreground")
      throw InvalidArgument("part schema must start with \"foreground\"");
  }
  static PartSchema canonical() {
    return PartSchema({"foreground", "head", "upper", "lower", "arm"});
  }
};

/// N_P x N_A binary matrix; attach(i, j) = 1 iff attribute j belongs to part i.
struct AttachmentTable {
  Eigen::MatrixXi attach;

  Eigen::Index num_parts() const { return attach.rows(); }
  Eigen::Index num_attributes() const { return attach.cols(); }
  /// Part owning attribute j.
  Eigen::Index part_of(Eigen::Index j) const {
    Eigen::Index r;
    attach.col(j).maxCoeff(&r);
    return r;
  }
};

using AttachmentSpec = std::vector<std::pair<std::string, std::vector<std::string>>>;

/// Builds the attachment table from a part -> attribute-name mapping. Every
/// attribute must be listed under exactly one part.
inline AttachmentTable build_attachment(const PartSchema& parts, const AttributeSchema& attrs,
                                        const AttachmentSpec& spec) {
  AttachmentTable t{Eigen::MatrixXi::Zero(Eigen::Index(parts.size()), Eigen::Index(attrs.size()))};
  std::vector<std::string> owner(attrs.size());
  for (const auto& [part, names] : spec) {
    auto pi = parts.index_of(part);
    if (!pi) throw InvalidArgument("attachment names unknown part: " + part);
    for (const auto& a : names) {
      auto aj = attrs.index_of(a);
      if (!aj) throw InvalidArgument("attachment names unknown attribute: " + a);
      if (!owner[*aj].empty() && owner[*aj] != part)
        throw InvalidArgument("ambiguous attachment: attribute \"" + a + "\" listed under \"" +
                              owner[*aj] + "\" and \"" + part + "\"");
      owner[*aj] = part;
      t.attach(Eigen::Index(*pi), Eigen::Index(*aj)) = 1;
    }
  }
  for (std::size_t j = 0; j < attrs.size(); ++j)
    if (owner[j].empty()) throw InvalidArgument("attribute unlisted in attachment: " + attrs[j]);
  return t;
}

/// Attributes, parts and their attachment, as stored in a schema file.
struct Schema {
  AttributeSchema attributes;
  PartSchema parts;
  AttachmentSpec attachment_spec;
  AttachmentTable attachment;

  Schema() = default;
  Schema(AttributeSchema a, PartSchema p, AttachmentSpec spec)
      : attributes(std::move(a)), parts(std::move(p)), attachment_spec(std::move(spec)),
        attachment(build_attachment(parts, attributes, attachment_spec)) {}

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["attributes"] = attributes.names();
    j["parts"] = parts.names();
    nlohmann::ordered_json att = nlohmann::ordered_json::object();
    for (const auto& [p, names] : attachment_spec) att[p] = names;
    j["attachment"] = att;
    return j;
  }

  static Schema from_json(const nlohmann::ordered_json& j) {
    try {
      for (const auto& [key, _] : j.items())
        if (key != "attributes" && key != "parts" && key != "attachment")
          throw InvalidArgument("schema: unknown key \"" + key + "\"");
      AttributeSchema attrs(j.at("attributes").get<std::vector<std::string>>());
      PartSchema parts(j.at("parts").get<std::vector<std::string>>());
      AttachmentSpec spec;
      for (const auto& [part, names] : j.at("attachment").items())
        spec.emplace_back(part, names.get<std::vector<std::string>>());
      return Schema(std::move(attrs), std::move(parts), std::move(spec));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("schema: ") + e.what());
    }
  }

  /// Stable 64-bit fingerprint of attribute and part order.
  std::uint64_t hash() const { return digest_prefix(sha256(to_json().dump())); }
};

inline Schema load_schema(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("schema file not found: " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("schema file " + path.string() + ": " + e.what());
  }
  try {
    return Schema::from_json(j);
  } catch (const InvalidArgument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

struct AnnotationRecord {
  std::string image_id;
  int identity = 0;           // dense 0-based index
  long original_identity = 0;  // as written in the file
  int camera = 0;
  std::vector<std::uint8_t> labels;
};

struct AnnotationSet {
  std::vector<AnnotationRecord> records;
  std::size_t num_attributes = 0;
  int num_identities = 0;

  std::size_t size() const { return records.size(); }
};

/// Remaps original identities to dense indices in order of first appearance.
inline AnnotationSet make_annotation_set(std::vector<AnnotationRecord> records,
                                         std::size_t num_attributes) {
  if (records.empty()) throw InvalidArgument("empty annotation set");
  std::map<long, int> dense;
  for (auto& r : records) {
    if (r.labels.size() != num_attributes)
      throw InvalidArgument("record " + r.image_id + " has wrong label count");
    for (auto v : r.labels)
      if (v > 1) throw InvalidArgument("record " + r.image_id + " has non-binary label");
    auto [it, inserted] = dense.try_emplace(r.original_identity, int(dense.size()));
    r.identity = it->second;
  }
  AnnotationSet set;
  set.num_identities = int(dense.size());
  set.num_attributes = num_attributes;
  set.records = std::move(records);
  return set;
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline long parse_integer(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || v < 0)
    throw IoError(where + ": expected non-negative integer, got \"" + s + "\"");
  return v;
}

}  // namespace detail

/// Parses annotation CSV text: header `image_id,identity,camera,<attrs...>`,
/// labels strictly 0/1, LF or CRLF line endings.
inline AnnotationSet parse_annotations(std::string_view text, const AttributeSchema& schema,
                                       const std::string& source = "annotations") {
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      auto nl = text.find('\n', start);
      auto line = text.substr(start, nl == std::string_view::npos ? nl : nl - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.emplace_back(line);
      if (nl == std::string_view::npos) break;
      start = nl + 1;
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
  }
  if (lines.empty()) throw IoError(source + ": empty file");

  const auto header = detail::split_csv_line(lines[0]);
  const std::vector<std::string> fixed{"image_id", "identity", "camera"};
  const std::size_t na = schema.size();
  for (std::size_t c = 0; c < std::max(header.size(), fixed.size() + na); ++c) {
    std::string expected = c < 3 ? fixed[c] : (c - 3 < na ? schema[c - 3] : std::string("<none>"));
    std::string got = c < header.size() ? header[c] : std::string("<missing>");
    if (expected != got)
      throw IoError(source + ": header mismatch at column " + std::to_string(c + 1) +
                    ": expected \"" + expected + "\", got \"" + got + "\"");
  }

  std::vector<AnnotationRecord> records;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::string where = source + ":" + std::to_string(r + 1);
    auto cells = detail::split_csv_line(lines[r]);
    if (cells.size() != 3 + na)
      throw IoError(where + ": expected " + std::to_string(3 + na) + " columns, got " +
                    std::to_string(cells.size()));
    AnnotationRecord rec;
    rec.image_id = cells[0];
    if (rec.image_id.empty()) throw IoError(where + ": empty image_id");
    rec.original_identity = detail::parse_integer(cells[1], where + " column identity");
    rec.camera = int(detail::parse_integer(cells[2], where + " column camera"));
    rec.labels.resize(na);
    for (std::size_t j = 0; j < na; ++j) {
      const auto& v = cells[3 + j];
      if (v != "0" && v != "1")
        throw IoError(where + ": non-binary label \"" + v + "\" in column \"" + schema[j] + "\"");
      rec.labels[j] = v == "1";
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw IoError(source + ": empty annotation set");
  return make_annotation_set(std::move(records), na);
}

inline AnnotationSet load_annotations(const std::filesystem::path& path,
                                      const AttributeSchema& schema) {
  if (!std::filesystem::exists(path)) throw IoError("annotation file not found: " + path.string());
  return parse_annotations(read_file(path), schema, path.string());
}

inline std::string format_annotations(const AnnotationSet& set, const AttributeSchema& schema) {
  std::string out = "image_id,identity,camera";
  for (const auto& n : schema.names()) out += "," + n;
  out += "\n";
  for (const auto& r : set.records) {
    out += r.image_id + "," + std::to_string(r.original_identity) + "," + std::to_string(r.camera);
    for (auto v : r.labels) out += v ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

/// Occurrence K, co-occurrence L and prevalence k of every attribute.
struct AttributeStats {
  Eigen::VectorXi occurrence;
  Eigen::MatrixXi cooccurrence;
  Eigen::VectorXd prevalence;
  std::size_t num_images = 0;
};

/// Counts images (not identities) in which each attribute and pair occurs.
inline AttributeStats compute_stats(const AnnotationSet& set) {
  if (set.records.empty()) throw InvalidArgument("empty annotation set");
  const auto na = Eigen::Index(set.num_attributes);
  AttributeStats s;
  s.num_images = set.size();
  s.cooccurrence = Eigen::MatrixXi::Zero(na, na);
  std::vector<Eigen::Index> on;
  for (const auto& r : set.records) {
    on.clear();
    for (Eigen::Index j = 0; j < na; ++j)
      if (r.labels[std::size_t(j)]) on.push_back(j);
    for (auto i : on)
      for (auto j : on) ++s.cooccurrence(i, j);
  }
  s.occurrence = s.cooccurrence.diagonal();
  s.prevalence = s.occurrence.cast<double>() / double(s.num_images);
  return s;
}

}  // namespace gps
