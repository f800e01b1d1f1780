#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "qiu/digest.hpp"
#include "qiu/errors.hpp"
#include "qiu/text.hpp"

namespace qiu {

using VerticalId = std::string;

struct Vertical {
  VerticalId id;
  std::string display_name;
};

/// The label space: an ordered list of at least two verticals with distinct,
/// lowercase, non-empty ids.
class Taxonomy {
public:
  explicit Taxonomy(std::vector<Vertical> verticals) : verticals_(std::move(verticals)) {
    std::vector<std::string> problems;
    if (verticals_.size() < 2) problems.push_back("taxonomy needs at least 2 verticals");
    std::set<std::string> seen;
    for (const auto& v : verticals_) {
      if (v.id.empty()) {
        problems.push_back("vertical with empty id");
        continue;
      }
      if (std::any_of(v.id.begin(), v.id.end(),
                      [](unsigned char c) { return c >= 'A' && c <= 'Z'; })) {
        problems.push_back("vertical id '" + v.id + "' is not lowercase");
      }
      if (!seen.insert(v.id).second) problems.push_back("duplicate vertical id '" + v.id + "'");
    }
    if (!problems.empty()) throw LoadError(std::move(problems));
  }

  const std::vector<Vertical>& verticals() const noexcept { return verticals_; }

  bool contains(std::string_view id) const {
    return std::any_of(verticals_.begin(), verticals_.end(),
                       [&](const Vertical& v) { return v.id == id; });
  }

  const Vertical& at(std::string_view id) const {
    for (const auto& v : verticals_)
      if (v.id == id) return v;
    throw ConfigError("unknown vertical '" + std::string(id) + "'");
  }

private:
  std::vector<Vertical> verticals_;
};

/// Taxonomy file: {"verticals": [{"id": ..., "display_name": ...}, ...]}.
inline Taxonomy load_taxonomy(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError({std::string("taxonomy: ") + e.what()});
  }
  if (!doc.is_object() || !doc.contains("verticals") || !doc["verticals"].is_array())
    throw LoadError({"taxonomy: missing 'verticals' array"});
  std::vector<Vertical> out;
  for (const auto& v : doc["verticals"]) {
    if (!v.is_object() || !v.contains("id") || !v["id"].is_string())
      throw LoadError({"taxonomy: vertical without string 'id'"});
    out.push_back({v["id"].get<std::string>(), v.value("display_name", v["id"].get<std::string>())});
  }
  return Taxonomy(std::move(out));
}

enum class EntityKind { merchant, brand, product };

inline std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::merchant: return "merchant";
    case EntityKind::brand: return "brand";
    case EntityKind::product: return "product";
  }
  return "unknown";
}

inline std::optional<EntityKind> parse_entity_kind(std::string_view s) {
  if (s == "merchant") return EntityKind::merchant;
  if (s == "brand") return EntityKind::brand;
  if (s == "product") return EntityKind::product;
  return std::nullopt;
}

struct CatalogEntity {
  std::string entity_id;
  std::string name;
  std::string normalized_name;
  EntityKind kind = EntityKind::merchant;
  VerticalId vertical;
  std::vector<std::string> aliases;
  std::vector<std::string> normalized_aliases;

  // Normalized name first, then normalized aliases in file order, skipping
  // empties and repeats. These are the match surfaces for both retrieval
  // stages.
  std::vector<std::string> surfaces() const {
    std::vector<std::string> out{normalized_name};
    for (const auto& a : normalized_aliases)
      if (!a.empty() && std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    return out;
  }
};

/// Immutable catalog snapshot. Entities are held sorted by entity_id.
class EntityStore {
public:
  EntityStore(std::vector<CatalogEntity> entities, Taxonomy taxonomy, std::uint64_t version)
      : entities_(std::move(entities)), taxonomy_(std::move(taxonomy)), version_(version) {
    std::sort(entities_.begin(), entities_.end(),
              [](const auto& a, const auto& b) { return a.entity_id < b.entity_id; });
    nlohmann::json canon = nlohmann::json::array();
    for (const auto& v : taxonomy_.verticals()) canon.push_back({{"vertical", v.id}});
    for (const auto& e : entities_) {
      canon.push_back({{"id", e.entity_id},
                       {"name", e.name},
                       {"kind", to_string(e.kind)},
                       {"vertical", e.vertical},
                       {"aliases", e.aliases}});
    }
    fingerprint_ = sha256_hex(canon.dump());
  }

  const std::vector<CatalogEntity>& entities() const noexcept { return entities_; }
  const Taxonomy& taxonomy() const noexcept { return taxonomy_; }
  std::uint64_t version() const noexcept { return version_; }
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  std::size_t size() const noexcept { return entities_.size(); }
  bool empty() const noexcept { return entities_.empty(); }

  const CatalogEntity* find(std::string_view id) const {
    auto it = std::lower_bound(entities_.begin(), entities_.end(), id,
                               [](const CatalogEntity& e, std::string_view k) { return e.entity_id < k; });
    if (it == entities_.end() || it->entity_id != id) return nullptr;
    return &*it;
  }

  const CatalogEntity& at(std::string_view id) const {
    if (const auto* e = find(id)) return *e;
    throw IntegrityError("entity '" + std::string(id) + "' not in store version " +
                         std::to_string(version_));
  }

private:
  std::vector<CatalogEntity> entities_;
  Taxonomy taxonomy_;
  std::uint64_t version_;
  std::string fingerprint_;
};

struct RecordError {
  std::size_t line = 0;
  std::string message;
};

struct CatalogLoad {
  std::shared_ptr<const EntityStore> store;
  // Malformed records that were skipped, with 1-based line numbers.
  std::vector<RecordError> rejected;
};

/// Reads line-delimited JSON catalog records. Malformed records are skipped
/// and reported; duplicate ids or unknown verticals fail the whole load.
inline CatalogLoad load_catalog(std::istream& source, const Taxonomy& taxonomy,
                                std::uint64_t version = 1) {
  CatalogLoad result;
  std::vector<CatalogEntity> entities;
  std::map<std::string, std::size_t> id_count;
  std::vector<std::string> fatal;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto reject = [&](std::string msg) { result.rejected.push_back({line_no, std::move(msg)}); };

    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      reject(std::string("invalid JSON: ") + e.what());
      continue;
    }
    if (!rec.is_object()) {
      reject("record is not an object");
      continue;
    }
    bool ok = true;
    for (const char* field : {"entity_id", "name", "kind", "vertical"}) {
      if (!rec.contains(field) || !rec[field].is_string()) {
        reject(std::string("missing or non-string field '") + field + "'");
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    CatalogEntity e;
    e.entity_id = rec["entity_id"].get<std::string>();
    e.name = rec["name"].get<std::string>();
    e.vertical = rec["vertical"].get<std::string>();
    if (e.entity_id.empty()) {
      reject("empty entity_id");
      continue;
    }
    auto kind = parse_entity_kind(rec["kind"].get<std::string>());
    if (!kind) {
      reject("unknown kind '" + rec["kind"].get<std::string>() + "'");
      continue;
    }
    e.kind = *kind;
    if (rec.contains("aliases")) {
      const auto& al = rec["aliases"];
      if (!al.is_array() || !std::all_of(al.begin(), al.end(), [](const auto& a) { return a.is_string(); })) {
        reject("'aliases' must be an array of strings");
        continue;
      }
      e.aliases = al.get<std::vector<std::string>>();
    }
    e.normalized_name = normalize_text(e.name);
    if (e.normalized_name.empty()) {
      reject("name is empty after normalization");
      continue;
    }
    for (const auto& a : e.aliases) e.normalized_aliases.push_back(normalize_text(a));

    if (!taxonomy.contains(e.vertical)) {
      fatal.push_back("line " + std::to_string(line_no) + ": entity '" + e.entity_id +
                      "' has unknown vertical '" + e.vertical + "'");
    }
    ++id_count[e.entity_id];
    entities.push_back(std::move(e));
  }

  for (const auto& [id, n] : id_count)
    if (n > 1) fatal.push_back("duplicate entity_id '" + id + "' (" + std::to_string(n) + " records)");
  if (!fatal.empty()) throw LoadError(std::move(fatal));

  result.store = std::make_shared<const EntityStore>(std::move(entities), taxonomy, version);
  return result;
}

enum class Segment { head, torso, tail, unknown };

inline std::string_view to_string(Segment s) {
  switch (s) {
    case Segment::head: return "head";
    case Segment::torso: return "torso";
    case Segment::tail: return "tail";
    case Segment::unknown: return "unknown";
  }
  return "unknown";
}

inline std::optional<Segment> parse_segment(std::string_view s) {
  if (s == "head") return Segment::head;
  if (s == "torso") return Segment::torso;
  if (s == "tail") return Segment::tail;
  if (s == "unknown") return Segment::unknown;
  return std::nullopt;
}

struct Query {
  std::string raw;
  std::string normalized;
  Segment segment = Segment::unknown;

  static Query from_raw(std::string raw, Segment segment = Segment::unknown) {
    Query q;
    q.normalized = normalize_text(raw);
    q.raw = std::move(raw);
    q.segment = segment;
    return q;
  }
};

}  // namespace qiu
