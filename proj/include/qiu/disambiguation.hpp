#pragma once

#include <istream>
#include <memory>
#include <set>
#include <string>
#include <utility>

#include "json.hpp"

#include "qiu/catalog.hpp"
#include "qiu/errors.hpp"
#include "qiu/reasoner.hpp"

namespace qiu {

/// Directed (primary, secondary) pairs for which the secondary intent wins.
class ConflictWhitelist {
public:
  using Pair = std::pair<VerticalId, VerticalId>;

  ConflictWhitelist() = default;
  ConflictWhitelist(std::set<Pair> pairs, std::string version)
      : pairs_(std::move(pairs)), version_(std::move(version)) {}

  bool contains(const VerticalId& primary, const VerticalId& secondary) const {
    return pairs_.count({primary, secondary}) > 0;
  }

  const std::set<Pair>& pairs() const noexcept { return pairs_; }
  const std::string& version() const noexcept { return version_; }
  std::size_t size() const noexcept { return pairs_.size(); }

  nlohmann::json to_json() const {
    nlohmann::json doc = {{"version", version_}, {"pairs", nlohmann::json::array()}};
    for (const auto& [p, s] : pairs_) doc["pairs"].push_back({{"primary", p}, {"secondary", s}});
    return doc;
  }

private:
  std::set<Pair> pairs_;
  std::string version_;
};

/// Whitelist file: {"version": "...", "pairs": [{"primary", "secondary"}]}.
/// An empty document yields an empty whitelist.
inline ConflictWhitelist load_whitelist(const nlohmann::json& doc, const Taxonomy& taxonomy) {
  if (doc.is_null()) return ConflictWhitelist({}, "empty");
  if (!doc.is_object()) throw LoadError({"whitelist: document must be an object"});
  std::vector<std::string> problems;
  std::set<ConflictWhitelist::Pair> pairs;
  std::size_t i = 0;
  for (const auto& p : doc.value("pairs", nlohmann::json::array())) {
    ++i;
    if (!p.is_object() || !p.contains("primary") || !p.contains("secondary") || !p["primary"].is_string() ||
        !p["secondary"].is_string()) {
      problems.push_back("whitelist pair " + std::to_string(i) + ": needs string 'primary' and 'secondary'");
      continue;
    }
    auto primary = p["primary"].get<std::string>();
    auto secondary = p["secondary"].get<std::string>();
    for (const auto* id : {&primary, &secondary})
      if (!taxonomy.contains(*id))
        problems.push_back("whitelist pair " + std::to_string(i) + ": unknown vertical '" + *id + "'");
    if (primary == secondary)
      problems.push_back("whitelist pair " + std::to_string(i) + ": self-pair (" + primary + ", " + primary + ")");
    pairs.emplace(std::move(primary), std::move(secondary));
  }
  if (!problems.empty()) throw LoadError(std::move(problems));
  std::string version = doc.value("version", "");
  if (version.empty()) version = "unversioned-" + sha256_hex(doc.dump()).substr(0, 12);
  return ConflictWhitelist(std::move(pairs), std::move(version));
}

inline ConflictWhitelist load_whitelist(std::istream& in, const Taxonomy& taxonomy) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return load_whitelist(nlohmann::json(), taxonomy);
  try {
    return load_whitelist(nlohmann::json::parse(text), taxonomy);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError({std::string("whitelist: ") + e.what()});
  }
}

enum class RuleFired { no_secondary, override_secondary, primary_default };

inline std::string_view to_string(RuleFired r) {
  switch (r) {
    case RuleFired::no_secondary: return "no_secondary";
    case RuleFired::override_secondary: return "override";
    case RuleFired::primary_default: return "primary_default";
  }
  return "primary_default";
}

inline RuleFired parse_rule_fired(std::string_view s) {
  if (s == "no_secondary") return RuleFired::no_secondary;
  if (s == "override") return RuleFired::override_secondary;
  if (s == "primary_default") return RuleFired::primary_default;
  throw ConfigError("unknown rule_fired '" + std::string(s) + "'");
}

struct ResolvedIntent {
  VerticalId final_vertical;
  IntentTuple tuple;
  RuleFired rule_fired = RuleFired::no_secondary;
  std::string whitelist_version;

  friend bool operator==(const ResolvedIntent&, const ResolvedIntent&) = default;
};

/// The pairwise override: the secondary wins iff (primary, secondary) is a
/// whitelisted directed pair; otherwise the primary stands.
inline ResolvedIntent resolve(const IntentTuple& tuple, const ConflictWhitelist& w) {
  ResolvedIntent r{tuple.primary, tuple, RuleFired::no_secondary, w.version()};
  if (!tuple.secondary) return r;
  if (w.contains(tuple.primary, *tuple.secondary)) {
    r.final_vertical = *tuple.secondary;
    r.rule_fired = RuleFired::override_secondary;
  } else {
    r.rule_fired = RuleFired::primary_default;
  }
  return r;
}

/// Policy layer between the dual-intent tuple and the final vertical.
/// Implementations must return one of the tuple's members.
class IntentResolver {
public:
  virtual ~IntentResolver() = default;
  virtual ResolvedIntent resolve(const IntentTuple& tuple) const = 0;
  virtual std::string version() const = 0;
};

class PairwiseOverrideResolver final : public IntentResolver {
public:
  explicit PairwiseOverrideResolver(ConflictWhitelist whitelist) : whitelist_(std::move(whitelist)) {}

  ResolvedIntent resolve(const IntentTuple& tuple) const override { return qiu::resolve(tuple, whitelist_); }
  std::string version() const override { return whitelist_.version(); }
  const ConflictWhitelist& whitelist() const noexcept { return whitelist_; }

private:
  ConflictWhitelist whitelist_;
};

// Runs a resolver and enforces the closure property.
inline ResolvedIntent resolve_checked(const IntentResolver& resolver, const IntentTuple& tuple) {
  ResolvedIntent r = resolver.resolve(tuple);
  const bool member = r.final_vertical == tuple.primary || (tuple.secondary && r.final_vertical == *tuple.secondary);
  if (!member || !(r.tuple == tuple))
    throw IntegrityError("resolver returned '" + r.final_vertical + "', which is not a member of the tuple");
  return r;
}

}  // namespace qiu
