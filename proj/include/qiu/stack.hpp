#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "qiu/catalog.hpp"
#include "qiu/config.hpp"
#include "qiu/disambiguation.hpp"
#include "qiu/pipeline.hpp"
#include "qiu/providers.hpp"
#include "qiu/reasoner.hpp"
#include "qiu/retrieval.hpp"

namespace qiu {

inline std::ifstream open_input(const std::filesystem::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path not configured");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path.string());
  return in;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path, const char* what) {
  auto in = open_input(path, what);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError({std::string(what) + " " + path.string() + ": " + e.what()});
  }
}

inline Taxonomy load_taxonomy_file(const std::filesystem::path& path) {
  auto in = open_input(path, "taxonomy");
  return load_taxonomy(in);
}

inline CatalogLoad load_catalog_file(const std::filesystem::path& path, const Taxonomy& taxonomy,
                                     std::uint64_t version) {
  auto in = open_input(path, "catalog");
  return load_catalog(in, taxonomy, version);
}

inline ConflictWhitelist load_whitelist_file(const std::filesystem::path& path, const Taxonomy& taxonomy) {
  if (path.empty()) return ConflictWhitelist({}, "empty");
  auto in = open_input(path, "whitelist");
  return load_whitelist(in, taxonomy);
}

inline std::shared_ptr<const Encoder> make_encoder(const AppConfig& c) {
  if (c.encoder_kind == "live") return std::make_shared<const LiveEncoder>(c.encoder_provider, c.dimension);
  return hash_encoder(c.dimension, c.encoder_seed);
}

/// A ready pipeline plus the diagnostics collected while loading it.
struct Stack {
  PipelineDeps deps;
  PipelineConfig config;
  std::vector<RecordError> rejected;
};

/// Loads every input named by the configuration and checks that they agree.
inline Stack build_stack(const AppConfig& c) {
  Stack s;
  s.config = c.pipeline;
  const Taxonomy taxonomy = load_taxonomy_file(c.taxonomy);
  auto loaded = load_catalog_file(c.catalog, taxonomy, c.store_version);
  s.rejected = std::move(loaded.rejected);
  s.deps.store = loaded.store;
  s.deps.encoder = make_encoder(c);

  if (!c.index.empty() && std::filesystem::exists(c.index)) {
    auto in = open_input(c.index, "index");
    s.deps.index = std::make_shared<const SemanticIndex>(load_index(in, *s.deps.store));
  } else {
    s.deps.index = std::make_shared<const SemanticIndex>(build_index(*s.deps.store, *s.deps.encoder));
  }

  if (c.engine_kind == "live") {
    s.deps.engine = live_engine(c.engine_provider);
  } else {
    auto rules = ScriptedRules::from_json(read_json_file(c.rules, "scripted rules"));
    if (rules.default_vertical.empty()) rules.default_vertical = c.pipeline.default_vertical;
    s.deps.engine = scripted_engine(std::move(rules), taxonomy);
  }

  if (c.search_kind == "fixture")
    s.deps.tool = std::make_shared<const FixtureSearchTool>(
        FixtureSearchTool::from_json(read_json_file(c.search_fixtures, "search fixtures")));
  else if (c.search_kind == "live")
    s.deps.tool = std::make_shared<const LiveSearchTool>(c.search_provider);

  s.deps.resolver = std::make_shared<const PairwiseOverrideResolver>(load_whitelist_file(c.whitelist, taxonomy));

  if (c.policy.empty()) {
    s.deps.policy = std::make_shared<const PolicyContext>();
  } else {
    auto in = open_input(c.policy, "policy");
    s.deps.policy = std::make_shared<const PolicyContext>(load_policy(in, taxonomy));
  }

  s.config.validate(taxonomy);
  s.deps.check();
  return s;
}

}  // namespace qiu
