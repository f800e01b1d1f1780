#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qiu/errors.hpp"
#include "qiu/pipeline.hpp"
#include "qiu/providers.hpp"

namespace qiu {

/// One settable value: its INI key ("section.name"), command-line flag,
/// default and help text. Path values in a config file are resolved against
/// the file's directory.
struct ConfigKey {
  const char* key;
  const char* flag;
  const char* fallback;
  const char* help;
  bool is_path = false;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"catalog.catalog", "--catalog", "", "catalog file (JSON lines)", true},
      {"catalog.taxonomy", "--taxonomy", "", "taxonomy file (JSON)", true},
      {"catalog.index", "--index", "", "prebuilt index file; empty builds the index in memory", true},
      {"catalog.store_version", "--store-version", "1", "catalog build identifier"},

      {"encoder.kind", "--encoder", "hash", "encoder: hash | live"},
      {"encoder.dimension", "--dimension", "256", "embedding dimension"},
      {"encoder.seed", "--encoder-seed", "0", "hash encoder seed"},
      {"encoder.endpoint", "--encoder-endpoint", "", "live encoder URL (env QIU_ENCODER_ENDPOINT)"},
      {"encoder.model", "--encoder-model", "", "live encoder model name"},
      {"encoder.timeout_ms", "--encoder-timeout-ms", "10000", "live encoder timeout"},
      {"encoder.max_retries", "--encoder-retries", "2", "live encoder retries"},
      {"encoder.backoff_ms", "--encoder-backoff-ms", "200", "initial retry backoff"},
      {"encoder.credential_env", "--encoder-key-env", "QIU_ENCODER_KEY", "variable holding the encoder key"},

      {"retrieval.top_n", "--top-n", "50", "semantic candidates per query"},
      {"retrieval.alpha", "--alpha", "0.6", "token-set weight in the fuzzy score"},
      {"retrieval.tau_fuzzy", "--tau-fuzzy", "0.75", "fuzzy threshold for catalog evidence"},
      {"retrieval.max_intents", "--max-intents", "2", "intent tuple size (must be 2)"},

      {"reasoner.engine", "--engine", "scripted", "reasoning engine: scripted | live"},
      {"reasoner.rules", "--rules", "", "scripted engine rules (JSON)", true},
      {"reasoner.policy", "--policy", "", "strategic rules and example bank (JSON)", true},
      {"reasoner.agentic_mode", "--agentic", "on_empty_catalog", "model_decides | on_empty_catalog | off"},
      {"reasoner.max_tool_calls", "--max-tool-calls", "2", "web searches allowed per query"},
      {"reasoner.per_call_timeout_ms", "--tool-timeout-ms", "10000", "timeout per web search"},
      {"reasoner.max_snippets", "--max-snippets", "5", "snippets kept per search"},
      {"reasoner.default_vertical", "--default-vertical", "restaurant", "fallback vertical"},
      {"reasoner.endpoint", "--engine-endpoint", "", "live engine URL (env QIU_ENGINE_ENDPOINT)"},
      {"reasoner.model", "--engine-model", "", "live engine model name"},
      {"reasoner.timeout_ms", "--engine-timeout-ms", "30000", "live engine timeout"},
      {"reasoner.max_retries", "--engine-retries", "2", "live engine retries"},
      {"reasoner.backoff_ms", "--engine-backoff-ms", "500", "initial retry backoff"},
      {"reasoner.credential_env", "--engine-key-env", "QIU_ENGINE_KEY", "variable holding the engine key"},

      {"search.tool", "--search", "fixture", "search tool: fixture | live | none"},
      {"search.fixtures", "--search-fixtures", "", "fixture search results (JSON)", true},
      {"search.endpoint", "--search-endpoint", "", "live search URL (env QIU_SEARCH_ENDPOINT)"},
      {"search.timeout_ms", "--search-timeout-ms", "10000", "live search timeout"},
      {"search.max_retries", "--search-retries", "1", "live search retries"},
      {"search.backoff_ms", "--search-backoff-ms", "200", "initial retry backoff"},
      {"search.credential_env", "--search-key-env", "QIU_SEARCH_KEY", "variable holding the search key"},

      {"ablation.catalog_grounding", "--catalog-grounding", "true", "use catalog evidence"},
      {"ablation.agentic_search", "--agentic-search", "true", "allow web search"},
      {"ablation.dual_intent", "--dual-intent", "true", "keep the secondary intent"},

      {"disambiguation.whitelist", "--whitelist", "", "override pairs (JSON); empty means none", true},

      {"cache.path", "--cache", "", "cache file", true},

      {"batch.parallelism", "--parallelism", "0", "worker threads; 0 uses all cores"},
      {"batch.resume", "--resume", "false", "skip keys already cached for this pipeline version"},
      {"batch.evidence_log", "--evidence-log", "", "write per-key evidence (JSON lines)", true},

      {"serve.host", "--host", "127.0.0.1", "bind address"},
      {"serve.port", "--port", "8080", "bind port; 0 picks a free port"},
      {"serve.miss_policy", "--miss-policy", "default_vertical", "default_vertical | error_404"},
      {"serve.default_vertical", "--miss-vertical", "", "vertical served on a miss; empty uses the fallback"},
      {"serve.admin_token_env", "--admin-token-env", "QIU_ADMIN_TOKEN", "variable holding the admin token"},
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view key) {
  for (const auto& k : config_keys())
    if (key == k.key) return &k;
  return nullptr;
}

using ConfigTree = boost::property_tree::ptree;

inline std::string strip_quotes(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
    return v.substr(1, v.size() - 2);
  return v;
}

inline void set_config_value(ConfigTree& tree, std::string_view key, const std::string& value) {
  if (!find_config_key(key)) throw ConfigError("unknown config key '" + std::string(key) + "'");
  tree.put(ConfigTree::path_type(std::string(key), '.'), value);
}

/// Reads an INI file. Unknown keys are errors so typos do not pass silently.
inline ConfigTree load_config_file(const std::filesystem::path& path) {
  ConfigTree raw;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), raw);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  const auto base = std::filesystem::absolute(path).parent_path();
  ConfigTree tree;
  std::vector<std::string> problems;
  for (const auto& [section, body] : raw) {
    if (body.empty() && !body.data().empty()) {
      problems.push_back("top-level key '" + section + "' outside a section");
      continue;
    }
    for (const auto& [name, node] : body) {
      const std::string key = section + "." + name;
      const auto* entry = find_config_key(key);
      if (!entry) {
        problems.push_back("unknown key '" + key + "'");
        continue;
      }
      std::string value = strip_quotes(node.get_value<std::string>());
      if (entry->is_path && !value.empty() && std::filesystem::path(value).is_relative())
        value = (base / value).lexically_normal().string();
      tree.put(ConfigTree::path_type(key, '.'), value);
    }
  }
  if (!problems.empty()) {
    for (auto& p : problems) p = "config " + path.string() + ": " + p;
    throw LoadError(std::move(problems));
  }
  return tree;
}

inline std::string config_value(const ConfigTree& tree, std::string_view key) {
  const auto* entry = find_config_key(key);
  if (!entry) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return tree.get<std::string>(ConfigTree::path_type(std::string(key), '.'), entry->fallback);
}

namespace detail {

template <class T>
T parse_number(const ConfigTree& tree, std::string_view key) {
  const std::string s = config_value(tree, key);
  T v{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      v = static_cast<T>(std::stod(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("config " + std::string(key) + ": '" + s + "' is not a number");
    }
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config " + std::string(key) + ": '" + s + "' is not a non-negative integer");
  }
  return v;
}

inline bool parse_bool(const ConfigTree& tree, std::string_view key) {
  const std::string s = config_value(tree, key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config " + std::string(key) + ": '" + s + "' is not a boolean");
}

inline ProviderConfig provider(const ConfigTree& tree, const std::string& section, const char* endpoint_env) {
  ProviderConfig p;
  p.endpoint = config_value(tree, section + ".endpoint");
  if (p.endpoint.empty())
    if (const char* env = std::getenv(endpoint_env)) p.endpoint = env;
  if (find_config_key(section + ".model")) p.model = config_value(tree, section + ".model");
  p.timeout = std::chrono::milliseconds(parse_number<std::int64_t>(tree, section + ".timeout_ms"));
  p.max_retries = parse_number<std::size_t>(tree, section + ".max_retries");
  p.backoff = std::chrono::milliseconds(parse_number<std::int64_t>(tree, section + ".backoff_ms"));
  p.credential_env = config_value(tree, section + ".credential_env");
  return p;
}

}  // namespace detail

/// Resolved settings for every subcommand.
struct AppConfig {
  std::filesystem::path catalog, taxonomy, index;
  std::uint64_t store_version = 1;

  std::string encoder_kind;
  std::size_t dimension = 256;
  std::uint64_t encoder_seed = 0;
  ProviderConfig encoder_provider;

  std::string engine_kind;
  std::filesystem::path rules, policy;
  ProviderConfig engine_provider;

  std::string search_kind;
  std::filesystem::path search_fixtures;
  ProviderConfig search_provider;

  std::filesystem::path whitelist;
  PipelineConfig pipeline;

  std::filesystem::path cache;
  std::size_t parallelism = 1;
  bool resume = false;
  std::filesystem::path evidence_log;

  std::string host;
  int port = 8080;
  std::string miss_policy;
  std::string miss_vertical;
  std::string admin_token_env;
};

inline AppConfig app_config(const ConfigTree& tree) {
  using detail::parse_bool;
  using detail::parse_number;
  AppConfig c;
  c.catalog = config_value(tree, "catalog.catalog");
  c.taxonomy = config_value(tree, "catalog.taxonomy");
  c.index = config_value(tree, "catalog.index");
  c.store_version = parse_number<std::uint64_t>(tree, "catalog.store_version");

  c.encoder_kind = config_value(tree, "encoder.kind");
  c.dimension = parse_number<std::size_t>(tree, "encoder.dimension");
  c.encoder_seed = parse_number<std::uint64_t>(tree, "encoder.seed");
  c.encoder_provider = detail::provider(tree, "encoder", "QIU_ENCODER_ENDPOINT");

  auto& p = c.pipeline;
  p.retrieval.top_n = parse_number<std::size_t>(tree, "retrieval.top_n");
  p.retrieval.alpha = parse_number<double>(tree, "retrieval.alpha");
  p.retrieval.tau_fuzzy = parse_number<double>(tree, "retrieval.tau_fuzzy");
  p.retrieval.max_intents = parse_number<std::size_t>(tree, "retrieval.max_intents");
  p.retrieval.validate();

  c.engine_kind = config_value(tree, "reasoner.engine");
  c.rules = config_value(tree, "reasoner.rules");
  c.policy = config_value(tree, "reasoner.policy");
  p.agentic_mode = parse_agentic_mode(config_value(tree, "reasoner.agentic_mode"));
  p.budget.max_tool_calls = parse_number<std::size_t>(tree, "reasoner.max_tool_calls");
  p.budget.per_call_timeout = std::chrono::milliseconds(parse_number<std::int64_t>(tree, "reasoner.per_call_timeout_ms"));
  p.max_snippets = parse_number<std::size_t>(tree, "reasoner.max_snippets");
  p.default_vertical = config_value(tree, "reasoner.default_vertical");
  c.engine_provider = detail::provider(tree, "reasoner", "QIU_ENGINE_ENDPOINT");

  c.search_kind = config_value(tree, "search.tool");
  c.search_fixtures = config_value(tree, "search.fixtures");
  c.search_provider = detail::provider(tree, "search", "QIU_SEARCH_ENDPOINT");

  p.ablation.catalog_grounding = parse_bool(tree, "ablation.catalog_grounding");
  p.ablation.agentic_search = parse_bool(tree, "ablation.agentic_search");
  p.ablation.dual_intent = parse_bool(tree, "ablation.dual_intent");

  c.whitelist = config_value(tree, "disambiguation.whitelist");
  c.cache = config_value(tree, "cache.path");

  c.parallelism = parse_number<std::size_t>(tree, "batch.parallelism");
  if (c.parallelism == 0) c.parallelism = std::max(1u, std::thread::hardware_concurrency());
  c.resume = parse_bool(tree, "batch.resume");
  c.evidence_log = config_value(tree, "batch.evidence_log");

  c.host = config_value(tree, "serve.host");
  c.port = parse_number<int>(tree, "serve.port");
  if (c.port < 0 || c.port > 65535) throw ConfigError("serve.port out of range");
  c.miss_policy = config_value(tree, "serve.miss_policy");
  c.miss_vertical = config_value(tree, "serve.default_vertical");
  if (c.miss_vertical.empty()) c.miss_vertical = p.default_vertical;
  c.admin_token_env = config_value(tree, "serve.admin_token_env");

  for (const auto* kind : {&c.encoder_kind, &c.engine_kind})
    if (*kind != "hash" && *kind != "scripted" && *kind != "live")
      throw ConfigError("unknown provider kind '" + *kind + "'");
  if (c.encoder_kind == "scripted") throw ConfigError("encoder.kind must be hash or live");
  if (c.engine_kind == "hash") throw ConfigError("reasoner.engine must be scripted or live");
  if (c.search_kind != "fixture" && c.search_kind != "live" && c.search_kind != "none")
    throw ConfigError("search.tool must be fixture, live or none");
  return c;
}

}  // namespace qiu
