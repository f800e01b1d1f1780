#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "qiu/cache_store.hpp"
#include "qiu/catalog.hpp"
#include "qiu/digest.hpp"
#include "qiu/disambiguation.hpp"
#include "qiu/fuzzy.hpp"
#include "qiu/reasoner.hpp"
#include "qiu/retrieval.hpp"

namespace qiu {

struct AblationFlags {
  bool catalog_grounding = true;
  bool agentic_search = true;
  bool dual_intent = true;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct PipelineConfig {
  RetrievalConfig retrieval;
  ToolBudget budget;
  AgenticMode agentic_mode = AgenticMode::on_empty_catalog;
  AblationFlags ablation;
  VerticalId default_vertical = "restaurant";
  std::size_t max_snippets = kDefaultMaxSnippets;

  void validate(const Taxonomy& taxonomy) const {
    retrieval.validate();
    if (!taxonomy.contains(default_vertical))
      throw ConfigError("default_vertical '" + default_vertical + "' not in taxonomy");
    if (max_snippets == 0) throw ConfigError("max_snippets must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"top_n", retrieval.top_n},
            {"alpha", retrieval.alpha},
            {"tau_fuzzy", retrieval.tau_fuzzy},
            {"max_intents", retrieval.max_intents},
            {"max_tool_calls", budget.max_tool_calls},
            {"per_call_timeout_ms", budget.per_call_timeout.count()},
            {"agentic_mode", to_string(agentic_mode)},
            {"catalog_grounding", ablation.catalog_grounding},
            {"agentic_search", ablation.agentic_search},
            {"dual_intent", ablation.dual_intent},
            {"default_vertical", default_vertical},
            {"max_snippets", max_snippets}};
  }
};

/// Everything a classification needs, built against one store version.
struct PipelineDeps {
  std::shared_ptr<const EntityStore> store;
  std::shared_ptr<const SemanticIndex> index;
  std::shared_ptr<const Encoder> encoder;
  std::shared_ptr<const ReasoningEngine> engine;
  std::shared_ptr<const SearchTool> tool;  // null disables web search
  std::shared_ptr<const IntentResolver> resolver;
  std::shared_ptr<const PolicyContext> policy;

  void check() const {
    if (!store || !index || !encoder || !engine || !resolver || !policy)
      throw ConfigError("pipeline dependencies incomplete");
    index->check_store(*store);
    index->check_compatible(*encoder);
  }
};

/// Hash of everything that determines a classification outcome.
inline std::string pipeline_version(const PipelineDeps& deps, const PipelineConfig& config) {
  const nlohmann::json doc = {{"config", config.to_json()},
                              {"whitelist_version", deps.resolver->version()},
                              {"store_version", deps.store->version()},
                              {"store_fingerprint", deps.store->fingerprint()},
                              {"engine", deps.engine->identity()},
                              {"encoder", deps.encoder->identity()},
                              {"tool", deps.tool ? deps.tool->identity() : "none"}};
  return "pv-" + sha256_hex(doc.dump()).substr(0, 16);
}

inline nlohmann::json evidence_to_json(const EvidenceBundle& e) {
  nlohmann::json catalog = nlohmann::json::array();
  for (const auto& m : e.catalog.matches)
    catalog.push_back({{"entity_id", m.entity_id},
                       {"surface", m.surface},
                       {"name", m.name},
                       {"kind", to_string(m.kind)},
                       {"vertical", m.vertical},
                       {"cosine", m.cosine},
                       {"fuzzy", m.fuzzy}});
  nlohmann::json snippets = nlohmann::json::array();
  for (const auto& s : e.external.snippets)
    snippets.push_back({{"url", s.source_url}, {"title", s.title}, {"snippet", s.snippet}});
  return {{"catalog", catalog}, {"tool_queries", e.external.tool_queries}, {"snippets", snippets}};
}

inline std::string evidence_digest(const EvidenceBundle& e) { return sha256_hex(evidence_to_json(e).dump()); }

/// Full record of one classification.
struct ClassificationTrace {
  Query query;
  EvidenceBundle evidence;
  IntentTuple predicted;  // engine output before any ablation truncation
  ResolvedIntent resolved;
  std::size_t retrievals = 0;
  std::size_t tool_calls = 0;
  bool repaired = false;
};

/// normalize -> [semantic top-N -> fuzzy refine] -> reasoning loop ->
/// [drop secondary when dual intent is off] -> disambiguation.
inline ClassificationTrace classify_traced(std::string_view raw, const PipelineDeps& deps,
                                           const PipelineConfig& config) {
  ClassificationTrace t;
  t.query = Query::from_raw(std::string(raw));

  if (config.ablation.catalog_grounding) {
    const auto candidates = semantic_topn(*deps.index, t.query, *deps.encoder, config.retrieval.top_n);
    t.evidence.catalog = refine(candidates, t.query, config.retrieval, *deps.store);
    t.retrievals = 1;
  }

  PredictOptions options;
  options.mode = config.ablation.agentic_search ? config.agentic_mode : AgenticMode::off;
  options.budget = config.budget;
  options.max_snippets = config.max_snippets;
  const SearchTool* tool = options.mode == AgenticMode::off ? nullptr : deps.tool.get();

  Prediction p = predict_intents(*deps.engine, t.query, t.evidence, *deps.policy, deps.store->taxonomy(), tool, options);
  t.evidence.external = std::move(p.external);
  t.tool_calls = p.tool_calls;
  t.repaired = p.repaired;
  t.predicted = p.tuple;

  IntentTuple tuple = p.tuple;
  if (!config.ablation.dual_intent) tuple.secondary.reset();
  t.resolved = resolve_checked(*deps.resolver, tuple);
  return t;
}

inline ResolvedIntent classify_query(std::string_view raw, const PipelineDeps& deps, const PipelineConfig& config) {
  return classify_traced(raw, deps, config).resolved;
}

// --- batch ----------------------------------------------------------------

struct BatchFailure {
  std::string query;
  std::string error_class;
  std::string message;
};

struct BatchReport {
  std::size_t total = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  std::size_t skipped_cached = 0;  // resume mode: keys already cached for this pipeline version
  std::size_t tool_calls_issued = 0;
  std::size_t cache_written = 0;
  std::vector<BatchFailure> failures;
  bool aborted = false;  // partial progress: rerun with resume to continue
  std::string abort_reason;
  std::string pipeline_version;

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& x : failures) f.push_back({{"query", x.query}, {"error_class", x.error_class}, {"message", x.message}});
    return {{"total", total},
            {"succeeded", succeeded},
            {"failed", failed},
            {"skipped_cached", skipped_cached},
            {"tool_calls_issued", tool_calls_issued},
            {"cache_written", cache_written},
            {"failures", f},
            {"aborted", aborted},
            {"abort_reason", abort_reason},
            {"pipeline_version", pipeline_version}};
  }
};

struct BatchOptions {
  std::size_t parallelism = 1;
  bool resume = false;
  std::function<std::int64_t()> now_ms = [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
  std::ostream* evidence_log = nullptr;  // one JSON line per cached key
};

inline std::string classify_error_class(const std::exception& e) {
  if (const auto* c = dynamic_cast<const ClassificationError*>(&e)) return c->error_class();
  if (dynamic_cast<const NetworkForbidden*>(&e)) return "network_forbidden";
  if (dynamic_cast<const IntegrityError*>(&e)) return "integrity";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  return "internal";
}

/// Classifies each distinct normalized query once and writes one record per
/// key. Output is independent of parallelism. A cache write failure stops
/// the batch with aborted set; records already written stay valid, so a
/// rerun with resume picks up where it stopped.
inline BatchReport batch_run(std::istream& queries, const PipelineDeps& deps, const PipelineConfig& config,
                             CacheStore& cache, const BatchOptions& options = {}) {
  deps.check();
  config.validate(deps.store->taxonomy());
  BatchReport report;
  report.pipeline_version = pipeline_version(deps, config);

  std::vector<std::string> keys;
  std::vector<std::string> first_raw;
  {
    std::set<std::string> seen;
    std::string line;
    while (std::getline(queries, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      std::string key = normalize_text(line);
      if (!seen.insert(key).second) continue;
      if (options.resume && !key.empty()) {
        if (auto rec = cache.get(key); rec && rec->pipeline_version == report.pipeline_version) {
          ++report.skipped_cached;
          continue;
        }
      }
      keys.push_back(std::move(key));
      first_raw.push_back(line);
    }
  }
  report.total = keys.size();

  struct Slot {
    bool ok = false;
    std::size_t tool_calls = 0;
    std::optional<BatchFailure> failure;
  };
  std::vector<Slot> slots(keys.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex log_mu;
  std::string abort_reason;

  auto worker = [&] {
    for (;;) {
      if (abort.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= keys.size()) return;
      Slot& slot = slots[i];
      if (keys[i].empty()) {
        slot.failure = BatchFailure{first_raw[i], "empty_query", "query is empty after normalization"};
        continue;
      }
      ClassificationTrace trace;
      try {
        trace = classify_traced(keys[i], deps, config);
      } catch (const std::exception& e) {
        slot.failure = BatchFailure{keys[i], classify_error_class(e), e.what()};
        continue;
      }
      slot.tool_calls = trace.tool_calls;
      CacheRecord rec{keys[i], trace.resolved, evidence_digest(trace.evidence), report.pipeline_version,
                      options.now_ms()};
      try {
        cache.put(rec);
      } catch (const std::exception& e) {
        std::lock_guard lock(log_mu);
        if (!abort.exchange(true)) abort_reason = e.what();
        slot.failure = BatchFailure{keys[i], "cache_write", e.what()};
        return;
      }
      slot.ok = true;
      if (options.evidence_log) {
        const nlohmann::json line = {{"key", keys[i]}, {"evidence_digest", rec.evidence_digest},
                                     {"evidence", evidence_to_json(trace.evidence)}};
        std::lock_guard lock(log_mu);
        *options.evidence_log << line.dump() << "\n";
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.parallelism, std::max<std::size_t>(1, keys.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Slot& s = slots[i];
    report.tool_calls_issued += s.tool_calls;
    if (s.ok) {
      ++report.succeeded;
      ++report.cache_written;
    } else if (s.failure) {
      ++report.failed;
      report.failures.push_back(*s.failure);
    } else {
      // Never attempted because the batch aborted.
      ++report.failed;
      report.failures.push_back({keys[i], "aborted", "batch aborted before this query ran"});
    }
  }
  report.aborted = abort.load();
  report.abort_reason = abort_reason;
  return report;
}

}  // namespace qiu
