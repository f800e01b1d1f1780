#pragma once

#include <chrono>
#include <cstdio>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "qiu/catalog.hpp"
#include "qiu/digest.hpp"
#include "qiu/errors.hpp"
#include "qiu/fuzzy.hpp"

namespace qiu {

struct SearchSnippet {
  std::string source_url;
  std::string title;
  std::string snippet;

  friend bool operator==(const SearchSnippet&, const SearchSnippet&) = default;
};

/// Web evidence gathered by the tool loop. Empty iff the tool was never
/// invoked.
struct ExternalEvidence {
  std::vector<std::string> tool_queries;
  std::vector<SearchSnippet> snippets;

  bool empty() const noexcept { return tool_queries.empty(); }
};

struct EvidenceBundle {
  CatalogEvidence catalog;
  ExternalEvidence external;
};

/// Ordered dual-intent prediction; secondary is optional.
struct IntentTuple {
  VerticalId primary;
  std::optional<VerticalId> secondary;

  friend bool operator==(const IntentTuple&, const IntentTuple&) = default;

  // Empty string when valid, otherwise the first problem found.
  std::string problem(const Taxonomy& taxonomy) const {
    if (!taxonomy.contains(primary)) return "primary '" + primary + "' is not a known vertical";
    if (secondary) {
      if (!taxonomy.contains(*secondary)) return "secondary '" + *secondary + "' is not a known vertical";
      if (*secondary == primary) return "secondary equals primary '" + primary + "'";
    }
    return {};
  }

  void validate(const Taxonomy& taxonomy) const {
    if (auto p = problem(taxonomy); !p.empty()) throw ConfigError("invalid intent tuple: " + p);
  }

  nlohmann::json to_json() const {
    return {{"primary", primary}, {"secondary", secondary ? nlohmann::json(*secondary) : nlohmann::json()}};
  }
};

struct Exemplar {
  std::string query;
  std::string evidence_summary;
  IntentTuple tuple;
};

struct PolicyContext {
  std::vector<std::string> strategic_rules;
  std::vector<Exemplar> example_bank;
};

/// Policy file: {"strategic_rules": [...], "example_bank": [{query,
/// evidence, primary, secondary}]}.
inline PolicyContext load_policy(std::istream& in, const Taxonomy& taxonomy) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError({std::string("policy: ") + e.what()});
  }
  PolicyContext policy;
  std::vector<std::string> problems;
  for (const auto& r : doc.value("strategic_rules", nlohmann::json::array())) {
    if (r.is_string()) policy.strategic_rules.push_back(r.get<std::string>());
    else problems.push_back("policy: strategic rule is not a string");
  }
  std::size_t i = 0;
  for (const auto& ex : doc.value("example_bank", nlohmann::json::array())) {
    ++i;
    Exemplar e;
    e.query = ex.value("query", "");
    e.evidence_summary = ex.value("evidence", "");
    e.tuple.primary = ex.value("primary", "");
    if (ex.contains("secondary") && ex["secondary"].is_string()) e.tuple.secondary = ex["secondary"].get<std::string>();
    if (auto p = e.tuple.problem(taxonomy); !p.empty())
      problems.push_back("policy: exemplar " + std::to_string(i) + ": " + p);
    if (e.query.empty()) problems.push_back("policy: exemplar " + std::to_string(i) + " has no query");
    policy.example_bank.push_back(std::move(e));
  }
  if (!problems.empty()) throw LoadError(std::move(problems));
  return policy;
}

struct ToolBudget {
  std::size_t max_tool_calls = 2;
  std::chrono::milliseconds per_call_timeout{10000};
};

enum class AgenticMode { model_decides, on_empty_catalog, off };

inline std::string_view to_string(AgenticMode m) {
  switch (m) {
    case AgenticMode::model_decides: return "model_decides";
    case AgenticMode::on_empty_catalog: return "on_empty_catalog";
    case AgenticMode::off: return "off";
  }
  return "off";
}

inline AgenticMode parse_agentic_mode(std::string_view s) {
  if (s == "model_decides") return AgenticMode::model_decides;
  if (s == "on_empty_catalog") return AgenticMode::on_empty_catalog;
  if (s == "off") return AgenticMode::off;
  throw ConfigError("unknown agentic mode '" + std::string(s) + "'");
}

// --- search tool ----------------------------------------------------------

class SearchTool {
public:
  virtual ~SearchTool() = default;
  // Throws ToolError on timeout or transport failure.
  virtual std::vector<SearchSnippet> search(std::string_view query_text, std::size_t limit,
                                            std::chrono::milliseconds timeout) const = 0;
  virtual std::string identity() const = 0;
};

inline constexpr std::size_t kDefaultMaxSnippets = 5;

inline std::vector<SearchSnippet> web_search(const SearchTool& tool, std::string_view query_text,
                                             std::size_t max_snippets = kDefaultMaxSnippets,
                                             std::chrono::milliseconds timeout = std::chrono::milliseconds(10000)) {
  if (query_text.empty()) throw std::invalid_argument("web_search: empty query text");
  auto results = tool.search(query_text, max_snippets, timeout);
  std::erase_if(results, [](const SearchSnippet& s) { return s.snippet.empty(); });
  if (results.size() > max_snippets) results.resize(max_snippets);
  return results;
}

/// Offline tool backed by a JSON map from exact query text to result arrays
/// of {url, title, snippet}. Unknown keys return no results.
class FixtureSearchTool final : public SearchTool {
public:
  explicit FixtureSearchTool(std::map<std::string, std::vector<SearchSnippet>> table)
      : table_(std::move(table)) {}

  static FixtureSearchTool from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw LoadError({"search fixtures: document must be an object"});
    std::map<std::string, std::vector<SearchSnippet>> table;
    for (const auto& [key, arr] : doc.items()) {
      if (!arr.is_array()) throw LoadError({"search fixtures: value for '" + key + "' is not an array"});
      auto& out = table[key];
      for (const auto& r : arr)
        out.push_back({r.value("url", ""), r.value("title", ""), r.value("snippet", "")});
    }
    return FixtureSearchTool(std::move(table));
  }

  std::vector<SearchSnippet> search(std::string_view query_text, std::size_t limit,
                                    std::chrono::milliseconds) const override {
    auto it = table_.find(std::string(query_text));
    if (it == table_.end()) return {};
    std::vector<SearchSnippet> out = it->second;
    if (out.size() > limit) out.resize(limit);
    return out;
  }

  std::string identity() const override { return "fixture-search"; }

private:
  std::map<std::string, std::vector<SearchSnippet>> table_;
};

// --- prompt ---------------------------------------------------------------

struct PromptDocument {
  std::string text;
  friend bool operator==(const PromptDocument&, const PromptDocument&) = default;
};

// Loop state surfaced to the model between turns.
struct LoopNotes {
  enum class Tools { available, unavailable, exhausted } tools = Tools::unavailable;
  std::size_t calls_remaining = 0;
  std::vector<std::string> tool_failures;
  std::string repair_reason;  // non-empty on the repair turn
};

namespace detail {
inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}
}  // namespace detail

/// Deterministic grounded prompt. Sections appear in a fixed order and empty
/// optional sections are omitted: verticals, strategic rules, examples,
/// catalog evidence, web results, query, [tool status], output format.
inline PromptDocument assemble_prompt(const Query& q, const EvidenceBundle& evidence, const PolicyContext& policy,
                                      const Taxonomy& taxonomy,
                                      const std::optional<LoopNotes>& loop = std::nullopt) {
  std::ostringstream out;
  out << "You classify marketplace search queries into business verticals.\n"
         "Ground your answer in the evidence below; do not assume inventory that the evidence does not show.\n\n";

  out << "## Verticals\n";
  for (const auto& v : taxonomy.verticals()) out << "- " << v.id << ": " << v.display_name << "\n";

  if (!policy.strategic_rules.empty()) {
    out << "\n## Strategic rules\n";
    for (std::size_t i = 0; i < policy.strategic_rules.size(); ++i)
      out << (i + 1) << ". " << policy.strategic_rules[i] << "\n";
  }

  if (!policy.example_bank.empty()) {
    out << "\n## Examples\n";
    for (const auto& ex : policy.example_bank) {
      out << "Query: " << ex.query << "\n";
      if (!ex.evidence_summary.empty()) out << "Evidence: " << ex.evidence_summary << "\n";
      out << "Answer: " << ex.tuple.to_json().dump() << "\n";
    }
  }

  if (!evidence.catalog.empty()) {
    out << "\n## Catalog evidence\n";
    for (const auto& m : evidence.catalog.matches)
      out << "- " << m.name << " | " << to_string(m.kind) << " | " << m.vertical << " | fuzzy "
          << detail::fixed3(m.fuzzy) << "\n";
  }

  if (!evidence.external.empty()) {
    out << "\n## Web search results\n";
    for (const auto& tq : evidence.external.tool_queries) out << "Searched: " << tq << "\n";
    for (const auto& s : evidence.external.snippets) {
      out << "- ";
      if (!s.title.empty()) out << s.title << ": ";
      out << s.snippet;
      if (!s.source_url.empty()) out << " <" << s.source_url << ">";
      out << "\n";
    }
  }

  out << "\n## Query\n" << q.normalized << "\n";

  if (loop) {
    const LoopNotes& notes = *loop;
    out << "\n## Tool status\n";
    switch (notes.tools) {
      case LoopNotes::Tools::available:
        out << "The web_search tool is available (" << notes.calls_remaining
            << " call(s) left). Call it only if the evidence above is insufficient.\n";
        break;
      case LoopNotes::Tools::exhausted:
        out << "The web_search budget is exhausted. Answer now without further tool calls.\n";
        break;
      case LoopNotes::Tools::unavailable:
        out << "Tools are unavailable for this query. Answer directly.\n";
        break;
    }
    for (const auto& f : notes.tool_failures) out << "Tool failure: " << f << "\n";
    if (!notes.repair_reason.empty())
      out << "Your previous answer was rejected (" << notes.repair_reason
          << "). Follow the output format exactly.\n";
  }

  out << "\n## Output format\n"
         "Reply with one JSON object and nothing else: {\"primary\": \"<vertical id>\", \"secondary\": "
         "\"<vertical id>\" or null}. The primary is the most likely intent; the secondary is a distinct, "
         "plausible alternative or null.\n";
  return PromptDocument{out.str()};
}

// --- engine ---------------------------------------------------------------

struct EngineTurn {
  const Query& query;
  const EvidenceBundle& evidence;
  const PolicyContext& policy;
  const Taxonomy& taxonomy;
  PromptDocument prompt;
  bool tools_offered = false;
  std::size_t tool_calls_remaining = 0;
  bool repair = false;
};

struct ToolRequest {
  std::string query_text;
};

struct FinalAnswer {
  std::string text;
};

using EngineReply = std::variant<ToolRequest, FinalAnswer>;

/// The reasoning backend. Implementations are stateless across calls; a
/// failure that should fail the query is thrown as ClassificationError.
class ReasoningEngine {
public:
  virtual ~ReasoningEngine() = default;
  virtual EngineReply respond(const EngineTurn& turn) const = 0;
  virtual std::string identity() const = 0;
};

/// Strict parse of the engine's final message. Accepts a single JSON object
/// (optionally inside one ``` fence) with a string "primary" and a string or
/// null "secondary". Returns the problem text on failure.
inline std::variant<IntentTuple, std::string> parse_intent_output(std::string_view text, const Taxonomy& taxonomy) {
  std::string body(text);
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  trim(body);
  if (body.rfind("```", 0) == 0 && body.size() >= 6 && body.compare(body.size() - 3, 3, "```") == 0) {
    const auto nl = body.find('\n');
    body = nl == std::string::npos ? std::string() : body.substr(nl + 1, body.size() - 3 - nl - 1);
    trim(body);
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return std::string("output is not a JSON object");
  }
  if (!doc.is_object()) return std::string("output is not a JSON object");
  if (!doc.contains("primary") || !doc["primary"].is_string()) return std::string("missing string 'primary'");
  IntentTuple t;
  t.primary = doc["primary"].get<std::string>();
  if (doc.contains("secondary")) {
    if (doc["secondary"].is_string()) t.secondary = doc["secondary"].get<std::string>();
    else if (!doc["secondary"].is_null()) return std::string("'secondary' must be a string or null");
  }
  if (auto p = t.problem(taxonomy); !p.empty()) return p;
  return t;
}

struct PredictOptions {
  AgenticMode mode = AgenticMode::on_empty_catalog;
  ToolBudget budget;
  std::size_t max_snippets = kDefaultMaxSnippets;
};

struct Prediction {
  IntentTuple tuple;
  ExternalEvidence external;
  std::size_t tool_calls = 0;
  std::size_t tool_failures = 0;
  bool repaired = false;
};

/// Runs the agentic loop for one query: the engine either answers with a
/// tuple or asks for a web search; searches are run, folded into the
/// evidence, and the prompt is rebuilt. The budget caps searches per query.
/// One repair turn is allowed for malformed output before the query fails.
inline Prediction predict_intents(const ReasoningEngine& engine, const Query& q, const EvidenceBundle& evidence,
                                  const PolicyContext& policy, const Taxonomy& taxonomy, const SearchTool* tool,
                                  const PredictOptions& options) {
  Prediction result;
  EvidenceBundle bundle{evidence.catalog, {}};

  const bool mode_allows = options.mode == AgenticMode::model_decides ||
                           (options.mode == AgenticMode::on_empty_catalog && evidence.catalog.empty());
  const bool tools_configured = tool != nullptr && mode_allows && options.budget.max_tool_calls > 0;

  LoopNotes notes;
  bool repair_turn = false;
  std::string last_problem;

  auto reject = [&](std::string problem, const char* error_class) {
    if (result.repaired) {
      throw ClassificationError(error_class, "engine output rejected after repair: " + problem);
    }
    result.repaired = true;
    repair_turn = true;
    notes.repair_reason = problem;
    last_problem = std::move(problem);
  };

  for (;;) {
    const bool offered = tools_configured && result.tool_calls < options.budget.max_tool_calls;
    if (!tools_configured) notes.tools = LoopNotes::Tools::unavailable;
    else if (offered) notes.tools = LoopNotes::Tools::available;
    else notes.tools = LoopNotes::Tools::exhausted;
    notes.calls_remaining = offered ? options.budget.max_tool_calls - result.tool_calls : 0;

    EngineTurn turn{q, bundle, policy, taxonomy, assemble_prompt(q, bundle, policy, taxonomy, notes),
                    offered, notes.calls_remaining, repair_turn};
    const EngineReply reply = engine.respond(turn);

    if (const auto* req = std::get_if<ToolRequest>(&reply)) {
      if (!offered) {
        reject(tools_configured ? "tool budget exhausted" : "tools are unavailable", "tool_request_refused");
        continue;
      }
      if (req->query_text.empty()) {
        reject("empty tool query", "unparseable_output");
        continue;
      }
      ++result.tool_calls;
      bundle.external.tool_queries.push_back(req->query_text);
      try {
        auto found = web_search(*tool, req->query_text, options.max_snippets, options.budget.per_call_timeout);
        for (auto& s : found) bundle.external.snippets.push_back(std::move(s));
      } catch (const NetworkForbidden&) {
        throw;
      } catch (const std::exception& e) {
        ++result.tool_failures;
        notes.tool_failures.push_back("search for '" + req->query_text + "' failed: " + e.what());
      }
      continue;
    }

    const auto& answer = std::get<FinalAnswer>(reply);
    auto parsed = parse_intent_output(answer.text, taxonomy);
    if (auto* tuple = std::get_if<IntentTuple>(&parsed)) {
      result.tuple = std::move(*tuple);
      result.external = std::move(bundle.external);
      return result;
    }
    reject(std::get<std::string>(parsed), "unparseable_output");
  }
}

// --- scripted engine ------------------------------------------------------

struct KeywordRule {
  std::string keyword;  // matched case-insensitively against snippet titles and text
  VerticalId vertical;
  std::optional<VerticalId> secondary;
};

struct ScriptedRules {
  VerticalId default_vertical;
  std::vector<KeywordRule> keyword_rules;
  double secondary_window = 0.1;

  void validate(const Taxonomy& taxonomy) const {
    std::vector<std::string> problems;
    if (!taxonomy.contains(default_vertical))
      problems.push_back("default vertical '" + default_vertical + "' not in taxonomy");
    for (const auto& r : keyword_rules) {
      if (r.keyword.empty()) problems.push_back("keyword rule with empty keyword");
      if (auto p = IntentTuple{r.vertical, r.secondary}.problem(taxonomy); !p.empty())
        problems.push_back("rule '" + r.keyword + "': " + p);
    }
    if (!problems.empty()) throw LoadError(std::move(problems));
  }

  static ScriptedRules from_json(const nlohmann::json& doc) {
    ScriptedRules rules;
    rules.default_vertical = doc.value("default_vertical", "");
    rules.secondary_window = doc.value("secondary_window", 0.1);
    for (const auto& r : doc.value("keyword_rules", nlohmann::json::array())) {
      KeywordRule k{r.value("keyword", ""), r.value("vertical", ""), std::nullopt};
      if (r.contains("secondary") && r["secondary"].is_string()) k.secondary = r["secondary"].get<std::string>();
      rules.keyword_rules.push_back(std::move(k));
    }
    return rules;
  }
};

/// Deterministic stand-in for the LLM:
///  1. catalog evidence present: primary is the top match's vertical; the
///     secondary is the best match of another vertical within
///     secondary_window fuzzy of the top, if any;
///  2. no evidence at all and tools offered: search for the normalized query;
///  3. web evidence present: the first keyword rule matching a snippet wins;
///  4. otherwise the default vertical alone.
class ScriptedEngine final : public ReasoningEngine {
public:
  explicit ScriptedEngine(ScriptedRules rules) : rules_(std::move(rules)) {}

  EngineReply respond(const EngineTurn& turn) const override {
    const auto& catalog = turn.evidence.catalog.matches;
    if (!catalog.empty()) {
      IntentTuple t{catalog.front().vertical, std::nullopt};
      for (const auto& m : catalog) {
        if (m.vertical == t.primary) continue;
        if (catalog.front().fuzzy - m.fuzzy <= rules_.secondary_window + 1e-12) t.secondary = m.vertical;
        break;
      }
      return FinalAnswer{t.to_json().dump()};
    }
    const auto& external = turn.evidence.external;
    if (external.empty() && turn.tools_offered) return ToolRequest{turn.query.normalized};
    if (!external.empty()) {
      for (const auto& rule : rules_.keyword_rules) {
        const std::string needle = normalize_text(rule.keyword);
        for (const auto& s : external.snippets) {
          if (normalize_text(s.title + " " + s.snippet).find(needle) != std::string::npos)
            return FinalAnswer{IntentTuple{rule.vertical, rule.secondary}.to_json().dump()};
        }
      }
    }
    return FinalAnswer{IntentTuple{rules_.default_vertical, std::nullopt}.to_json().dump()};
  }

  std::string identity() const override {
    nlohmann::json doc = {{"default", rules_.default_vertical}, {"window", rules_.secondary_window}};
    for (const auto& r : rules_.keyword_rules)
      doc["rules"].push_back({r.keyword, r.vertical, r.secondary.value_or("")});
    return "scripted/v1/" + sha256_hex(doc.dump()).substr(0, 12);
  }

  const ScriptedRules& rules() const noexcept { return rules_; }

private:
  ScriptedRules rules_;
};

inline std::shared_ptr<const ReasoningEngine> scripted_engine(ScriptedRules rules, const Taxonomy& taxonomy) {
  rules.validate(taxonomy);
  return std::make_shared<const ScriptedEngine>(std::move(rules));
}

}  // namespace qiu
