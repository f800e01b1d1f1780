#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "qiu/reasoner.hpp"
#include "support/helpers.hpp"

using testing_support::fixture;

namespace {

class FnEngine : public qiu::ReasoningEngine {
public:
  using Fn = std::function<qiu::EngineReply(const qiu::EngineTurn&)>;
  explicit FnEngine(Fn fn) : fn_(std::move(fn)) {}
  qiu::EngineReply respond(const qiu::EngineTurn& t) const override {
    turns.push_back(t.prompt.text);
    offered.push_back(t.tools_offered);
    return fn_(t);
  }
  std::string identity() const override { return "fn-test"; }
  mutable std::vector<std::string> turns;
  mutable std::vector<bool> offered;

private:
  Fn fn_;
};

class ThrowingTool : public qiu::SearchTool {
public:
  std::vector<qiu::SearchSnippet> search(std::string_view, std::size_t, std::chrono::milliseconds) const override {
    throw qiu::ToolError("timed out");
  }
  std::string identity() const override { return "throwing"; }
};

class ManyTool : public qiu::SearchTool {
public:
  std::vector<qiu::SearchSnippet> search(std::string_view q, std::size_t, std::chrono::milliseconds) const override {
    std::vector<qiu::SearchSnippet> out;
    for (int i = 0; i < 12; ++i) out.push_back({"u" + std::to_string(i), "t", i == 3 ? "" : std::string(q)});
    return out;
  }
  std::string identity() const override { return "many"; }
};

qiu::Taxonomy taxonomy() { return qiu::load_taxonomy_file(fixture("taxonomy.json")); }

qiu::PolicyContext policy() {
  std::ifstream in(fixture("policy.json"));
  return qiu::load_policy(in, taxonomy());
}

qiu::FixtureSearchTool fixture_tool() {
  return qiu::FixtureSearchTool::from_json(qiu::read_json_file(fixture("search_fixtures.json"), "fixtures"));
}

qiu::FuzzyScoredMatch match(std::string id, std::string name, qiu::EntityKind kind, std::string vertical,
                            double fuzzy) {
  return {id, name, 0.5, fuzzy, name, kind, vertical};
}

qiu::FinalAnswer answer(const char* text) { return qiu::FinalAnswer{text}; }

}  // namespace

TEST(Prompt, SectionsAppearInOrder) {
  const auto tax = taxonomy();
  qiu::EvidenceBundle ev;
  ev.catalog.matches = {match("m001", "Wildflower Bites", qiu::EntityKind::merchant, "restaurant", 1.0),
                        match("m002", "Wildflower Stems", qiu::EntityKind::merchant, "flower", 0.8)};
  ev.external.tool_queries = {"wildflower"};
  ev.external.snippets = {{"https://x.test", "Title", "body"}};
  qiu::LoopNotes notes;
  notes.tools = qiu::LoopNotes::Tools::available;
  notes.calls_remaining = 2;
  const auto p = qiu::assemble_prompt(qiu::Query::from_raw("Wildflower"), ev, policy(), tax, notes).text;

  std::size_t at = 0;
  for (const char* heading : {"## Verticals", "## Strategic rules", "## Examples", "## Catalog evidence",
                              "## Web search results", "## Query\nwildflower\n", "## Tool status",
                              "## Output format"}) {
    const auto found = p.find(heading, at);
    ASSERT_NE(found, std::string::npos) << heading << "\n" << p;
    at = found;
  }
  EXPECT_NE(p.find("- restaurant: Restaurant\n"), std::string::npos);
  EXPECT_NE(p.find("- pet_product: Pet Product\n"), std::string::npos);
  EXPECT_NE(p.find("1. Prefer restaurant"), std::string::npos);
  EXPECT_NE(p.find("Answer: {\"primary\":\"alcohol\",\"secondary\":\"retail_store\"}"), std::string::npos);
  EXPECT_NE(p.find("- Wildflower Bites | merchant | restaurant | fuzzy 1.000\n"), std::string::npos);
  EXPECT_NE(p.find("- Wildflower Stems | merchant | flower | fuzzy 0.800\n"), std::string::npos);
  EXPECT_NE(p.find("Searched: wildflower\n- Title: body <https://x.test>\n"), std::string::npos);
  EXPECT_NE(p.find("(2 call(s) left)"), std::string::npos);
}

TEST(Prompt, OmitsEmptySectionsAndIsDeterministic) {
  const auto tax = taxonomy();
  const qiu::EvidenceBundle ev;
  const auto q = qiu::Query::from_raw("x");
  const auto a = qiu::assemble_prompt(q, ev, {}, tax);
  EXPECT_EQ(a, qiu::assemble_prompt(q, ev, {}, tax));
  for (const char* h : {"## Strategic rules", "## Examples", "## Catalog evidence", "## Web search results",
                        "## Tool status"})
    EXPECT_EQ(a.text.find(h), std::string::npos) << h;
}

TEST(ParseOutput, AcceptsAndRejects) {
  const auto tax = taxonomy();
  auto ok = [&](const char* s) { return std::holds_alternative<qiu::IntentTuple>(qiu::parse_intent_output(s, tax)); };
  EXPECT_TRUE(ok(R"({"primary":"grocery","secondary":null})"));
  EXPECT_TRUE(ok(R"({"primary":"grocery"})"));
  EXPECT_TRUE(ok("```json\n{\"primary\":\"dish\",\"secondary\":\"grocery\"}\n```"));
  EXPECT_FALSE(ok("grocery"));
  EXPECT_FALSE(ok(R"(["grocery"])"));
  EXPECT_FALSE(ok(R"({"primary":"bakery"})"));
  EXPECT_FALSE(ok(R"({"primary":"dish","secondary":"dish"})"));
  EXPECT_FALSE(ok(R"({"primary":"dish","secondary":3})"));
  EXPECT_FALSE(ok(R"({"secondary":"dish"})"));
}

TEST(Predict, CatalogEvidenceSkipsTools) {
  const auto tax = taxonomy();
  const auto tool = fixture_tool();
  qiu::EvidenceBundle ev;
  ev.catalog.matches = {match("b001", "Better Chew Farms", qiu::EntityKind::brand, "grocery", 0.9)};
  FnEngine e([](const qiu::EngineTurn& t) -> qiu::EngineReply {
    EXPECT_FALSE(t.tools_offered);
    return answer(R"({"primary":"grocery","secondary":null})");
  });
  const auto r = qiu::predict_intents(e, qiu::Query::from_raw("better chew"), ev, {}, tax, &tool, {});
  EXPECT_EQ(r.tuple.primary, "grocery");
  EXPECT_EQ(r.tool_calls, 0u);
  EXPECT_NE(e.turns[0].find("Tools are unavailable"), std::string::npos);
}

TEST(Predict, ZeroBudgetMeansToolsUnavailable) {
  const auto tax = taxonomy();
  const auto tool = fixture_tool();
  qiu::PredictOptions opt;
  opt.budget.max_tool_calls = 0;
  FnEngine e([](const qiu::EngineTurn&) -> qiu::EngineReply { return answer(R"({"primary":"restaurant"})"); });
  const auto r = qiu::predict_intents(e, qiu::Query::from_raw("450 north"), {}, {}, tax, &tool, opt);
  EXPECT_EQ(r.tool_calls, 0u);
  ASSERT_EQ(e.turns.size(), 1u);
  EXPECT_FALSE(e.offered[0]);
  EXPECT_NE(e.turns[0].find("Tools are unavailable for this query"), std::string::npos);
}

TEST(Predict, ModeOffAndMissingToolDisableSearch) {
  const auto tax = taxonomy();
  const auto tool = fixture_tool();
  FnEngine e([](const qiu::EngineTurn& t) -> qiu::EngineReply {
    EXPECT_FALSE(t.tools_offered);
    return answer(R"({"primary":"restaurant"})");
  });
  qiu::PredictOptions off;
  off.mode = qiu::AgenticMode::off;
  EXPECT_EQ(qiu::predict_intents(e, qiu::Query::from_raw("moonpetal"), {}, {}, tax, &tool, off).tool_calls, 0u);
  EXPECT_EQ(qiu::predict_intents(e, qiu::Query::from_raw("moonpetal"), {}, {}, tax, nullptr, {}).tool_calls, 0u);
}

TEST(Predict, RepairOnceThenFail) {
  const auto tax = taxonomy();
  int calls = 0;
  FnEngine fixes([&](const qiu::EngineTurn& t) -> qiu::EngineReply {
    ++calls;
    if (!t.repair) return answer("I think it is a grocery");
    return answer(R"({"primary":"grocery"})");
  });
  const auto r = qiu::predict_intents(fixes, qiu::Query::from_raw("q"), {}, {}, tax, nullptr, {});
  EXPECT_TRUE(r.repaired);
  EXPECT_EQ(r.tuple.primary, "grocery");
  EXPECT_EQ(calls, 2);
  EXPECT_NE(fixes.turns[1].find("Your previous answer was rejected (output is not a JSON object)"), std::string::npos);

  FnEngine same([](const qiu::EngineTurn&) -> qiu::EngineReply {
    return answer(R"({"primary":"dish","secondary":"dish"})");
  });
  try {
    qiu::predict_intents(same, qiu::Query::from_raw("q"), {}, {}, tax, nullptr, {});
    FAIL();
  } catch (const qiu::ClassificationError& e) {
    EXPECT_EQ(e.error_class(), "unparseable_output");
    EXPECT_NE(std::string(e.what()).find("secondary equals primary"), std::string::npos);
  }
  EXPECT_EQ(same.turns.size(), 2u);
}

TEST(Predict, ToolRequestWithoutOfferIsRefused) {
  const auto tax = taxonomy();
  FnEngine greedy([](const qiu::EngineTurn&) -> qiu::EngineReply { return qiu::ToolRequest{"more"}; });
  try {
    qiu::predict_intents(greedy, qiu::Query::from_raw("q"), {}, {}, tax, nullptr, {});
    FAIL();
  } catch (const qiu::ClassificationError& e) {
    EXPECT_EQ(e.error_class(), "tool_request_refused");
  }
}

TEST(Predict, AdversarialEngineNeverExceedsBudget) {
  const auto tax = taxonomy();
  const auto tool = fixture_tool();
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    qiu::PredictOptions opt;
    opt.mode = qiu::AgenticMode::model_decides;
    opt.budget.max_tool_calls = static_cast<std::size_t>(rng() % 4);
    // Asks for a tool on every turn it can; answers once told the budget is gone.
    FnEngine adv([](const qiu::EngineTurn& t) -> qiu::EngineReply {
      if (t.tools_offered) return qiu::ToolRequest{"450 north"};
      return answer(R"({"primary":"alcohol"})");
    });
    const auto r = qiu::predict_intents(adv, qiu::Query::from_raw("q"), {}, {}, tax, &tool, opt);
    EXPECT_EQ(r.tool_calls, opt.budget.max_tool_calls);
    EXPECT_EQ(r.external.tool_queries.size(), r.tool_calls);
    if (opt.budget.max_tool_calls > 0) {
      EXPECT_NE(adv.turns.back().find("budget is exhausted"), std::string::npos);
    }
  }
  qiu::PredictOptions opt;
  opt.mode = qiu::AgenticMode::model_decides;
  FnEngine relentless([](const qiu::EngineTurn&) -> qiu::EngineReply { return qiu::ToolRequest{"again"}; });
  EXPECT_THROW(qiu::predict_intents(relentless, qiu::Query::from_raw("q"), {}, {}, tax, &tool, opt),
               qiu::ClassificationError);
  EXPECT_EQ(relentless.turns.size(), 4u);  // two calls, one refusal, one repair turn
}

TEST(Predict, ToolFailureBecomesNote) {
  const auto tax = taxonomy();
  const ThrowingTool tool;
  FnEngine e([](const qiu::EngineTurn& t) -> qiu::EngineReply {
    if (t.tools_offered && t.evidence.external.empty()) return qiu::ToolRequest{"moonpetal"};
    return answer(R"({"primary":"restaurant"})");
  });
  const auto r = qiu::predict_intents(e, qiu::Query::from_raw("moonpetal"), {}, {}, tax, &tool, {});
  EXPECT_EQ(r.tool_failures, 1u);
  EXPECT_EQ(r.tool_calls, 1u);
  EXPECT_NE(e.turns[1].find("Tool failure: search for 'moonpetal' failed: timed out"), std::string::npos);
}

TEST(ScriptedEngine, FollowsRules) {
  const auto tax = taxonomy();
  const auto tool = fixture_tool();
  const auto eng = qiu::scripted_engine(
      qiu::ScriptedRules::from_json(qiu::read_json_file(fixture("rules.json"), "rules")), tax);

  qiu::EvidenceBundle wild;
  wild.catalog.matches = {match("m001", "Wildflower Bites", qiu::EntityKind::merchant, "restaurant", 1.0),
                          match("m002", "Wildflower Stems", qiu::EntityKind::merchant, "flower", 1.0)};
  auto r = qiu::predict_intents(*eng, qiu::Query::from_raw("wildflower"), wild, {}, tax, &tool, {});
  EXPECT_EQ(r.tuple, (qiu::IntentTuple{"restaurant", "flower"}));

  qiu::EvidenceBundle far;
  far.catalog.matches = {match("a", "A", qiu::EntityKind::merchant, "grocery", 0.95),
                         match("b", "B", qiu::EntityKind::merchant, "dish", 0.8)};
  r = qiu::predict_intents(*eng, qiu::Query::from_raw("a"), far, {}, tax, &tool, {});
  EXPECT_EQ(r.tuple, (qiu::IntentTuple{"grocery", std::nullopt}));

  r = qiu::predict_intents(*eng, qiu::Query::from_raw("450 north"), {}, {}, tax, &tool, {});
  EXPECT_EQ(r.tuple, (qiu::IntentTuple{"alcohol", "retail_store"}));
  EXPECT_EQ(r.tool_calls, 1u);
  ASSERT_EQ(r.external.snippets.size(), 1u);

  r = qiu::predict_intents(*eng, qiu::Query::from_raw("moonpetal"), {}, {}, tax, &tool, {});
  EXPECT_EQ(r.tuple, (qiu::IntentTuple{"flower", std::nullopt}));

  r = qiu::predict_intents(*eng, qiu::Query::from_raw("unknown words"), {}, {}, tax, &tool, {});
  EXPECT_EQ(r.tuple, (qiu::IntentTuple{"restaurant", std::nullopt}));
  EXPECT_EQ(r.tool_calls, 1u);
}

TEST(ScriptedEngine, RejectsBadRules) {
  qiu::ScriptedRules rules;
  rules.default_vertical = "bakery";
  rules.keyword_rules.push_back({"", "dish", "dish"});
  try {
    qiu::scripted_engine(rules, taxonomy());
    FAIL();
  } catch (const qiu::LoadError& e) {
    EXPECT_EQ(e.diagnostics().size(), 3u);
  }
}

TEST(WebSearch, Contract) {
  const auto tool = fixture_tool();
  EXPECT_THROW(qiu::web_search(tool, ""), std::invalid_argument);
  EXPECT_TRUE(qiu::web_search(tool, "no such key").empty());
  EXPECT_EQ(qiu::web_search(tool, "moonpetal").front().title, "Moonpetal");
  const ManyTool many;
  const auto r = qiu::web_search(many, "abc", 5);
  ASSERT_EQ(r.size(), 5u);
  for (const auto& s : r) EXPECT_FALSE(s.snippet.empty());
}

TEST(Policy, LoadErrorsListEveryProblem) {
  std::istringstream in(R"({"strategic_rules":[1],"example_bank":[{"query":"","primary":"bakery"}]})");
  try {
    qiu::load_policy(in, taxonomy());
    FAIL();
  } catch (const qiu::LoadError& e) {
    EXPECT_EQ(e.diagnostics().size(), 3u);
  }
}
