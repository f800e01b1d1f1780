#include <gtest/gtest.h>

#include <sstream>

#include "qiu/disambiguation.hpp"
#include "support/helpers.hpp"

using testing_support::fixture;

namespace {

qiu::Taxonomy taxonomy() { return qiu::load_taxonomy_file(fixture("taxonomy.json")); }

class WrongResolver : public qiu::IntentResolver {
public:
  qiu::ResolvedIntent resolve(const qiu::IntentTuple& t) const override {
    return {"alcohol", t, qiu::RuleFired::override_secondary, "bad"};
  }
  std::string version() const override { return "bad"; }
};

}  // namespace

TEST(Resolve, TruthTable) {
  const qiu::ConflictWhitelist w({{"dish", "grocery"}}, "v1");
  struct Row {
    qiu::IntentTuple tuple;
    const char* final_vertical;
    qiu::RuleFired rule;
  };
  const std::vector<Row> rows = {
      {{"restaurant", std::nullopt}, "restaurant", qiu::RuleFired::no_secondary},
      {{"dish", "grocery"}, "grocery", qiu::RuleFired::override_secondary},
      {{"grocery", "dish"}, "grocery", qiu::RuleFired::primary_default},
      {{"restaurant", "flower"}, "restaurant", qiu::RuleFired::primary_default},
  };
  for (const auto& row : rows) {
    const auto r = qiu::resolve(row.tuple, w);
    EXPECT_EQ(r.final_vertical, row.final_vertical);
    EXPECT_EQ(r.rule_fired, row.rule);
    EXPECT_EQ(r.tuple, row.tuple);
    EXPECT_EQ(r.whitelist_version, "v1");
  }
}

TEST(Resolve, EmptyWhitelistNeverOverrides) {
  const auto tax = taxonomy();
  const qiu::ConflictWhitelist w({}, "empty");
  for (const auto& p : tax.verticals())
    for (const auto& s : tax.verticals()) {
      if (p.id == s.id) continue;
      const auto r = qiu::resolve({p.id, s.id}, w);
      EXPECT_EQ(r.final_vertical, p.id);
      EXPECT_EQ(r.rule_fired, qiu::RuleFired::primary_default);
    }
}

TEST(Resolve, FinalIsAlwaysATupleMember) {
  const auto tax = taxonomy();
  std::set<qiu::ConflictWhitelist::Pair> all;
  for (const auto& p : tax.verticals())
    for (const auto& s : tax.verticals())
      if (p.id != s.id && (p.id.size() + s.id.size()) % 2 == 0) all.insert({p.id, s.id});
  const qiu::PairwiseOverrideResolver resolver(qiu::ConflictWhitelist(all, "half"));
  for (const auto& p : tax.verticals()) {
    EXPECT_EQ(qiu::resolve_checked(resolver, {p.id, std::nullopt}).final_vertical, p.id);
    for (const auto& s : tax.verticals()) {
      if (p.id == s.id) continue;
      const auto r = qiu::resolve_checked(resolver, {p.id, s.id});
      EXPECT_EQ(r.final_vertical, all.count({p.id, s.id}) ? s.id : p.id);
    }
  }
  EXPECT_THROW(qiu::resolve_checked(WrongResolver(), {"dish", "grocery"}), qiu::IntegrityError);
}

TEST(Whitelist, LoadsFixtures) {
  const auto tax = taxonomy();
  const auto w = qiu::load_whitelist_file(fixture("whitelist_dish_grocery.json"), tax);
  EXPECT_EQ(w.version(), "dish-grocery-v1");
  EXPECT_TRUE(w.contains("dish", "grocery"));
  EXPECT_FALSE(w.contains("grocery", "dish"));
  EXPECT_EQ(qiu::load_whitelist_file(fixture("whitelist_empty.json"), tax).size(), 0u);
  EXPECT_EQ(qiu::load_whitelist_file("", tax).version(), "empty");
  std::istringstream blank("  \n");
  EXPECT_EQ(qiu::load_whitelist(blank, tax).size(), 0u);
}

TEST(Whitelist, RejectsBadPairs) {
  const auto tax = taxonomy();
  std::istringstream in(
      R"({"version":"x","pairs":[{"primary":"dish","secondary":"dish"},{"primary":"bakery","secondary":"dish"},{"primary":1}]})");
  try {
    qiu::load_whitelist(in, tax);
    FAIL();
  } catch (const qiu::LoadError& e) {
    ASSERT_EQ(e.diagnostics().size(), 3u);
    EXPECT_NE(e.diagnostics()[0].find("self-pair"), std::string::npos);
    EXPECT_NE(e.diagnostics()[1].find("unknown vertical 'bakery'"), std::string::npos);
  }
  std::istringstream broken("{");
  EXPECT_THROW(qiu::load_whitelist(broken, tax), qiu::LoadError);
}

TEST(Whitelist, UnversionedGetsContentVersion) {
  const auto tax = taxonomy();
  std::istringstream a(R"({"pairs":[{"primary":"dish","secondary":"grocery"}]})");
  std::istringstream b(R"({"pairs":[{"primary":"dish","secondary":"grocery"}]})");
  const auto wa = qiu::load_whitelist(a, tax);
  EXPECT_EQ(wa.version().rfind("unversioned-", 0), 0u);
  EXPECT_EQ(wa.version(), qiu::load_whitelist(b, tax).version());
}
