#include <gtest/gtest.h>

#include <fstream>

#include "qiu/pipeline.hpp"
#include "support/helpers.hpp"

using testing_support::fixture;
using testing_support::fixture_stack;
using testing_support::TempDir;

namespace {

class FailingCache : public qiu::MemoryCacheStore {
public:
  explicit FailingCache(std::size_t ok_puts) : ok_(ok_puts) {}
  void put(const qiu::CacheRecord& r) override {
    if (puts_.fetch_add(1) >= ok_) throw qiu::CacheIoError("disk full");
    qiu::MemoryCacheStore::put(r);
  }

private:
  std::size_t ok_;
  std::atomic<std::size_t> puts_{0};
};

class GarbageEngine : public qiu::ReasoningEngine {
public:
  qiu::EngineReply respond(const qiu::EngineTurn& t) const override {
    if (t.query.normalized == "taco fiesta") return qiu::FinalAnswer{"not json"};
    return qiu::FinalAnswer{R"({"primary":"restaurant"})"};
  }
  std::string identity() const override { return "garbage"; }
};

std::string export_of(const qiu::CacheStore& c) {
  std::ostringstream s;
  qiu::export_jsonl(c, s);
  return s.str();
}

qiu::BatchReport run(const qiu::Stack& s, qiu::CacheStore& cache, std::size_t parallelism, bool resume = false,
                     std::ostream* log = nullptr) {
  std::ifstream q(fixture("queries.txt"));
  qiu::BatchOptions o;
  o.parallelism = parallelism;
  o.resume = resume;
  o.evidence_log = log;
  o.now_ms = [] { return std::int64_t{42}; };
  return qiu::batch_run(q, s.deps, s.config, cache, o);
}

}  // namespace

TEST(Classify, WorkedExamples) {
  const auto s = fixture_stack();
  auto t = qiu::classify_traced("Wildflower", s.deps, s.config);
  EXPECT_EQ(t.predicted, (qiu::IntentTuple{"restaurant", "flower"}));
  EXPECT_EQ(t.resolved.final_vertical, "restaurant");
  EXPECT_EQ(t.resolved.rule_fired, qiu::RuleFired::primary_default);
  EXPECT_EQ(t.tool_calls, 0u);

  t = qiu::classify_traced("better chew", s.deps, s.config);
  EXPECT_EQ(t.predicted, (qiu::IntentTuple{"grocery", "dish"}));
  EXPECT_EQ(t.resolved.final_vertical, "grocery");

  t = qiu::classify_traced("450 north", s.deps, s.config);
  EXPECT_TRUE(t.evidence.catalog.empty());
  EXPECT_EQ(t.tool_calls, 1u);
  EXPECT_EQ(t.predicted, (qiu::IntentTuple{"alcohol", "retail_store"}));
  EXPECT_EQ(t.resolved.final_vertical, "alcohol");
}

TEST(Classify, WhitelistOverride) {
  const auto plain = fixture_stack();
  EXPECT_EQ(qiu::classify_query("margherita pizza", plain.deps, plain.config).final_vertical, "dish");
  const auto over = fixture_stack({{"disambiguation.whitelist", fixture("whitelist_dish_grocery.json").string()}});
  const auto r = qiu::classify_query("margherita pizza", over.deps, over.config);
  EXPECT_EQ(r.final_vertical, "grocery");
  EXPECT_EQ(r.rule_fired, qiu::RuleFired::override_secondary);
  EXPECT_NE(qiu::pipeline_version(plain.deps, plain.config), qiu::pipeline_version(over.deps, over.config));
}

TEST(Classify, AblationFlagsGateStages) {
  auto s = fixture_stack();
  s.config.ablation = {false, false, false};
  auto t = qiu::classify_traced("450 north", s.deps, s.config);
  EXPECT_EQ(t.retrievals, 0u);
  EXPECT_EQ(t.tool_calls, 0u);
  EXPECT_EQ(t.resolved.final_vertical, "restaurant");
  s.config.ablation = {true, true, false};
  t = qiu::classify_traced("wildflower", s.deps, s.config);
  EXPECT_EQ(t.predicted.secondary, "flower");
  EXPECT_FALSE(t.resolved.tuple.secondary);
  EXPECT_EQ(t.resolved.rule_fired, qiu::RuleFired::no_secondary);
}

TEST(Batch, DeduplicatesByNormalizedKey) {
  const auto s = fixture_stack();
  qiu::MemoryCacheStore cache;
  std::istringstream q("Wildflower\nwildflower \nWILDFLOWER\n\n   \n");
  const auto r = qiu::batch_run(q, s.deps, s.config, cache);
  EXPECT_EQ(r.total, 1u);
  EXPECT_EQ(r.succeeded, 1u);
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_TRUE(cache.get("wildflower"));
}

TEST(Batch, ParallelismDoesNotChangeExport) {
  const auto s = fixture_stack();
  qiu::MemoryCacheStore one, eight;
  const auto r1 = run(s, one, 1);
  const auto r8 = run(s, eight, 8);
  EXPECT_EQ(r1.succeeded, 10u);
  EXPECT_EQ(r1.tool_calls_issued, 2u);
  EXPECT_EQ(r8.tool_calls_issued, 2u);
  EXPECT_EQ(export_of(one), export_of(eight));
}

TEST(Batch, RerunIsIdempotentAndResumeSkips) {
  const auto s = fixture_stack();
  TempDir dir;
  const qiu::CacheHeader h{qiu::pipeline_version(s.deps, s.config), s.deps.store->version()};
  std::string first;
  {
    auto c = qiu::FileCacheStore::open(dir / "c.log", h);
    run(s, *c, 4);
    first = export_of(*c);
  }
  {
    auto c = qiu::FileCacheStore::open(dir / "c.log", h);
    const auto r = run(s, *c, 2);
    EXPECT_EQ(r.succeeded, 10u);
    EXPECT_EQ(export_of(*c), first);
  }
  auto c = qiu::FileCacheStore::open(dir / "c.log", h);
  const auto r = run(s, *c, 2, true);
  EXPECT_EQ(r.skipped_cached, 10u);
  EXPECT_EQ(r.total, 0u);
  EXPECT_EQ(r.tool_calls_issued, 0u);
}

TEST(Batch, UnparseableOutputFailsWithoutCaching) {
  auto s = fixture_stack();
  s.deps.engine = std::make_shared<GarbageEngine>();
  qiu::MemoryCacheStore cache;
  const auto r = run(s, cache, 3);
  EXPECT_EQ(r.failed, 1u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].query, "taco fiesta");
  EXPECT_EQ(r.failures[0].error_class, "unparseable_output");
  EXPECT_FALSE(cache.get("taco fiesta"));
  EXPECT_EQ(cache.size(), 9u);
  EXPECT_FALSE(r.aborted);
}

TEST(Batch, CacheWriteFailureAbortsThenResumeFinishes) {
  const auto s = fixture_stack();
  FailingCache broken(4);
  const auto r = run(s, broken, 1);
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.abort_reason, "disk full");
  EXPECT_EQ(broken.size(), 4u);
  EXPECT_EQ(r.succeeded, 4u);

  qiu::MemoryCacheStore healed;
  for (const auto& rec : broken.records()) healed.put(rec);
  const auto again = run(s, healed, 1, true);
  EXPECT_EQ(again.skipped_cached, 4u);
  EXPECT_EQ(again.succeeded, 6u);
  EXPECT_EQ(healed.size(), 10u);

  qiu::MemoryCacheStore direct;
  run(s, direct, 1);
  EXPECT_EQ(export_of(healed), export_of(direct));
}

TEST(Batch, EvidenceLogReproducesDigests) {
  const auto s = fixture_stack();
  qiu::MemoryCacheStore cache;
  std::ostringstream log;
  run(s, cache, 4, false, &log);
  std::istringstream in(log.str());
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    const auto key = j.at("key").get<std::string>();
    EXPECT_EQ(qiu::sha256_hex(j.at("evidence").dump()), j.at("evidence_digest").get<std::string>());
    EXPECT_EQ(cache.get(key)->evidence_digest, j.at("evidence_digest").get<std::string>());
  }
  EXPECT_EQ(lines, 10u);
}

TEST(Batch, ArmsOnlyAddEvidence) {
  auto s = fixture_stack();
  for (const std::string q : {"wildflower", "better chew", "450 north", "moonpetal", "oak barrel wines"}) {
    s.config.ablation = {false, false, false};
    const auto base = qiu::classify_traced(q, s.deps, s.config).evidence;
    s.config.ablation = {true, false, false};
    const auto cat = qiu::classify_traced(q, s.deps, s.config).evidence;
    s.config.ablation = {true, true, false};
    const auto agent = qiu::classify_traced(q, s.deps, s.config).evidence;
    EXPECT_TRUE(base.catalog.empty() && base.external.empty());
    EXPECT_TRUE(cat.external.empty());
    EXPECT_EQ(cat.catalog.matches, agent.catalog.matches) << q;
  }
}

TEST(PipelineVersion, TracksConfiguration) {
  auto s = fixture_stack();
  const auto v = qiu::pipeline_version(s.deps, s.config);
  EXPECT_EQ(v, qiu::pipeline_version(s.deps, s.config));
  s.config.retrieval.tau_fuzzy = 0.7;
  EXPECT_NE(v, qiu::pipeline_version(s.deps, s.config));
}
