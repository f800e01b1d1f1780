#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "qiu/providers.hpp"
#include "support/helpers.hpp"

namespace {

// Loopback HTTP double. The handler sees the parsed request body and the
// attempt number (starting at 1).
class FakeProvider {
public:
  using Handler = std::function<void(const nlohmann::json&, int, const httplib::Request&, httplib::Response&)>;

  explicit FakeProvider(Handler h) : handler_(std::move(h)) {
    server_.Post("/v1/call", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++attempts;
      handler_(nlohmann::json::parse(req.body), n, req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeProvider() {
    server_.stop();
    thread_.join();
  }

  qiu::ProviderConfig config() const {
    qiu::ProviderConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/call";
    c.model = "m";
    c.timeout = std::chrono::milliseconds(2000);
    c.backoff = std::chrono::milliseconds(1);
    return c;
  }

  std::atomic<int> attempts{0};

private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json chat(const nlohmann::json& message) { return {{"choices", {{{"message", message}}}}}; }

qiu::Taxonomy taxonomy() { return qiu::load_taxonomy_file(testing_support::fixture("taxonomy.json")); }

}  // namespace

TEST(Endpoint, Parsing) {
  auto e = qiu::parse_endpoint("http://127.0.0.1:8000/v1/chat");
  EXPECT_EQ(e.host, "127.0.0.1");
  EXPECT_EQ(e.port, 8000);
  EXPECT_EQ(e.path, "/v1/chat");
  e = qiu::parse_endpoint("https://api.example.com");
  EXPECT_EQ(e.port, 443);
  EXPECT_EQ(e.path, "/");
  e = qiu::parse_endpoint("http://[::1]:9/x");
  EXPECT_EQ(e.host, "[::1]");
  EXPECT_EQ(e.port, 9);
  EXPECT_THROW(qiu::parse_endpoint("ftp://x"), qiu::ConfigError);
  EXPECT_THROW(qiu::parse_endpoint("localhost:80"), qiu::ConfigError);
  EXPECT_THROW(qiu::parse_endpoint("http://h:port/"), qiu::ConfigError);
}

TEST(NetworkGuard, BlocksNonLoopbackWhenOffline) {
  ASSERT_TRUE(qiu::offline());
  const auto before = qiu::blocked_network_attempts();
  EXPECT_NO_THROW(qiu::check_network_allowed("127.0.0.1"));
  EXPECT_NO_THROW(qiu::check_network_allowed("localhost"));
  EXPECT_THROW(qiu::check_network_allowed("api.example.com"), qiu::NetworkForbidden);
  qiu::ProviderConfig c;
  c.endpoint = "https://api.example.com/v1";
  const qiu::LiveSearchTool tool(c);
  EXPECT_THROW(tool.search("x", 3, std::chrono::milliseconds(100)), qiu::NetworkForbidden);
  EXPECT_EQ(qiu::blocked_network_attempts(), before + 2);
}

TEST(LiveEngine, FinalAnswerAndRequestShape) {
  ::setenv("QIU_TEST_KEY", "sekrit", 1);
  nlohmann::json seen;
  std::string auth;
  FakeProvider fake([&](const nlohmann::json& body, int, const httplib::Request& req, httplib::Response& res) {
    seen = body;
    auth = req.get_header_value("Authorization");
    reply(res, 200, chat({{"role", "assistant"}, {"content", R"({"primary":"grocery","secondary":"dish"})"}}));
  });
  auto cfg = fake.config();
  cfg.credential_env = "QIU_TEST_KEY";
  const auto engine = qiu::live_engine(cfg);
  const auto r = qiu::predict_intents(*engine, qiu::Query::from_raw("better chew"), {}, {}, taxonomy(), nullptr, {});
  EXPECT_EQ(r.tuple, (qiu::IntentTuple{"grocery", "dish"}));
  EXPECT_EQ(auth, "Bearer sekrit");
  EXPECT_EQ(seen["model"], "m");
  EXPECT_EQ(seen["messages"][1]["role"], "user");
  EXPECT_NE(seen["messages"][1]["content"].get<std::string>().find("## Query\nbetter chew"), std::string::npos);
  EXPECT_FALSE(seen.contains("tools"));
  EXPECT_EQ(cfg.to_json().dump().find("sekrit"), std::string::npos);
}

TEST(LiveEngine, ToolCallBecomesRequest) {
  FakeProvider fake([](const nlohmann::json& body, int n, const httplib::Request&, httplib::Response& res) {
    if (n == 1) {
      EXPECT_EQ(body["tools"][0]["function"]["name"], "web_search");
      reply(res, 200,
            chat({{"role", "assistant"},
                  {"content", nullptr},
                  {"tool_calls",
                   {{{"id", "c1"},
                     {"type", "function"},
                     {"function", {{"name", "web_search"}, {"arguments", R"({"query":"moonpetal shop"})"}}}}}}}));
    } else {
      reply(res, 200, chat({{"role", "assistant"}, {"content", R"({"primary":"flower"})"}}));
    }
  });
  const auto engine = qiu::live_engine(fake.config());
  const auto tool = qiu::FixtureSearchTool::from_json(
      qiu::read_json_file(testing_support::fixture("search_fixtures.json"), "fixtures"));
  const auto r = qiu::predict_intents(*engine, qiu::Query::from_raw("moonpetal"), {}, {}, taxonomy(), &tool, {});
  EXPECT_EQ(r.tool_calls, 1u);
  EXPECT_EQ(r.external.tool_queries, std::vector<std::string>{"moonpetal shop"});
  EXPECT_EQ(r.tuple.primary, "flower");
}

TEST(Providers, TransientErrorRetriesOnce) {
  FakeProvider fake([](const nlohmann::json&, int n, const httplib::Request&, httplib::Response& res) {
    if (n == 1) reply(res, 503, {{"error", "busy"}});
    else reply(res, 200, {{"results", {{{"url", "u"}, {"title", "t"}, {"snippet", "s"}}}}});
  });
  const qiu::LiveSearchTool tool(fake.config());
  const auto r = tool.search("q", 5, std::chrono::milliseconds(1000));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].snippet, "s");
  EXPECT_EQ(fake.attempts.load(), 2);
}

TEST(Providers, AuthFailureIsNotRetried) {
  FakeProvider fake([](const nlohmann::json&, int, const httplib::Request&, httplib::Response& res) {
    reply(res, 401, {{"error", "bad key"}});
  });
  const auto engine = qiu::live_engine(fake.config());
  try {
    qiu::predict_intents(*engine, qiu::Query::from_raw("x"), {}, {}, taxonomy(), nullptr, {});
    FAIL();
  } catch (const qiu::ProviderError& e) {
    EXPECT_EQ(e.error_class(), "provider_auth");
  }
  EXPECT_EQ(fake.attempts.load(), 1);
}

TEST(Providers, QuotaExhaustionAfterRetries) {
  FakeProvider fake([](const nlohmann::json&, int, const httplib::Request&, httplib::Response& res) {
    reply(res, 429, {{"error", "slow down"}});
  });
  auto cfg = fake.config();
  cfg.max_retries = 2;
  try {
    qiu::detail::post_json(cfg, {{"x", 1}});
    FAIL();
  } catch (const qiu::ProviderError& e) {
    EXPECT_EQ(e.error_class(), "provider_quota");
  }
  EXPECT_EQ(fake.attempts.load(), 3);
}

TEST(Providers, SlowServerTimesOut) {
  FakeProvider fake([](const nlohmann::json&, int, const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    reply(res, 200, {{"vectors", nlohmann::json::array()}});
  });
  auto cfg = fake.config();
  cfg.timeout = std::chrono::milliseconds(100);
  cfg.max_retries = 0;
  try {
    qiu::detail::post_json(cfg, {{"x", 1}});
    FAIL();
  } catch (const qiu::ProviderError& e) {
    EXPECT_EQ(e.error_class(), "provider_timeout");
  }
}

TEST(LiveEncoder, NormalizesAndKeepsOrder) {
  FakeProvider fake([](const nlohmann::json& body, int, const httplib::Request&, httplib::Response& res) {
    nlohmann::json vs = nlohmann::json::array();
    for (const auto& t : body["texts"]) vs.push_back({static_cast<double>(t.get<std::string>().size()), 0.0, 3.0});
    reply(res, 200, {{"vectors", vs}});
  });
  const qiu::LiveEncoder enc(fake.config(), 3);
  const std::vector<std::string> texts = {"abcd", "", "a"};
  const auto v = enc.encode_batch(texts);
  EXPECT_NEAR(v[0][0], 0.8, 1e-12);
  EXPECT_NEAR(v[0][2], 0.6, 1e-12);
  EXPECT_EQ(v[1], (qiu::Embedding{1.0, 0.0, 0.0}));
  EXPECT_NEAR(v[2][0], 1.0 / std::sqrt(10.0), 1e-12);
  EXPECT_THROW(qiu::LiveEncoder(fake.config(), 4).encode("abc"), qiu::ProviderError);
}
