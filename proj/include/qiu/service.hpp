#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#ifndef CPPHTTPLIB_USE_POLL
#define CPPHTTPLIB_USE_POLL
#endif
#include "httplib.h"
#include "json.hpp"

#include "qiu/cache_store.hpp"
#include "qiu/catalog.hpp"
#include "qiu/disambiguation.hpp"

namespace qiu {

inline constexpr std::string_view kIntentSchema = "qiu.intent/v1";

enum class MissPolicy { default_vertical, error_404 };

inline MissPolicy parse_miss_policy(std::string_view s) {
  if (s == "default_vertical") return MissPolicy::default_vertical;
  if (s == "error_404") return MissPolicy::error_404;
  throw ConfigError("unknown miss policy '" + std::string(s) + "'");
}

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  MissPolicy miss_policy = MissPolicy::default_vertical;
  VerticalId default_vertical = "restaurant";
  std::filesystem::path cache_path;
  std::filesystem::path whitelist_path;  // empty: no overrides
  std::string admin_token;               // empty: admin endpoints open
  std::size_t threads = 16;
};

/// Fixed-capacity sample buffer written without locks; samples past the
/// capacity are dropped.
class LatencyRecorder {
public:
  explicit LatencyRecorder(std::size_t capacity = 1 << 16) : samples_(capacity) {}

  void record(std::chrono::nanoseconds d) {
    const std::size_t i = next_.fetch_add(1, std::memory_order_relaxed);
    if (i < samples_.size()) samples_[i].store(static_cast<std::uint64_t>(d.count()), std::memory_order_relaxed);
  }

  std::vector<std::uint64_t> samples_ns() const {
    const std::size_t n = std::min(next_.load(), samples_.size());
    std::vector<std::uint64_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = samples_[i].load(std::memory_order_relaxed);
    return out;
  }

  // Nearest-rank percentile in microseconds; nullopt without samples.
  std::optional<double> percentile_us(double p) const {
    auto s = samples_ns();
    if (s.empty()) return std::nullopt;
    std::sort(s.begin(), s.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(s.size())));
    return static_cast<double>(s[std::clamp<std::size_t>(rank, 1, s.size()) - 1]) / 1000.0;
  }

  void reset() { next_.store(0); }

private:
  std::vector<std::atomic<std::uint64_t>> samples_;
  std::atomic<std::size_t> next_{0};
};

struct LookupResult {
  int status = 200;
  std::string body;
};

/// Read-only lookup over a loaded cache. Every request reads one immutable
/// snapshot; admin reloads build a new snapshot and swap it in whole.
class IntentService {
public:
  IntentService(ServeConfig cfg, Taxonomy taxonomy) : cfg_(std::move(cfg)), taxonomy_(std::move(taxonomy)) {
    if (cfg_.miss_policy == MissPolicy::default_vertical && !taxonomy_.contains(cfg_.default_vertical))
      throw ConfigError("miss default vertical '" + cfg_.default_vertical + "' not in taxonomy");
    auto cache = FileCacheStore::open_read_only(cfg_.cache_path);
    auto records = std::make_shared<const std::vector<CacheRecord>>(cache->records());
    auto whitelist = std::make_shared<const ConflictWhitelist>(read_whitelist(cfg_.whitelist_path));
    std::atomic_store(&snap_, make_snapshot(std::move(records), cache->header(), std::move(whitelist),
                                            cfg_.cache_path, cfg_.whitelist_path));
  }

  ~IntentService() { stop(); }

  IntentService(const IntentService&) = delete;
  IntentService& operator=(const IntentService&) = delete;

  LookupResult lookup(std::string_view raw) const {
    const auto snap = std::atomic_load(&snap_);
    const std::string key = normalize_text(raw);
    if (auto it = snap->bodies.find(key); it != snap->bodies.end()) return {200, it->second};
    nlohmann::json body = {{"schema", kIntentSchema}, {"query_key", key}, {"miss", true},
                           {"pipeline_version", snap->header.pipeline_version},
                           {"whitelist_version", snap->whitelist->version()}};
    if (cfg_.miss_policy == MissPolicy::error_404) {
      body["error"] = "not_cached";
      return {404, body.dump()};
    }
    body["final_vertical"] = cfg_.default_vertical;
    body["primary"] = cfg_.default_vertical;
    body["secondary"] = nullptr;
    body["rule_fired"] = nullptr;
    body["source"] = "miss_default";
    return {200, body.dump()};
  }

  nlohmann::json healthz() const {
    const auto snap = std::atomic_load(&snap_);
    return {{"schema", kIntentSchema},
            {"status", "ok"},
            {"count", snap->records->size()},
            {"pipeline_version", snap->header.pipeline_version},
            {"store_version", snap->header.store_version},
            {"whitelist_version", snap->whitelist->version()},
            {"re_resolved", snap->re_resolved}};
  }

  /// Loads a whitelist (the current path when none is given) and swaps it in.
  /// On failure the running snapshot is untouched.
  nlohmann::json reload_whitelist(std::optional<std::filesystem::path> path = std::nullopt) {
    std::lock_guard lock(admin_mu_);
    const auto cur = std::atomic_load(&snap_);
    const auto p = path.value_or(cur->whitelist_path);
    auto w = std::make_shared<const ConflictWhitelist>(read_whitelist(p));
    std::atomic_store(&snap_, make_snapshot(cur->records, cur->header, std::move(w), cur->cache_path, p));
    return healthz();
  }

  nlohmann::json reload_cache(std::optional<std::filesystem::path> path = std::nullopt) {
    std::lock_guard lock(admin_mu_);
    const auto cur = std::atomic_load(&snap_);
    const auto p = path.value_or(cur->cache_path);
    auto cache = FileCacheStore::open_read_only(p);
    auto records = std::make_shared<const std::vector<CacheRecord>>(cache->records());
    std::atomic_store(&snap_, make_snapshot(std::move(records), cache->header(), cur->whitelist, p, cur->whitelist_path));
    return healthz();
  }

  /// Binds (port 0 picks a free one) and serves on a background thread.
  int start() {
    install_routes();
    const int port = cfg_.port == 0 ? server_.bind_to_any_port(cfg_.host) : cfg_.port;
    if (port <= 0 || (cfg_.port != 0 && !server_.bind_to_port(cfg_.host, cfg_.port)))
      throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (listener_.joinable()) listener_.join();
  }

  LatencyRecorder& latency() noexcept { return latency_; }
  const ServeConfig& config() const noexcept { return cfg_; }

private:
  struct Snapshot {
    std::shared_ptr<const std::vector<CacheRecord>> records;
    CacheHeader header;
    std::shared_ptr<const ConflictWhitelist> whitelist;
    std::filesystem::path cache_path;
    std::filesystem::path whitelist_path;
    std::unordered_map<std::string, std::string> bodies;
    std::size_t re_resolved = 0;
  };

  ConflictWhitelist read_whitelist(const std::filesystem::path& p) const {
    if (p.empty()) return ConflictWhitelist({}, "empty");
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open whitelist: " + p.string());
    return load_whitelist(in, taxonomy_);
  }

  // The cached tuple is re-resolved whenever the record was resolved under
  // a different whitelist version than the active one.
  static std::shared_ptr<const Snapshot> make_snapshot(std::shared_ptr<const std::vector<CacheRecord>> records,
                                                       CacheHeader header,
                                                       std::shared_ptr<const ConflictWhitelist> whitelist,
                                                       std::filesystem::path cache_path,
                                                       std::filesystem::path whitelist_path) {
    auto s = std::make_shared<Snapshot>();
    s->records = std::move(records);
    s->header = std::move(header);
    s->whitelist = std::move(whitelist);
    s->cache_path = std::move(cache_path);
    s->whitelist_path = std::move(whitelist_path);
    s->bodies.reserve(s->records->size());
    for (const auto& r : *s->records) {
      ResolvedIntent resolved = r.resolved;
      const bool stale = resolved.whitelist_version != s->whitelist->version();
      if (stale) {
        resolved = resolve(r.resolved.tuple, *s->whitelist);
        ++s->re_resolved;
      }
      const nlohmann::json body = {
          {"schema", kIntentSchema},
          {"query_key", r.key},
          {"final_vertical", resolved.final_vertical},
          {"primary", resolved.tuple.primary},
          {"secondary", resolved.tuple.secondary ? nlohmann::json(*resolved.tuple.secondary) : nlohmann::json()},
          {"rule_fired", to_string(resolved.rule_fired)},
          {"pipeline_version", r.pipeline_version},
          {"whitelist_version", resolved.whitelist_version},
          {"miss", false},
          {"source", stale ? "re_resolved" : "cache"}};
      s->bodies.emplace(r.key, body.dump());
    }
    return s;
  }

  bool admin_allowed(const httplib::Request& req) const {
    if (cfg_.admin_token.empty()) return true;
    return req.get_header_value("X-Admin-Token") == cfg_.admin_token ||
           req.get_header_value("Authorization") == "Bearer " + cfg_.admin_token;
  }

  static std::optional<std::filesystem::path> body_path(const httplib::Request& req) {
    if (req.body.find_first_not_of(" \t\r\n") == std::string::npos) return std::nullopt;
    const auto j = nlohmann::json::parse(req.body);
    if (j.contains("path") && j["path"].is_string()) return std::filesystem::path(j["path"].get<std::string>());
    return std::nullopt;
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void install_routes() {
    server_.new_task_queue = [n = std::max<std::size_t>(1, cfg_.threads)] { return new httplib::ThreadPool(n); };

    server_.Get("/intent", [this](const httplib::Request& req, httplib::Response& res) {
      const auto t0 = std::chrono::steady_clock::now();
      if (!req.has_param("q")) {
        send_json(res, 400, {{"schema", kIntentSchema}, {"error", "missing query parameter 'q'"}});
        return;
      }
      auto r = lookup(req.get_param_value("q"));
      res.status = r.status;
      res.set_content(std::move(r.body), "application/json");
      latency_.record(std::chrono::steady_clock::now() - t0);
    });

    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { send_json(res, 200, healthz()); });

    auto admin = [this](auto action) {
      return [this, action](const httplib::Request& req, httplib::Response& res) {
        if (!admin_allowed(req)) {
          send_json(res, 401, {{"schema", kIntentSchema}, {"error", "admin token required"}});
          return;
        }
        try {
          auto j = action(body_path(req));
          j["ok"] = true;
          send_json(res, 200, j);
        } catch (const nlohmann::json::exception& e) {
          send_json(res, 400, {{"schema", kIntentSchema}, {"ok", false}, {"error", e.what()}});
        } catch (const std::exception& e) {
          send_json(res, 422, {{"schema", kIntentSchema}, {"ok", false}, {"error", e.what()}});
        }
      };
    };
    server_.Post("/admin/reload-whitelist", admin([this](auto p) { return reload_whitelist(p); }));
    server_.Post("/admin/reload-cache", admin([this](auto p) { return reload_cache(p); }));
  }

  ServeConfig cfg_;
  Taxonomy taxonomy_;
  std::shared_ptr<const Snapshot> snap_;
  std::mutex admin_mu_;
  LatencyRecorder latency_;
  httplib::Server server_;
  std::thread listener_;
};

}  // namespace qiu
