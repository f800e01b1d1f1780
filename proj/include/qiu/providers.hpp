#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#ifndef CPPHTTPLIB_USE_POLL
#define CPPHTTPLIB_USE_POLL
#endif
#include "httplib.h"
#include "json.hpp"

#include "qiu/errors.hpp"
#include "qiu/reasoner.hpp"
#include "qiu/retrieval.hpp"

namespace qiu {

// --- network guard --------------------------------------------------------

namespace detail {
inline std::atomic<bool>& offline_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline std::atomic<std::size_t>& blocked_counter() {
  static std::atomic<std::size_t> n{0};
  return n;
}
}  // namespace detail

/// When offline mode is on (set_offline(true) or QIU_OFFLINE=1), every live
/// client refuses non-loopback hosts and the attempt is counted.
inline void set_offline(bool on) { detail::offline_flag().store(on); }

inline bool offline() {
  if (detail::offline_flag().load()) return true;
  const char* env = std::getenv("QIU_OFFLINE");
  return env && *env && std::string_view(env) != "0";
}

inline std::size_t blocked_network_attempts() { return detail::blocked_counter().load(); }

inline bool is_loopback_host(std::string_view host) {
  return host == "localhost" || host == "::1" || host == "[::1]" || host.rfind("127.", 0) == 0;
}

inline void check_network_allowed(std::string_view host) {
  if (offline() && !is_loopback_host(host)) {
    detail::blocked_counter().fetch_add(1);
    throw NetworkForbidden("network access to '" + std::string(host) + "' refused in offline mode");
  }
}

// --- provider configuration ----------------------------------------------

struct ProviderConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8000/v1/chat/completions
  std::string model;
  std::chrono::milliseconds timeout{10000};
  std::size_t max_retries = 2;  // retries after the first attempt
  std::chrono::milliseconds backoff{200};
  std::string credential_env;  // name of the variable holding the key, never the key

  // Safe to log: carries the variable name only.
  nlohmann::json to_json() const {
    return {{"endpoint", endpoint},
            {"model", model},
            {"timeout_ms", timeout.count()},
            {"max_retries", max_retries},
            {"backoff_ms", backoff.count()},
            {"credential_env", credential_env}};
  }
};

/// Failure of a live provider call. error_class is one of provider_auth,
/// provider_quota, provider_timeout, provider_error.
class ProviderError : public ClassificationError {
public:
  using ClassificationError::ClassificationError;
};

struct Endpoint {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string path;

  std::string origin() const { return scheme + "://" + host + ":" + std::to_string(port); }
};

inline Endpoint parse_endpoint(const std::string& url) {
  Endpoint ep;
  const auto sep = url.find("://");
  if (sep == std::string::npos) throw ConfigError("endpoint '" + url + "' lacks a scheme");
  ep.scheme = url.substr(0, sep);
  if (ep.scheme != "http" && ep.scheme != "https") throw ConfigError("endpoint scheme must be http or https");
  const auto rest = url.substr(sep + 3);
  const auto slash = rest.find('/');
  const auto authority = rest.substr(0, slash);
  ep.path = slash == std::string::npos ? "/" : rest.substr(slash);
  const auto bracket = authority.find(']');
  const auto colon = authority.rfind(':');
  const bool has_port = colon != std::string::npos && (bracket == std::string::npos || colon > bracket);
  ep.host = has_port ? authority.substr(0, colon) : authority;
  ep.port = ep.scheme == "https" ? 443 : 80;
  if (has_port) {
    try {
      ep.port = std::stoi(authority.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad port in endpoint '" + url + "'");
    }
  }
  if (ep.host.empty()) throw ConfigError("endpoint '" + url + "' lacks a host");
  return ep;
}

namespace detail {

inline bool retryable(const std::string& error_class) {
  return error_class != "provider_auth";
}

/// POSTs a JSON body with bounded retries and doubling backoff. Client
/// errors other than 429 are not retried.
inline nlohmann::json post_json(const ProviderConfig& cfg, const nlohmann::json& body) {
  if (cfg.endpoint.empty()) throw ConfigError("provider endpoint not configured");
  const Endpoint ep = parse_endpoint(cfg.endpoint);
  check_network_allowed(ep.host);

  httplib::Headers headers;
  if (!cfg.credential_env.empty()) {
    if (const char* key = std::getenv(cfg.credential_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string payload = body.dump();
  const auto secs = cfg.timeout.count() / 1000;
  const auto usecs = (cfg.timeout.count() % 1000) * 1000;

  std::string last_class = "provider_error";
  std::string last_message;
  auto delay = cfg.backoff;
  for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(ep.origin());
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      const auto err = res.error();
      last_class = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ? "provider_timeout"
                                                                                           : "provider_error";
      last_message = "transport: " + httplib::to_string(err);
      continue;
    }
    const int status = res->status;
    if (status >= 200 && status < 300) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        throw ProviderError("provider_error", "provider returned a non-JSON body");
      }
    }
    last_message = "HTTP " + std::to_string(status);
    if (status == 401 || status == 403) last_class = "provider_auth";
    else if (status == 429) last_class = "provider_quota";
    else if (status == 408 || status == 504) last_class = "provider_timeout";
    else last_class = "provider_error";
    const bool transient = status == 429 || status == 408 || status >= 500;
    if (!transient || !retryable(last_class)) break;
  }
  throw ProviderError(last_class, "provider call to " + ep.host + " failed: " + last_message);
}

}  // namespace detail

// --- live reasoning engine ------------------------------------------------

/// Chat-completions client. The prompt document is the user message; when
/// tools are offered a single web_search function is declared, and a tool
/// call in the reply becomes a ToolRequest.
class LiveEngine final : public ReasoningEngine {
public:
  explicit LiveEngine(ProviderConfig cfg) : cfg_(std::move(cfg)) { (void)parse_endpoint(cfg_.endpoint); }

  EngineReply respond(const EngineTurn& turn) const override {
    nlohmann::json body = {
        {"model", cfg_.model},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"},
           {"content", "You classify marketplace search queries into business verticals. "
                       "Follow the output format exactly."}},
          {{"role", "user"}, {"content", turn.prompt.text}}}}};
    if (turn.tools_offered) {
      body["tools"] = nlohmann::json::array(
          {{{"type", "function"},
            {"function",
             {{"name", "web_search"},
              {"description", "Search the web for what a query refers to."},
              {"parameters",
               {{"type", "object"},
                {"properties", {{"query", {{"type", "string"}}}}},
                {"required", {"query"}}}}}}}});
      body["tool_choice"] = "auto";
    }
    const auto reply = detail::post_json(cfg_, body);
    try {
      const auto& msg = reply.at("choices").at(0).at("message");
      if (msg.contains("tool_calls") && msg["tool_calls"].is_array() && !msg["tool_calls"].empty()) {
        const auto& fn = msg["tool_calls"][0].at("function");
        const auto args = nlohmann::json::parse(fn.at("arguments").get<std::string>());
        return ToolRequest{args.value("query", "")};
      }
      return FinalAnswer{msg.value("content", "")};
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError("provider_error", std::string("unexpected chat response shape: ") + e.what());
    }
  }

  std::string identity() const override { return "live-engine/" + cfg_.model + "@" + cfg_.endpoint; }

private:
  ProviderConfig cfg_;
};

inline std::shared_ptr<const ReasoningEngine> live_engine(ProviderConfig cfg) {
  return std::make_shared<const LiveEngine>(std::move(cfg));
}

// --- live encoder ---------------------------------------------------------

/// {texts: [...]} -> {vectors: [[...], ...]}; vectors are unit-normalized
/// locally, and an empty text maps to e1 as with the hash encoder.
class LiveEncoder final : public Encoder {
public:
  LiveEncoder(ProviderConfig cfg, std::size_t dimension) : cfg_(std::move(cfg)), dim_(dimension) {
    if (dim_ < 2) throw ConfigError("encoder dimension must be >= 2");
    (void)parse_endpoint(cfg_.endpoint);
  }

  Embedding encode(std::string_view text) const override {
    const std::string t(text);
    return encode_batch(std::span<const std::string>(&t, 1)).front();
  }

  std::vector<Embedding> encode_batch(std::span<const std::string> texts) const override {
    std::vector<Embedding> out(texts.size());
    nlohmann::json req = {{"model", cfg_.model}, {"texts", nlohmann::json::array()}};
    std::vector<std::size_t> sent;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (texts[i].empty()) {
        out[i].assign(dim_, 0.0);
        out[i][0] = 1.0;
      } else {
        req["texts"].push_back(texts[i]);
        sent.push_back(i);
      }
    }
    if (sent.empty()) return out;
    const auto reply = detail::post_json(cfg_, req);
    try {
      const auto& vectors = reply.at("vectors");
      if (vectors.size() != sent.size()) throw ProviderError("provider_error", "encoder returned wrong vector count");
      for (std::size_t k = 0; k < sent.size(); ++k) {
        auto v = vectors[k].get<Embedding>();
        if (v.size() != dim_)
          throw ProviderError("provider_error", "encoder returned dimension " + std::to_string(v.size()));
        if (!unit_normalize(v)) throw ProviderError("provider_error", "encoder returned a zero vector");
        out[sent[k]] = std::move(v);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError("provider_error", std::string("unexpected encoder response: ") + e.what());
    }
    return out;
  }

  std::size_t dimension() const override { return dim_; }
  std::string identity() const override {
    return "live-encoder/" + cfg_.model + "/d" + std::to_string(dim_) + "@" + cfg_.endpoint;
  }

private:
  ProviderConfig cfg_;
  std::size_t dim_;
};

// --- live search ----------------------------------------------------------

/// {q, limit} -> {results: [{url, title, snippet}]}. Failures surface as
/// ToolError so the reasoning loop can carry on.
class LiveSearchTool final : public SearchTool {
public:
  explicit LiveSearchTool(ProviderConfig cfg) : cfg_(std::move(cfg)) { (void)parse_endpoint(cfg_.endpoint); }

  std::vector<SearchSnippet> search(std::string_view query_text, std::size_t limit,
                                    std::chrono::milliseconds timeout) const override {
    ProviderConfig call = cfg_;
    call.timeout = std::min(call.timeout, timeout);
    nlohmann::json reply;
    try {
      reply = detail::post_json(call, {{"q", std::string(query_text)}, {"limit", limit}});
    } catch (const ProviderError& e) {
      throw ToolError(e.error_class() + ": " + e.what());
    }
    std::vector<SearchSnippet> out;
    try {
      for (const auto& r : reply.at("results"))
        out.push_back({r.value("url", ""), r.value("title", ""), r.value("snippet", "")});
    } catch (const nlohmann::json::exception& e) {
      throw ToolError(std::string("unexpected search response: ") + e.what());
    }
    if (out.size() > limit) out.resize(limit);
    return out;
  }

  std::string identity() const override { return "live-search@" + cfg_.endpoint; }

private:
  ProviderConfig cfg_;
};

}  // namespace qiu
