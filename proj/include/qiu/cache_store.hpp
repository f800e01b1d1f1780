#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <boost/crc.hpp>

#include "json.hpp"

#include "qiu/disambiguation.hpp"
#include "qiu/errors.hpp"
#include "qiu/text.hpp"

namespace qiu {

/// One cached classification, keyed by the normalized query.
struct CacheRecord {
  std::string key;
  ResolvedIntent resolved;
  std::string evidence_digest;
  std::string pipeline_version;
  std::int64_t created_at_ms = 0;

  friend bool operator==(const CacheRecord&, const CacheRecord&) = default;

  nlohmann::json to_json(bool include_created_at = true) const {
    nlohmann::json j = {{"key", key},
                        {"final_vertical", resolved.final_vertical},
                        {"primary", resolved.tuple.primary},
                        {"secondary", resolved.tuple.secondary ? nlohmann::json(*resolved.tuple.secondary)
                                                               : nlohmann::json()},
                        {"rule_fired", to_string(resolved.rule_fired)},
                        {"whitelist_version", resolved.whitelist_version},
                        {"evidence_digest", evidence_digest},
                        {"pipeline_version", pipeline_version}};
    if (include_created_at) j["created_at_ms"] = created_at_ms;
    return j;
  }

  static CacheRecord from_json(const nlohmann::json& j) {
    CacheRecord r;
    r.key = j.at("key").get<std::string>();
    r.resolved.final_vertical = j.at("final_vertical").get<std::string>();
    r.resolved.tuple.primary = j.at("primary").get<std::string>();
    if (j.contains("secondary") && j["secondary"].is_string()) r.resolved.tuple.secondary = j["secondary"].get<std::string>();
    r.resolved.rule_fired = parse_rule_fired(j.at("rule_fired").get<std::string>());
    r.resolved.whitelist_version = j.at("whitelist_version").get<std::string>();
    r.evidence_digest = j.at("evidence_digest").get<std::string>();
    r.pipeline_version = j.at("pipeline_version").get<std::string>();
    r.created_at_ms = j.value("created_at_ms", std::int64_t{0});
    return r;
  }
};

struct CacheHeader {
  std::string pipeline_version;
  std::uint64_t store_version = 0;

  friend bool operator==(const CacheHeader&, const CacheHeader&) = default;
};

/// Key-value store of CacheRecords. put() must be safe for concurrent
/// writers of distinct keys.
class CacheStore {
public:
  virtual ~CacheStore() = default;
  virtual std::optional<CacheRecord> get(std::string_view key) const = 0;
  virtual void put(const CacheRecord& record) = 0;
  // All records, sorted by key.
  virtual std::vector<CacheRecord> records() const = 0;
  virtual CacheHeader header() const = 0;
  virtual std::size_t size() const = 0;
};

class MemoryCacheStore : public CacheStore {
public:
  explicit MemoryCacheStore(CacheHeader header = {}) : header_(std::move(header)) {}

  std::optional<CacheRecord> get(std::string_view key) const override {
    std::shared_lock lock(mu_);
    auto it = map_.find(std::string(key));
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void put(const CacheRecord& record) override {
    std::unique_lock lock(mu_);
    map_[record.key] = record;
  }

  std::vector<CacheRecord> records() const override {
    std::shared_lock lock(mu_);
    std::vector<CacheRecord> out;
    out.reserve(map_.size());
    for (const auto& [k, r] : map_) out.push_back(r);
    return out;
  }

  CacheHeader header() const override { return header_; }

  std::size_t size() const override {
    std::shared_lock lock(mu_);
    return map_.size();
  }

private:
  CacheHeader header_;
  mutable std::shared_mutex mu_;
  std::map<std::string, CacheRecord> map_;
};

namespace detail {

inline std::string crc32_hex(std::string_view data) {
  boost::crc_32_type crc;
  crc.process_bytes(data.data(), data.size());
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
  return buf;
}

inline std::string framed_line(const std::string& json_text) { return crc32_hex(json_text) + " " + json_text + "\n"; }

// Returns the JSON payload if the CRC matches.
inline std::optional<std::string> unframe_line(const std::string& line) {
  if (line.size() < 10 || line[8] != ' ') return std::nullopt;
  std::string payload = line.substr(9);
  if (crc32_hex(payload) != line.substr(0, 8)) return std::nullopt;
  return payload;
}

}  // namespace detail

inline constexpr std::string_view kCacheMagic = "QIUCACHE 1";

/// Append-only log file. Layout, one item per line:
///
///   QIUCACHE 1
///   <crc32> {"format":"qiu-cache","format_version":1,"pipeline_version":...,"store_version":...}
///   <crc32> <record json>
///   ...
///
/// crc32 is 8 lowercase hex digits over the JSON text. Later records for a
/// key supersede earlier ones. A final line without its newline is a torn
/// write and is ignored; any other bad line makes the file corrupt.
class FileCacheStore final : public CacheStore {
public:
  // Opens an existing cache for reading. Throws IntegrityError when the
  // header or a record is corrupt.
  static std::unique_ptr<FileCacheStore> open_read_only(const std::filesystem::path& path) {
    auto store = std::unique_ptr<FileCacheStore>(new FileCacheStore(path));
    if (!store->load(false)) throw CacheIoError("cache file not found: " + path.string());
    return store;
  }

  // Opens for appending, creating the file with `header` if needed. An
  // existing file written for a different pipeline/store version is refused
  // unless `truncate` is set.
  static std::unique_ptr<FileCacheStore> open(const std::filesystem::path& path, const CacheHeader& header,
                                              bool truncate = false) {
    auto store = std::unique_ptr<FileCacheStore>(new FileCacheStore(path));
    const bool existed = !truncate && store->load(true);
    if (existed && !(store->header_ == header)) {
      throw IntegrityError("cache " + path.string() + " was written for pipeline_version " +
                           store->header_.pipeline_version + "; refusing to mix with " + header.pipeline_version);
    }
    store->header_ = header;
    store->out_.open(path, existed ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
    if (!store->out_) throw CacheIoError("cannot open cache for writing: " + path.string());
    if (!existed) {
      const nlohmann::json h = {{"format", "qiu-cache"},
                                {"format_version", 1},
                                {"pipeline_version", header.pipeline_version},
                                {"store_version", header.store_version}};
      store->out_ << kCacheMagic << "\n" << detail::framed_line(h.dump());
      store->out_.flush();
      if (!store->out_) throw CacheIoError("failed writing cache header: " + path.string());
    }
    store->writable_ = true;
    return store;
  }

  std::optional<CacheRecord> get(std::string_view key) const override {
    std::shared_lock lock(mu_);
    auto it = map_.find(std::string(key));
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void put(const CacheRecord& record) override {
    if (!writable_) throw CacheIoError("cache opened read-only");
    const std::string line = detail::framed_line(record.to_json().dump());
    std::unique_lock lock(mu_);
    out_ << line;
    out_.flush();
    if (!out_) throw CacheIoError("write to cache failed: " + path_.string());
    map_[record.key] = record;
  }

  std::vector<CacheRecord> records() const override {
    std::shared_lock lock(mu_);
    std::vector<CacheRecord> out;
    out.reserve(map_.size());
    for (const auto& [k, r] : map_) out.push_back(r);
    return out;
  }

  CacheHeader header() const override { return header_; }

  std::size_t size() const override {
    std::shared_lock lock(mu_);
    return map_.size();
  }

  const std::filesystem::path& path() const noexcept { return path_; }

private:
  explicit FileCacheStore(std::filesystem::path path) : path_(std::move(path)) {}

  bool load(bool repair_tail) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return false;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&](std::string& line) -> int {  // 1 = full line, 0 = eof, -1 = torn tail
      if (pos >= content.size()) return 0;
      const auto nl = content.find('\n', pos);
      if (nl == std::string::npos) {
        line = content.substr(pos);
        pos = content.size();
        return -1;
      }
      line = content.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      return 1;
    };

    std::string line;
    if (next_line(line) != 1 || line != kCacheMagic)
      throw IntegrityError("corrupt cache header in " + path_.string() + ": bad magic");
    if (next_line(line) != 1) throw IntegrityError("corrupt cache header in " + path_.string() + ": missing header");
    auto payload = detail::unframe_line(line);
    if (!payload) throw IntegrityError("corrupt cache header in " + path_.string() + ": checksum mismatch");
    try {
      const auto h = nlohmann::json::parse(*payload);
      if (h.value("format", "") != "qiu-cache" || h.value("format_version", 0) != 1)
        throw IntegrityError("unsupported cache format in " + path_.string());
      header_.pipeline_version = h.at("pipeline_version").get<std::string>();
      header_.store_version = h.at("store_version").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError("corrupt cache header in " + path_.string() + ": " + e.what());
    }

    for (;;) {
      const int status = next_line(line);
      if (status == 0) break;
      if (status == -1) {
        torn_tail_ = true;
        break;
      }
      auto rec = detail::unframe_line(line);
      if (!rec) throw IntegrityError("corrupt cache record at line " + std::to_string(line_no) + " of " + path_.string());
      try {
        auto r = CacheRecord::from_json(nlohmann::json::parse(*rec));
        map_[r.key] = std::move(r);
      } catch (const std::exception& e) {
        throw IntegrityError("bad cache record at line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (torn_tail_ && repair_tail) {
      // Drop the partial line so later appends start on a fresh line.
      std::filesystem::resize_file(path_, pos - line.size());
    }
    return true;
  }

  std::filesystem::path path_;
  CacheHeader header_;
  mutable std::shared_mutex mu_;
  std::map<std::string, CacheRecord> map_;
  std::ofstream out_;
  bool writable_ = false;
  bool torn_tail_ = false;
};

/// Lookup by normalized key. When expected_pipeline_version is given, a
/// record written by another pipeline version counts as a miss.
inline std::optional<CacheRecord> cache_get(const CacheStore& cache, std::string_view raw,
                                            std::optional<std::string_view> expected_pipeline_version = std::nullopt) {
  auto rec = cache.get(normalize_text(raw));
  if (rec && expected_pipeline_version && rec->pipeline_version != *expected_pipeline_version) return std::nullopt;
  return rec;
}

/// Line-delimited JSON export sorted by key. The canonical form leaves out
/// created_at_ms so exports of equivalent runs compare byte-for-byte.
inline void export_jsonl(const CacheStore& cache, std::ostream& out, bool canonical = true) {
  for (const auto& r : cache.records()) out << r.to_json(!canonical).dump() << "\n";
}

}  // namespace qiu
