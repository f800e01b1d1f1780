#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "qiu/pipeline.hpp"

namespace qiu {

struct BenchmarkCase {
  std::string query;
  VerticalId truth;
  Segment segment = Segment::unknown;
};

/// Benchmark file: one {"query", "truth", "segment"} object per line.
inline std::vector<BenchmarkCase> load_benchmark(std::istream& in, const Taxonomy& taxonomy) {
  std::vector<BenchmarkCase> cases;
  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      BenchmarkCase c{j.at("query").get<std::string>(), j.at("truth").get<std::string>(), Segment::unknown};
      if (j.contains("segment")) {
        auto seg = parse_segment(j["segment"].get<std::string>());
        if (!seg) throw ConfigError("unknown segment");
        c.segment = *seg;
      }
      if (!taxonomy.contains(c.truth)) throw ConfigError("truth '" + c.truth + "' not in taxonomy");
      cases.push_back(std::move(c));
    } catch (const std::exception& e) {
      problems.push_back("benchmark line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) throw LoadError(std::move(problems));
  return cases;
}

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  // Undefined (nullopt) for an empty tally rather than 0.
  std::optional<double> accuracy() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  }
};

struct ArmResult {
  std::string name;
  AblationFlags flags;
  Tally overall;
  std::map<Segment, Tally> by_segment;
  std::size_t retrievals = 0;
  std::size_t tool_calls = 0;
  std::size_t failures = 0;
};

struct EvalReport {
  std::vector<ArmResult> arms;

  // Accuracy difference between consecutive arms (undefined when either is).
  std::vector<std::optional<double>> deltas() const {
    std::vector<std::optional<double>> out;
    for (std::size_t i = 1; i < arms.size(); ++i) {
      const auto a = arms[i - 1].overall.accuracy();
      const auto b = arms[i].overall.accuracy();
      out.push_back(a && b ? std::optional<double>(*b - *a) : std::nullopt);
    }
    return out;
  }

  nlohmann::json to_json() const {
    auto acc = [](const Tally& t) { return t.accuracy() ? nlohmann::json(*t.accuracy()) : nlohmann::json(); };
    nlohmann::json j = {{"arms", nlohmann::json::array()}, {"deltas", nlohmann::json::array()}};
    for (const auto& a : arms) {
      nlohmann::json segs = nlohmann::json::object();
      for (const auto& [seg, t] : a.by_segment)
        segs[std::string(to_string(seg))] = {{"correct", t.correct}, {"total", t.total}, {"accuracy", acc(t)}};
      j["arms"].push_back({{"name", a.name},
                           {"flags",
                            {{"catalog_grounding", a.flags.catalog_grounding},
                             {"agentic_search", a.flags.agentic_search},
                             {"dual_intent", a.flags.dual_intent}}},
                           {"correct", a.overall.correct},
                           {"total", a.overall.total},
                           {"accuracy", acc(a.overall)},
                           {"segments", segs},
                           {"retrievals", a.retrievals},
                           {"tool_calls", a.tool_calls},
                           {"failures", a.failures}});
    }
    for (const auto& d : deltas()) j["deltas"].push_back(d ? nlohmann::json(*d) : nlohmann::json());
    return j;
  }

  void render(std::ostream& out) const {
    auto pct = [](const std::optional<double>& v) {
      if (!v) return std::string("n/a");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * *v);
      return std::string(buf);
    };
    char line[256];
    std::snprintf(line, sizeof line, "%-14s %9s %9s %9s %9s %8s %8s %8s\n", "arm", "overall", "head", "torso", "tail",
                  "n", "retr", "tools");
    out << line;
    for (const auto& a : arms) {
      auto seg = [&](Segment s) {
        auto it = a.by_segment.find(s);
        return pct(it == a.by_segment.end() ? std::nullopt : it->second.accuracy());
      };
      std::snprintf(line, sizeof line, "%-14s %9s %9s %9s %9s %8zu %8zu %8zu\n", a.name.c_str(),
                    pct(a.overall.accuracy()).c_str(), seg(Segment::head).c_str(), seg(Segment::torso).c_str(),
                    seg(Segment::tail).c_str(), a.overall.total, a.retrievals, a.tool_calls);
      out << line;
    }
    const auto d = deltas();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i]) std::snprintf(line, sizeof line, "delta %s -> %s: %+.1fpp\n", arms[i].name.c_str(),
                              arms[i + 1].name.c_str(), 100.0 * *d[i]);
      else std::snprintf(line, sizeof line, "delta %s -> %s: n/a\n", arms[i].name.c_str(), arms[i + 1].name.c_str());
      out << line;
    }
  }
};

/// Accuracy of the final resolved intent only; a failed classification is
/// counted as incorrect.
inline ArmResult evaluate_arm(const std::vector<BenchmarkCase>& cases, const PipelineDeps& deps,
                              const PipelineConfig& config, std::string name = "eval") {
  ArmResult arm;
  arm.name = std::move(name);
  arm.flags = config.ablation;
  for (const auto& c : cases) {
    bool correct = false;
    try {
      const auto t = classify_traced(c.query, deps, config);
      arm.retrievals += t.retrievals;
      arm.tool_calls += t.tool_calls;
      correct = t.resolved.final_vertical == c.truth;
    } catch (const ClassificationError&) {
      ++arm.failures;
    }
    auto& seg = arm.by_segment[c.segment];
    ++seg.total;
    ++arm.overall.total;
    if (correct) {
      ++seg.correct;
      ++arm.overall.correct;
    }
  }
  return arm;
}

inline EvalReport evaluate(const std::vector<BenchmarkCase>& cases, const PipelineDeps& deps,
                           const PipelineConfig& config) {
  deps.check();
  return EvalReport{{evaluate_arm(cases, deps, config, "eval")}};
}

/// Baseline (no grounding, single intent), then catalog grounding, then web
/// search, then dual intent. Only the flags change between arms.
inline EvalReport run_ablation(const std::vector<BenchmarkCase>& cases, const PipelineDeps& deps,
                               const PipelineConfig& base) {
  deps.check();
  const std::vector<std::pair<std::string, AblationFlags>> arms = {
      {"baseline", {false, false, false}},
      {"+catalog", {true, false, false}},
      {"+agentic", {true, true, false}},
      {"full", {true, true, true}},
  };
  EvalReport report;
  for (const auto& [name, flags] : arms) {
    PipelineConfig cfg = base;
    cfg.ablation = flags;
    report.arms.push_back(evaluate_arm(cases, deps, cfg, name));
  }
  return report;
}

// --- whitelist derivation ---------------------------------------------------

struct WhitelistDerivation {
  ConflictWhitelist whitelist;
  std::vector<RecordError> rejected;
  // (primary, secondary) -> (secondary wins, observations)
  std::map<ConflictWhitelist::Pair, std::pair<std::size_t, std::size_t>> counts;
};

/// Builds W from labeled conflict outcomes {"primary", "secondary",
/// "winner": "primary"|"secondary"}: a pair is included when it has at least
/// min_support observations and the secondary won at least `threshold` of
/// them. threshold must lie in (0.5, 1].
inline WhitelistDerivation derive_whitelist(std::istream& interactions, double threshold, std::size_t min_support = 20,
                                            const Taxonomy* taxonomy = nullptr) {
  if (!(threshold > 0.5 && threshold <= 1.0)) throw ConfigError("win-rate threshold must lie in (0.5, 1]");
  if (min_support == 0) throw ConfigError("min_support must be >= 1");
  WhitelistDerivation out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(interactions, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto p = j.at("primary").get<std::string>();
      const auto s = j.at("secondary").get<std::string>();
      const auto w = j.at("winner").get<std::string>();
      if (w != "primary" && w != "secondary") throw ConfigError("winner must be 'primary' or 'secondary'");
      if (p == s) throw ConfigError("primary equals secondary");
      if (taxonomy && (!taxonomy->contains(p) || !taxonomy->contains(s))) throw ConfigError("unknown vertical");
      auto& c = out.counts[{p, s}];
      if (w == "secondary") ++c.first;
      ++c.second;
    } catch (const std::exception& e) {
      out.rejected.push_back({line_no, e.what()});
    }
  }
  std::set<ConflictWhitelist::Pair> pairs;
  for (const auto& [pair, c] : out.counts) {
    if (c.second < min_support) continue;
    if (static_cast<double>(c.first) / static_cast<double>(c.second) >= threshold) pairs.insert(pair);
  }
  nlohmann::json sig = nlohmann::json::array();
  for (const auto& [p, s] : pairs) sig.push_back({p, s});
  out.whitelist = ConflictWhitelist(std::move(pairs), "derived-" + sha256_hex(sig.dump()).substr(0, 12));
  return out;
}

}  // namespace qiu
