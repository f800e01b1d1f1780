#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "qiu/catalog.hpp"
#include "qiu/eval.hpp"
#include "qiu/fuzzy.hpp"

namespace qiu {

inline std::vector<Vertical> standard_verticals() {
  return {{"restaurant", "Restaurant"}, {"grocery", "Grocery"},         {"alcohol", "Alcohol"},
          {"retail_store", "Retail Store"}, {"flower", "Flower"},       {"dish", "Dish"},
          {"pet_product", "Pet Product"}};
}

/// A generated benchmark whose four families each need one more pipeline
/// component to be answered correctly:
///   head  (D): restaurant merchants, correct even for the ungrounded default;
///   torso (A): non-restaurant entities, need catalog grounding;
///   tail  (B): cold-start names known only to the search fixtures;
///   tail  (C): a dish and a same-named grocery brand, resolved to grocery
///              only through the (dish, grocery) whitelist override.
struct SyntheticSuite {
  std::uint64_t seed = 0;
  std::vector<Vertical> verticals;
  std::vector<nlohmann::json> catalog;
  nlohmann::json search_fixtures = nlohmann::json::object();
  nlohmann::json rules;
  nlohmann::json whitelist;
  nlohmann::json policy;
  std::vector<BenchmarkCase> cases;
  std::map<std::string, std::size_t> family_sizes;

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    auto dump = [&](const char* name, const nlohmann::json& j) {
      std::ofstream(dir / name) << j.dump(2) << "\n";
    };
    nlohmann::json tax = {{"verticals", nlohmann::json::array()}};
    for (const auto& v : verticals) tax["verticals"].push_back({{"id", v.id}, {"display_name", v.display_name}});
    dump("taxonomy.json", tax);
    dump("search_fixtures.json", search_fixtures);
    dump("rules.json", rules);
    dump("whitelist.json", whitelist);
    dump("policy.json", policy);
    {
      std::ofstream out(dir / "catalog.jsonl");
      for (const auto& e : catalog) out << e.dump() << "\n";
    }
    {
      std::ofstream out(dir / "benchmark.jsonl");
      for (const auto& c : cases)
        out << nlohmann::json{{"query", c.query}, {"truth", c.truth}, {"segment", to_string(c.segment)}}.dump() << "\n";
    }
    std::ofstream(dir / "pipeline.ini") << "; generated by gen-synthetic, seed " << seed << "\n"
                                        << "[catalog]\ncatalog = catalog.jsonl\ntaxonomy = taxonomy.json\n\n"
                                        << "[reasoner]\nengine = scripted\nrules = rules.json\npolicy = policy.json\n"
                                        << "default_vertical = restaurant\n\n"
                                        << "[search]\ntool = fixture\nfixtures = search_fixtures.json\n\n"
                                        << "[disambiguation]\nwhitelist = whitelist.json\n";
  }
};

namespace detail {

// Pronounceable pseudo-words from a fixed syllable inventory. Draws use raw
// mt19937_64 output so the sequence is the same on every standard library.
class WordSource {
public:
  explicit WordSource(std::uint64_t seed) : rng_(seed) {}

  std::string word(std::size_t syllables) {
    static constexpr const char* kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                             "s", "t", "v", "z", "br", "dr", "kl", "tr", "sk", "zh"};
    static constexpr const char* kNucleus[] = {"a", "e", "i", "o", "u", "ai", "eo", "ou"};
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
      w += kOnset[pick(std::size(kOnset))];
      w += kNucleus[pick(std::size(kNucleus))];
    }
    if (pick(2) == 0) w += "x";
    return w;
  }

  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

private:
  std::mt19937_64 rng_;
};

}  // namespace detail

inline SyntheticSuite generate_synthetic(std::uint64_t seed, std::size_t per_family = 80, double alpha = 0.6) {
  SyntheticSuite suite;
  suite.seed = seed;
  suite.verticals = standard_verticals();
  detail::WordSource words(seed);

  // Every base name stays lexically far from every other so no query picks
  // up a foreign entity above the fuzzy threshold.
  std::vector<std::string> taken;
  auto fresh_name = [&] {
    for (;;) {
      std::string n = words.word(2 + words.pick(2)) + " " + words.word(2);
      bool clash = false;
      for (const auto& t : taken) {
        if (fuzzy_score(n, t, alpha) >= 0.55) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      taken.push_back(n);
      return n;
    }
  };
  auto display = [&](const std::string& n) {
    // Title case plus the odd stray space, undone by normalization.
    std::string out;
    bool start = true;
    for (char c : n) {
      out.push_back(start && c >= 'a' && c <= 'z' ? static_cast<char>(c - 'a' + 'A') : c);
      start = c == ' ';
    }
    if (words.pick(4) == 0) out = "  " + out + " ";
    return out;
  };

  std::size_t next_id = 0;
  auto add_entity = [&](const std::string& name, const char* kind, const std::string& vertical) {
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", next_id++);
    suite.catalog.push_back({{"entity_id", id}, {"name", name}, {"kind", kind}, {"vertical", vertical}, {"aliases", nlohmann::json::array()}});
  };

  for (std::size_t i = 0; i < per_family; ++i) {
    const auto n = fresh_name();
    add_entity(n, "merchant", "restaurant");
    suite.cases.push_back({display(n), "restaurant", Segment::head});
  }

  const std::vector<std::string> catalog_verticals = {"grocery", "alcohol", "retail_store", "flower", "pet_product"};
  for (std::size_t i = 0; i < per_family; ++i) {
    const auto n = fresh_name();
    const auto& v = catalog_verticals[i % catalog_verticals.size()];
    add_entity(n, i % 2 ? "brand" : "merchant", v);
    suite.cases.push_back({display(n), v, Segment::torso});
  }

  struct Cue {
    const char* keyword;
    const char* vertical;
    const char* snippet;
  };
  static constexpr Cue kCues[] = {
      {"brewery", "alcohol", "Independent brewery with a taproom and seasonal beers"},
      {"florist", "flower", "Neighborhood florist offering bouquets and same-day arrangements"},
      {"supermarket", "grocery", "Family-owned supermarket with fresh produce and pantry staples"},
      {"pet supplies", "pet_product", "Pet supplies shop for dog food, treats and toys"},
      {"hardware", "retail_store", "Local hardware and home goods retailer"},
  };
  for (std::size_t i = 0; i < per_family; ++i) {
    const auto n = fresh_name();
    const Cue& cue = kCues[i % std::size(kCues)];
    suite.search_fixtures[n] = nlohmann::json::array(
        {{{"url", "https://example.test/" + std::to_string(i)}, {"title", n}, {"snippet", cue.snippet}}});
    suite.cases.push_back({display(n), cue.vertical, Segment::tail});
  }

  for (std::size_t i = 0; i < per_family; ++i) {
    const auto n = fresh_name();
    add_entity(n, "product", "dish");
    add_entity(n + " market", "brand", "grocery");
    suite.cases.push_back({display(n), "grocery", Segment::tail});
  }

  suite.family_sizes = {{"D_head_default", per_family},
                        {"A_catalog", per_family},
                        {"B_search", per_family},
                        {"C_override", per_family}};

  suite.rules = {{"default_vertical", "restaurant"}, {"secondary_window", 0.1}, {"keyword_rules", nlohmann::json::array()}};
  for (const auto& c : kCues) suite.rules["keyword_rules"].push_back({{"keyword", c.keyword}, {"vertical", c.vertical}});
  suite.whitelist = {{"version", "synthetic-v1"}, {"pairs", {{{"primary", "dish"}, {"secondary", "grocery"}}}}};
  suite.policy = {{"strategic_rules", nlohmann::json::array()}, {"example_bank", nlohmann::json::array()}};
  return suite;
}

}  // namespace qiu
