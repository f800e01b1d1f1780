#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "qiu/catalog.hpp"
#include "qiu/retrieval.hpp"
#include "qiu/text.hpp"

namespace qiu {

/// Unit-cost Levenshtein distance (insert, delete, substitute) over code points.
inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

// 1 - lev/max(|s|,|t|); 1 when both are empty.
inline double normalized_similarity(std::u32string_view s, std::u32string_view t) {
  const std::size_t longest = std::max(s.size(), t.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(s, t)) / static_cast<double>(longest);
}

/// Token-set similarity in [0, 1]. With I the sorted shared tokens, A = I
/// followed by the sorted tokens only in q, B = I followed by the sorted
/// tokens only in e, returns the best normalized similarity among (I,A),
/// (I,B) and (A,B).
inline double token_set_score(std::string_view q, std::string_view e) {
  auto qt = split_tokens(q);
  auto et = split_tokens(e);
  std::sort(qt.begin(), qt.end());
  qt.erase(std::unique(qt.begin(), qt.end()), qt.end());
  std::sort(et.begin(), et.end());
  et.erase(std::unique(et.begin(), et.end()), et.end());

  std::vector<std::string> shared, only_q, only_e;
  std::set_intersection(qt.begin(), qt.end(), et.begin(), et.end(), std::back_inserter(shared));
  std::set_difference(qt.begin(), qt.end(), et.begin(), et.end(), std::back_inserter(only_q));
  std::set_difference(et.begin(), et.end(), qt.begin(), qt.end(), std::back_inserter(only_e));

  auto join = [](const std::vector<std::string>& head, const std::vector<std::string>& tail) {
    std::string out;
    for (const auto* part : {&head, &tail}) {
      for (const auto& t : *part) {
        if (!out.empty()) out.push_back(' ');
        out += t;
      }
    }
    return to_code_points(out);
  };
  const std::u32string i = join(shared, {});
  const std::u32string a = join(shared, only_q);
  const std::u32string b = join(shared, only_e);
  return std::max({normalized_similarity(i, a), normalized_similarity(i, b), normalized_similarity(a, b)});
}

/// Best alignment of the shorter string against every same-length window of
/// the longer one, in [0, 1].
inline double partial_ratio_score(std::string_view q, std::string_view e) {
  std::u32string s = to_code_points(q);
  std::u32string l = to_code_points(e);
  if (s.size() > l.size()) std::swap(s, l);
  if (s.empty()) return l.empty() ? 1.0 : 0.0;

  const std::u32string_view lv(l);
  double best = 0.0;
  for (std::size_t start = 0; start + s.size() <= l.size(); ++start) {
    best = std::max(best, normalized_similarity(s, lv.substr(start, s.size())));
    if (best == 1.0) break;
  }
  return best;
}

/// alpha * TokenSet + (1 - alpha) * PartialRatio.
inline double fuzzy_score(std::string_view q, std::string_view e, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  const double s = alpha * token_set_score(q, e) + (1.0 - alpha) * partial_ratio_score(q, e);
  return std::clamp(s, 0.0, 1.0);
}

struct FuzzyScoredMatch {
  std::string entity_id;
  std::string surface;  // the surface that produced the best fuzzy score
  double cosine = 0.0;
  double fuzzy = 0.0;
  // Copied from the entity so evidence is self-describing downstream.
  std::string name;
  EntityKind kind = EntityKind::merchant;
  VerticalId vertical;

  friend bool operator==(const FuzzyScoredMatch&, const FuzzyScoredMatch&) = default;
};

/// The high-precision entity set: every match has fuzzy >= tau_fuzzy, sorted
/// by fuzzy desc, cosine desc, entity_id asc.
struct CatalogEvidence {
  std::vector<FuzzyScoredMatch> matches;

  bool empty() const noexcept { return matches.empty(); }
};

struct ScoredCandidates {
  std::vector<FuzzyScoredMatch> retained;
  std::vector<FuzzyScoredMatch> excluded;
};

// Scores every candidate and partitions around tau. Exposed separately from
// refine() so the filter partition can be inspected.
inline ScoredCandidates score_candidates(const std::vector<CandidateMatch>& candidates, const Query& q,
                                         const RetrievalConfig& config, const EntityStore& store) {
  config.validate();
  ScoredCandidates out;
  for (const auto& c : candidates) {
    const CatalogEntity& entity = store.at(c.entity_id);
    FuzzyScoredMatch m{c.entity_id, {}, c.cosine, -1.0, entity.name, entity.kind, entity.vertical};
    for (const auto& surface : entity.surfaces()) {
      const double f = fuzzy_score(q.normalized, surface, config.alpha);
      if (f > m.fuzzy) {
        m.fuzzy = f;
        m.surface = surface;
      }
    }
    (m.fuzzy >= config.tau_fuzzy ? out.retained : out.excluded).push_back(std::move(m));
  }
  auto order = [](const FuzzyScoredMatch& a, const FuzzyScoredMatch& b) {
    if (a.fuzzy != b.fuzzy) return a.fuzzy > b.fuzzy;
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.entity_id < b.entity_id;
  };
  std::sort(out.retained.begin(), out.retained.end(), order);
  std::sort(out.excluded.begin(), out.excluded.end(), order);
  return out;
}

/// Keeps the stage-1 candidates whose best fuzzy score over name and aliases
/// reaches tau_fuzzy. An empty result is the cold-start signal.
inline CatalogEvidence refine(const std::vector<CandidateMatch>& candidates, const Query& q,
                              const RetrievalConfig& config, const EntityStore& store) {
  return CatalogEvidence{score_candidates(candidates, q, config, store).retained};
}

}  // namespace qiu
