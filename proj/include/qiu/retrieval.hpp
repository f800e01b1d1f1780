#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "qiu/catalog.hpp"
#include "qiu/digest.hpp"
#include "qiu/errors.hpp"
#include "qiu/text.hpp"

namespace qiu {

using Embedding = std::vector<double>;

/// Text encoder into a shared embedding space. Implementations must be
/// deterministic per identity() and safe for concurrent encode() calls.
class Encoder {
public:
  virtual ~Encoder() = default;

  virtual Embedding encode(std::string_view text) const = 0;

  virtual std::vector<Embedding> encode_batch(std::span<const std::string> texts) const {
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(encode(t));
    return out;
  }

  virtual std::size_t dimension() const = 0;
  virtual std::string identity() const = 0;
};

// Scales v to unit L2 norm; returns false for the zero vector.
inline bool unit_normalize(Embedding& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (!(sq > 0.0) || !std::isfinite(sq)) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
  return true;
}

/// Character-trigram feature hashing. Each trigram of code points is hashed
/// with seeded FNV-1a into one of D buckets and counted; the count vector is
/// L2-normalized. Texts of one or two code points hash as a single gram; the
/// empty text maps to the basis vector e1.
class HashEncoder final : public Encoder {
public:
  HashEncoder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
    if (dimension < 2) throw ConfigError("hash encoder dimension must be >= 2");
  }

  Embedding encode(std::string_view text) const override {
    Embedding v(dimension_, 0.0);
    const std::u32string cps = to_code_points(text);
    if (cps.empty()) {
      v[0] = 1.0;
      return v;
    }
    auto add_gram = [&](std::u32string_view gram) {
      v[fnv1a64(to_utf8(gram), seed_) % dimension_] += 1.0;
    };
    if (cps.size() < 3) {
      add_gram(cps);
    } else {
      for (std::size_t i = 0; i + 3 <= cps.size(); ++i) add_gram(std::u32string_view(cps).substr(i, 3));
    }
    unit_normalize(v);
    return v;
  }

  std::size_t dimension() const override { return dimension_; }

  std::string identity() const override {
    return "hash-trigram/v1/d" + std::to_string(dimension_) + "/s" + std::to_string(seed_);
  }

  std::uint64_t seed() const noexcept { return seed_; }

private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

inline std::shared_ptr<const Encoder> hash_encoder(std::size_t dimension, std::uint64_t seed) {
  return std::make_shared<const HashEncoder>(dimension, seed);
}

struct RetrievalConfig {
  std::size_t top_n = 50;
  double alpha = 0.6;
  double tau_fuzzy = 0.75;
  std::size_t max_intents = 2;

  void validate() const {
    if (top_n < 1) throw ConfigError("top_n must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(tau_fuzzy >= 0.0 && tau_fuzzy <= 1.0)) throw ConfigError("tau_fuzzy must lie in [0, 1]");
    if (max_intents != 2) throw ConfigError("max_intents is fixed at 2");
  }
};

struct CandidateMatch {
  std::string entity_id;
  std::string surface;
  double cosine = 0.0;

  friend bool operator==(const CandidateMatch&, const CandidateMatch&) = default;
};

// Ranking granularity for cosines. Mathematically equal cosines can differ in
// the last bits depending on summation order; snapping to this grid makes
// them compare equal so the entity_id tie-break applies.
inline constexpr double kCosineQuantum = 1e-9;

inline double quantize_cosine(double c) {
  c = std::clamp(c, -1.0, 1.0);
  return std::round(c / kCosineQuantum) * kCosineQuantum;
}

/// Exact flat index over every (entity, surface) pair.
class SemanticIndex {
public:
  struct Entry {
    std::string entity_id;
    std::string surface;
  };

  SemanticIndex(std::uint64_t store_version, std::string store_fingerprint, std::size_t dimension,
                std::string encoder_identity, std::vector<Entry> entries, std::vector<double> matrix)
      : store_version_(store_version),
        store_fingerprint_(std::move(store_fingerprint)),
        dimension_(dimension),
        encoder_identity_(std::move(encoder_identity)),
        entries_(std::move(entries)),
        matrix_(std::move(matrix)) {
    if (matrix_.size() != entries_.size() * dimension_)
      throw IntegrityError("index matrix size does not match entry count");
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (i == 0 || entries_[i].entity_id != entries_[i - 1].entity_id) ++distinct;
    distinct_entities_ = distinct;
  }

  std::uint64_t store_version() const noexcept { return store_version_; }
  const std::string& store_fingerprint() const noexcept { return store_fingerprint_; }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::string& encoder_identity() const noexcept { return encoder_identity_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t distinct_entities() const noexcept { return distinct_entities_; }

  std::span<const double> vector(std::size_t i) const {
    return std::span<const double>(matrix_).subspan(i * dimension_, dimension_);
  }

  void check_compatible(const Encoder& encoder) const {
    if (encoder.dimension() != dimension_)
      throw ConfigError("encoder dimension " + std::to_string(encoder.dimension()) +
                        " does not match index dimension " + std::to_string(dimension_));
    if (encoder.identity() != encoder_identity_)
      throw ConfigError("encoder '" + encoder.identity() + "' does not match index encoder '" +
                        encoder_identity_ + "'");
  }

  void check_store(const EntityStore& store) const {
    if (store.version() != store_version_ || store.fingerprint() != store_fingerprint_)
      throw IntegrityError("index was built from store version " + std::to_string(store_version_) +
                           " but active store is version " + std::to_string(store.version()) +
                           " (or its content differs)");
  }

private:
  std::uint64_t store_version_;
  std::string store_fingerprint_;
  std::size_t dimension_;
  std::string encoder_identity_;
  std::vector<Entry> entries_;  // grouped by entity, entities in id order
  std::vector<double> matrix_;  // row-major, one unit row per entry
  std::size_t distinct_entities_ = 0;
};

/// One entry per (entity, surface): the normalized name plus each distinct
/// normalized alias. Rows are unit-normalized.
inline SemanticIndex build_index(const EntityStore& store, const Encoder& encoder) {
  if (store.empty()) throw ConfigError("empty store");
  const std::size_t dim = encoder.dimension();
  if (dim < 2) throw ConfigError("encoder dimension must be >= 2");

  std::vector<SemanticIndex::Entry> entries;
  std::vector<std::string> texts;
  for (const auto& e : store.entities()) {
    for (auto& s : e.surfaces()) {
      entries.push_back({e.entity_id, s});
      texts.push_back(s);
    }
  }

  std::vector<Embedding> vectors;
  try {
    vectors = encoder.encode_batch(texts);
  } catch (const NetworkForbidden&) {
    throw;
  } catch (const std::exception& batch_error) {
    // Find the offending surface one text at a time.
    for (const auto& t : texts) {
      try {
        (void)encoder.encode(t);
      } catch (const NetworkForbidden&) {
        throw;
      } catch (const std::exception& ex) {
        throw Error("encoder failed on surface '" + t + "': " + ex.what());
      }
    }
    throw Error(std::string("encoder failed during index build: ") + batch_error.what());
  }
  if (vectors.size() != texts.size()) throw Error("encoder returned wrong number of vectors");

  std::vector<double> matrix;
  matrix.reserve(entries.size() * dim);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    auto& v = vectors[i];
    if (v.size() != dim)
      throw Error("encoder returned dimension " + std::to_string(v.size()) + " for surface '" +
                  texts[i] + "'");
    if (!unit_normalize(v)) throw Error("encoder returned a zero vector for surface '" + texts[i] + "'");
    matrix.insert(matrix.end(), v.begin(), v.end());
  }
  return SemanticIndex(store.version(), store.fingerprint(), dim, encoder.identity(),
                       std::move(entries), std::move(matrix));
}

/// Exact cosine top-N over entities. Each entity contributes its best
/// surface (earliest surface on ties); results are ordered by cosine
/// descending, then entity_id ascending.
inline std::vector<CandidateMatch> semantic_topn(const SemanticIndex& index, const Query& query,
                                                 const Encoder& encoder, std::size_t n) {
  index.check_compatible(encoder);
  if (n == 0) throw ConfigError("n must be positive");

  Embedding qv = encoder.encode(query.normalized);
  if (qv.size() != index.dimension()) throw ConfigError("query embedding has wrong dimension");
  if (!unit_normalize(qv)) throw Error("encoder returned a zero vector for the query");

  std::vector<CandidateMatch> best;
  best.reserve(index.distinct_entities());
  const auto& entries = index.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto row = index.vector(i);
    double dot = 0.0;
    for (std::size_t d = 0; d < qv.size(); ++d) dot += qv[d] * row[d];
    const double cos = quantize_cosine(dot);
    if (best.empty() || best.back().entity_id != entries[i].entity_id) {
      best.push_back({entries[i].entity_id, entries[i].surface, cos});
    } else if (cos > best.back().cosine) {
      best.back().surface = entries[i].surface;
      best.back().cosine = cos;
    }
  }

  auto ranked_before = [](const CandidateMatch& a, const CandidateMatch& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.entity_id < b.entity_id;
  };
  const std::size_t keep = std::min(n, best.size());
  std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(keep), best.end(),
                    ranked_before);
  best.resize(keep);
  return best;
}

// Index file layout (little-endian):
//   8 bytes  magic "QIUIDX01"
//   u32      header length H
//   H bytes  JSON header {format_version, dimension, encoder_identity,
//            store_version, store_fingerprint, entry_count}
//   per entry: u32 id length, id bytes, u32 surface length, surface bytes,
//              dimension x f64
namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IntegrityError("index file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& in, std::size_t limit) {
  const std::uint32_t len = read_u32(in);
  if (len > limit) throw IntegrityError("index file has an implausible string length");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw IntegrityError("index file truncated");
  return s;
}

}  // namespace detail

inline constexpr char kIndexMagic[8] = {'Q', 'I', 'U', 'I', 'D', 'X', '0', '1'};

inline void save_index(const SemanticIndex& index, std::ostream& out) {
  out.write(kIndexMagic, sizeof kIndexMagic);
  const nlohmann::json header = {{"format_version", 1},
                                 {"dimension", index.dimension()},
                                 {"encoder_identity", index.encoder_identity()},
                                 {"store_version", index.store_version()},
                                 {"store_fingerprint", index.store_fingerprint()},
                                 {"entry_count", index.size()}};
  detail::write_str(out, header.dump());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::write_str(out, index.entries()[i].entity_id);
    detail::write_str(out, index.entries()[i].surface);
    static_assert(sizeof(double) == 8);
    const auto row = index.vector(i);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing index");
}

/// Loads an index and verifies its header against the active store.
inline SemanticIndex load_index(std::istream& in, const EntityStore& store) {
  char magic[sizeof kIndexMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kIndexMagic, sizeof magic) != 0)
    throw IntegrityError("not an index file (bad magic)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(detail::read_str(in, 1 << 20));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("corrupt index header: ") + e.what());
  }
  if (header.value("format_version", 0) != 1) throw IntegrityError("unsupported index format version");
  const auto dim = header.at("dimension").get<std::size_t>();
  const auto count = header.at("entry_count").get<std::size_t>();
  const auto store_version = header.at("store_version").get<std::uint64_t>();
  const auto fingerprint = header.at("store_fingerprint").get<std::string>();
  if (store_version != store.version() || fingerprint != store.fingerprint())
    throw IntegrityError("index header (store version " + std::to_string(store_version) +
                         ") does not match the active catalog (version " +
                         std::to_string(store.version()) + ")");

  std::vector<SemanticIndex::Entry> entries;
  std::vector<double> matrix(count * dim);
  entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SemanticIndex::Entry e;
    e.entity_id = detail::read_str(in, 1 << 16);
    e.surface = detail::read_str(in, 1 << 16);
    if (!store.find(e.entity_id)) throw IntegrityError("index entry '" + e.entity_id + "' not in store");
    if (!in.read(reinterpret_cast<char*>(matrix.data() + i * dim),
                 static_cast<std::streamsize>(dim * sizeof(double))))
      throw IntegrityError("index file truncated");
    entries.push_back(std::move(e));
  }
  return SemanticIndex(store_version, fingerprint, dim, header.at("encoder_identity").get<std::string>(),
                       std::move(entries), std::move(matrix));
}

}  // namespace qiu
