#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "difar/common.hpp"
#include "difar/encoder.hpp"

namespace difar {

// ---------------------------------------------------------------------------
// Ranked results

struct RankedEntry {
  TripletId id = 0;
  double score = 0.0;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

/// Descending score, ascending id on ties. Every ranking in the library uses
/// this order.
inline bool ranks_before(const RankedEntry& a, const RankedEntry& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

using RankedList = std::vector<RankedEntry>;

/// Keeps the best k entries of `all`, sorted.
inline RankedList top_k(RankedList all, std::size_t k) {
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    ranks_before);
  all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------
// Exact inner-product search

class ExactIndex {
 public:
  ExactIndex() = default;

  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dims_; }

  std::span<const float> vector(std::size_t i) const { return {data_.data() + i * dims_, dims_}; }

  RankedList search(std::span<const float> q, std::size_t k) const {
    if (k == 0) throw UsageError("search: k must be >= 1");
    if (q.size() != dims_ && n_ > 0) {
      throw UsageError("search: query dimension " + std::to_string(q.size()) +
                       " does not match index dimension " + std::to_string(dims_));
    }
    RankedList all;
    all.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      all.push_back({static_cast<TripletId>(i), score<float, float>(q, vector(i))});
    }
    return top_k(std::move(all), k);
  }

  /// Scores only `candidates` (a subset of ids).
  RankedList search_subset(std::span<const float> q, std::span<const TripletId> candidates,
                           std::size_t k) const {
    if (k == 0) throw UsageError("search: k must be >= 1");
    RankedList all;
    all.reserve(candidates.size());
    for (auto id : candidates) all.push_back({id, score<float, float>(q, vector(id))});
    return top_k(std::move(all), k);
  }

  friend ExactIndex build_exact(std::span<const EmbeddingVector> embeddings);

 private:
  std::size_t dims_ = 0;
  std::size_t n_ = 0;
  std::vector<float> data_;
};

inline ExactIndex build_exact(std::span<const EmbeddingVector> embeddings) {
  if (embeddings.empty()) throw UsageError("build_exact: empty collection");
  ExactIndex idx;
  idx.dims_ = embeddings.front().size();
  idx.n_ = embeddings.size();
  idx.data_.reserve(idx.dims_ * idx.n_);
  for (const auto& e : embeddings) {
    if (e.size() != idx.dims_) throw UsageError("build_exact: dimension mismatch");
    idx.data_.insert(idx.data_.end(), e.begin(), e.end());
  }
  return idx;
}

inline RankedList search_exact(const ExactIndex& index, std::span<const float> q, std::size_t k) {
  return index.search(q, k);
}

// ---------------------------------------------------------------------------
// Scalar quantization: one global [min, max] per dimension, 8-bit codes.

struct ScalarQuantizer {
  std::vector<float> mins;
  std::vector<float> maxs;

  std::size_t dim() const noexcept { return mins.size(); }

  static ScalarQuantizer fit(std::span<const EmbeddingVector> vectors) {
    if (vectors.empty()) throw UsageError("quantizer: empty collection");
    ScalarQuantizer sq;
    const auto d = vectors.front().size();
    sq.mins.assign(vectors.front().begin(), vectors.front().end());
    sq.maxs = sq.mins;
    for (const auto& v : vectors) {
      if (v.size() != d) throw UsageError("quantizer: dimension mismatch");
      for (std::size_t j = 0; j < d; ++j) {
        sq.mins[j] = std::min(sq.mins[j], v[j]);
        sq.maxs[j] = std::max(sq.maxs[j], v[j]);
      }
    }
    return sq;
  }

  /// round((v - min) / (max - min) * 255), half away from zero, clamped.
  std::uint8_t encode(std::size_t j, float v) const {
    const double lo = mins[j];
    const double hi = maxs[j];
    if (hi == lo) return 0;
    const double x = std::round((static_cast<double>(v) - lo) / (hi - lo) * 255.0);
    return static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
  }

  float decode(std::size_t j, std::uint8_t code) const {
    const double lo = mins[j];
    const double hi = maxs[j];
    return static_cast<float>(lo + (hi - lo) * code / 255.0);
  }

  std::vector<std::uint8_t> quantize(std::span<const float> v) const {
    if (v.size() != dim()) throw UsageError("quantize: dimension mismatch");
    std::vector<std::uint8_t> out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) out[j] = encode(j, v[j]);
    return out;
  }

  EmbeddingVector dequantize(std::span<const std::uint8_t> codes) const {
    if (codes.size() != dim()) throw UsageError("dequantize: dimension mismatch");
    EmbeddingVector out(codes.size());
    for (std::size_t j = 0; j < codes.size(); ++j) out[j] = decode(j, codes[j]);
    return out;
  }

  friend bool operator==(const ScalarQuantizer&, const ScalarQuantizer&) = default;
};

// ---------------------------------------------------------------------------
// HNSW over scalar-quantized vectors, inner-product similarity.

struct HnswParams {
  std::uint32_t M = 16;
  std::uint32_t ef_construction = 200;
  std::uint32_t ef_search = 64;
};

class HnswIndex {
 public:
  static constexpr std::uint32_t kNoNode = 0xFFFFFFFFu;

  HnswIndex() = default;

  /// Quantizes the collection, then inserts nodes in id order. Neighbor
  /// selection keeps the M best by inner product; back-edges that overflow a
  /// node's cap (M above layer 0, 2M on layer 0) are pruned on both ends so
  /// every layer stays an undirected graph.
  static HnswIndex build(std::span<const EmbeddingVector> embeddings, HnswParams params = {},
                         std::uint64_t seed = 0) {
    if (embeddings.empty()) throw UsageError("build_hnsw: empty collection");
    if (params.M < 2) throw UsageError("build_hnsw: M must be >= 2");
    HnswIndex idx;
    idx.params_ = params;
    idx.seed_ = seed;
    idx.dims_ = static_cast<std::uint32_t>(embeddings.front().size());
    idx.n_ = static_cast<std::uint32_t>(embeddings.size());
    idx.quantizer_ = ScalarQuantizer::fit(embeddings);
    idx.codes_.reserve(std::size_t{idx.n_} * idx.dims_);
    for (const auto& e : embeddings) {
      const auto c = idx.quantizer_.quantize(e);
      idx.codes_.insert(idx.codes_.end(), c.begin(), c.end());
    }
    idx.decode_all();

    const double level_mult = 1.0 / std::log(static_cast<double>(params.M));
    Rng rng(seed);
    idx.links_.resize(idx.n_);
    for (std::uint32_t v = 0; v < idx.n_; ++v) {
      const auto level = static_cast<std::uint32_t>(std::floor(-std::log(rng.uniform_open_closed()) * level_mult));
      idx.links_[v].resize(level + 1);
    }
    for (std::uint32_t v = 0; v < idx.n_; ++v) idx.insert(v);
    return idx;
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dims_; }
  const HnswParams& params() const noexcept { return params_; }
  void set_ef_search(std::uint32_t ef) { params_.ef_search = ef; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint32_t entry_point() const noexcept { return entry_; }
  const ScalarQuantizer& quantizer() const noexcept { return quantizer_; }

  std::uint64_t source_fingerprint() const noexcept { return fingerprint_; }
  void set_source_fingerprint(std::uint64_t f) noexcept { fingerprint_ = f; }

  /// Highest level of node v (0-based).
  std::uint32_t level(std::uint32_t v) const { return static_cast<std::uint32_t>(links_[v].size()) - 1; }
  std::uint32_t max_level() const noexcept { return entry_ == kNoNode ? 0 : level(entry_); }

  std::span<const std::uint32_t> neighbors(std::uint32_t v, std::uint32_t lvl) const {
    return links_[v][lvl];
  }

  std::span<const float> decoded(std::uint32_t v) const {
    return {decoded_.data() + std::size_t{v} * dims_, dims_};
  }

  std::span<const std::uint8_t> codes(std::uint32_t v) const {
    return {codes_.data() + std::size_t{v} * dims_, dims_};
  }

  std::uint32_t degree_cap(std::uint32_t lvl) const noexcept {
    return lvl == 0 ? 2 * params_.M : params_.M;
  }

  /// Greedy descent on the upper layers, then a beam of width
  /// max(ef_search, k) on layer 0. Scores are inner products against the
  /// dequantized vectors.
  RankedList search(std::span<const float> q, std::size_t k, std::optional<std::size_t> ef = {}) const {
    if (k == 0) throw UsageError("search_hnsw: k must be >= 1");
    if (n_ == 0) return {};
    if (q.size() != dims_) {
      throw UsageError("search_hnsw: query dimension " + std::to_string(q.size()) +
                       " does not match index dimension " + std::to_string(dims_));
    }
    const std::size_t width = std::max<std::size_t>(ef.value_or(params_.ef_search), k);
    std::vector<RankedEntry> eps{{entry_, sim(q, entry_)}};
    for (std::uint32_t lvl = max_level(); lvl > 0; --lvl) {
      eps = search_layer(q, eps, 1, lvl);
      eps.resize(1);
    }
    auto found = search_layer(q, eps, width, 0);
    found.resize(std::min(k, found.size()));
    return found;
  }

  /// Structural checks: level-0 completeness, degree caps, symmetry, no self
  /// loops, no duplicate edges. Returns a description of the first violation.
  std::optional<std::string> check_invariants() const {
    if (links_.size() != n_) return "link table size differs from node count";
    for (std::uint32_t v = 0; v < n_; ++v) {
      if (links_[v].empty()) return "node " + std::to_string(v) + " missing from level 0";
      for (std::uint32_t lvl = 0; lvl < links_[v].size(); ++lvl) {
        const auto& nb = links_[v][lvl];
        if (nb.size() > degree_cap(lvl)) {
          return "node " + std::to_string(v) + " exceeds degree cap on level " + std::to_string(lvl);
        }
        std::vector<std::uint32_t> sorted(nb.begin(), nb.end());
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
          return "node " + std::to_string(v) + " has a duplicate edge";
        }
        for (auto u : nb) {
          if (u == v) return "self loop at node " + std::to_string(v);
          if (u >= n_ || level(u) < lvl) return "edge to node absent from level";
          const auto& back = links_[u][lvl];
          if (std::find(back.begin(), back.end(), v) == back.end()) {
            return "asymmetric edge " + std::to_string(v) + "->" + std::to_string(u) +
                   " on level " + std::to_string(lvl);
          }
        }
      }
    }
    if (n_ > 0) {
      if (entry_ >= n_) return "entry point out of range";
      for (std::uint32_t v = 0; v < n_; ++v) {
        if (level(v) > level(entry_)) return "entry point is not on the top level";
      }
    }
    return std::nullopt;
  }

  friend std::string serialize_index(const HnswIndex& idx);
  friend HnswIndex deserialize_index(std::string_view bytes);

 private:
  struct WorstFirst {
    bool operator()(const RankedEntry& a, const RankedEntry& b) const { return ranks_before(a, b); }
  };
  struct BestFirst {
    bool operator()(const RankedEntry& a, const RankedEntry& b) const { return ranks_before(b, a); }
  };

  double sim(std::span<const float> q, std::uint32_t v) const {
    return score<float, float>(q, decoded(v));
  }

  void decode_all() {
    decoded_.resize(codes_.size());
    for (std::uint32_t v = 0; v < n_; ++v) {
      for (std::uint32_t j = 0; j < dims_; ++j) {
        decoded_[std::size_t{v} * dims_ + j] = quantizer_.decode(j, codes_[std::size_t{v} * dims_ + j]);
      }
    }
  }

  /// Beam search on one layer. Result sorted best first, at most ef entries.
  std::vector<RankedEntry> search_layer(std::span<const float> q, const std::vector<RankedEntry>& entry_points,
                                        std::size_t ef, std::uint32_t lvl) const {
    std::vector<std::uint8_t> visited(n_, 0);
    std::priority_queue<RankedEntry, std::vector<RankedEntry>, BestFirst> candidates;
    std::priority_queue<RankedEntry, std::vector<RankedEntry>, WorstFirst> best;
    for (const auto& e : entry_points) {
      if (visited[e.id]) continue;
      visited[e.id] = 1;
      candidates.push(e);
      best.push(e);
      if (best.size() > ef) best.pop();
    }
    while (!candidates.empty()) {
      const auto c = candidates.top();
      if (best.size() >= ef && ranks_before(best.top(), c)) break;
      candidates.pop();
      for (auto u : links_[c.id][lvl]) {
        if (visited[u]) continue;
        visited[u] = 1;
        const RankedEntry e{u, sim(q, u)};
        if (best.size() < ef || ranks_before(e, best.top())) {
          candidates.push(e);
          best.push(e);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<RankedEntry> out;
    out.reserve(best.size());
    while (!best.empty()) {
      out.push_back(best.top());
      best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  void insert(std::uint32_t v) {
    const std::uint32_t top = level(v);
    if (entry_ == kNoNode) {
      entry_ = v;
      return;
    }
    const auto q = decoded(v);
    const std::uint32_t current_max = max_level();
    std::vector<RankedEntry> eps{{entry_, sim(q, entry_)}};
    for (std::uint32_t lvl = current_max; lvl > top; --lvl) {
      eps = search_layer(q, eps, 1, lvl);
      eps.resize(1);
    }
    for (std::uint32_t lvl = std::min(top, current_max) + 1; lvl-- > 0;) {
      eps = search_layer(q, eps, params_.ef_construction, lvl);
      const std::size_t take = std::min<std::size_t>(params_.M, eps.size());
      for (std::size_t i = 0; i < take; ++i) connect(v, eps[i].id, lvl);
    }
    if (top > current_max) entry_ = v;
  }

  void connect(std::uint32_t v, std::uint32_t u, std::uint32_t lvl) {
    links_[v][lvl].push_back(u);
    links_[u][lvl].push_back(v);
    if (links_[u][lvl].size() > degree_cap(lvl)) shrink(u, lvl);
    if (links_[v][lvl].size() > degree_cap(lvl)) shrink(v, lvl);
  }

  /// Drops neighbors of u beyond the cap, and u from their lists. The weakest
  /// links go first, but a neighbor whose only link is u keeps it unless
  /// nothing else can be dropped.
  void shrink(std::uint32_t u, std::uint32_t lvl) {
    auto& list = links_[u][lvl];
    const auto base = decoded(u);
    std::vector<RankedEntry> scored;
    scored.reserve(list.size());
    for (auto w : list) scored.push_back({w, sim(base, w)});
    std::sort(scored.begin(), scored.end(), ranks_before);
    const std::size_t excess = scored.size() - degree_cap(lvl);
    std::vector<std::uint8_t> drop(scored.size(), 0);
    std::size_t dropped = 0;
    for (int pass = 0; pass < 2 && dropped < excess; ++pass) {
      for (std::size_t i = scored.size(); i-- > 0 && dropped < excess;) {
        if (drop[i] || (pass == 0 && links_[scored[i].id][lvl].size() <= 1)) continue;
        drop[i] = 1;
        ++dropped;
      }
    }
    list.clear();
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (!drop[i]) {
        list.push_back(scored[i].id);
      } else {
        auto& back = links_[scored[i].id][lvl];
        back.erase(std::remove(back.begin(), back.end(), u), back.end());
      }
    }
  }

  HnswParams params_;
  std::uint64_t seed_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::uint32_t dims_ = 0;
  std::uint32_t n_ = 0;
  std::uint32_t entry_ = kNoNode;
  ScalarQuantizer quantizer_;
  std::vector<std::uint8_t> codes_;
  std::vector<float> decoded_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // [node][level] -> neighbors
};

inline HnswIndex build_hnsw(std::span<const EmbeddingVector> embeddings, HnswParams params = {},
                            std::uint64_t seed = 0) {
  return HnswIndex::build(embeddings, params, seed);
}

inline RankedList search_hnsw(const HnswIndex& index, std::span<const float> q, std::size_t k,
                              std::optional<std::size_t> ef_search = {}) {
  return index.search(q, k, ef_search);
}

// ---------------------------------------------------------------------------
// Snapshot, little-endian:
//   "DIFARIDX" u32 version, u64 model fingerprint, u32 d, u32 n, u32 M,
//   u32 ef_construction, u64 seed, f32 min[d], f32 max[d], u8 codes[n*d],
//   u32 entry point, u32 level count, then per node: varint level and for each
//   of its levels a varint neighbor count followed by u32 neighbor ids.

inline constexpr std::string_view kIndexMagic = "DIFARIDX";
inline constexpr std::uint32_t kIndexVersion = 1;

inline std::string serialize_index(const HnswIndex& idx) {
  ByteWriter w;
  w.bytes(kIndexMagic);
  w.u32(kIndexVersion);
  w.u64(idx.fingerprint_);
  w.u32(idx.dims_);
  w.u32(idx.n_);
  w.u32(idx.params_.M);
  w.u32(idx.params_.ef_construction);
  w.u64(idx.seed_);
  for (float v : idx.quantizer_.mins) w.f32(v);
  for (float v : idx.quantizer_.maxs) w.f32(v);
  w.bytes(std::string_view(reinterpret_cast<const char*>(idx.codes_.data()), idx.codes_.size()));
  w.u32(idx.entry_);
  w.u32(idx.n_ == 0 ? 0 : idx.max_level() + 1);
  for (const auto& node : idx.links_) {
    w.varint(node.size() - 1);
    for (const auto& list : node) {
      w.varint(list.size());
      for (auto u : list) w.u32(u);
    }
  }
  return w.take();
}

inline HnswIndex deserialize_index(std::string_view bytes) {
  ByteReader r(bytes, "index snapshot");
  r.expect_magic(kIndexMagic);
  if (const auto v = r.u32(); v != kIndexVersion) {
    throw DataError("index snapshot: unsupported version " + std::to_string(v));
  }
  HnswIndex idx;
  idx.fingerprint_ = r.u64();
  idx.dims_ = r.u32();
  idx.n_ = r.u32();
  idx.params_.M = r.u32();
  idx.params_.ef_construction = r.u32();
  idx.seed_ = r.u64();
  idx.quantizer_.mins.resize(idx.dims_);
  idx.quantizer_.maxs.resize(idx.dims_);
  for (auto& v : idx.quantizer_.mins) v = r.f32();
  for (auto& v : idx.quantizer_.maxs) v = r.f32();
  const auto codes = r.take(std::size_t{idx.n_} * idx.dims_);
  idx.codes_.assign(codes.begin(), codes.end());
  idx.decode_all();
  idx.entry_ = r.u32();
  const auto level_count = r.u32();
  idx.links_.resize(idx.n_);
  for (auto& node : idx.links_) {
    const auto lvl = r.varint();
    if (lvl >= level_count) throw DataError("index snapshot: node level exceeds level count");
    node.resize(lvl + 1);
    for (auto& list : node) {
      const auto cnt = r.varint();
      if (cnt > bytes.size()) throw DataError("index snapshot: corrupt neighbor count");
      list.resize(cnt);
      for (auto& u : list) {
        u = r.u32();
        if (u >= idx.n_) throw DataError("index snapshot: neighbor id out of range");
      }
    }
  }
  r.expect_end();
  if (idx.n_ > 0 && idx.entry_ >= idx.n_) throw DataError("index snapshot: bad entry point");
  return idx;
}

inline void save_index(const HnswIndex& idx, const std::string& path) {
  write_file(path, serialize_index(idx));
}

inline HnswIndex load_index(const std::string& path) { return deserialize_index(read_file(path)); }

}  // namespace difar
