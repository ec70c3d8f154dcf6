#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "difar/encoder.hpp"
#include "difar/evaluator.hpp"
#include "difar/index.hpp"
#include "difar/kg_store.hpp"
#include "difar/query.hpp"
#include "difar/verbalizer.hpp"

namespace difar {

enum class Backend { exact, hnsw };

inline Backend parse_backend(std::string_view s) {
  if (s == "exact") return Backend::exact;
  if (s == "hnsw") return Backend::hnsw;
  throw UsageError("unknown backend \"" + std::string(s) + "\" (expected exact or hnsw)");
}

inline std::string_view backend_name(Backend b) { return b == Backend::exact ? "exact" : "hnsw"; }

struct RetrievalConfig {
  std::size_t k = 1000;
  Backend backend = Backend::hnsw;
  std::optional<std::size_t> ef_search;
};

/// Encodes every triplet of the store with `model`.
inline std::vector<EmbeddingVector> encode_triplets(const EncoderModel& model, const KGStore& store) {
  std::vector<EmbeddingVector> out;
  out.reserve(store.size());
  for (const auto& t : store) out.push_back(model.encode(verbalize_triplet(t)));
  return out;
}

/// Triplet embeddings in one or both backends, bound to the encoder snapshot
/// that produced them.
struct TripletIndex {
  std::uint64_t model_fingerprint = 0;
  std::size_t count = 0;
  std::optional<ExactIndex> exact;
  std::optional<HnswIndex> hnsw;
};

struct IndexBuildOptions {
  bool exact = true;
  bool hnsw = true;
  HnswParams hnsw_params;
  std::uint64_t seed = 0;
};

inline TripletIndex build_triplet_index(const EncoderModel& model, const KGStore& store,
                                        const IndexBuildOptions& opts = {}) {
  TripletIndex idx;
  idx.model_fingerprint = fingerprint(model);
  idx.count = store.size();
  if (store.empty()) return idx;
  const auto emb = encode_triplets(model, store);
  if (opts.exact) idx.exact = build_exact(emb);
  if (opts.hnsw) {
    idx.hnsw = build_hnsw(emb, opts.hnsw_params, opts.seed);
    idx.hnsw->set_source_fingerprint(idx.model_fingerprint);
  }
  return idx;
}

/// Wraps a loaded HNSW snapshot; the fingerprint comes from the snapshot.
inline TripletIndex triplet_index_from(HnswIndex hnsw) {
  TripletIndex idx;
  idx.model_fingerprint = hnsw.source_fingerprint();
  idx.count = hnsw.size();
  idx.hnsw = std::move(hnsw);
  return idx;
}

/// Query-time view over (model, index, store). Construction verifies that
/// the index was built from this exact model snapshot and this store.
class Retriever {
 public:
  Retriever(const EncoderModel& model, const TripletIndex& index, const KGStore& store)
      : model_(&model), index_(&index), store_(&store) {
    if (fingerprint(model) != index.model_fingerprint) {
      throw ConsistencyError("stale index: built from a different encoder snapshot");
    }
    if (index.count != store.size()) {
      throw ConsistencyError("stale index: indexes " + std::to_string(index.count) +
                             " triplets but the knowledge graph has " + std::to_string(store.size()));
    }
  }

  const EncoderModel& model() const { return *model_; }
  const KGStore& store() const { return *store_; }
  const TripletIndex& index() const { return *index_; }

  RankedList retrieve(std::string_view query_text, const RetrievalConfig& config) const {
    return retrieve_tokens(tokenize(query_text), config);
  }

  RankedList retrieve_tokens(const TokenSequence& tokens, const RetrievalConfig& config) const {
    if (config.k == 0) throw UsageError("retrieve: k must be >= 1");
    if (store_->empty()) return {};
    const auto q = model_->encode(tokens);
    if (config.backend == Backend::exact) {
      if (!index_->exact) throw ConsistencyError("retrieve: exact backend not built");
      return index_->exact->search(q, config.k);
    }
    if (!index_->hnsw) throw ConsistencyError("retrieve: hnsw backend not built");
    return index_->hnsw->search(q, config.k, config.ef_search);
  }

  /// Retrieves every query; work is split across `threads` workers and the
  /// output keeps input order.
  std::vector<QueryResult> retrieve_all(const std::vector<Query>& queries, const RetrievalConfig& config,
                                        unsigned threads = 0) const {
    std::vector<QueryResult> out(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t i) {
      out[i] = QueryResult{queries[i].id, retrieve(queries[i].text, config)};
    });
    return out;
  }
 private:
  const EncoderModel* model_;
  const TripletIndex* index_;
  const KGStore* store_;
};

inline RankedList retrieve(const EncoderModel& model, const TripletIndex& index, const KGStore& store,
                           std::string_view query_text, const RetrievalConfig& config = {}) {
  return Retriever(model, index, store).retrieve(query_text, config);
}

}  // namespace difar
