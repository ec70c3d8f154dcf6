#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "difar/common.hpp"
#include "difar/encoder.hpp"
#include "difar/evaluator.hpp"
#include "difar/index.hpp"
#include "difar/kg_store.hpp"
#include "difar/query.hpp"
#include "difar/retriever.hpp"
#include "difar/verbalizer.hpp"

namespace difar {

/// Joint (query, triplet) scorer:
///   p = sigmoid(w . [pool(x), pool(t), |x & t|, |x & t| / |x | t|, pool(x) . pool(t)] + b)
/// where pool() is the mean of hashed token embeddings and the set features
/// are over distinct tokens (separators excluded). The overlap features can
/// only be computed from the pair together.
template <std::floating_point T>
struct BasicRerankerModel {
  std::uint32_t buckets = 0;
  std::uint32_t dims = 0;
  std::vector<T> table;    // buckets x dims
  std::vector<T> weights;  // 2 * dims + 3
  T bias = T(0);

  std::size_t feature_count() const noexcept { return 2 * std::size_t{dims} + 3; }

  std::span<T> row(std::uint32_t b) { return {table.data() + std::size_t{b} * dims, dims}; }
  std::span<const T> row(std::uint32_t b) const { return {table.data() + std::size_t{b} * dims, dims}; }

  /// Table uniform in [-init_scale, init_scale]; weights zero except the
  /// pooled-dot weight. Mean pooling shrinks the table's gradient by the two
  /// sequence lengths, so the dot weight starts large enough for token
  /// affinities to move within a few epochs.
  static BasicRerankerModel initialize(std::uint32_t buckets, std::uint32_t dims, std::uint64_t seed,
                                       double init_scale = 0.05, double dot_weight = 300.0) {
    if (buckets == 0 || dims == 0) throw UsageError("reranker: buckets and dim must be positive");
    BasicRerankerModel m;
    m.buckets = buckets;
    m.dims = dims;
    m.table.resize(std::size_t{buckets} * dims);
    Rng rng(seed);
    for (auto& v : m.table) v = static_cast<T>(rng.uniform(-init_scale, init_scale));
    m.weights.assign(m.feature_count(), T(0));
    m.weights.back() = static_cast<T>(dot_weight);
    return m;
  }

  bool all_finite() const {
    return std::all_of(table.begin(), table.end(), [](T x) { return std::isfinite(x); }) &&
           std::all_of(weights.begin(), weights.end(), [](T x) { return std::isfinite(x); }) &&
           std::isfinite(bias);
  }

  friend bool operator==(const BasicRerankerModel&, const BasicRerankerModel&) = default;
};

using RerankerModel = BasicRerankerModel<float>;

template <std::floating_point U, std::floating_point T>
BasicRerankerModel<U> model_cast(const BasicRerankerModel<T>& m) {
  BasicRerankerModel<U> out;
  out.buckets = m.buckets;
  out.dims = m.dims;
  out.table.assign(m.table.begin(), m.table.end());
  out.weights.assign(m.weights.begin(), m.weights.end());
  out.bias = static_cast<U>(m.bias);
  return out;
}

/// Model-independent part of the pair features.
struct PairInput {
  TokenSequence query;
  TokenSequence triplet;
  double overlap_count = 0.0;
  double overlap_ratio = 0.0;
};

/// Splits concat_pair(x, t) at its first separator (tokenize() never emits
/// one, so that is the query/triplet boundary) and computes the set features.
inline PairInput pair_input(const TokenSequence& joint) {
  PairInput in;
  const auto sep = std::find(joint.begin(), joint.end(), kSepToken);
  in.query.assign(joint.begin(), sep);
  if (sep != joint.end()) in.triplet.assign(sep + 1, joint.end());
  std::set<std::string_view> xs, ts;
  for (const auto& tok : in.query) xs.insert(tok);
  for (const auto& tok : in.triplet) {
    if (tok != kSepToken) ts.insert(tok);
  }
  std::size_t common = 0;
  for (const auto& tok : xs) common += ts.contains(tok) ? 1 : 0;
  const std::size_t uni = xs.size() + ts.size() - common;
  in.overlap_count = static_cast<double>(common);
  in.overlap_ratio = uni == 0 ? 0.0 : static_cast<double>(common) / static_cast<double>(uni);
  return in;
}

inline PairInput pair_input(const TokenSequence& x, const TokenSequence& t) {
  return pair_input(concat_pair(x, t));
}

namespace detail {

template <std::floating_point T>
struct PairTrace {
  std::vector<std::uint32_t> xrows, trows;
  std::vector<T> px, pt;
  T dot = T(0);
  T logit = T(0);
};

template <std::floating_point T>
void pool_rows(const BasicRerankerModel<T>& m, const TokenSequence& seq, std::vector<std::uint32_t>& rows,
               std::vector<T>& pooled) {
  pooled.assign(m.dims, T(0));
  rows.clear();
  for (const auto& tok : seq) {
    const auto b = token_bucket(tok, m.buckets);
    rows.push_back(b);
    const auto r = m.row(b);
    for (std::uint32_t c = 0; c < m.dims; ++c) pooled[c] += r[c];
  }
  if (!seq.empty()) {
    const T inv = T(1) / static_cast<T>(seq.size());
    for (auto& v : pooled) v *= inv;
  }
}

template <std::floating_point T>
PairTrace<T> pair_forward(const BasicRerankerModel<T>& m, const PairInput& in) {
  PairTrace<T> tr;
  pool_rows(m, in.query, tr.xrows, tr.px);
  pool_rows(m, in.triplet, tr.trows, tr.pt);
  const std::uint32_t d = m.dims;
  T s = m.bias;
  for (std::uint32_t c = 0; c < d; ++c) {
    tr.dot += tr.px[c] * tr.pt[c];
    s += m.weights[c] * tr.px[c] + m.weights[d + c] * tr.pt[c];
  }
  s += m.weights[2 * d] * static_cast<T>(in.overlap_count);
  s += m.weights[2 * d + 1] * static_cast<T>(in.overlap_ratio);
  s += m.weights[2 * d + 2] * tr.dot;
  tr.logit = s;
  return tr;
}

/// Logistic function kept strictly inside (0, 1).
inline double sigmoid_open(double s) {
  const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
  return std::clamp(p, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

}  // namespace detail

template <std::floating_point T>
double score_pair(const BasicRerankerModel<T>& m, const PairInput& in) {
  return detail::sigmoid_open(static_cast<double>(detail::pair_forward(m, in).logit));
}

template <std::floating_point T>
double score_pair(const BasicRerankerModel<T>& m, const TokenSequence& x, const TokenSequence& t) {
  return score_pair(m, pair_input(x, t));
}

// ---------------------------------------------------------------------------
// Binary cross-entropy

struct LabeledPair {
  PairInput input;
  int label = 0;  // 0 or 1
};

template <std::floating_point T>
struct RerankerGradients {
  std::map<std::uint32_t, std::vector<T>> table_rows;
  std::vector<T> weights;
  T bias = T(0);
};

template <std::floating_point T>
struct BceResult {
  double loss = 0.0;
  RerankerGradients<T> grads;
};

inline constexpr double kBceClamp = 1e-7;

namespace detail {

template <std::floating_point T>
BceResult<T> bce_impl(const BasicRerankerModel<T>& m, std::span<const LabeledPair> batch, bool want_grads) {
  if (batch.empty()) throw UsageError("bce: empty batch");
  const std::uint32_t d = m.dims;
  BceResult<T> out;
  if (want_grads) out.grads.weights.assign(m.feature_count(), T(0));
  const T inv_n = T(1) / static_cast<T>(batch.size());
  for (const auto& ex : batch) {
    if (ex.label != 0 && ex.label != 1) throw UsageError("bce: labels must be 0 or 1");
    const auto tr = pair_forward(m, ex.input);
    const T logit = tr.logit;
    // p in T so the double instantiation is exact for gradient checks.
    const T p = logit >= T(0) ? T(1) / (T(1) + std::exp(-logit)) : std::exp(logit) / (T(1) + std::exp(logit));
    const double pc = std::clamp(static_cast<double>(p), kBceClamp, 1.0 - kBceClamp);
    out.loss += -(ex.label == 1 ? std::log(pc) : std::log(1.0 - pc));
    if (!want_grads) continue;
    const T g = (p - static_cast<T>(ex.label)) * inv_n;  // d loss / d logit
    auto& gw = out.grads.weights;
    for (std::uint32_t c = 0; c < d; ++c) {
      gw[c] += g * tr.px[c];
      gw[d + c] += g * tr.pt[c];
    }
    gw[2 * d] += g * static_cast<T>(ex.input.overlap_count);
    gw[2 * d + 1] += g * static_cast<T>(ex.input.overlap_ratio);
    gw[2 * d + 2] += g * tr.dot;
    out.grads.bias += g;
    const T wdot = m.weights[2 * d + 2];
    auto spread = [&](const std::vector<std::uint32_t>& rows, std::size_t woff, const std::vector<T>& other) {
      if (rows.empty()) return;
      const T inv = T(1) / static_cast<T>(rows.size());
      for (auto b : rows) {
        auto& gr = out.grads.table_rows[b];
        if (gr.empty()) gr.assign(d, T(0));
        for (std::uint32_t c = 0; c < d; ++c) gr[c] += g * (m.weights[woff + c] + wdot * other[c]) * inv;
      }
    };
    spread(tr.xrows, 0, tr.pt);
    spread(tr.trows, d, tr.px);
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

}  // namespace detail

/// Mean of -[y log p + (1 - y) log(1 - p)], p clamped to [1e-7, 1 - 1e-7].
template <std::floating_point T>
double bce_loss(const BasicRerankerModel<T>& m, std::span<const LabeledPair> batch) {
  return detail::bce_impl<T>(m, batch, false).loss;
}

/// Analytic gradients of bce_loss, taken in logit space: d/ds = (p - y) / n.
/// This is exact wherever the clamp is inactive; on a clamp bound the clamped
/// loss is flat, but a saturated wrong prediction still gets pushed back.
template <std::floating_point T>
BceResult<T> bce_gradients(const BasicRerankerModel<T>& m, std::span<const LabeledPair> batch) {
  return detail::bce_impl<T>(m, batch, true);
}

template <std::floating_point T>
void sgd_step(BasicRerankerModel<T>& m, const RerankerGradients<T>& g, T lr) {
  for (const auto& [b, grow] : g.table_rows) {
    auto r = m.row(b);
    for (std::uint32_t c = 0; c < m.dims; ++c) r[c] -= lr * grow[c];
  }
  for (std::size_t i = 0; i < m.weights.size(); ++i) m.weights[i] -= lr * g.weights[i];
  m.bias -= lr * g.bias;
}

// ---------------------------------------------------------------------------
// Hard negatives from the retriever

/// What the reranker needs from a trained retriever: the encoder, the store
/// and exact full-precision triplet embeddings.
struct RetrieverBundle {
  const EncoderModel* model = nullptr;
  const KGStore* store = nullptr;
  ExactIndex embeddings;

  static RetrieverBundle make(const EncoderModel& model, const KGStore& store) {
    RetrieverBundle b;
    b.model = &model;
    b.store = &store;
    if (!store.empty()) b.embeddings = build_exact(encode_triplets(model, store));
    return b;
  }
};

struct MinedNegatives {
  std::vector<std::vector<TripletId>> per_query;  // parallel to the query list
  int epoch = 0;
  std::size_t top_k = 0;
  double subset_fraction = 0.0;
};

/// For each query, retrieves the top-K facts from a seeded uniform sample of
/// ceil(rho * n) triplets plus the query's own gold facts, and keeps the
/// non-gold ones in retrieval order.
inline MinedNegatives mine_negatives(const RetrieverBundle& bundle, const std::vector<Query>& queries,
                                     double subset_fraction, std::size_t top_k, std::uint64_t seed,
                                     int epoch = 0, unsigned threads = 0) {
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) {
    throw UsageError("mine_negatives: subset fraction must lie in (0, 1]");
  }
  if (top_k == 0) throw UsageError("mine_negatives: top-k must be >= 1");
  const std::size_t n = bundle.store->size();
  if (n == 0) throw DataError("mine_negatives: empty candidate pool");
  check_gold_ids(queries, *bundle.store);

  const auto pool_size = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(subset_fraction * static_cast<double>(n) - 1e-9)));
  std::vector<TripletId> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<TripletId>(i);
  Rng rng(seed);
  for (std::size_t i = 0; i < pool_size; ++i) {
    std::swap(all[i], all[i + rng.below(n - i)]);
  }
  std::vector<TripletId> subset(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(pool_size));
  std::sort(subset.begin(), subset.end());

  MinedNegatives out;
  out.epoch = epoch;
  out.top_k = top_k;
  out.subset_fraction = subset_fraction;
  out.per_query.resize(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t qi) {
    const auto& q = queries[qi];
    std::vector<TripletId> pool = subset;
    pool.insert(pool.end(), q.gold.begin(), q.gold.end());
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    const auto qv = bundle.model->encode(tokenize(q.text));
    const auto ranked = bundle.embeddings.search_subset(qv, pool, top_k);
    const std::set<TripletId> gold(q.gold.begin(), q.gold.end());
    for (const auto& e : ranked) {
      if (!gold.contains(e.id)) out.per_query[qi].push_back(e.id);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct RerankerTrainConfig {
  int epochs = 30;
  int refresh_interval = 10;
  std::size_t negatives_per_query = 4;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double subset_fraction = 0.1;
  std::size_t top_k = 100;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct RerankerTrainResult {
  RerankerModel model;
  std::vector<double> epoch_losses;
  int mining_rounds = 0;
};

/// BCE SGD with hard negatives re-mined every `refresh_interval` epochs.
/// Positives are (query, each gold fact); each epoch draws up to
/// negatives_per_query negatives per query from its current mined list.
inline RerankerTrainResult train_reranker(RerankerModel model, const std::vector<Query>& queries,
                                          const KGStore& store, const RetrieverBundle& bundle,
                                          const RerankerTrainConfig& config) {
  if (config.refresh_interval < 1) throw UsageError("train_reranker: refresh interval must be >= 1");
  if (config.batch_size == 0) throw UsageError("train_reranker: batch size must be positive");
  if (!(config.learning_rate >= 0.0)) throw UsageError("train_reranker: learning rate must be >= 0");
  if (queries.empty()) throw UsageError("train_reranker: no training queries");
  if (bundle.store != &store && bundle.store->size() != store.size()) {
    throw ConsistencyError("train_reranker: retriever bundle built over a different knowledge graph");
  }
  check_gold_ids(queries, store);

  const auto triplet_tokens = verbalize_all(store);
  std::vector<TokenSequence> query_tokens;
  query_tokens.reserve(queries.size());
  for (const auto& q : queries) query_tokens.push_back(tokenize(q.text));

  RerankerTrainResult result{std::move(model), {}, 0};
  Rng rng(config.seed);
  MinedNegatives mined;
  const auto lr = static_cast<float>(config.learning_rate);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch % config.refresh_interval == 0) {
      mined = mine_negatives(bundle, queries, config.subset_fraction, config.top_k,
                             sub_seed(config.seed, static_cast<std::uint64_t>(result.mining_rounds)), epoch,
                             config.threads);
      ++result.mining_rounds;
    }
    std::vector<LabeledPair> pairs;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      for (auto g : queries[qi].gold) pairs.push_back({pair_input(query_tokens[qi], triplet_tokens[g]), 1});
      auto negs = mined.per_query[qi];
      const std::size_t take = std::min(config.negatives_per_query, negs.size());
      for (std::size_t i = 0; i < take; ++i) {
        std::swap(negs[i], negs[i + rng.below(negs.size() - i)]);
        pairs.push_back({pair_input(query_tokens[qi], triplet_tokens[negs[i]]), 0});
      }
    }
    rng.shuffle(pairs.begin(), pairs.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
      const std::size_t stop = std::min(pairs.size(), start + config.batch_size);
      const std::span<const LabeledPair> batch(pairs.data() + start, stop - start);
      auto r = bce_gradients<float>(result.model, batch);
      epoch_loss += r.loss * static_cast<double>(batch.size());
      if (lr != 0.0f) sgd_step<float>(result.model, r.grads, lr);
    }
    result.epoch_losses.push_back(pairs.empty() ? 0.0 : epoch_loss / static_cast<double>(pairs.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

/// Re-scores the first min(top_k, |ranked|) entries with the reranker and
/// re-sorts them; the remainder keeps retriever order and scores.
template <std::floating_point T>
RankedList rerank(const BasicRerankerModel<T>& model, const TokenSequence& query_tokens, const RankedList& ranked,
                  const std::vector<TokenSequence>& triplet_tokens, std::size_t top_k) {
  if (top_k == 0) throw UsageError("rerank: top-K must be >= 1");
  RankedList out = ranked;
  const std::size_t block = std::min(top_k, out.size());
  for (std::size_t i = 0; i < block; ++i) {
    if (out[i].id >= triplet_tokens.size()) throw DataError("rerank: triplet id out of range");
    out[i].score = score_pair(model, pair_input(query_tokens, triplet_tokens[out[i].id]));
  }
  std::sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(block), ranks_before);
  return out;
}

template <std::floating_point T>
RankedList rerank(const BasicRerankerModel<T>& model, std::string_view query_text, const RankedList& ranked,
                  const KGStore& store, std::size_t top_k = 100) {
  if (top_k == 0) throw UsageError("rerank: top-K must be >= 1");
  const std::size_t block = std::min(top_k, ranked.size());
  std::vector<TokenSequence> toks(store.size());
  for (std::size_t i = 0; i < block; ++i) toks.at(ranked[i].id) = verbalize_triplet(store.get(ranked[i].id));
  return rerank(model, tokenize(query_text), ranked, toks, top_k);
}

/// Reranks every query's list. `results` and `queries` are matched by id.
inline std::vector<QueryResult> rerank_all(const RerankerModel& model, const std::vector<Query>& queries,
                                           const std::vector<QueryResult>& results, const KGStore& store,
                                           std::size_t top_k, unsigned threads = 0) {
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id.emplace(q.id, &q);
  const auto triplet_tokens = verbalize_all(store);
  std::vector<QueryResult> out(results.size());
  parallel_for(results.size(), threads, [&](std::size_t i) {
    const auto it = by_id.find(results[i].id);
    if (it == by_id.end()) throw DataError("rerank: no query with id " + results[i].id);
    out[i] = QueryResult{results[i].id,
                         rerank(model, tokenize(it->second->text), results[i].ranking, triplet_tokens, top_k)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot: "DIFARRRK", u32 version, u32 B', u32 d', f32 table, f32 weights,
// f32 bias.

inline constexpr std::string_view kRerankerMagic = "DIFARRRK";
inline constexpr std::uint32_t kRerankerVersion = 1;

template <std::floating_point T>
std::string serialize_reranker(const BasicRerankerModel<T>& m) {
  ByteWriter w;
  w.bytes(kRerankerMagic);
  w.u32(kRerankerVersion);
  w.u32(m.buckets);
  w.u32(m.dims);
  w.f32_array(std::span<const T>(m.table));
  w.f32_array(std::span<const T>(m.weights));
  w.f32(static_cast<float>(m.bias));
  return w.take();
}

inline RerankerModel deserialize_reranker(std::string_view bytes) {
  ByteReader r(bytes, "reranker snapshot");
  r.expect_magic(kRerankerMagic);
  if (const auto v = r.u32(); v != kRerankerVersion) {
    throw DataError("reranker snapshot: unsupported version " + std::to_string(v));
  }
  RerankerModel m;
  m.buckets = r.u32();
  m.dims = r.u32();
  if (m.buckets == 0 || m.dims == 0) throw DataError("reranker snapshot: zero-sized model");
  m.table.resize(std::size_t{m.buckets} * m.dims);
  for (auto& x : m.table) x = r.f32();
  m.weights.resize(m.feature_count());
  for (auto& x : m.weights) x = r.f32();
  m.bias = r.f32();
  r.expect_end();
  if (!m.all_finite()) throw DataError("reranker snapshot: non-finite parameter");
  return m;
}

inline void save_reranker(const RerankerModel& m, const std::string& path) {
  write_file(path, serialize_reranker(m));
}

inline RerankerModel load_reranker(const std::string& path) { return deserialize_reranker(read_file(path)); }

}  // namespace difar
