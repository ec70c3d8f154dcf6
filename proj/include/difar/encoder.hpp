#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "difar/common.hpp"
#include "difar/kg_store.hpp"
#include "difar/query.hpp"
#include "difar/verbalizer.hpp"

namespace difar {

using EmbeddingVector = std::vector<float>;

/// Anything that maps token sequences into a fixed-width vector space.
template <class E>
concept TextEncoder = requires(const E& e, const TokenSequence& seq) {
  { e.dim() } -> std::convertible_to<std::size_t>;
  { e.encode(seq) } -> std::convertible_to<EmbeddingVector>;
};

inline std::uint32_t token_bucket(std::string_view token, std::uint32_t buckets) {
  return static_cast<std::uint32_t>(fnv1a64(token) % buckets);
}

/// Hashed embedding-bag encoder shared by queries and triplets:
///   y = normalize?(P * mean_i table[hash(tok_i)] + b)
/// The scalar type is a template parameter so gradient checks can run in
/// double while production models stay float.
template <std::floating_point T>
struct BasicEncoderModel {
  std::uint32_t buckets = 0;
  std::uint32_t dims = 0;
  bool normalize = false;
  std::vector<T> table;       // buckets x dims, row-major
  std::vector<T> projection;  // dims x dims, row-major; z_r = sum_c P[r][c] p_c
  std::vector<T> bias;        // dims

  std::size_t dim() const noexcept { return dims; }

  std::span<T> row(std::uint32_t bucket) { return {table.data() + std::size_t{bucket} * dims, dims}; }
  std::span<const T> row(std::uint32_t bucket) const {
    return {table.data() + std::size_t{bucket} * dims, dims};
  }

  /// Embedding rows uniform in [-init_scale, init_scale], identity projection,
  /// zero bias.
  static BasicEncoderModel initialize(std::uint32_t buckets, std::uint32_t dims, bool normalize,
                                      std::uint64_t seed, double init_scale = 0.05) {
    if (buckets == 0 || dims == 0) throw UsageError("encoder: buckets and dim must be positive");
    BasicEncoderModel m;
    m.buckets = buckets;
    m.dims = dims;
    m.normalize = normalize;
    m.table.resize(std::size_t{buckets} * dims);
    Rng rng(seed);
    for (auto& v : m.table) v = static_cast<T>(rng.uniform(-init_scale, init_scale));
    m.projection.assign(std::size_t{dims} * dims, T(0));
    for (std::uint32_t i = 0; i < dims; ++i) m.projection[std::size_t{i} * dims + i] = T(1);
    m.bias.assign(dims, T(0));
    return m;
  }

  /// Forward pass with the intermediates needed for backpropagation.
  struct Trace {
    std::vector<std::uint32_t> rows;
    std::vector<T> pooled;
    std::vector<T> pre;   // before normalization
    T norm = T(0);
    std::vector<T> out;
  };

  Trace forward(const TokenSequence& seq) const {
    Trace tr;
    tr.pooled.assign(dims, T(0));
    tr.rows.reserve(seq.size());
    for (const auto& tok : seq) {
      const auto b = token_bucket(tok, buckets);
      tr.rows.push_back(b);
      const auto r = row(b);
      for (std::uint32_t c = 0; c < dims; ++c) tr.pooled[c] += r[c];
    }
    if (!seq.empty()) {
      const T inv = T(1) / static_cast<T>(seq.size());
      for (auto& v : tr.pooled) v *= inv;
    }
    tr.pre.assign(bias.begin(), bias.end());
    for (std::uint32_t r = 0; r < dims; ++r) {
      const T* prow = projection.data() + std::size_t{r} * dims;
      T acc = T(0);
      for (std::uint32_t c = 0; c < dims; ++c) acc += prow[c] * tr.pooled[c];
      tr.pre[r] += acc;
    }
    tr.out = tr.pre;
    if (normalize) {
      T sq = T(0);
      for (T v : tr.pre) sq += v * v;
      tr.norm = std::sqrt(sq);
      if (tr.norm > T(0)) {
        for (auto& v : tr.out) v /= tr.norm;
      }
    }
    return tr;
  }

  std::vector<T> encode_raw(const TokenSequence& seq) const { return forward(seq).out; }

  EmbeddingVector encode(const TokenSequence& seq) const {
    const auto out = encode_raw(seq);
    return EmbeddingVector(out.begin(), out.end());
  }

  bool all_finite() const {
    auto finite = [](const std::vector<T>& v) {
      return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
    };
    return finite(table) && finite(projection) && finite(bias);
  }

  friend bool operator==(const BasicEncoderModel&, const BasicEncoderModel&) = default;
};

using EncoderModel = BasicEncoderModel<float>;

template <std::floating_point U, std::floating_point T>
BasicEncoderModel<U> model_cast(const BasicEncoderModel<T>& m) {
  BasicEncoderModel<U> out;
  out.buckets = m.buckets;
  out.dims = m.dims;
  out.normalize = m.normalize;
  out.table.assign(m.table.begin(), m.table.end());
  out.projection.assign(m.projection.begin(), m.projection.end());
  out.bias.assign(m.bias.begin(), m.bias.end());
  return out;
}

inline EmbeddingVector encode(const EncoderModel& model, const TokenSequence& seq) {
  return model.encode(seq);
}

/// Dot product. Accumulates in double.
template <class A, class B>
double score(std::span<const A> q, std::span<const B> t) {
  if (q.size() != t.size()) {
    throw UsageError("score: dimension mismatch (" + std::to_string(q.size()) + " vs " +
                     std::to_string(t.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    acc += static_cast<double>(q[i]) * static_cast<double>(t[i]);
  }
  return acc;
}

inline double score(const EmbeddingVector& q, const EmbeddingVector& t) {
  return score(std::span<const float>(q), std::span<const float>(t));
}

// ---------------------------------------------------------------------------
// In-batch contrastive objective

struct TrainingPair {
  TokenSequence query;
  TripletId positive = 0;
};

using TrainingBatch = std::vector<TrainingPair>;

/// Sparse in the embedding table: only rows hit by some token appear.
template <std::floating_point T>
struct EncoderGradients {
  std::map<std::uint32_t, std::vector<T>> table_rows;
  std::vector<T> projection;
  std::vector<T> bias;
};

template <std::floating_point T>
struct LossAndGradients {
  T loss = T(0);
  EncoderGradients<T> grads;
};

namespace detail {

template <std::floating_point T>
T log_sum_exp(std::span<const T> xs) {
  const T mx = *std::max_element(xs.begin(), xs.end());
  T acc = T(0);
  for (T x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

template <std::floating_point T>
void backprop_encoding(const BasicEncoderModel<T>& model,
                       const typename BasicEncoderModel<T>::Trace& tr, std::span<const T> g_out,
                       EncoderGradients<T>& grads) {
  const std::uint32_t d = model.dims;
  std::vector<T> g_pre(g_out.begin(), g_out.end());
  if (model.normalize) {
    if (tr.norm > T(0)) {
      T dot = T(0);
      for (std::uint32_t i = 0; i < d; ++i) dot += tr.out[i] * g_out[i];
      for (std::uint32_t i = 0; i < d; ++i) g_pre[i] = (g_out[i] - tr.out[i] * dot) / tr.norm;
    } else {
      // Zero output is a constant; no gradient flows through it.
      std::fill(g_pre.begin(), g_pre.end(), T(0));
    }
  }
  std::vector<T> g_pooled(d, T(0));
  for (std::uint32_t r = 0; r < d; ++r) {
    grads.bias[r] += g_pre[r];
    if (g_pre[r] == T(0)) continue;
    T* grow = grads.projection.data() + std::size_t{r} * d;
    const T* prow = model.projection.data() + std::size_t{r} * d;
    for (std::uint32_t c = 0; c < d; ++c) {
      grow[c] += g_pre[r] * tr.pooled[c];
      g_pooled[c] += prow[c] * g_pre[r];
    }
  }
  if (tr.rows.empty()) return;
  const T inv = T(1) / static_cast<T>(tr.rows.size());
  for (auto b : tr.rows) {
    auto& g = grads.table_rows[b];
    if (g.empty()) g.assign(d, T(0));
    for (std::uint32_t c = 0; c < d; ++c) g[c] += g_pooled[c] * inv;
  }
}

template <std::floating_point T>
LossAndGradients<T> contrastive_impl(const BasicEncoderModel<T>& model, const TrainingBatch& batch,
                                     std::span<const TokenSequence> triplet_tokens,
                                     bool want_grads) {
  const std::size_t m = batch.size();
  if (m == 0) throw UsageError("contrastive loss: empty batch");
  const std::uint32_t d = model.dims;

  using Trace = typename BasicEncoderModel<T>::Trace;
  std::vector<Trace> q(m), t(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (batch[i].positive >= triplet_tokens.size()) {
      throw DataError("contrastive loss: positive id out of range");
    }
    q[i] = model.forward(batch[i].query);
    t[i] = model.forward(triplet_tokens[batch[i].positive]);
  }

  LossAndGradients<T> result;
  if (want_grads) {
    result.grads.projection.assign(std::size_t{d} * d, T(0));
    result.grads.bias.assign(d, T(0));
  }
  std::vector<std::vector<T>> gq(m, std::vector<T>(d, T(0)));
  std::vector<std::vector<T>> gt(m, std::vector<T>(d, T(0)));
  std::vector<T> logits(m);
  const T inv_m = T(1) / static_cast<T>(m);
  T total = T(0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T s = T(0);
      for (std::uint32_t c = 0; c < d; ++c) s += q[i].out[c] * t[j].out[c];
      logits[j] = s;
    }
    const T lse = log_sum_exp<T>(logits);
    total += lse - logits[i];
    if (!want_grads) continue;
    for (std::size_t j = 0; j < m; ++j) {
      // d loss_i / d s_ij = softmax_ij - [i == j], averaged over the batch.
      const T g = (std::exp(logits[j] - lse) - (i == j ? T(1) : T(0))) * inv_m;
      for (std::uint32_t c = 0; c < d; ++c) {
        gq[i][c] += g * t[j].out[c];
        gt[j][c] += g * q[i].out[c];
      }
    }
  }
  result.loss = total * inv_m;
  if (want_grads) {
    for (std::size_t i = 0; i < m; ++i) {
      backprop_encoding<T>(model, q[i], gq[i], result.grads);
      backprop_encoding<T>(model, t[i], gt[i], result.grads);
    }
  }
  return result;
}

}  // namespace detail

/// Verbalized token sequences for every triplet, indexed by id.
inline std::vector<TokenSequence> verbalize_all(const KGStore& store) {
  std::vector<TokenSequence> out;
  out.reserve(store.size());
  for (const auto& t : store) out.push_back(verbalize_triplet(t));
  return out;
}

/// Mean over the batch of -log softmax_i(f(E(x_i), E(t_j+)))_i with the other
/// pairs' positives as negatives.
template <std::floating_point T>
T contrastive_loss(const BasicEncoderModel<T>& model, const TrainingBatch& batch,
                   std::span<const TokenSequence> triplet_tokens) {
  return detail::contrastive_impl<T>(model, batch, triplet_tokens, false).loss;
}

template <std::floating_point T>
T contrastive_loss(const BasicEncoderModel<T>& model, const TrainingBatch& batch,
                   const KGStore& store) {
  const auto toks = verbalize_all(store);
  return contrastive_loss<T>(model, batch, std::span<const TokenSequence>(toks));
}

template <std::floating_point T>
LossAndGradients<T> loss_gradients(const BasicEncoderModel<T>& model, const TrainingBatch& batch,
                                   std::span<const TokenSequence> triplet_tokens) {
  return detail::contrastive_impl<T>(model, batch, triplet_tokens, true);
}

template <std::floating_point T>
LossAndGradients<T> loss_gradients(const BasicEncoderModel<T>& model, const TrainingBatch& batch,
                                   const KGStore& store) {
  const auto toks = verbalize_all(store);
  return loss_gradients<T>(model, batch, std::span<const TokenSequence>(toks));
}

template <std::floating_point T>
void sgd_step(BasicEncoderModel<T>& model, const EncoderGradients<T>& g, T lr) {
  for (const auto& [b, grow] : g.table_rows) {
    auto r = model.row(b);
    for (std::uint32_t c = 0; c < model.dims; ++c) r[c] -= lr * grow[c];
  }
  for (std::size_t i = 0; i < model.projection.size(); ++i) model.projection[i] -= lr * g.projection[i];
  for (std::size_t i = 0; i < model.bias.size(); ++i) model.bias[i] -= lr * g.bias[i];
}

// ---------------------------------------------------------------------------
// Training

struct RetrieverTrainConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

struct RetrieverTrainResult {
  EncoderModel model;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

/// Plain minibatch SGD on the in-batch contrastive loss. Query order is
/// reshuffled every epoch; queries with several gold facts contribute one
/// uniformly sampled positive per epoch.
inline RetrieverTrainResult train_retriever(EncoderModel model, const std::vector<Query>& data,
                                            const KGStore& store,
                                            const RetrieverTrainConfig& config) {
  if (data.empty()) throw UsageError("train_retriever: no training queries");
  if (!(config.learning_rate >= 0.0)) throw UsageError("train_retriever: learning rate must be >= 0");
  if (config.batch_size == 0) throw UsageError("train_retriever: batch size must be positive");
  if (config.epochs < 0) throw UsageError("train_retriever: negative epoch count");
  check_gold_ids(data, store);
  for (const auto& q : data) {
    if (q.gold.empty()) throw DataError("train_retriever: query " + q.id + " has no gold triplet");
  }

  const auto triplet_tokens = verbalize_all(store);
  std::vector<TokenSequence> query_tokens;
  query_tokens.reserve(data.size());
  for (const auto& q : data) query_tokens.push_back(tokenize(q.text));

  RetrieverTrainResult result{std::move(model), {}};
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  const auto lr = static_cast<float>(config.learning_rate);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      TrainingBatch batch;
      batch.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& q = data[order[k]];
        const auto pick = q.gold.size() == 1 ? 0 : rng.below(q.gold.size());
        batch.push_back({query_tokens[order[k]], q.gold[pick]});
      }
      auto lg = loss_gradients<float>(result.model, batch, triplet_tokens);
      epoch_loss += static_cast<double>(lg.loss) * static_cast<double>(batch.size());
      seen += batch.size();
      if (lr != 0.0f) sgd_step<float>(result.model, lg.grads, lr);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(seen));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Snapshot: "DIFARENC", version, B, d, normalize, table, projection, bias.

inline constexpr std::string_view kEncoderMagic = "DIFARENC";
inline constexpr std::uint32_t kEncoderVersion = 1;

template <std::floating_point T>
std::string serialize_encoder(const BasicEncoderModel<T>& m) {
  ByteWriter w;
  w.bytes(kEncoderMagic);
  w.u32(kEncoderVersion);
  w.u32(m.buckets);
  w.u32(m.dims);
  w.u8(m.normalize ? 1 : 0);
  w.f32_array(std::span<const T>(m.table));
  w.f32_array(std::span<const T>(m.projection));
  w.f32_array(std::span<const T>(m.bias));
  return w.take();
}

inline EncoderModel deserialize_encoder(std::string_view bytes) {
  ByteReader r(bytes, "encoder snapshot");
  r.expect_magic(kEncoderMagic);
  if (const auto v = r.u32(); v != kEncoderVersion) {
    throw DataError("encoder snapshot: unsupported version " + std::to_string(v));
  }
  EncoderModel m;
  m.buckets = r.u32();
  m.dims = r.u32();
  if (m.buckets == 0 || m.dims == 0) throw DataError("encoder snapshot: zero-sized model");
  m.normalize = r.u8() != 0;
  auto read = [&](std::vector<float>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) x = r.f32();
  };
  read(m.table, std::size_t{m.buckets} * m.dims);
  read(m.projection, std::size_t{m.dims} * m.dims);
  read(m.bias, m.dims);
  r.expect_end();
  if (!m.all_finite()) throw DataError("encoder snapshot: non-finite parameter");
  return m;
}

inline void save_encoder(const EncoderModel& m, const std::string& path) {
  write_file(path, serialize_encoder(m));
}

inline EncoderModel load_encoder(const std::string& path) {
  return deserialize_encoder(read_file(path));
}

/// Hash of the snapshot bytes; indexes record it to detect stale embeddings.
inline std::uint64_t fingerprint(const EncoderModel& m) { return fnv1a64(serialize_encoder(m)); }

}  // namespace difar
