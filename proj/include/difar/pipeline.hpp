#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "difar/common.hpp"
#include "difar/encoder.hpp"
#include "difar/evaluator.hpp"
#include "difar/index.hpp"
#include "difar/kg_store.hpp"
#include "difar/query.hpp"
#include "difar/reranker.hpp"
#include "difar/retriever.hpp"
#include "difar/synth.hpp"

namespace difar {

/// Every tunable of the end-to-end pipeline. Values come from (lowest to
/// highest precedence) these defaults, a `key = value` config file, and
/// command-line overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;

  SynthConfig synth;

  std::uint32_t buckets = 1u << 16;
  std::uint32_t dim = 64;
  bool normalize = true;
  double init_scale = 0.05;
  RetrieverTrainConfig retriever_train;

  HnswParams hnsw;
  std::size_t k = 1000;
  Backend backend = Backend::hnsw;

  std::uint32_t reranker_buckets = 1u << 16;
  std::uint32_t reranker_dim = 32;
  double reranker_init_scale = 0.05;
  double reranker_dot_weight = 300.0;
  RerankerTrainConfig reranker_train;
  std::size_t top_k_rerank = 100;
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw UsageError("config key " + std::string(key) + ": cannot parse \"" + std::string(text) + "\"");
  }
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw UsageError("config key " + std::string(key) + ": expected true or false, got \"" + std::string(text) + "\"");
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct ConfigKey {
  std::string_view name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
ConfigKey number_key(std::string_view name, Access access) {
  return {name, [=](RunConfig& c, std::string_view v) { access(c) = parse_number<T>(name, v); },
          [=](const RunConfig& c) { return format_number<T>(access(c)); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(number_key<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; }));
    k.push_back(number_key<unsigned>("threads", [](auto& c) -> auto& { return c.threads; }));
    k.push_back(number_key<std::uint32_t>("n_entities", [](auto& c) -> auto& { return c.synth.n_entities; }));
    k.push_back(number_key<std::uint32_t>("n_relations", [](auto& c) -> auto& { return c.synth.n_relations; }));
    k.push_back(number_key<std::uint32_t>("n_triplets", [](auto& c) -> auto& { return c.synth.n_triplets; }));
    k.push_back(number_key<std::uint32_t>("queries_per_triplet",
                                          [](auto& c) -> auto& { return c.synth.queries_per_triplet; }));
    k.push_back(number_key<double>("multi_hop_fraction",
                                   [](auto& c) -> auto& { return c.synth.multi_hop_fraction; }));
    k.push_back(number_key<double>("distractor_rate", [](auto& c) -> auto& { return c.synth.distractor_rate; }));
    k.push_back(number_key<std::uint32_t>("entity_types", [](auto& c) -> auto& { return c.synth.entity_types; }));
    k.push_back(number_key<std::uint32_t>("buckets", [](auto& c) -> auto& { return c.buckets; }));
    k.push_back(number_key<std::uint32_t>("dim", [](auto& c) -> auto& { return c.dim; }));
    k.push_back({"normalize", [](RunConfig& c, std::string_view v) { c.normalize = parse_bool("normalize", v); },
                 [](const RunConfig& c) { return std::string(c.normalize ? "true" : "false"); }});
    k.push_back(number_key<double>("init_scale", [](auto& c) -> auto& { return c.init_scale; }));
    k.push_back(number_key<int>("epochs", [](auto& c) -> auto& { return c.retriever_train.epochs; }));
    k.push_back(number_key<std::size_t>("batch_size", [](auto& c) -> auto& { return c.retriever_train.batch_size; }));
    k.push_back(
        number_key<double>("learning_rate", [](auto& c) -> auto& { return c.retriever_train.learning_rate; }));
    k.push_back(number_key<std::uint32_t>("hnsw_m", [](auto& c) -> auto& { return c.hnsw.M; }));
    k.push_back(number_key<std::uint32_t>("ef_construction", [](auto& c) -> auto& { return c.hnsw.ef_construction; }));
    k.push_back(number_key<std::uint32_t>("ef_search", [](auto& c) -> auto& { return c.hnsw.ef_search; }));
    k.push_back(number_key<std::size_t>("k", [](auto& c) -> auto& { return c.k; }));
    k.push_back({"backend", [](RunConfig& c, std::string_view v) { c.backend = parse_backend(v); },
                 [](const RunConfig& c) { return std::string(backend_name(c.backend)); }});
    k.push_back(number_key<std::uint32_t>("reranker_buckets", [](auto& c) -> auto& { return c.reranker_buckets; }));
    k.push_back(number_key<std::uint32_t>("reranker_dim", [](auto& c) -> auto& { return c.reranker_dim; }));
    k.push_back(
        number_key<double>("reranker_init_scale", [](auto& c) -> auto& { return c.reranker_init_scale; }));
    k.push_back(
        number_key<double>("reranker_dot_weight", [](auto& c) -> auto& { return c.reranker_dot_weight; }));
    k.push_back(number_key<int>("reranker_epochs", [](auto& c) -> auto& { return c.reranker_train.epochs; }));
    k.push_back(
        number_key<int>("refresh_interval", [](auto& c) -> auto& { return c.reranker_train.refresh_interval; }));
    k.push_back(number_key<std::size_t>("negatives_per_query",
                                        [](auto& c) -> auto& { return c.reranker_train.negatives_per_query; }));
    k.push_back(number_key<std::size_t>("reranker_batch_size",
                                        [](auto& c) -> auto& { return c.reranker_train.batch_size; }));
    k.push_back(number_key<double>("reranker_learning_rate",
                                   [](auto& c) -> auto& { return c.reranker_train.learning_rate; }));
    k.push_back(
        number_key<double>("subset_fraction", [](auto& c) -> auto& { return c.reranker_train.subset_fraction; }));
    k.push_back(number_key<std::size_t>("mining_top_k", [](auto& c) -> auto& { return c.reranker_train.top_k; }));
    k.push_back(number_key<std::size_t>("top_k_rerank", [](auto& c) -> auto& { return c.top_k_rerank; }));
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Sets one key; unknown keys and unparsable values are usage errors.
inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, trim(value));
      return;
    }
  }
  throw UsageError("unknown config key \"" + std::string(key) + "\"");
}

/// Applies `key = value` lines; blank lines and lines starting with '#' are
/// ignored.
inline void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view source = "<config>") {
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw UsageError("cannot read config file " + path);
  }
  apply_config_text(cfg, text, path);
}

/// All keys in declaration order, one `key = value` per line.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage seeds: every stage draws from sub_seed(root, stage name), so any stage
// can be re-run alone and still match a full run.

inline std::uint64_t stage_seed(const RunConfig& cfg, std::string_view stage) { return sub_seed(cfg.seed, stage); }

inline SynthConfig synth_config(const RunConfig& cfg) {
  auto s = cfg.synth;
  s.seed = stage_seed(cfg, "synth-gen");
  return s;
}

/// Receives human-readable progress such as throughput lines. Nothing sent
/// here ends up in output files.
using StageLog = std::function<void(std::string_view)>;

inline void log_line(const StageLog& log, const std::string& line) {
  if (log) log(line);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string throughput_line(std::string_view stage, std::size_t n, double seconds) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "[" << stage << "] " << n << " queries in " << seconds << " s (";
  os.precision(1);
  os << (seconds > 0 ? static_cast<double>(n) / seconds : 0.0) << " queries/s)";
  return os.str();
}

// ---------------------------------------------------------------------------
// Stages on in-memory data

inline EncoderModel initial_encoder(const RunConfig& cfg) {
  return EncoderModel::initialize(cfg.buckets, cfg.dim, cfg.normalize, stage_seed(cfg, "encoder-init"),
                                  cfg.init_scale);
}

inline RetrieverTrainResult run_train_retriever(const RunConfig& cfg, const KGStore& store,
                                                const std::vector<Query>& train) {
  auto tc = cfg.retriever_train;
  tc.seed = stage_seed(cfg, "train-retriever");
  return train_retriever(initial_encoder(cfg), train, store, tc);
}

inline HnswIndex run_build_index(const RunConfig& cfg, const EncoderModel& model, const KGStore& store) {
  if (store.empty()) throw DataError("build-index: knowledge graph is empty");
  auto idx = build_hnsw(encode_triplets(model, store), cfg.hnsw, stage_seed(cfg, "build-index"));
  idx.set_source_fingerprint(fingerprint(model));
  return idx;
}

/// Retrieves with the configured backend. The exact backend is rebuilt from
/// the model; the HNSW backend must come from a snapshot bound to `model`.
inline std::vector<QueryResult> run_retrieve(const RunConfig& cfg, const EncoderModel& model, const KGStore& store,
                                             const std::optional<HnswIndex>& hnsw, const std::vector<Query>& queries,
                                             const StageLog& log = {}) {
  TripletIndex idx;
  if (cfg.backend == Backend::exact) {
    idx = build_triplet_index(model, store, {true, false, cfg.hnsw, 0});
  } else {
    if (!hnsw) throw UsageError("retrieve: the hnsw backend needs an index snapshot");
    idx = triplet_index_from(*hnsw);
  }
  const Retriever retriever(model, idx, store);
  RetrievalConfig rc{cfg.k, cfg.backend, cfg.hnsw.ef_search};
  Stopwatch sw;
  auto results = retriever.retrieve_all(queries, rc, cfg.threads);
  log_line(log, throughput_line("retrieve", queries.size(), sw.seconds()));
  return results;
}

inline RerankerTrainConfig reranker_train_config(const RunConfig& cfg) {
  auto tc = cfg.reranker_train;
  tc.seed = stage_seed(cfg, "train-reranker");
  tc.threads = cfg.threads;
  return tc;
}

inline MinedNegatives run_mine_negatives(const RunConfig& cfg, const EncoderModel& model, const KGStore& store,
                                         const std::vector<Query>& queries) {
  const auto bundle = RetrieverBundle::make(model, store);
  const auto& tc = cfg.reranker_train;
  return mine_negatives(bundle, queries, tc.subset_fraction, tc.top_k, stage_seed(cfg, "mine-negatives"), 0,
                        cfg.threads);
}

inline RerankerTrainResult run_train_reranker(const RunConfig& cfg, const EncoderModel& model, const KGStore& store,
                                              const std::vector<Query>& train) {
  const auto bundle = RetrieverBundle::make(model, store);
  auto init = RerankerModel::initialize(cfg.reranker_buckets, cfg.reranker_dim, stage_seed(cfg, "reranker-init"),
                                        cfg.reranker_init_scale, cfg.reranker_dot_weight);
  return train_reranker(std::move(init), train, store, bundle, reranker_train_config(cfg));
}

inline std::vector<QueryResult> run_rerank(const RunConfig& cfg, const RerankerModel& model, const KGStore& store,
                                           const std::vector<Query>& queries,
                                           const std::vector<QueryResult>& results, const StageLog& log = {}) {
  Stopwatch sw;
  auto out = rerank_all(model, queries, results, store, cfg.top_k_rerank, cfg.threads);
  log_line(log, throughput_line("rerank", results.size(), sw.seconds()));
  return out;
}

inline EvalReport run_eval(const KGStore& store, const std::vector<Query>& queries,
                           const std::vector<QueryResult>& results) {
  EvalOptions opts;
  opts.store = &store;
  return evaluate(results, queries, opts);
}

// ---------------------------------------------------------------------------
// File formats that only the pipeline uses

/// One JSON object per query: {"id", "negatives", "epoch", "top_k",
/// "subset_fraction"}.
inline std::string format_negatives(const std::vector<Query>& queries, const MinedNegatives& mined) {
  std::string out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = queries[i].id;
    j["negatives"] = mined.per_query.at(i);
    j["epoch"] = mined.epoch;
    j["top_k"] = mined.top_k;
    j["subset_fraction"] = mined.subset_fraction;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string format_report(const EvalReport& r) { return report_json(r).dump(2) + "\n"; }

/// Training trace written next to a model snapshot.
inline std::string format_losses(const std::vector<double>& losses) {
  nlohmann::ordered_json j;
  j["epoch_losses"] = losses;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// run-all

struct RunAllPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.resolved"; }
  std::filesystem::path data() const { return dir / "data"; }
  std::filesystem::path encoder() const { return dir / "encoder.bin"; }
  std::filesystem::path encoder_losses() const { return dir / "encoder_losses.json"; }
  std::filesystem::path index() const { return dir / "index.bin"; }
  std::filesystem::path retrieved() const { return dir / "retrieved_test.jsonl"; }
  std::filesystem::path reranker() const { return dir / "reranker.bin"; }
  std::filesystem::path reranker_losses() const { return dir / "reranker_losses.json"; }
  std::filesystem::path reranked() const { return dir / "reranked_test.jsonl"; }
  std::filesystem::path report_difar() const { return dir / "report_difar.json"; }
  std::filesystem::path report_difar2() const { return dir / "report_difar2.json"; }
};

struct RunAllResult {
  EvalReport retriever_only;
  EvalReport reranked;
};

/// synth-gen -> train-retriever -> build-index -> retrieve -> eval ->
/// train-reranker -> rerank -> eval, every stage through its files.
/// Retrieval and reranking run on the test split.
inline RunAllResult run_all(const RunConfig& cfg, const std::filesystem::path& dir, const StageLog& log = {}) {
  const RunAllPaths p{dir};
  std::filesystem::create_directories(dir);
  write_file(p.config().string(), format_config(cfg));

  const auto sp = synth_write(synth_generate(synth_config(cfg)), p.data());
  log_line(log, "[synth-gen] wrote " + p.data().string());

  const auto store = load_triples(sp.kg);
  const auto train = load_queries(sp.train);
  const auto test = load_queries(sp.test);

  {
    const auto trained = run_train_retriever(cfg, store, train);
    save_encoder(trained.model, p.encoder().string());
    write_file(p.encoder_losses().string(), format_losses(trained.epoch_losses));
    log_line(log, "[train-retriever] wrote " + p.encoder().string());
  }
  const auto model = load_encoder(p.encoder().string());

  save_index(run_build_index(cfg, model, store), p.index().string());
  log_line(log, "[build-index] wrote " + p.index().string());
  std::optional<HnswIndex> hnsw;
  if (cfg.backend == Backend::hnsw) hnsw = load_index(p.index().string());

  write_file(p.retrieved().string(), format_results(run_retrieve(cfg, model, store, hnsw, test, log)));
  const auto retrieved = load_results(p.retrieved().string());

  RunAllResult out;
  out.retriever_only = run_eval(store, test, retrieved);
  write_file(p.report_difar().string(), format_report(out.retriever_only));

  {
    const auto trained = run_train_reranker(cfg, model, store, train);
    save_reranker(trained.model, p.reranker().string());
    write_file(p.reranker_losses().string(), format_losses(trained.epoch_losses));
    log_line(log, "[train-reranker] wrote " + p.reranker().string() + " after " +
                      std::to_string(trained.mining_rounds) + " mining rounds");
  }
  const auto reranker = load_reranker(p.reranker().string());

  write_file(p.reranked().string(), format_results(run_rerank(cfg, reranker, store, test, retrieved, log)));
  out.reranked = run_eval(store, test, load_results(p.reranked().string()));
  write_file(p.report_difar2().string(), format_report(out.reranked));
  log_line(log, "[eval] wrote " + p.report_difar().string() + " and " + p.report_difar2().string());
  return out;
}

}  // namespace difar
