// Command-line front end for the fact-retrieval pipeline.
//
// Exit codes: 0 success, 2 usage error, 3 bad input data, 4 consistency
// error (e.g. an index built from a different encoder snapshot).

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "difar/pipeline.hpp"

namespace {

using namespace difar;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::size_t> k;
  std::optional<std::string> backend;
  std::optional<std::uint32_t> ef_search;
  std::optional<std::size_t> top_k_rerank;
};

struct Paths {
  std::string kg, queries, model_in, model_out, index_in, index_out, reranker_in, reranker_out, results_in,
      results_out, negatives_out, report_out, out_dir;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "key = value config file");
  sub->add_option("--set", o.sets, "override one config key (key=value); repeatable");
  sub->add_option("--seed", o.seed, "root seed");
  sub->add_option("--threads", o.threads, "worker threads for query-parallel stages");
}

void add_retrieval(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--k", o.k, "number of facts to retrieve per query");
  sub->add_option("--backend", o.backend, "exact or hnsw")->check(CLI::IsMember({"exact", "hnsw"}));
  sub->add_option("--ef-search", o.ef_search, "HNSW search width");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) apply_config_file(cfg, o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got \"" + kv + "\"");
    set_config_value(cfg, trim(std::string_view(kv).substr(0, eq)), std::string_view(kv).substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.k) cfg.k = *o.k;
  if (o.backend) cfg.backend = parse_backend(*o.backend);
  if (o.ef_search) cfg.hnsw.ef_search = *o.ef_search;
  if (o.top_k_rerank) cfg.top_k_rerank = *o.top_k_rerank;
  return cfg;
}

void print_config(const RunConfig& cfg) {
  const auto text = format_config(cfg);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::cerr << "# " << text.substr(pos, nl - pos) << '\n';
    pos = nl + 1;
  }
}

void log_to_stderr(std::string_view line) { std::cerr << line << '\n'; }

std::optional<HnswIndex> load_hnsw_if_needed(const RunConfig& cfg, const std::string& path) {
  if (cfg.backend != Backend::hnsw) return std::nullopt;
  if (path.empty()) throw UsageError("--index-in is required with --backend hnsw");
  auto idx = load_index(path);
  idx.set_ef_search(cfg.hnsw.ef_search);
  return idx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct fact retrieval over a knowledge graph, with optional reranking"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CommonOptions o;
  Paths p;
  auto req = [](CLI::App* sub, const char* flag, std::string& dst, const char* help) {
    sub->add_option(flag, dst, help)->required();
  };

  auto* synth = app.add_subcommand("synth-gen", "write a synthetic knowledge graph and query splits");
  add_common(synth, o);
  req(synth, "--out-dir", p.out_dir, "output directory (kg.tsv, train/valid/test.jsonl)");

  auto* train = app.add_subcommand("train-retriever", "train the bi-encoder");
  add_common(train, o);
  req(train, "--kg", p.kg, "triple file");
  req(train, "--queries", p.queries, "training queries (JSONL)");
  req(train, "--model-out", p.model_out, "encoder snapshot to write");

  auto* build = app.add_subcommand("build-index", "encode all triplets and build the HNSW index");
  add_common(build, o);
  req(build, "--kg", p.kg, "triple file");
  req(build, "--model-in", p.model_in, "encoder snapshot");
  req(build, "--index-out", p.index_out, "index snapshot to write");

  auto* retrieve = app.add_subcommand("retrieve", "retrieve facts for each query");
  add_common(retrieve, o);
  add_retrieval(retrieve, o);
  req(retrieve, "--kg", p.kg, "triple file");
  req(retrieve, "--queries", p.queries, "queries (JSONL)");
  req(retrieve, "--model-in", p.model_in, "encoder snapshot");
  retrieve->add_option("--index-in", p.index_in, "index snapshot (hnsw backend)");
  req(retrieve, "--results-out", p.results_out, "rankings to write (JSONL)");

  auto* mine = app.add_subcommand("mine-negatives", "mine hard negatives with the retriever");
  add_common(mine, o);
  req(mine, "--kg", p.kg, "triple file");
  req(mine, "--queries", p.queries, "queries (JSONL)");
  req(mine, "--model-in", p.model_in, "encoder snapshot");
  req(mine, "--negatives-out", p.negatives_out, "negatives to write (JSONL)");

  auto* train_rr = app.add_subcommand("train-reranker", "train the reranker on mined hard negatives");
  add_common(train_rr, o);
  req(train_rr, "--kg", p.kg, "triple file");
  req(train_rr, "--queries", p.queries, "training queries (JSONL)");
  req(train_rr, "--model-in", p.model_in, "encoder snapshot used for mining");
  req(train_rr, "--reranker-out", p.reranker_out, "reranker snapshot to write");

  auto* rerank = app.add_subcommand("rerank", "rerank the head of each ranking");
  add_common(rerank, o);
  rerank->add_option("--top-k-rerank", o.top_k_rerank, "number of leading entries to rescore");
  req(rerank, "--kg", p.kg, "triple file");
  req(rerank, "--queries", p.queries, "queries (JSONL)");
  req(rerank, "--results-in", p.results_in, "rankings to rerank (JSONL)");
  req(rerank, "--reranker-in", p.reranker_in, "reranker snapshot");
  req(rerank, "--results-out", p.results_out, "reranked rankings to write (JSONL)");

  auto* eval = app.add_subcommand("eval", "score rankings against gold facts");
  add_common(eval, o);
  req(eval, "--kg", p.kg, "triple file");
  req(eval, "--queries", p.queries, "queries with gold ids (JSONL)");
  req(eval, "--results-in", p.results_in, "rankings (JSONL)");
  eval->add_option("--report-out", p.report_out, "report to write (JSON); stdout when omitted");

  auto* all = app.add_subcommand("run-all", "run every stage on a fresh synthetic benchmark");
  add_common(all, o);
  add_retrieval(all, o);
  all->add_option("--top-k-rerank", o.top_k_rerank, "number of leading entries to rescore");
  req(all, "--out-dir", p.out_dir, "working directory for every artifact");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string stage = sub->get_name();
  try {
    const RunConfig cfg = resolve(o);
    print_config(cfg);

    if (stage == "synth-gen") {
      synth_write(synth_generate(synth_config(cfg)), p.out_dir);
    } else if (stage == "train-retriever") {
      const auto store = load_triples(p.kg);
      const auto trained = run_train_retriever(cfg, store, load_queries(p.queries));
      save_encoder(trained.model, p.model_out);
      std::cerr << "[train-retriever] loss " << trained.epoch_losses.front() << " -> "
                << trained.epoch_losses.back() << '\n';
    } else if (stage == "build-index") {
      const auto store = load_triples(p.kg);
      save_index(run_build_index(cfg, load_encoder(p.model_in), store), p.index_out);
    } else if (stage == "retrieve") {
      const auto store = load_triples(p.kg);
      const auto model = load_encoder(p.model_in);
      const auto hnsw = load_hnsw_if_needed(cfg, p.index_in);
      const auto queries = load_queries(p.queries);
      write_file(p.results_out, format_results(run_retrieve(cfg, model, store, hnsw, queries, log_to_stderr)));
    } else if (stage == "mine-negatives") {
      const auto store = load_triples(p.kg);
      const auto queries = load_queries(p.queries);
      write_file(p.negatives_out, format_negatives(queries, run_mine_negatives(cfg, load_encoder(p.model_in), store,
                                                                               queries)));
    } else if (stage == "train-reranker") {
      const auto store = load_triples(p.kg);
      const auto trained = run_train_reranker(cfg, load_encoder(p.model_in), store, load_queries(p.queries));
      save_reranker(trained.model, p.reranker_out);
      std::cerr << "[train-reranker] loss " << trained.epoch_losses.front() << " -> "
                << trained.epoch_losses.back() << " over " << trained.mining_rounds << " mining rounds\n";
    } else if (stage == "rerank") {
      const auto store = load_triples(p.kg);
      const auto reranked = run_rerank(cfg, load_reranker(p.reranker_in), store, load_queries(p.queries),
                                       load_results(p.results_in), log_to_stderr);
      write_file(p.results_out, format_results(reranked));
    } else if (stage == "eval") {
      const auto store = load_triples(p.kg);
      const auto report = format_report(run_eval(store, load_queries(p.queries), load_results(p.results_in)));
      if (p.report_out.empty()) {
        std::cout << report;
      } else {
        write_file(p.report_out, report);
      }
    } else if (stage == "run-all") {
      const auto r = run_all(cfg, p.out_dir, log_to_stderr);
      std::cout << "retriever only: " << report_json(r.retriever_only).dump() << '\n';
      std::cout << "reranked:       " << report_json(r.reranked).dump() << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "difar " << stage << ": usage error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "difar " << stage << ": data error: " << e.what() << '\n';
    return 3;
  } catch (const ConsistencyError& e) {
    std::cerr << "difar " << stage << ": consistency error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "difar " << stage << ": error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
