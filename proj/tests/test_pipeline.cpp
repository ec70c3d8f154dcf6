#include <gtest/gtest.h>

#include <filesystem>

#include "difar/pipeline.hpp"

using namespace difar;

TEST(Config, DefaultsRoundTripThroughText) {
  RunConfig a;
  a.seed = 42;
  a.backend = Backend::exact;
  a.reranker_train.subset_fraction = 0.25;
  a.normalize = false;
  RunConfig b;
  apply_config_text(b, format_config(a));
  EXPECT_EQ(format_config(b), format_config(a));
}

TEST(Config, CommentsBlankLinesAndWhitespace) {
  RunConfig c;
  apply_config_text(c, "# comment\n\n  seed =  7 \nk=5\nbackend = exact\n  # indented comment\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.k, 5u);
  EXPECT_EQ(c.backend, Backend::exact);
}

TEST(Config, UnknownKeyIsUsageErrorWithLocation) {
  RunConfig c;
  try {
    apply_config_text(c, "seed = 1\nn_entitis = 5\n", "my.conf");
    FAIL() << "expected a usage error";
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("my.conf:2"), std::string::npos);
    EXPECT_NE(msg.find("n_entitis"), std::string::npos);
  }
}

TEST(Config, BadValues) {
  RunConfig c;
  EXPECT_THROW(set_config_value(c, "seed", "abc"), UsageError);
  EXPECT_THROW(set_config_value(c, "k", "-3"), UsageError);
  EXPECT_THROW(set_config_value(c, "normalize", "maybe"), UsageError);
  EXPECT_THROW(set_config_value(c, "backend", "faiss"), UsageError);
  EXPECT_THROW(apply_config_text(c, "seed 5\n"), UsageError);
  EXPECT_THROW(apply_config_file(c, "/nonexistent.conf"), UsageError);
}

TEST(Config, EveryKeyIsPrinted) {
  const auto text = format_config(RunConfig{});
  for (const auto* key : {"seed", "n_triplets", "entity_types", "buckets", "epochs", "ef_search", "backend",
                          "reranker_dim", "subset_fraction", "top_k_rerank"}) {
    EXPECT_NE(text.find(std::string(key) + " = "), std::string::npos) << key;
  }
}

TEST(Seeds, StagesDrawIndependentStreams) {
  RunConfig c;
  c.seed = 1;
  EXPECT_NE(stage_seed(c, "synth-gen"), stage_seed(c, "train-retriever"));
  EXPECT_EQ(stage_seed(c, "synth-gen"), sub_seed(1, "synth-gen"));
  RunConfig d;
  d.seed = 2;
  EXPECT_NE(stage_seed(c, "synth-gen"), stage_seed(d, "synth-gen"));
}

TEST(Pipeline, SmallRunAllProducesBothReports) {
  RunConfig c;
  c.seed = 3;
  c.synth.n_entities = 20;
  c.synth.n_relations = 5;
  c.synth.n_triplets = 80;
  c.buckets = 2048;
  c.dim = 16;
  c.retriever_train.epochs = 3;
  c.reranker_buckets = 2048;
  c.reranker_dim = 8;
  c.reranker_train.epochs = 2;
  c.reranker_train.refresh_interval = 1;
  const auto dir = std::filesystem::temp_directory_path() / "difar_pipeline_test";
  std::filesystem::remove_all(dir);
  const auto r = run_all(c, dir);
  const RunAllPaths p{dir};
  for (const auto& f : {p.config(), p.encoder(), p.index(), p.retrieved(), p.reranker(), p.reranked(),
                        p.report_difar(), p.report_difar2()}) {
    EXPECT_TRUE(std::filesystem::exists(f)) << f;
  }
  EXPECT_EQ(r.retriever_only.n(), 12u);
  EXPECT_EQ(r.reranked.n(), 12u);
  const auto reloaded = nlohmann::json::parse(read_file(p.report_difar().string()));
  EXPECT_DOUBLE_EQ(reloaded.at("mrr").get<double>(), r.retriever_only.mrr());
  EXPECT_EQ(read_file(p.config().string()), format_config(c));
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, ExactBackendNeedsNoIndex) {
  RunConfig c;
  c.backend = Backend::exact;
  c.k = 5;
  KGStore s;
  s.add("a", "r", "b");
  s.add("c", "r", "d");
  const auto m = EncoderModel::initialize(256, 4, true, 1);
  const std::vector<Query> qs{{"x", "a r", {0}, 1, {}}};
  const auto out = run_retrieve(c, m, s, std::nullopt, qs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].ranking.size(), 2u);
  c.backend = Backend::hnsw;
  EXPECT_THROW(run_retrieve(c, m, s, std::nullopt, qs), UsageError);
  EXPECT_THROW(run_build_index(c, m, KGStore{}), DataError);
}

TEST(Pipeline, NegativesFileHasProvenance) {
  MinedNegatives m;
  m.per_query = {{3, 1}, {}};
  m.epoch = 10;
  m.top_k = 100;
  m.subset_fraction = 0.1;
  const std::vector<Query> qs{{"a", "", {0}, 1, {}}, {"b", "", {2}, 1, {}}};
  EXPECT_EQ(format_negatives(qs, m),
            "{\"id\":\"a\",\"negatives\":[3,1],\"epoch\":10,\"top_k\":100,\"subset_fraction\":0.1}\n"
            "{\"id\":\"b\",\"negatives\":[],\"epoch\":10,\"top_k\":100,\"subset_fraction\":0.1}\n");
}
