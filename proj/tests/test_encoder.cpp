#include <gtest/gtest.h>

#include <cmath>

#include "difar/encoder.hpp"
#include "difar/synth.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace difar;

namespace {

SynthData small_synth(std::uint64_t seed = 3) {
  SynthConfig c;
  c.n_entities = 30;
  c.n_relations = 6;
  c.n_triplets = 120;
  c.seed = seed;
  return synth_generate(c);
}

}  // namespace

TEST(Encode, ZeroParametersGiveZeroVector) {
  auto m = EncoderModel::initialize(64, 8, false, 1);
  std::fill(m.table.begin(), m.table.end(), 0.0f);
  std::fill(m.projection.begin(), m.projection.end(), 0.0f);
  for (const auto& seq : {TokenSequence{}, TokenSequence{"a"}, TokenSequence{"x", "[sep]", "y"}}) {
    for (float v : m.encode(seq)) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Encode, SingleTokenIsItsRow) {
  const auto m = EncoderModel::initialize(1024, 16, false, 2);
  const auto v = m.encode({"falcon"});
  const auto row = m.row(token_bucket("falcon", m.buckets));
  ASSERT_EQ(v.size(), 16u);
  for (std::size_t c = 0; c < v.size(); ++c) EXPECT_EQ(v[c], row[c]);
}

TEST(Encode, MatchesReferenceRecomputation) {
  for (bool normalize : {false, true}) {
    auto m = EncoderModel::initialize(4096, 12, normalize, 7, 0.3);
    Rng rng(8);
    for (auto& v : m.projection) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : m.bias) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    const TokenSequence seq{"a", "[sep]", "r", "[sep]", "b"};
    const auto got = m.encode(seq);
    const auto want = oracle::encode(m, seq);
    for (std::size_t c = 0; c < got.size(); ++c) EXPECT_NEAR(got[c], want[c], 1e-6);
  }
}

TEST(Encode, EmptySequenceIsBiasOnly) {
  auto m = EncoderModel::initialize(64, 4, false, 3);
  m.bias = {1.0f, -2.0f, 0.5f, 0.0f};
  EXPECT_EQ(m.encode({}), m.bias);
}

TEST(Encode, NormalizedOutputsHaveUnitNorm) {
  const auto m = EncoderModel::initialize(512, 32, true, 4);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto v = m.encode(gradcheck::random_tokens(rng, 1, 12, 300));
    double n = 0.0;
    for (float x : v) n += double(x) * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
  auto zero = EncoderModel::initialize(16, 4, true, 5);
  std::fill(zero.table.begin(), zero.table.end(), 0.0f);
  for (float x : zero.encode({"a"})) EXPECT_EQ(x, 0.0f);
}

TEST(Score, Examples) {
  EXPECT_EQ(score(EmbeddingVector{1, 0}, EmbeddingVector{0, 1}), 0.0);
  EXPECT_EQ(score(EmbeddingVector{1, 2}, EmbeddingVector{3, 4}), 11.0);
  EXPECT_THROW(score(EmbeddingVector{1, 2}, EmbeddingVector{1, 2, 3}), UsageError);
}

TEST(Score, UnitVectorsStayInRange) {
  const auto m = EncoderModel::initialize(512, 16, true, 6);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double s = score(m.encode(gradcheck::random_tokens(rng, 1, 6, 100)),
                           m.encode(gradcheck::random_tokens(rng, 1, 6, 100)));
    EXPECT_LE(s, 1.0 + 1e-6);
    EXPECT_GE(s, -1.0 - 1e-6);
  }
}

TEST(Score, LinearInFirstArgument) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    EmbeddingVector q(8), t(8), aq(8);
    const double alpha = rng.uniform(-3, 3);
    for (int c = 0; c < 8; ++c) {
      q[c] = static_cast<float>(rng.uniform(-1, 1));
      t[c] = static_cast<float>(rng.uniform(-1, 1));
    }
    // Scale in double to compare against the unrounded product.
    double want = 0.0;
    for (int c = 0; c < 8; ++c) want += alpha * q[c] * t[c];
    EXPECT_NEAR(alpha * score(q, t), want, 1e-9);
  }
}

TEST(ContrastiveLoss, SinglePairIsZero) {
  const auto in = gradcheck::encoder_instance(1);
  TrainingBatch b{in.batch.front()};
  const std::span<const TokenSequence> toks(in.triplets);
  EXPECT_EQ(contrastive_loss<double>(in.model, b, toks), 0.0);
  const auto lg = loss_gradients<double>(in.model, b, toks);
  for (const auto& [row, g] : lg.grads.table_rows) {
    for (double v : g) EXPECT_EQ(v, 0.0);
  }
  for (double v : lg.grads.projection) EXPECT_EQ(v, 0.0);
  for (double v : lg.grads.bias) EXPECT_EQ(v, 0.0);
}

TEST(ContrastiveLoss, EqualScoresGiveLn2) {
  auto m = BasicEncoderModel<double>::initialize(64, 4, false, 1);
  std::fill(m.table.begin(), m.table.end(), 0.0);
  m.bias = {0.5, 0.5, 0.0, 0.0};
  const std::vector<TokenSequence> toks{{"a"}, {"b"}};
  const TrainingBatch b{{{"x"}, 0}, {{"y"}, 1}};
  EXPECT_NEAR(contrastive_loss<double>(m, b, std::span<const TokenSequence>(toks)), std::log(2.0), 1e-12);
}

TEST(ContrastiveLoss, MatchesBruteForceSoftmax) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto in = gradcheck::encoder_instance(seed);
    const double got = contrastive_loss<double>(in.model, in.batch, std::span<const TokenSequence>(in.triplets));
    EXPECT_NEAR(got, oracle::contrastive_loss(in.model, in.batch, in.triplets), 1e-6) << "seed " << seed;
  }
}

TEST(ContrastiveLoss, PermutationInvariant) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto in = gradcheck::encoder_instance(seed);
    const std::span<const TokenSequence> toks(in.triplets);
    const double before = contrastive_loss<double>(in.model, in.batch, toks);
    std::reverse(in.batch.begin(), in.batch.end());
    EXPECT_NEAR(contrastive_loss<double>(in.model, in.batch, toks), before, 1e-12);
  }
}

TEST(LossGradients, MatchFiniteDifferences) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto r = gradcheck::check_encoder(gradcheck::encoder_instance(seed));
    EXPECT_LE(r.worst, 1e-4) << "seed " << seed << " at " << r.worst_where;
  }
}

TEST(LossGradients, UntouchedRowsAreAbsent) {
  const auto in = gradcheck::encoder_instance(4);
  const auto lg = loss_gradients<double>(in.model, in.batch, std::span<const TokenSequence>(in.triplets));
  std::set<std::uint32_t> touched;
  for (const auto& p : in.batch) {
    for (const auto& tok : p.query) touched.insert(token_bucket(tok, in.model.buckets));
    for (const auto& tok : in.triplets[p.positive]) touched.insert(token_bucket(tok, in.model.buckets));
  }
  for (const auto& [row, g] : lg.grads.table_rows) EXPECT_TRUE(touched.contains(row));
}

TEST(TrainRetriever, ZeroLearningRateLeavesModelUnchanged) {
  const auto data = small_synth();
  const auto init = EncoderModel::initialize(1024, 16, true, 9);
  const auto r = train_retriever(init, data.train, data.store, {3, 16, 0.0, 1});
  EXPECT_EQ(r.model, init);
  EXPECT_EQ(serialize_encoder(r.model), serialize_encoder(init));
}

TEST(TrainRetriever, LossDecreases) {
  const auto data = small_synth();
  const auto r = train_retriever(EncoderModel::initialize(1024, 32, true, 9), data.train, data.store, {30, 16, 0.05, 1});
  ASSERT_EQ(r.epoch_losses.size(), 30u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  EXPECT_TRUE(r.model.all_finite());
}

TEST(TrainRetriever, Deterministic) {
  const auto data = small_synth();
  const auto init = EncoderModel::initialize(4096, 16, true, 9);
  const auto a = train_retriever(init, data.train, data.store, {4, 16, 0.05, 7});
  const auto b = train_retriever(init, data.train, data.store, {4, 16, 0.05, 7});
  EXPECT_EQ(serialize_encoder(a.model), serialize_encoder(b.model));
  const auto c = train_retriever(init, data.train, data.store, {4, 16, 0.05, 8});
  EXPECT_NE(serialize_encoder(a.model), serialize_encoder(c.model));
}

TEST(TrainRetriever, RejectsBadInput) {
  const auto data = small_synth();
  const auto init = EncoderModel::initialize(64, 4, true, 9);
  EXPECT_THROW(train_retriever(init, {}, data.store, {}), UsageError);
  EXPECT_THROW(train_retriever(init, data.train, data.store, {1, 16, -0.1, 1}), UsageError);
  auto bad = data.train;
  bad.front().gold = {static_cast<TripletId>(data.store.size())};
  EXPECT_THROW(train_retriever(init, bad, data.store, {}), DataError);
}

TEST(EncoderSnapshot, RoundTripIsExact) {
  auto m = EncoderModel::initialize(256, 8, true, 10);
  m.bias[3] = -0.25f;
  const auto bytes = serialize_encoder(m);
  EXPECT_EQ(bytes.substr(0, 8), "DIFARENC");
  EXPECT_EQ(bytes.size(), 8 + 4 + 4 + 4 + 1 + 4 * (256 * 8 + 8 * 8 + 8));
  const auto back = deserialize_encoder(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(fingerprint(back), fingerprint(m));
}

TEST(EncoderSnapshot, RejectsCorruptInput) {
  const auto bytes = serialize_encoder(EncoderModel::initialize(16, 4, false, 1));
  EXPECT_THROW(deserialize_encoder(bytes.substr(0, bytes.size() - 1)), DataError);
  EXPECT_THROW(deserialize_encoder("DIFARIDX" + bytes.substr(8)), DataError);
  EXPECT_THROW(deserialize_encoder(bytes + "x"), DataError);
}
