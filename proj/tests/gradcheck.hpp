#pragma once

// Central finite-difference checks for the two training objectives, on
// random seeded double-precision instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "difar/encoder.hpp"
#include "difar/reranker.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-4;

/// |a - n| / max(|a|, |n|), with magnitudes below `floor` treated as `floor`
/// so that components which are zero up to rounding do not divide by zero.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Result {
  double worst = 0.0;
  std::size_t components = 0;
  std::string worst_where;

  void add(double analytic, double numeric, const std::string& where) {
    const double e = rel_error(analytic, numeric);
    if (components++ == 0 || e > worst) {
      worst = e;
      worst_where = where;
    }
  }
};

inline difar::TokenSequence random_tokens(difar::Rng& rng, std::size_t min_len, std::size_t max_len,
                                          std::size_t vocab) {
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  difar::TokenSequence out;
  for (std::size_t i = 0; i < len; ++i) out.push_back("w" + std::to_string(rng.below(vocab)));
  return out;
}

struct EncoderInstance {
  difar::BasicEncoderModel<double> model;
  difar::TrainingBatch batch;
  std::vector<difar::TokenSequence> triplets;
};

/// Small model with random projection and bias, a handful of triplets and a
/// batch of 1 to 6 pairs. Normalization is on for even seeds.
inline EncoderInstance encoder_instance(std::uint64_t seed) {
  difar::Rng rng(seed);
  EncoderInstance in;
  const std::uint32_t dims = 3 + static_cast<std::uint32_t>(rng.below(5));
  in.model = difar::BasicEncoderModel<double>::initialize(48, dims, seed % 2 == 0, seed * 7 + 1, 0.5);
  for (auto& v : in.model.projection) v = rng.uniform(-1.0, 1.0);
  for (auto& v : in.model.bias) v = rng.uniform(-0.2, 0.2);
  const std::size_t n_trip = 4 + rng.below(5);
  for (std::size_t i = 0; i < n_trip; ++i) {
    auto t = random_tokens(rng, 1, 3, 40);
    t.emplace_back(difar::kSepToken);
    for (auto& w : random_tokens(rng, 1, 2, 40)) t.push_back(w);
    in.triplets.push_back(std::move(t));
  }
  const std::size_t m = 1 + rng.below(6);
  for (std::size_t i = 0; i < m; ++i) {
    in.batch.push_back({random_tokens(rng, 0, 6, 40), static_cast<difar::TripletId>(rng.below(n_trip))});
  }
  return in;
}

inline Result check_encoder(const EncoderInstance& in) {
  using M = difar::BasicEncoderModel<double>;
  const std::span<const difar::TokenSequence> toks(in.triplets);
  const auto lg = difar::loss_gradients<double>(in.model, in.batch, toks);
  auto loss = [&](const M& m) { return difar::contrastive_loss<double>(m, in.batch, toks); };
  auto fd = [&](auto&& poke) {
    M plus = in.model, minus = in.model;
    poke(plus) += kStep;
    poke(minus) -= kStep;
    return (loss(plus) - loss(minus)) / (2 * kStep);
  };
  Result r;
  const auto d = in.model.dims;
  for (std::uint32_t b = 0; b < in.model.buckets; ++b) {
    const auto it = lg.grads.table_rows.find(b);
    for (std::uint32_t c = 0; c < d; ++c) {
      const double a = it == lg.grads.table_rows.end() ? 0.0 : it->second[c];
      r.add(a, fd([&](M& m) -> double& { return m.table[std::size_t{b} * d + c]; }),
            "table[" + std::to_string(b) + "][" + std::to_string(c) + "]");
    }
  }
  for (std::size_t i = 0; i < in.model.projection.size(); ++i) {
    r.add(lg.grads.projection[i], fd([&](M& m) -> double& { return m.projection[i]; }),
          "projection[" + std::to_string(i) + "]");
  }
  for (std::size_t i = 0; i < in.model.bias.size(); ++i) {
    r.add(lg.grads.bias[i], fd([&](M& m) -> double& { return m.bias[i]; }), "bias[" + std::to_string(i) + "]");
  }
  return r;
}

struct RerankerInstance {
  difar::BasicRerankerModel<double> model;
  std::vector<difar::LabeledPair> batch;
};

inline RerankerInstance reranker_instance(std::uint64_t seed) {
  difar::Rng rng(seed);
  RerankerInstance in;
  const std::uint32_t dims = 2 + static_cast<std::uint32_t>(rng.below(5));
  in.model = difar::BasicRerankerModel<double>::initialize(48, dims, seed * 13 + 5, 0.5, 1.0);
  for (auto& w : in.model.weights) w = rng.uniform(-1.0, 1.0);
  in.model.bias = rng.uniform(-0.5, 0.5);
  const std::size_t m = 1 + rng.below(8);
  for (std::size_t i = 0; i < m; ++i) {
    auto x = random_tokens(rng, 0, 5, 12);
    auto t = random_tokens(rng, 1, 2, 12);
    t.emplace_back(difar::kSepToken);
    for (auto& w : random_tokens(rng, 1, 2, 12)) t.push_back(w);
    in.batch.push_back({difar::pair_input(x, t), static_cast<int>(rng.below(2))});
  }
  return in;
}

inline Result check_reranker(const RerankerInstance& in) {
  using M = difar::BasicRerankerModel<double>;
  const std::span<const difar::LabeledPair> batch(in.batch);
  const auto g = difar::bce_gradients<double>(in.model, batch);
  auto fd = [&](auto&& poke) {
    M plus = in.model, minus = in.model;
    poke(plus) += kStep;
    poke(minus) -= kStep;
    return (difar::bce_loss<double>(plus, batch) - difar::bce_loss<double>(minus, batch)) / (2 * kStep);
  };
  Result r;
  const auto d = in.model.dims;
  for (std::uint32_t b = 0; b < in.model.buckets; ++b) {
    const auto it = g.grads.table_rows.find(b);
    for (std::uint32_t c = 0; c < d; ++c) {
      const double a = it == g.grads.table_rows.end() ? 0.0 : it->second[c];
      r.add(a, fd([&](M& m) -> double& { return m.table[std::size_t{b} * d + c]; }),
            "table[" + std::to_string(b) + "][" + std::to_string(c) + "]");
    }
  }
  for (std::size_t i = 0; i < in.model.weights.size(); ++i) {
    r.add(g.grads.weights[i], fd([&](M& m) -> double& { return m.weights[i]; }),
          "weights[" + std::to_string(i) + "]");
  }
  r.add(g.grads.bias, fd([&](M& m) -> double& { return m.bias; }), "bias");
  return r;
}

}  // namespace gradcheck
