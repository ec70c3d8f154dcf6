#pragma once

// The pinned benchmark, trained once per test binary.

#include <string>

#include "difar/pipeline.hpp"

namespace fixtures {

inline difar::RunConfig benchmark_config() {
  difar::RunConfig cfg;
  difar::apply_config_file(cfg, std::string(DIFAR_SOURCE_DIR) + "/configs/benchmark.conf");
  return cfg;
}

struct Trained {
  difar::RunConfig cfg;
  difar::SynthData data;
  difar::EncoderModel model;
};

inline const Trained& trained_benchmark() {
  static const Trained t = [] {
    Trained out;
    out.cfg = benchmark_config();
    out.data = difar::synth_generate(difar::synth_config(out.cfg));
    out.model = difar::run_train_retriever(out.cfg, out.data.store, out.data.train).model;
    return out;
  }();
  return t;
}

inline const difar::RerankerModel& trained_reranker() {
  static const difar::RerankerModel m = [] {
    const auto& t = trained_benchmark();
    return difar::run_train_reranker(t.cfg, t.model, t.data.store, t.data.train).model;
  }();
  return m;
}

}  // namespace fixtures
