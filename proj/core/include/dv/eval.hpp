// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "dv/data.hpp"
#include "dv/tasks.hpp"

namespace dv {

struct EvalOptions {
  int asr_items = -1;  // -1 means the whole test split
  int tts_items = -1;
  int nfe = 32;
  double cfg_weight = 2.0;
  OdeScheme scheme = OdeScheme::Euler;
  uint64_t seed = 0;
  int max_decode_len = 64;
};

struct SplitMetrics {
  double ter = 0.0;  // corpus-level: total edits / total reference length
  double sim = 0.0;  // mean speaker similarity against the cloning reference
  double mse = 0.0;  // mean squared frame error against the held-out target
  int count = 0;
};

struct EvalReport {
  double asr_ter = 0.0;
  int asr_count = 0;
  SplitMetrics seen;
  SplitMetrics unseen;
  SplitMetrics overall;
};

// Recognition: greedy decode each test item, corpus-level token error rate.
// Generation: for each test item, clone from the nearest same-speaker test
// neighbour (reference text+frames), synthesize the item's transcript, then
// score with the corpus oracle. Items without a same-speaker neighbour are
// skipped. Split membership follows the corpus speaker pools.
EvalReport evaluate(const Model<float>& model, const Corpus& corpus, const Oracle& oracle,
                    const EvalOptions& opts);

}  // namespace dv
