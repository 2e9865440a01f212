// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "dv/model.hpp"
#include "dv/tasks.hpp"
#include "dv/train.hpp"

namespace {

dv::ModelConfig small_config() {
  dv::ModelConfig cfg;
  cfg.d_model = 128;
  cfg.n_heads = 4;
  cfg.n_layers = 6;
  cfg.vocab_size = 32;
  cfg.frame_dim = 16;
  cfg.max_positions = 192;
  return cfg;
}

dv::FrameMatrix random_frames(int rows, int cols, uint64_t seed) {
  dv::Rng rng(seed);
  dv::FrameMatrix m(rows, cols);
  for (auto& v : m.v) v = static_cast<float>(rng.normal());
  return m;
}

void bm_backbone_forward(benchmark::State& state) {
  dv::Model<float> model(small_config(), 1);
  const int len = static_cast<int>(state.range(0));
  for (auto _ : state) {
    dv::Tape<float> tape;
    dv::PackedSequence<float> pack;
    pack.embeddings = dv::Tensor<float>::zeros({len, 128});
    pack.roles.assign(len, dv::Role::Frame);
    auto h = model.forward_backbone(tape, pack, dv::AttentionMask::full(len));
    benchmark::DoNotOptimize(h.data());
  }
}
BENCHMARK(bm_backbone_forward)->Arg(32)->Arg(64)->Arg(128);

void bm_asr_step(benchmark::State& state) {
  dv::Model<float> model(small_config(), 1);
  dv::AsrExample ex;
  ex.frames = random_frames(40, 16, 2);
  ex.transcript = {1, 2, 3, 4, 5, 6, 7, 8, 9, 30};
  for (auto _ : state) {
    dv::Tape<float> tape;
    model.zero_grad();
    auto loss = dv::asr_loss(tape, model, ex);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(bm_asr_step);

void bm_tts_step(benchmark::State& state) {
  dv::Model<float> model(small_config(), 1);
  dv::FrameMatrix x1 = random_frames(44, 16, 3);
  std::vector<int> text = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 30};
  dv::Rng rng(7);
  dv::TtsTrainOptions opt;
  for (auto _ : state) {
    dv::Tape<float> tape;
    model.zero_grad();
    auto loss = dv::tts_train_loss(tape, model, x1, text, rng, opt);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(bm_tts_step);

void bm_guided_velocity(benchmark::State& state) {
  dv::Model<float> model(small_config(), 1);
  dv::FrameMatrix xt = random_frames(48, 16, 4);
  dv::FrameMatrix ctx = random_frames(48, 16, 5);
  std::vector<int> text = {1, 2, 3, 4, 5, 30};
  for (auto _ : state) {
    auto v = dv::guided_velocity(model, xt, ctx, text, 0.5, 2.0);
    benchmark::DoNotOptimize(v.v.data());
  }
}
BENCHMARK(bm_guided_velocity);

}  // namespace

BENCHMARK_MAIN();
