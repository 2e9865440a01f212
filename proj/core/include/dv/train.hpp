// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dv/checkpoint.hpp"
#include "dv/data.hpp"
#include "dv/tasks.hpp"

namespace dv {

enum class TaskMix { Joint, AsrOnly, TtsOnly };

inline const char* task_mix_name(TaskMix m) {
  switch (m) {
    case TaskMix::Joint: return "joint";
    case TaskMix::AsrOnly: return "asr_only";
    case TaskMix::TtsOnly: return "tts_only";
  }
  return "?";
}

struct TrainConfig {
  int64_t total_steps = 20000;
  int batch_items = 8;  // per task
  double lambda_lm = 0.005;
  double lr_peak = 3e-4;
  int64_t warmup_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  uint64_t seed = 0;
  TaskMix task_mix = TaskMix::Joint;
  TtsTrainOptions tts;
  int64_t eval_interval = 1000;
  int eval_asr_items = 32;
  int eval_tts_items = 16;
  int eval_nfe = 16;
  double eval_cfg_weight = 2.0;
  int64_t checkpoint_interval = 2000;
  // stop (checkpointing for a later resume) after this absolute step while
  // keeping the schedule of total_steps; negative means run to completion
  int64_t stop_after = -1;

  void validate() const {
    if (total_steps < 0) throw config_error("TrainConfig: total_steps must be non-negative");
    if (batch_items <= 0) throw config_error("TrainConfig: batch_items must be positive");
    if (lambda_lm < 0) throw config_error("TrainConfig: lambda must be non-negative");
    if (lr_peak <= 0) throw config_error("TrainConfig: lr_peak must be positive");
    if (warmup_steps < 0) throw config_error("TrainConfig: warmup_steps must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw config_error("TrainConfig: betas outside [0, 1)");
    if (grad_clip <= 0) throw config_error("TrainConfig: grad_clip must be positive");
  }
};

// Linear warmup from zero to lr_peak, then cosine decay to lr_peak/100 at
// total_steps. Defined for steps 0..total_steps inclusive.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw domain_error("lr_at: step outside schedule");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double floor = cfg.lr_peak / 100.0;
  const int64_t span = cfg.total_steps - cfg.warmup_steps;
  if (span <= 0) return cfg.lr_peak;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
  return floor + (cfg.lr_peak - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// Weighted objective over one step's batches:
// total = lambda * mean(recognition losses) + mean(infilling losses).
template <class S>
struct JointLossResult {
  Tensor<S> total;
  double asr_mean = 0.0;
  double tts_mean = 0.0;
  int asr_items = 0;
  int tts_items = 0;
};

template <class S>
JointLossResult<S> joint_loss(Tape<S>& tape, const Model<S>& model,
                              const std::vector<AsrExample>& asr_batch,
                              const std::vector<const SynthExample*>& tts_batch, double lambda,
                              Rng& rng, const TtsTrainOptions& opt) {
  if (asr_batch.empty() && tts_batch.empty())
    throw contract_error("joint_loss: both batches empty");
  JointLossResult<S> res;
  Tensor<S> asr_term, tts_term;
  if (!asr_batch.empty()) {
    Tensor<S> acc;
    for (const auto& ex : asr_batch) {
      Tensor<S> l = asr_loss(tape, model, ex);
      acc = acc.defined() ? add(tape, acc, l) : l;
    }
    asr_term = scale(tape, acc, S(1) / S(asr_batch.size()));
    res.asr_mean = static_cast<double>(asr_term.item());
    res.asr_items = static_cast<int>(asr_batch.size());
  }
  if (!tts_batch.empty()) {
    Tensor<S> acc;
    for (const auto* ex : tts_batch) {
      Tensor<S> l = tts_train_loss(tape, model, ex->frames, ex->tokens, rng, opt);
      acc = acc.defined() ? add(tape, acc, l) : l;
    }
    tts_term = scale(tape, acc, S(1) / S(tts_batch.size()));
    res.tts_mean = static_cast<double>(tts_term.item());
    res.tts_items = static_cast<int>(tts_batch.size());
  }
  if (asr_term.defined() && tts_term.defined())
    res.total = add(tape, scale(tape, asr_term, S(lambda)), tts_term);
  else if (asr_term.defined())
    res.total = scale(tape, asr_term, S(lambda));
  else
    res.total = tts_term;
  return res;
}

// AdamW with bias correction, decoupled weight decay on decay-flagged
// parameters, and global-norm gradient clipping.
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;

  static AdamState init_for(const Model<float>& model) {
    AdamState s;
    for (const auto& e : model.params()) {
      s.m.emplace_back(e.tensor.numel(), 0.0f);
      s.v.emplace_back(e.tensor.numel(), 0.0f);
    }
    return s;
  }
};

// returns the pre-clip global gradient norm
double optimizer_step(Model<float>& model, AdamState& state, const TrainConfig& cfg, double lr);

struct TrainState {
  AdamState opt;
  Rng rng;
  double asr_loss_sum = 0.0;
  double tts_loss_sum = 0.0;
  int64_t loss_count = 0;
};

void save_train_checkpoint(const std::string& path, const Model<float>& model,
                           const TrainState& state);
// model must already be built with a config matching the file's echo
void load_train_checkpoint(const std::string& path, Model<float>& model, TrainState& state);

struct TrainRunResult {
  int64_t final_step = 0;
  double last_loss = 0.0;
  double last_asr_loss = 0.0;
  double last_tts_loss = 0.0;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Full training loop: batches from corpus.train, metrics appended to
// <run_dir>/metrics.log, rolling checkpoint at <run_dir>/checkpoint.bin.
// With resume=true the checkpoint is loaded first and the loop continues
// from the stored step; the RNG stream picks up exactly where it stopped.
TrainRunResult train_run(const std::string& run_dir, const Corpus& corpus,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, bool resume);

}  // namespace dv
