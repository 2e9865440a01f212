// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include "dv/train.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "dv/eval.hpp"

namespace dv {

double optimizer_step(Model<float>& model, AdamState& state, const TrainConfig& cfg, double lr) {
  auto& params = model.params();
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw contract_error("optimizer_step: moment buffers disagree with parameter registry");
  if (!(lr >= 0) || !std::isfinite(lr)) throw numeric_error("optimizer_step: bad learning rate");

  double sq = 0.0;
  for (auto& e : params) {
    const auto& g = e.tensor.grad_vec();
    for (size_t j = 0; j < g.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      if (!std::isfinite(gj))
        throw numeric_error("optimizer_step: non-finite gradient in " + e.name + " at element " +
                            std::to_string(j) + " (step " + std::to_string(state.step) + ")");
      sq += gj * gj;
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    float* p = e.tensor.data();
    const auto& g = e.tensor.grad_vec();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != g.size() || v.size() != g.size())
      throw contract_error("optimizer_step: moment extent disagrees for " + e.name);
    for (size_t j = 0; j < g.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * clip;
      m[j] = static_cast<float>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj);
      v[j] = static_cast<float>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj);
      const double mh = static_cast<double>(m[j]) / bc1;
      const double vh = static_cast<double>(v[j]) / bc2;
      double upd = mh / (std::sqrt(vh) + cfg.adam_eps);
      if (e.decay) upd += cfg.weight_decay * static_cast<double>(p[j]);
      p[j] = static_cast<float>(p[j] - lr * upd);
    }
  }
  return norm;
}

namespace {

std::vector<uint32_t> dims_of(const Tensor<float>& t) {
  std::vector<uint32_t> d;
  for (int e : t.shape()) d.push_back(static_cast<uint32_t>(e));
  return d;
}

}  // namespace

void save_train_checkpoint(const std::string& path, const Model<float>& model,
                           const TrainState& state) {
  const auto& params = model.params();
  if (state.opt.m.size() != params.size())
    throw contract_error("save_train_checkpoint: optimizer state disagrees with model");
  std::vector<TensorEntry> entries;
  entries.reserve(3 * params.size() + 5);
  for (const auto& e : params)
    entries.push_back(TensorEntry::of_f32(
        "param." + e.name, dims_of(e.tensor),
        std::vector<float>(e.tensor.values().begin(), e.tensor.values().end())));
  for (size_t i = 0; i < params.size(); ++i)
    entries.push_back(
        TensorEntry::of_f32("adam.m." + params[i].name, dims_of(params[i].tensor), state.opt.m[i]));
  for (size_t i = 0; i < params.size(); ++i)
    entries.push_back(
        TensorEntry::of_f32("adam.v." + params[i].name, dims_of(params[i].tensor), state.opt.v[i]));
  entries.push_back(
      TensorEntry::of_u64("opt.step", {1}, {static_cast<uint64_t>(state.opt.step)}));
  const auto rs = state.rng.state();
  entries.push_back(TensorEntry::of_u64("rng.state", {4}, {rs[0], rs[1], rs[2], rs[3]}));
  entries.push_back(TensorEntry::of_f64("stat.asr_loss_sum", {1}, {state.asr_loss_sum}));
  entries.push_back(TensorEntry::of_f64("stat.tts_loss_sum", {1}, {state.tts_loss_sum}));
  entries.push_back(
      TensorEntry::of_u64("stat.loss_count", {1}, {static_cast<uint64_t>(state.loss_count)}));
  write_checkpoint(path, model.config(), entries);
}

void load_train_checkpoint(const std::string& path, Model<float>& model, TrainState& state) {
  CheckpointFile ck = read_checkpoint(path);
  const ModelConfig& a = ck.cfg;
  const ModelConfig& b = model.config();
  if (a.d_model != b.d_model || a.n_heads != b.n_heads || a.n_layers != b.n_layers ||
      a.vocab_size != b.vocab_size || a.frame_dim != b.frame_dim ||
      a.max_positions != b.max_positions || a.adapter_pool != b.adapter_pool ||
      a.tie_lm_head != b.tie_lm_head)
    throw io_error("load_train_checkpoint: file was written for a different model config");

  auto& params = model.params();
  if (ck.entries.size() != 3 * params.size() + 5)
    throw io_error("load_train_checkpoint: unexpected entry count");
  state.opt.m.assign(params.size(), {});
  state.opt.v.assign(params.size(), {});
  for (size_t i = 0; i < params.size(); ++i) {
    const TensorEntry& pe = ck.find("param." + params[i].name);
    if (pe.f32.size() != params[i].tensor.numel())
      throw io_error("load_train_checkpoint: extent mismatch for " + params[i].name);
    params[i].tensor.values().assign(pe.f32.begin(), pe.f32.end());
    state.opt.m[i] = ck.find("adam.m." + params[i].name).f32;
    state.opt.v[i] = ck.find("adam.v." + params[i].name).f32;
    if (state.opt.m[i].size() != pe.f32.size() || state.opt.v[i].size() != pe.f32.size())
      throw io_error("load_train_checkpoint: moment extent mismatch for " + params[i].name);
  }
  state.opt.step = static_cast<int64_t>(ck.find("opt.step").u64.at(0));
  const auto& rs = ck.find("rng.state").u64;
  if (rs.size() != 4) throw io_error("load_train_checkpoint: bad rng state extent");
  state.rng.set_state({rs[0], rs[1], rs[2], rs[3]});
  state.asr_loss_sum = ck.find("stat.asr_loss_sum").f64.at(0);
  state.tts_loss_sum = ck.find("stat.tts_loss_sum").f64.at(0);
  state.loss_count = static_cast<int64_t>(ck.find("stat.loss_count").u64.at(0));
}

TrainRunResult train_run(const std::string& run_dir, const Corpus& corpus,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, bool resume) {
  mcfg.validate();
  tcfg.validate();
  if (corpus.train.empty()) throw contract_error("train_run: empty training split");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw io_error("train_run: cannot create " + run_dir);
  const std::string ckpt_path = (fs::path(run_dir) / "checkpoint.bin").string();
  const std::string metrics_path = (fs::path(run_dir) / "metrics.log").string();

  Model<float> model(mcfg, tcfg.seed);
  TrainState state;
  state.opt = AdamState::init_for(model);
  state.rng = Rng(substream(tcfg.seed, 0x7EA1));
  if (resume) load_train_checkpoint(ckpt_path, model, state);
  if (state.opt.step > tcfg.total_steps)
    throw config_error("train_run: checkpoint is past total_steps");

  std::unique_ptr<FILE, int (*)(FILE*)> log(fopen(metrics_path.c_str(), "a"), fclose);
  if (!log) throw io_error("train_run: cannot open " + metrics_path);

  Oracle oracle(corpus.spec);
  const int n_train = static_cast<int>(corpus.train.size());
  const double lambda_eff = tcfg.task_mix == TaskMix::AsrOnly ? 1.0 : tcfg.lambda_lm;

  auto run_eval = [&](int64_t step) {
    EvalOptions eo;
    eo.asr_items = tcfg.eval_asr_items;
    eo.tts_items = tcfg.eval_tts_items;
    eo.nfe = tcfg.eval_nfe;
    eo.cfg_weight = tcfg.eval_cfg_weight;
    eo.seed = substream(tcfg.seed, 0xE7A0 + static_cast<uint64_t>(step));
    EvalReport r = evaluate(model, corpus, oracle, eo);
    fprintf(log.get(),
            "step=%" PRId64
            " event=eval asr_ter=%.9g tts_ter=%.9g tts_mse=%.9g sim_seen=%.9g sim_unseen=%.9g\n",
            step, r.asr_ter, r.overall.ter, r.overall.mse, r.seen.sim, r.unseen.sim);
    fflush(log.get());
  };

  TrainRunResult result;
  const int64_t stop =
      tcfg.stop_after >= 0 ? std::min(tcfg.stop_after, tcfg.total_steps) : tcfg.total_steps;
  for (int64_t step = state.opt.step; step < stop; ++step) {
    std::vector<AsrExample> asr_batch;
    std::vector<const SynthExample*> tts_batch;
    if (tcfg.task_mix != TaskMix::TtsOnly)
      for (int b = 0; b < tcfg.batch_items; ++b) {
        const SynthExample& ex = corpus.train[state.rng.uniform_below(n_train)];
        asr_batch.push_back(AsrExample{ex.frames, ex.tokens});
      }
    if (tcfg.task_mix != TaskMix::AsrOnly)
      for (int b = 0; b < tcfg.batch_items; ++b)
        tts_batch.push_back(&corpus.train[state.rng.uniform_below(n_train)]);

    model.zero_grad();
    Tape<float> tape;
    JointLossResult<float> res =
        joint_loss(tape, model, asr_batch, tts_batch, lambda_eff, state.rng, tcfg.tts);
    const double loss = static_cast<double>(res.total.item());
    if (!std::isfinite(loss))
      throw numeric_error("train_run: non-finite loss at step " + std::to_string(step));
    tape.backward(res.total);
    const double lr = lr_at(step + 1, tcfg);
    const double gnorm = optimizer_step(model, state.opt, tcfg, lr);

    state.asr_loss_sum += res.asr_mean;
    state.tts_loss_sum += res.tts_mean;
    state.loss_count += 1;
    result.final_step = step + 1;
    result.last_loss = loss;
    result.last_asr_loss = res.asr_mean;
    result.last_tts_loss = res.tts_mean;

    fprintf(log.get(),
            "step=%" PRId64
            " task=%s lr=%.9g loss=%.9g loss_asr=%.9g loss_tts=%.9g grad_norm=%.9g\n",
            step + 1, task_mix_name(tcfg.task_mix), lr, loss, res.asr_mean, res.tts_mean, gnorm);
    fflush(log.get());

    if (tcfg.eval_interval > 0 && (step + 1) % tcfg.eval_interval == 0 &&
        step + 1 < tcfg.total_steps)
      run_eval(step + 1);
    if (tcfg.checkpoint_interval > 0 && (step + 1) % tcfg.checkpoint_interval == 0)
      save_train_checkpoint(ckpt_path, model, state);
  }

  const bool finished = state.opt.step >= tcfg.total_steps;
  // Persist the final state before the closing eval so a failed eval cannot
  // lose finished training work.
  save_train_checkpoint(ckpt_path, model, state);
  if (finished && tcfg.eval_interval > 0 && tcfg.total_steps > 0) run_eval(state.opt.step);
  if (finished) {
    fprintf(log.get(), "step=%" PRId64 " event=done total_steps=%" PRId64 "\n", state.opt.step,
            tcfg.total_steps);
    fflush(log.get());
  }

  result.final_step = state.opt.step;
  result.checkpoint_path = ckpt_path;
  result.metrics_path = metrics_path;
  return result;
}

}  // namespace dv
