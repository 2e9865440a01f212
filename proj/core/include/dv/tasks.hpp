// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dv/flow.hpp"
#include "dv/model.hpp"

namespace dv {

// --- recognition ----------------------------------------------------------

struct AsrExample {
  FrameMatrix frames;
  std::vector<int> transcript;  // ends with the terminal token
};

inline void validate_asr_example(const AsrExample& ex, const ModelConfig& cfg) {
  if (ex.frames.rows <= 0) throw contract_error("AsrExample: empty audio");
  if (ex.transcript.empty()) throw contract_error("AsrExample: empty transcript");
  if (ex.transcript.back() != terminal_token(cfg.vocab_size))
    throw contract_error("AsrExample: transcript must end with the terminal token");
  for (int id : ex.transcript)
    if (id < 0 || id >= cfg.vocab_size) throw contract_error("AsrExample: token out of vocabulary");
}

template <class S>
struct BuiltPack {
  PackedSequence<S> pack;
  AttentionMask mask;
};

// Layout [AUDIO x A][TEXT x n] under a causal mask. Loss positions are the
// text positions: the first text token is predicted from the last audio
// position, each later one from its predecessor.
template <class S>
BuiltPack<S> build_asr_pack(Tape<S>& tape, const Model<S>& model, const AsrExample& ex) {
  validate_asr_example(ex, model.config());
  Tensor<S> audio = model.adapt_audio(tape, ex.frames);
  Tensor<S> text = model.embed_tokens(tape, ex.transcript);
  const int a = audio.rows(), n = text.rows();
  BuiltPack<S> out;
  out.pack.embeddings = concat_rows(tape, {audio, text});
  out.pack.roles.assign(a, Role::Audio);
  out.pack.roles.insert(out.pack.roles.end(), n, Role::Text);
  for (int i = 0; i < n; ++i) out.pack.loss_positions.push_back(a + i);
  out.mask = AttentionMask::causal(a + n);
  return out;
}

template <class S>
Tensor<S> asr_loss(Tape<S>& tape, const Model<S>& model, const AsrExample& ex) {
  BuiltPack<S> built = build_asr_pack(tape, model, ex);
  Tensor<S> h = model.forward_backbone(tape, built.pack, built.mask);
  std::vector<int> pred_rows;
  for (int p : built.pack.loss_positions) pred_rows.push_back(p - 1);
  Tensor<S> scored = gather_rows(tape, h, pred_rows);
  Tensor<S> logits = model.lm_logits(tape, scored);
  return cross_entropy(tape, logits, ex.transcript);
}

struct DecodeResult {
  std::vector<int> tokens;  // includes the terminal token when found
  bool truncated = false;
};

// Greedy argmax decoding until the terminal token, max_len tokens, or a full
// position window, whichever comes first.
inline DecodeResult greedy_decode(const Model<float>& model, const FrameMatrix& frames,
                                  int max_len) {
  if (max_len <= 0) throw contract_error("greedy_decode: max_len must be positive");
  const ModelConfig& cfg = model.config();
  const int audio_rows = (frames.rows + cfg.adapter_pool - 1) / cfg.adapter_pool;
  DecodeResult res;
  for (int step = 0; step < max_len; ++step) {
    if (step > 0 && audio_rows + static_cast<int>(res.tokens.size()) > cfg.max_positions) {
      res.truncated = true;
      return res;
    }
    Tape<float> tape;
    Tensor<float> audio = model.adapt_audio(tape, frames);
    const int a = audio.rows();
    PackedSequence<float> pack;
    if (res.tokens.empty()) {
      pack.embeddings = audio;
    } else {
      Tensor<float> text = model.embed_tokens(tape, res.tokens);
      pack.embeddings = concat_rows<float>(tape, {audio, text});
    }
    const int L = a + static_cast<int>(res.tokens.size());
    pack.roles.assign(a, Role::Audio);
    pack.roles.insert(pack.roles.end(), res.tokens.size(), Role::Text);
    Tensor<float> h = model.forward_backbone(tape, pack, AttentionMask::causal(L));
    Tensor<float> last = slice_rows(tape, h, L - 1, L);
    Tensor<float> logits = model.lm_logits(tape, last);
    int best = 0;
    for (int v = 1; v < cfg.vocab_size; ++v)
      if (logits.at(0, v) > logits.at(0, best)) best = v;
    res.tokens.push_back(best);
    if (best == terminal_token(cfg.vocab_size)) return res;
  }
  res.truncated = true;
  return res;
}

// --- generation -----------------------------------------------------------

enum class TtsMaskKind { Full, Causal };

// Layout [TEXT x n][TIME x 1][FRAME x T]. Empty text means the condition was
// dropped: a single null token stands in. Loss positions are the frame rows.
template <class S>
BuiltPack<S> build_tts_pack(Tape<S>& tape, const Model<S>& model, const FrameMatrix& xt,
                            const FrameMatrix& ctx, const std::vector<int>& text, double t,
                            TtsMaskKind kind) {
  const ModelConfig& cfg = model.config();
  std::vector<int> cond = text.empty() ? std::vector<int>{null_token(cfg.vocab_size)} : text;
  Tensor<S> text_emb = model.embed_tokens(tape, cond);
  Tensor<S> time_emb = model.embed_time(tape, t);
  Tensor<S> frame_emb = model.project_frames(tape, xt, ctx);
  const int n = text_emb.rows(), tt = frame_emb.rows();
  const int L = n + 1 + tt;
  if (L > cfg.max_positions)
    throw capacity_error("build_tts_pack: sequence length " + std::to_string(L) +
                         " exceeds max_positions " + std::to_string(cfg.max_positions));
  BuiltPack<S> out;
  out.pack.embeddings = concat_rows(tape, {text_emb, time_emb, frame_emb});
  out.pack.roles.assign(n, Role::Text);
  out.pack.roles.push_back(Role::Time);
  out.pack.roles.insert(out.pack.roles.end(), tt, Role::Frame);
  for (int i = 0; i < tt; ++i) out.pack.loss_positions.push_back(n + 1 + i);
  out.mask = kind == TtsMaskKind::Full ? AttentionMask::full(L) : AttentionMask::causal(L);
  return out;
}

// Deterministic infilling loss once the batch and flow sample are fixed.
template <class S>
Tensor<S> tts_infill_loss(Tape<S>& tape, const Model<S>& model, const InfillBatch& batch,
                          const FlowSample& sample, TtsMaskKind kind) {
  BuiltPack<S> built =
      build_tts_pack(tape, model, sample.xt, batch.ctx, batch.text, sample.t, kind);
  Tensor<S> h = model.forward_backbone(tape, built.pack, built.mask);
  const int first = built.pack.loss_positions.front();
  const int last = built.pack.loss_positions.back() + 1;
  Tensor<S> frames = slice_rows(tape, h, first, last);
  Tensor<S> v = model.velocity_head(tape, frames);
  return cfm_infill_loss(tape, v, sample, batch.mask);
}

struct TtsTrainOptions {
  double mask_lo = 0.7;
  double mask_hi = 1.0;
  double p_drop_text = 0.2;
  double p_drop_ctx = 0.3;
  TtsMaskKind mask_kind = TtsMaskKind::Full;
};

// Contiguous mask span whose length is ceil(ratio * T) for
// ratio ~ U[mask_lo, mask_hi], placed uniformly.
inline std::vector<uint8_t> sample_mask_span(int rows, Rng& rng, double lo, double hi) {
  if (rows <= 0) throw contract_error("sample_mask_span: no frames");
  if (!(lo >= 0 && lo <= hi && hi <= 1)) throw domain_error("sample_mask_span: bad ratio range");
  double ratio = rng.uniform(lo, hi);
  int len = std::min(rows, std::max(1, static_cast<int>(std::ceil(ratio * rows))));
  int start = rng.uniform_below(rows - len + 1);
  std::vector<uint8_t> m(rows, 0);
  for (int i = start; i < start + len; ++i) m[i] = 1;
  return m;
}

// Stochastic training loss: sample the mask span, apply guidance dropout,
// draw the flow sample, then evaluate the deterministic core. Consumption
// order from rng is fixed: span ratio, span start, text drop, context drop,
// x0 normals, t.
template <class S>
Tensor<S> tts_train_loss(Tape<S>& tape, const Model<S>& model, const FrameMatrix& x1,
                         const std::vector<int>& text, Rng& rng, const TtsTrainOptions& opt) {
  if (x1.rows <= 0) throw contract_error("tts_train_loss: empty frames");
  std::vector<uint8_t> m = sample_mask_span(x1.rows, rng, opt.mask_lo, opt.mask_hi);
  InfillBatch batch = make_infill_batch(x1, m, text);
  batch = apply_cfg_dropout(batch, rng, opt.p_drop_text, opt.p_drop_ctx);
  FlowSample sample = make_flow_sample(x1, rng);
  return tts_infill_loss(tape, model, batch, sample, opt.mask_kind);
}

// --- guided inference -----------------------------------------------------

// Classifier-free guidance over the velocity field. w=1 is exactly the
// conditional pass and w=0 exactly the unconditional one; otherwise
// u = u_uncond + w * (u_cond - u_uncond).
inline FrameMatrix guided_velocity(const Model<float>& model, const FrameMatrix& xt,
                                   const FrameMatrix& ctx, const std::vector<int>& text,
                                   double t, double w) {
  if (w < 0) throw domain_error("guided_velocity: negative guidance weight");
  auto run = [&](const FrameMatrix& c, const std::vector<int>& z) {
    Tape<float> tape;
    BuiltPack<float> built = build_tts_pack(tape, model, xt, c, z, t, TtsMaskKind::Full);
    Tensor<float> h = model.forward_backbone(tape, built.pack, built.mask);
    const int first = built.pack.loss_positions.front();
    const int last = built.pack.loss_positions.back() + 1;
    Tensor<float> v = model.velocity_head(tape, slice_rows(tape, h, first, last));
    FrameMatrix out(v.rows(), v.cols());
    std::copy_n(v.data(), v.numel(), out.v.begin());
    return out;
  };
  if (w == 1.0) return run(ctx, text);
  FrameMatrix zero_ctx(xt.rows, xt.cols);
  if (w == 0.0) return run(zero_ctx, {});
  FrameMatrix vc = run(ctx, text);
  FrameMatrix vu = run(zero_ctx, {});
  FrameMatrix out(vc.rows, vc.cols);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = vu.v[i] + static_cast<float>(w) * (vc.v[i] - vu.v[i]);
  return out;
}

// --- synthesis ------------------------------------------------------------

// len(gen text) / len(ref text); the reference transcript must be non-empty.
inline double duration_ratio(const std::vector<int>& ref_text, const std::vector<int>& gen_text) {
  if (ref_text.empty()) throw contract_error("duration_ratio: empty reference text");
  return static_cast<double>(gen_text.size()) / static_cast<double>(ref_text.size());
}

struct TtsInferenceRequest {
  std::vector<int> ref_text;
  FrameMatrix ref_frames;
  std::vector<int> gen_text;
  SamplerConfig sampler;
};

// Infilling synthesis: concatenated text [ref ++ gen] conditions a sequence
// of T_ref known frames plus T_gen = round(T_ref * ratio) generated ones
// (round half away from zero, floor of one frame). The reference portion is
// discarded from the returned frames.
inline FrameMatrix synthesize(const Model<float>& model, const TtsInferenceRequest& req) {
  const ModelConfig& cfg = model.config();
  req.sampler.validate();
  if (req.ref_frames.rows <= 0) throw contract_error("synthesize: empty reference frames");
  if (req.ref_frames.cols != cfg.frame_dim) throw dim_error("synthesize: frame width disagrees");
  if (req.gen_text.empty()) throw contract_error("synthesize: empty generation text");
  const double ratio = duration_ratio(req.ref_text, req.gen_text);
  const int t_ref = req.ref_frames.rows;
  const int t_gen = std::max(1, static_cast<int>(std::llround(t_ref * ratio)));
  const int t_total = t_ref + t_gen;

  std::vector<int> text = req.ref_text;
  text.insert(text.end(), req.gen_text.begin(), req.gen_text.end());
  for (int id : text)
    if (id < 0 || id >= cfg.vocab_size) throw contract_error("synthesize: token out of vocabulary");

  const int L = static_cast<int>(text.size()) + 1 + t_total;
  if (L > cfg.max_positions)
    throw capacity_error("synthesize: sequence length " + std::to_string(L) +
                         " exceeds max_positions " + std::to_string(cfg.max_positions));

  FrameMatrix ctx(t_total, cfg.frame_dim);
  for (int i = 0; i < t_ref; ++i)
    for (int j = 0; j < cfg.frame_dim; ++j) ctx.at(i, j) = req.ref_frames.at(i, j);

  auto field = [&](const FrameMatrix& x, double t) {
    return guided_velocity(model, x, ctx, text, t, req.sampler.cfg_weight);
  };
  FrameMatrix full = ode_sample<float>(field, t_total, cfg.frame_dim, req.sampler);

  FrameMatrix gen(t_gen, cfg.frame_dim);
  for (int i = 0; i < t_gen; ++i)
    for (int j = 0; j < cfg.frame_dim; ++j) gen.at(i, j) = full.at(t_ref + i, j);
  return gen;
}

}  // namespace dv
