// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "dv/tasks.hpp"
#include "helpers.hpp"

using dv::AsrExample;
using dv::AttentionMask;
using dv::FrameMatrix;
using dv::Model;
using dv::ModelConfig;
using dv::Rng;
using dv::Role;
using dv::Tape;
using dv::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.vocab_size = 8;
  cfg.frame_dim = 4;
  cfg.max_positions = 24;
  cfg.adapter_pool = 2;
  return cfg;
}

FrameMatrix random_frames(int rows, int cols, uint64_t seed) {
  FrameMatrix m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.v) v = static_cast<float>(rng.normal());
  return m;
}

// Finite differences over a handful of entries of one named parameter.
template <class LossFn>
void check_param_fd(Model<double>& m, const std::string& name, LossFn loss_fn, double tol) {
  m.zero_grad();
  {
    Tape<double> tape;
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto p = m.param(name);
  const size_t probes = std::min<size_t>(6, p.numel());
  const double h = 1e-5;
  for (size_t i = 0; i < probes; ++i) {
    const double keep = p.data()[i];
    p.data()[i] = keep + h;
    double fp;
    {
      Tape<double> t;
      fp = loss_fn(t).item();
    }
    p.data()[i] = keep - h;
    double fm;
    {
      Tape<double> t;
      fm = loss_fn(t).item();
    }
    p.data()[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = p.grad()[i];
    INFO(name << "[" << i << "] analytic " << an << " fd " << fd);
    if (std::abs(an - fd) > 1e-9) CHECK(dvtest::rel_err(an, fd) < tol);
  }
}

}  // namespace

TEST_CASE("asr pack lays audio before text under a causal mask") {
  Model<float> m(tiny_config(), 3);
  AsrExample ex;
  ex.frames = random_frames(5, 4, 10);
  ex.transcript = {1, 0, dv::terminal_token(8)};

  Tape<float> tape;
  auto built = dv::build_asr_pack(tape, m, ex);
  const int a = 3;  // five frames pooled in pairs, ragged tail window
  REQUIRE(built.pack.embeddings.rows() == a + 3);
  REQUIRE(static_cast<int>(built.pack.roles.size()) == a + 3);
  for (int i = 0; i < a; ++i) CHECK(built.pack.roles[i] == Role::Audio);
  for (int i = a; i < a + 3; ++i) CHECK(built.pack.roles[i] == Role::Text);
  REQUIRE(built.pack.loss_positions == std::vector<int>({3, 4, 5}));
  REQUIRE(built.mask.rows == a + 3);
  for (int i = 0; i < built.mask.rows; ++i)
    for (int j = 0; j < built.mask.cols; ++j) CHECK(built.mask.at(i, j) == (j <= i));
}

TEST_CASE("asr examples are validated before packing") {
  ModelConfig cfg = tiny_config();
  Model<float> m(cfg, 3);
  Tape<float> tape;

  AsrExample ex;
  ex.frames = random_frames(4, 4, 11);
  ex.transcript = {1, dv::terminal_token(cfg.vocab_size)};
  CHECK_NOTHROW(dv::build_asr_pack(tape, m, ex));

  AsrExample no_audio = ex;
  no_audio.frames = FrameMatrix();
  CHECK_THROWS_AS(dv::build_asr_pack(tape, m, no_audio), dv::contract_error);

  AsrExample no_text = ex;
  no_text.transcript.clear();
  CHECK_THROWS_AS(dv::build_asr_pack(tape, m, no_text), dv::contract_error);

  AsrExample no_terminal = ex;
  no_terminal.transcript = {1, 2};
  CHECK_THROWS_AS(dv::build_asr_pack(tape, m, no_terminal), dv::contract_error);

  AsrExample oov = ex;
  oov.transcript = {99, dv::terminal_token(cfg.vocab_size)};
  CHECK_THROWS_AS(dv::build_asr_pack(tape, m, oov), dv::contract_error);
}

TEST_CASE("asr loss gradients agree with finite differences on the parameters") {
  Model<double> m(tiny_config(), 17);
  AsrExample ex;
  ex.frames = random_frames(5, 4, 12);
  ex.transcript = {4, 1, 0, dv::terminal_token(8)};

  auto loss_fn = [&](Tape<double>& tape) { return dv::asr_loss(tape, m, ex); };
  check_param_fd(m, "tok_emb", loss_fn, 1e-5);
  check_param_fd(m, "layers.0.attn.wq", loss_fn, 1e-5);
  check_param_fd(m, "layers.1.mlp.w2", loss_fn, 1e-5);
  check_param_fd(m, "adapter.w", loss_fn, 1e-5);
  check_param_fd(m, "final_ln.gain", loss_fn, 1e-5);
}

TEST_CASE("greedy decode follows the logits of a rigged model") {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 0;
  cfg.vocab_size = 4;  // content 0..1, terminal 2, null 3
  cfg.frame_dim = 4;
  cfg.max_positions = 24;
  cfg.adapter_pool = 2;
  Model<float> m(cfg, 1);

  // With no layers the backbone is layer_norm(embedding + position), and the
  // tied head scores by dot product with the token table. Point the audio
  // rows at token 1, and let the position of the first text slot push the
  // scores toward the terminal token.
  auto zero = [&](const std::string& name) {
    auto p = m.param(name);
    std::fill(p.data(), p.data() + p.numel(), 0.0f);
  };
  zero("tok_emb");
  zero("pos_emb");
  zero("adapter.w");
  zero("adapter.b");
  auto tok = m.param("tok_emb");
  tok.at(0, 3) = 1.0f;
  tok.at(1, 1) = 1.0f;
  tok.at(2, 2) = 1.0f;
  tok.at(2, 1) = 0.9f;
  tok.at(3, 4) = 1.0f;
  m.param("pos_emb").at(2, 2) = 3.0f;
  m.param("adapter.b").data()[1] = 1.0f;

  FrameMatrix frames = random_frames(4, 4, 13);
  auto res = dv::greedy_decode(m, frames, 8);
  CHECK(res.tokens == std::vector<int>({1, 2}));
  CHECK_FALSE(res.truncated);

  auto cut = dv::greedy_decode(m, frames, 1);
  CHECK(cut.tokens == std::vector<int>({1}));
  CHECK(cut.truncated);

  CHECK_THROWS_AS(dv::greedy_decode(m, frames, 0), dv::contract_error);
}

TEST_CASE("greedy decode truncates when the position window fills") {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 0;
  cfg.vocab_size = 4;
  cfg.frame_dim = 4;
  cfg.max_positions = 6;
  cfg.adapter_pool = 2;
  Model<float> m(cfg, 1);

  // same rig as above minus the positional nudge, so the model repeats
  // token 1 and never reaches the terminal
  auto zero = [&](const std::string& name) {
    auto p = m.param(name);
    std::fill(p.data(), p.data() + p.numel(), 0.0f);
  };
  zero("tok_emb");
  zero("pos_emb");
  zero("adapter.w");
  zero("adapter.b");
  auto tok = m.param("tok_emb");
  tok.at(0, 3) = 1.0f;
  tok.at(1, 1) = 1.0f;
  tok.at(2, 2) = 1.0f;
  tok.at(2, 1) = 0.9f;
  tok.at(3, 4) = 1.0f;
  m.param("adapter.b").data()[1] = 1.0f;

  // two pooled audio rows in a window of six leaves room for five tokens:
  // the last prediction comes off a pack that exactly fills the window
  FrameMatrix frames = random_frames(4, 4, 30);
  auto res = dv::greedy_decode(m, frames, 50);
  CHECK(res.tokens == std::vector<int>(5, 1));
  CHECK(res.truncated);
}

TEST_CASE("tts pack lays text, time, then frames") {
  Model<float> m(tiny_config(), 5);
  auto xt = random_frames(4, 4, 14);
  FrameMatrix ctx(4, 4);
  std::vector<int> text = {3, 1};

  Tape<float> tape;
  auto built = dv::build_tts_pack(tape, m, xt, ctx, text, 0.25, dv::TtsMaskKind::Full);
  REQUIRE(built.pack.embeddings.rows() == 2 + 1 + 4);
  CHECK(built.pack.roles[0] == Role::Text);
  CHECK(built.pack.roles[1] == Role::Text);
  CHECK(built.pack.roles[2] == Role::Time);
  for (int i = 3; i < 7; ++i) CHECK(built.pack.roles[i] == Role::Frame);
  CHECK(built.pack.loss_positions == std::vector<int>({3, 4, 5, 6}));
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) CHECK(built.mask.at(i, j));

  auto causal = dv::build_tts_pack(tape, m, xt, ctx, text, 0.25, dv::TtsMaskKind::Causal);
  CHECK_FALSE(causal.mask.at(0, 6));
  CHECK(causal.mask.at(6, 0));
}

TEST_CASE("empty tts text falls back to the null token") {
  ModelConfig cfg = tiny_config();
  Model<float> m(cfg, 5);
  auto xt = random_frames(3, 4, 15);
  FrameMatrix ctx(3, 4);

  Tape<float> tape;
  auto built = dv::build_tts_pack(tape, m, xt, ctx, {}, 0.5, dv::TtsMaskKind::Full);
  REQUIRE(built.pack.embeddings.rows() == 1 + 1 + 3);
  auto tok = m.param("tok_emb");
  const int null_id = dv::null_token(cfg.vocab_size);
  for (int j = 0; j < cfg.d_model; ++j)
    CHECK(built.pack.embeddings.at(0, j) == tok.at(null_id, j));
}

TEST_CASE("tts packs that do not fit are rejected") {
  Model<float> m(tiny_config(), 5);
  auto xt = random_frames(22, 4, 16);
  FrameMatrix ctx(22, 4);
  Tape<float> tape;
  CHECK_THROWS_AS(dv::build_tts_pack(tape, m, xt, ctx, {1, 2}, 0.5, dv::TtsMaskKind::Full),
                  dv::capacity_error);
}

TEST_CASE("tts infill loss gradients agree with finite differences") {
  Model<double> m(tiny_config(), 23);
  auto x1 = random_frames(5, 4, 17);
  auto x0 = random_frames(5, 4, 18);
  auto sample = dv::make_flow_sample_at(x1, x0, 0.35);
  auto batch = dv::make_infill_batch(x1, {0, 1, 1, 1, 0}, {2, 5, dv::terminal_token(8)});

  auto loss_fn = [&](Tape<double>& tape) {
    return dv::tts_infill_loss(tape, m, batch, sample, dv::TtsMaskKind::Full);
  };
  check_param_fd(m, "velocity.w", loss_fn, 1e-5);
  check_param_fd(m, "time.w", loss_fn, 1e-5);
  check_param_fd(m, "frame_in.w", loss_fn, 1e-5);
  check_param_fd(m, "layers.1.attn.wv", loss_fn, 1e-5);
  check_param_fd(m, "tok_emb", loss_fn, 1e-5);
}

TEST_CASE("mask spans are contiguous with the advertised length law") {
  Rng rng(19);
  for (int trial = 0; trial < 400; ++trial) {
    auto m = dv::sample_mask_span(8, rng, 0.5, 0.5);
    int len = 0, flips = 0;
    for (size_t i = 0; i < m.size(); ++i) {
      len += m[i];
      if (i > 0 && m[i] != m[i - 1]) ++flips;
    }
    CHECK(len == 4);
    CHECK(flips <= 2);
  }

  std::set<int> starts;
  Rng rng2(20);
  for (int trial = 0; trial < 400; ++trial) {
    auto m = dv::sample_mask_span(8, rng2, 0.5, 0.5);
    for (int i = 0; i < 8; ++i)
      if (m[i]) {
        starts.insert(i);
        break;
      }
  }
  CHECK(starts == std::set<int>({0, 1, 2, 3, 4}));

  Rng rng3(21);
  auto all = dv::sample_mask_span(6, rng3, 1.0, 1.0);
  CHECK(all == std::vector<uint8_t>(6, 1));
  auto tiny = dv::sample_mask_span(8, rng3, 0.01, 0.01);
  int tiny_len = 0;
  for (auto b : tiny) tiny_len += b;
  CHECK(tiny_len == 1);
  auto one = dv::sample_mask_span(1, rng3, 0.7, 1.0);
  CHECK(one == std::vector<uint8_t>({1}));

  CHECK_THROWS_AS(dv::sample_mask_span(0, rng3, 0.5, 1.0), dv::contract_error);
  CHECK_THROWS_AS(dv::sample_mask_span(4, rng3, 0.8, 0.2), dv::domain_error);
  CHECK_THROWS_AS(dv::sample_mask_span(4, rng3, 0.5, 1.5), dv::domain_error);
}

TEST_CASE("tts train loss consumes randomness in the documented order") {
  Model<float> m(tiny_config(), 29);
  auto x1 = random_frames(6, 4, 22);
  std::vector<int> text = {5, 1, dv::terminal_token(8)};
  dv::TtsTrainOptions opt;
  opt.p_drop_text = 0.5;
  opt.p_drop_ctx = 0.5;

  for (uint64_t seed : {31ull, 32ull, 33ull, 34ull}) {
    Rng ra(seed);
    Tape<float> ta;
    auto la = dv::tts_train_loss(ta, m, x1, text, ra, opt);

    Rng rb(seed);
    auto mask = dv::sample_mask_span(x1.rows, rb, opt.mask_lo, opt.mask_hi);
    auto batch = dv::make_infill_batch(x1, mask, text);
    batch = dv::apply_cfg_dropout(batch, rb, opt.p_drop_text, opt.p_drop_ctx);
    auto sample = dv::make_flow_sample(x1, rb);
    Tape<float> tb;
    auto lb = dv::tts_infill_loss(tb, m, batch, sample, opt.mask_kind);

    CHECK(la.item() == lb.item());
    CHECK(ra.next_u64() == rb.next_u64());
  }
}

TEST_CASE("guided velocity reduces to single passes at the special weights") {
  Model<float> m(tiny_config(), 37);
  auto xt = random_frames(4, 4, 23);
  auto ctx = random_frames(4, 4, 24);
  std::vector<int> text = {2, 0, dv::terminal_token(8)};
  const double t = 0.4;

  auto manual = [&](const FrameMatrix& c, const std::vector<int>& z) {
    Tape<float> tape;
    auto built = dv::build_tts_pack(tape, m, xt, c, z, t, dv::TtsMaskKind::Full);
    auto h = m.forward_backbone(tape, built.pack, built.mask);
    const int first = built.pack.loss_positions.front();
    const int last = built.pack.loss_positions.back() + 1;
    auto v = m.velocity_head(tape, dv::slice_rows(tape, h, first, last));
    FrameMatrix out(v.rows(), v.cols());
    std::copy_n(v.data(), v.numel(), out.v.begin());
    return out;
  };

  FrameMatrix vc = manual(ctx, text);
  FrameMatrix vu = manual(FrameMatrix(4, 4), {});

  auto w1 = dv::guided_velocity(m, xt, ctx, text, t, 1.0);
  CHECK(w1.v == vc.v);
  auto w0 = dv::guided_velocity(m, xt, ctx, text, t, 0.0);
  CHECK(w0.v == vu.v);

  auto w2 = dv::guided_velocity(m, xt, ctx, text, t, 2.0);
  for (size_t i = 0; i < w2.v.size(); ++i)
    CHECK(w2.v[i] == vu.v[i] + 2.0f * (vc.v[i] - vu.v[i]));

  CHECK_THROWS_AS(dv::guided_velocity(m, xt, ctx, text, t, -0.5), dv::domain_error);
}

TEST_CASE("duration ratio and generated length follow the rounding law") {
  CHECK(dv::duration_ratio({1, 2}, {3, 4, 5}) == 1.5);
  CHECK_THROWS_AS(dv::duration_ratio({}, {1}), dv::contract_error);

  Model<float> m(tiny_config(), 41);
  auto run = [&](int t_ref, int ref_len, int gen_len) {
    dv::TtsInferenceRequest req;
    req.ref_frames = random_frames(t_ref, 4, 25);
    for (int i = 0; i < ref_len; ++i) req.ref_text.push_back(i % 6);
    for (int i = 0; i < gen_len; ++i) req.gen_text.push_back((i + 1) % 6);
    req.sampler.nfe = 2;
    req.sampler.seed = 77;
    return dv::synthesize(m, req).rows;
  };

  CHECK(run(5, 2, 1) == 3);   // round(2.5) away from zero
  CHECK(run(4, 3, 3) == 4);   // ratio one
  CHECK(run(1, 5, 1) == 1);   // floor of one frame
  CHECK(run(3, 2, 5) == 8);   // round(7.5) away from zero
}

TEST_CASE("synthesize validates its request") {
  Model<float> m(tiny_config(), 43);
  dv::TtsInferenceRequest req;
  req.ref_frames = random_frames(4, 4, 26);
  req.ref_text = {1, 2};
  req.gen_text = {3};
  req.sampler.nfe = 2;

  auto bad_frames = req;
  bad_frames.ref_frames = FrameMatrix();
  CHECK_THROWS_AS(dv::synthesize(m, bad_frames), dv::contract_error);

  auto bad_width = req;
  bad_width.ref_frames = random_frames(4, 3, 27);
  CHECK_THROWS_AS(dv::synthesize(m, bad_width), dv::dim_error);

  auto no_text = req;
  no_text.gen_text.clear();
  CHECK_THROWS_AS(dv::synthesize(m, no_text), dv::contract_error);

  auto oov = req;
  oov.gen_text = {99};
  CHECK_THROWS_AS(dv::synthesize(m, oov), dv::contract_error);

  auto big = req;
  big.ref_frames = random_frames(20, 4, 28);
  CHECK_THROWS_AS(dv::synthesize(m, big), dv::capacity_error);
}

TEST_CASE("synthesize integrates the guided field and returns only new frames") {
  // Rig the velocity head to a constant so the euler trajectory is known:
  // every step adds h * 0.5, starting from the seeded gaussian.
  Model<float> m(tiny_config(), 47);
  auto vw = m.param("velocity.w");
  std::fill(vw.data(), vw.data() + vw.numel(), 0.0f);
  auto vb = m.param("velocity.b");
  std::fill(vb.data(), vb.data() + vb.numel(), 0.5f);

  dv::TtsInferenceRequest req;
  req.ref_frames = random_frames(4, 4, 29);
  req.ref_text = {1, 2};
  req.gen_text = {3, 0};
  req.sampler.nfe = 8;
  req.sampler.seed = 51;
  auto gen = dv::synthesize(m, req);
  REQUIRE(gen.rows == 4);
  REQUIRE(gen.cols == 4);

  const int t_total = 8;
  FrameMatrix x(t_total, 4);
  Rng rng(51);
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  const float h = 1.0f / 8.0f;
  for (int k = 0; k < 8; ++k)
    for (auto& v : x.v) v += h * 0.5f;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(gen.at(i, j) == x.at(4 + i, j));
}
