// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <limits>

#include "dv/flow.hpp"
#include "helpers.hpp"

using dv::FrameMat;
using dv::FrameMatrix;
using dv::Rng;
using dv::Tape;
using dv::Tensor;

namespace {

FrameMatrix random_frames(int rows, int cols, uint64_t seed) {
  FrameMatrix m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.v) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("flow sample hits both endpoints and the straight-line midpoint") {
  auto x1 = random_frames(3, 4, 21);
  auto x0 = random_frames(3, 4, 22);

  auto s0 = dv::make_flow_sample_at(x1, x0, 0.0);
  auto s1 = dv::make_flow_sample_at(x1, x0, 1.0);
  auto sm = dv::make_flow_sample_at(x1, x0, 0.5);
  for (size_t i = 0; i < x1.v.size(); ++i) {
    CHECK(s0.xt.v[i] == x0.v[i]);
    CHECK(s1.xt.v[i] == x1.v[i]);
    CHECK(sm.xt.v[i] == 0.5f * x1.v[i] + 0.5f * x0.v[i]);
    CHECK(s0.target.v[i] == x1.v[i] - x0.v[i]);
    CHECK(sm.target.v[i] == s0.target.v[i]);
  }
}

TEST_CASE("flow sample rejects bad shapes and times") {
  auto x1 = random_frames(3, 4, 1);
  auto bad = random_frames(4, 3, 2);
  CHECK_THROWS_AS(dv::make_flow_sample_at(x1, bad, 0.5), dv::dim_error);
  auto x0 = random_frames(3, 4, 3);
  CHECK_THROWS_AS(dv::make_flow_sample_at(x1, x0, -0.1), dv::domain_error);
  CHECK_THROWS_AS(dv::make_flow_sample_at(x1, x0, 1.5), dv::domain_error);
  CHECK_THROWS_AS(dv::make_flow_sample_at(x1, x0, std::nan("")), dv::domain_error);
}

TEST_CASE("random flow samples reproduce the documented draw order") {
  auto x1 = random_frames(2, 5, 77);
  Rng rng(123);
  auto s = dv::make_flow_sample(x1, rng);

  Rng replay(123);
  for (size_t i = 0; i < x1.v.size(); ++i)
    CHECK(s.x0.v[i] == static_cast<float>(replay.normal()));
  CHECK(s.t == replay.uniform());
  CHECK(s.t >= 0.0);
  CHECK(s.t < 1.0);
}

TEST_CASE("infill loss matches a hand mse over the masked rows") {
  auto x1 = random_frames(4, 3, 5);
  auto x0 = random_frames(4, 3, 6);
  auto sample = dv::make_flow_sample_at(x1, x0, 0.3);
  std::vector<uint8_t> mask = {1, 0, 1, 0};

  Rng rng(9);
  std::vector<double> pv = dvtest::random_vec(12, rng);
  Tape<double> tape;
  auto pred = Tensor<double>::from({4, 3}, pv);
  auto loss = dv::cfm_infill_loss(tape, pred, sample, mask);

  double hand = 0.0;
  for (int i : {0, 2})
    for (int j = 0; j < 3; ++j) {
      const double d = pv[i * 3 + j] - static_cast<double>(sample.target.at(i, j));
      hand += d * d;
    }
  hand /= 2.0 * 3.0;
  CHECK(dvtest::rel_err(loss.item(), hand) < 1e-12);
}

TEST_CASE("infill loss sends no gradient to unmasked rows") {
  auto x1 = random_frames(4, 3, 15);
  auto x0 = random_frames(4, 3, 16);
  auto sample = dv::make_flow_sample_at(x1, x0, 0.8);
  std::vector<uint8_t> mask = {0, 1, 0, 1};

  Tape<double> tape;
  auto pred = Tensor<double>::from_frames(sample.xt);
  pred.set_requires_grad(true);
  auto loss = dv::cfm_infill_loss(tape, pred, sample, mask);
  tape.backward(loss);

  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      const double g = pred.grad()[i * 3 + j];
      if (mask[i]) {
        const double want =
            2.0 * (pred.at(i, j) - static_cast<double>(sample.target.at(i, j))) / (2.0 * 3.0);
        CHECK(dvtest::rel_err(g, want) < 1e-12);
      } else {
        CHECK(g == 0.0);
      }
    }
}

TEST_CASE("infill loss gradient agrees with finite differences") {
  auto x1 = random_frames(5, 4, 25);
  auto x0 = random_frames(5, 4, 26);
  auto sample = dv::make_flow_sample_at(x1, x0, 0.4);
  std::vector<uint8_t> mask = {1, 1, 0, 1, 0};

  dvtest::GradCheckSpec spec;
  spec.shapes = {{5, 4}};
  spec.build = [&](Tape<double>& tape, std::vector<Tensor<double>>& in) {
    return dv::cfm_infill_loss(tape, in[0], sample, mask);
  };
  auto res = dvtest::run_grad_check(spec);
  INFO("max rel " << res.max_rel);
  CHECK(res.ok);
}

TEST_CASE("infill loss rejects contract violations") {
  auto x1 = random_frames(3, 2, 31);
  auto x0 = random_frames(3, 2, 32);
  auto sample = dv::make_flow_sample_at(x1, x0, 0.5);
  Tape<float> tape;
  auto pred = Tensor<float>::from_frames(sample.xt);

  CHECK_THROWS_AS(dv::cfm_infill_loss(tape, pred, sample, {0, 0, 0}), dv::contract_error);
  CHECK_THROWS_AS(dv::cfm_infill_loss(tape, pred, sample, {1, 1}), dv::dim_error);
  auto wide = Tensor<float>::zeros({3, 5});
  CHECK_THROWS_AS(dv::cfm_infill_loss(tape, wide, sample, {1, 1, 1}), dv::dim_error);
}

TEST_CASE("infill batch splits frames into masked span and context") {
  auto x1 = random_frames(5, 3, 41);
  std::vector<uint8_t> mask = {0, 1, 1, 0, 1};
  auto b = dv::make_infill_batch(x1, mask, {4, 2});

  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      if (mask[i])
        CHECK(b.ctx.at(i, j) == 0.0f);
      else
        CHECK(b.ctx.at(i, j) == x1.at(i, j));
    }
  CHECK(b.text == std::vector<int>({4, 2}));
  CHECK_FALSE(b.drop_text);
  CHECK_FALSE(b.drop_ctx);
  CHECK_THROWS_AS(dv::make_infill_batch(x1, {0, 0, 0, 0, 0}, {1}), dv::contract_error);
  CHECK_THROWS_AS(dv::make_infill_batch(x1, {1, 1}, {1}), dv::dim_error);
}

TEST_CASE("cfg dropout clears text and zeroes context independently") {
  auto x1 = random_frames(4, 3, 51);
  auto base = dv::make_infill_batch(x1, {1, 0, 1, 0}, {3, 1, 2});

  Rng r1(7);
  auto text_only = dv::apply_cfg_dropout(base, r1, 1.0, 0.0);
  CHECK(text_only.drop_text);
  CHECK(text_only.text.empty());
  CHECK_FALSE(text_only.drop_ctx);
  CHECK(text_only.ctx.v == base.ctx.v);

  Rng r2(7);
  auto ctx_only = dv::apply_cfg_dropout(base, r2, 0.0, 1.0);
  CHECK_FALSE(ctx_only.drop_text);
  CHECK(ctx_only.text == base.text);
  CHECK(ctx_only.drop_ctx);
  for (float v : ctx_only.ctx.v) CHECK(v == 0.0f);

  Rng r3(7);
  auto both = dv::apply_cfg_dropout(base, r3, 1.0, 1.0);
  CHECK(both.drop_text);
  CHECK(both.drop_ctx);

  Rng r4(7);
  CHECK_THROWS_AS(dv::apply_cfg_dropout(base, r4, -0.5, 0.0), dv::domain_error);
  CHECK_THROWS_AS(dv::apply_cfg_dropout(base, r4, 0.0, 1.5), dv::domain_error);
}

TEST_CASE("cfg dropout always consumes two draws, text first") {
  auto x1 = random_frames(2, 2, 61);
  auto base = dv::make_infill_batch(x1, {1, 1}, {0});

  Rng used(99);
  dv::apply_cfg_dropout(base, used, 0.0, 0.0);
  Rng replay(99);
  replay.uniform();
  replay.uniform();
  CHECK(used.next_u64() == replay.next_u64());

  // with p_text just above the first draw the text is dropped and the second
  // draw still decides the context
  Rng peek(99);
  const double first = peek.uniform();
  Rng r(99);
  auto out = dv::apply_cfg_dropout(base, r, first + 1e-9, 0.0);
  CHECK(out.drop_text);
}

TEST_CASE("ode sampling starts from the seeded gaussian and is repeatable") {
  dv::SamplerConfig cfg;
  cfg.nfe = 5;
  cfg.seed = 314;
  std::function<FrameMatrix(const FrameMatrix&, double)> still =
      [](const FrameMatrix& x, double) { return FrameMatrix(x.rows, x.cols); };

  auto a = dv::ode_sample<float>(still, 3, 4, cfg);
  auto b = dv::ode_sample<float>(still, 3, 4, cfg);
  CHECK(a.v == b.v);

  Rng rng(314);
  for (float v : a.v) CHECK(v == static_cast<float>(rng.normal()));
}

TEST_CASE("euler converges at first order and midpoint at second") {
  // dx/dt = x has the exact solution e * x(0)
  std::function<FrameMat<double>(const FrameMat<double>&, double)> field =
      [](const FrameMat<double>& x, double) { return x; };

  auto max_err = [&](dv::OdeScheme scheme, int nfe) {
    dv::SamplerConfig cfg;
    cfg.nfe = nfe;
    cfg.scheme = scheme;
    cfg.seed = 2718;
    auto got = dv::ode_sample<double>(field, 4, 4, cfg);
    Rng rng(2718);
    double worst = 0.0;
    for (double v : got.v) {
      const double exact = std::exp(1.0) * rng.normal();
      worst = std::max(worst, std::abs(v - exact));
    }
    return worst;
  };

  const double e8 = max_err(dv::OdeScheme::Euler, 8);
  const double e16 = max_err(dv::OdeScheme::Euler, 16);
  const double m8 = max_err(dv::OdeScheme::Midpoint, 8);
  const double m16 = max_err(dv::OdeScheme::Midpoint, 16);
  CHECK(e8 / e16 > 1.6);
  CHECK(e8 / e16 < 2.4);
  CHECK(m8 / m16 > 3.0);
  CHECK(m8 / m16 < 4.8);
  CHECK(m16 < e16);
}

TEST_CASE("ode sampling rejects divergence and malformed fields") {
  dv::SamplerConfig cfg;
  cfg.nfe = 4;

  std::function<FrameMatrix(const FrameMatrix&, double)> blowup =
      [](const FrameMatrix& x, double) {
        FrameMatrix v(x.rows, x.cols);
        v.v[0] = std::numeric_limits<float>::infinity();
        return v;
      };
  CHECK_THROWS_AS(dv::ode_sample<float>(blowup, 2, 2, cfg), dv::numeric_error);

  std::function<FrameMatrix(const FrameMatrix&, double)> wrong =
      [](const FrameMatrix&, double) { return FrameMatrix(1, 1); };
  CHECK_THROWS_AS(dv::ode_sample<float>(wrong, 2, 2, cfg), dv::dim_error);

  std::function<FrameMatrix(const FrameMatrix&, double)> still =
      [](const FrameMatrix& x, double) { return FrameMatrix(x.rows, x.cols); };
  CHECK_THROWS_AS(dv::ode_sample<float>(still, 0, 2, cfg), dv::dim_error);

  dv::SamplerConfig bad;
  bad.nfe = 0;
  CHECK_THROWS_AS(dv::ode_sample<float>(still, 2, 2, bad), dv::config_error);
  bad.nfe = 4;
  bad.cfg_weight = -1.0;
  CHECK_THROWS_AS(dv::ode_sample<float>(still, 2, 2, bad), dv::config_error);
}
