// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dv/rng.hpp"
#include "dv/tensor.hpp"

namespace dv {

// Linear-interpolation probability path between a gaussian draw x0 and the
// data x1: x_t = t*x1 + (1-t)*x0, with constant target velocity x1 - x0.
struct FlowSample {
  FrameMatrix x0;
  FrameMatrix x1;
  FrameMatrix xt;
  FrameMatrix target;  // x1 - x0
  double t = 0.0;
};

inline FlowSample make_flow_sample_at(const FrameMatrix& x1, const FrameMatrix& x0, double t) {
  if (!x1.same_shape(x0)) throw dim_error("make_flow_sample_at: endpoint shapes disagree");
  if (!(t >= 0.0 && t <= 1.0)) throw domain_error("make_flow_sample_at: t outside [0, 1]");
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.xt = FrameMatrix(x1.rows, x1.cols);
  s.target = FrameMatrix(x1.rows, x1.cols);
  for (size_t i = 0; i < x1.v.size(); ++i) {
    s.xt.v[i] = static_cast<float>(t) * x1.v[i] + static_cast<float>(1.0 - t) * x0.v[i];
    s.target.v[i] = x1.v[i] - x0.v[i];
  }
  return s;
}

// draws x0 ~ N(0, I) elementwise, then t ~ U[0, 1)
inline FlowSample make_flow_sample(const FrameMatrix& x1, Rng& rng) {
  FrameMatrix x0(x1.rows, x1.cols);
  for (auto& v : x0.v) v = static_cast<float>(rng.normal());
  double t = rng.uniform();
  return make_flow_sample_at(x1, x0, t);
}

// Mean squared error between predicted and target velocity over masked
// positions only, normalized by (masked rows * frame_dim). The mask selects
// whole frames; unmasked rows contribute nothing, in value or gradient.
template <class S>
Tensor<S> cfm_infill_loss(Tape<S>& tape, const Tensor<S>& pred, const FlowSample& sample,
                          const std::vector<uint8_t>& mask) {
  if (pred.rows() != sample.target.rows || pred.cols() != sample.target.cols)
    throw dim_error("cfm_infill_loss: prediction shape disagrees with sample");
  if (static_cast<int>(mask.size()) != pred.rows())
    throw dim_error("cfm_infill_loss: mask length disagrees with rows");
  int masked = 0;
  for (uint8_t m : mask) masked += m ? 1 : 0;
  if (masked == 0) throw contract_error("cfm_infill_loss: empty mask");
  Tensor<S> target = Tensor<S>::from_frames(sample.target);
  Tensor<S> gate = Tensor<S>::zeros({pred.rows(), pred.cols()});
  for (int i = 0; i < pred.rows(); ++i)
    if (mask[i])
      for (int j = 0; j < pred.cols(); ++j) gate.at(i, j) = S(1);
  Tensor<S> diff = sub(tape, pred, target);
  Tensor<S> sq = mul(tape, diff, diff);
  Tensor<S> gated = mul(tape, sq, gate);
  return scale(tape, sum(tape, gated), S(1) / (S(masked) * S(pred.cols())));
}

// One infilling task instance: clean frames, the mask to regenerate, the
// complementary context (zeroed where masked), conditioning text, and the
// record of classifier-free-guidance drops applied during training.
struct InfillBatch {
  FrameMatrix x1;
  std::vector<uint8_t> mask;  // per frame row
  FrameMatrix ctx;            // (1-mask) * x1
  std::vector<int> text;      // empty once text has been dropped
  bool drop_text = false;
  bool drop_ctx = false;
};

inline InfillBatch make_infill_batch(const FrameMatrix& x1, const std::vector<uint8_t>& mask,
                                     const std::vector<int>& text) {
  if (static_cast<int>(mask.size()) != x1.rows)
    throw dim_error("make_infill_batch: mask length disagrees with frames");
  int masked = 0;
  for (uint8_t m : mask) masked += m ? 1 : 0;
  if (masked == 0) throw contract_error("make_infill_batch: empty mask");
  InfillBatch b;
  b.x1 = x1;
  b.mask = mask;
  b.ctx = FrameMatrix(x1.rows, x1.cols);
  for (int i = 0; i < x1.rows; ++i)
    if (!mask[i])
      for (int j = 0; j < x1.cols; ++j) b.ctx.at(i, j) = x1.at(i, j);
  b.text = text;
  return b;
}

// Independent text and context drops. A dropped text conditions on the null
// token alone; a dropped context is zeroed everywhere. Draw order is fixed:
// text first, then context.
inline InfillBatch apply_cfg_dropout(const InfillBatch& in, Rng& rng, double p_text,
                                     double p_ctx) {
  if (p_text < 0 || p_text > 1 || p_ctx < 0 || p_ctx > 1)
    throw domain_error("apply_cfg_dropout: probabilities outside [0, 1]");
  InfillBatch out = in;
  if (rng.uniform() < p_text) {
    out.drop_text = true;
    out.text.clear();
  }
  if (rng.uniform() < p_ctx) {
    out.drop_ctx = true;
    std::fill(out.ctx.v.begin(), out.ctx.v.end(), 0.0f);
  }
  return out;
}

enum class OdeScheme { Euler, Midpoint };

struct SamplerConfig {
  int nfe = 32;
  double cfg_weight = 2.0;
  OdeScheme scheme = OdeScheme::Euler;
  uint64_t seed = 0;

  void validate() const {
    if (nfe < 1) throw config_error("SamplerConfig: nfe must be at least 1");
    if (cfg_weight < 0) throw config_error("SamplerConfig: cfg_weight must be non-negative");
  }
};

// Fixed-grid ODE integration of dx/dt = f(x, t) from t=0 to t=1 starting at
// a seeded N(0, I) draw. Euler is first order; midpoint is second order.
template <class S>
FrameMat<S> ode_sample(const std::function<FrameMat<S>(const FrameMat<S>&, double)>& f,
                       int rows, int cols, const SamplerConfig& cfg) {
  cfg.validate();
  if (rows <= 0 || cols <= 0) throw dim_error("ode_sample: non-positive state extent");
  Rng rng(cfg.seed);
  FrameMat<S> x(rows, cols);
  for (auto& v : x.v) v = static_cast<S>(rng.normal());
  const int n = cfg.nfe;
  for (int k = 0; k < n; ++k) {
    const double t0 = static_cast<double>(k) / n;
    const double t1 = static_cast<double>(k + 1) / n;
    const S h = static_cast<S>(t1 - t0);
    if (cfg.scheme == OdeScheme::Euler) {
      FrameMat<S> v = f(x, t0);
      if (!v.same_shape(x)) throw dim_error("ode_sample: velocity shape disagrees with state");
      for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += h * v.v[i];
    } else {
      FrameMat<S> v1 = f(x, t0);
      if (!v1.same_shape(x)) throw dim_error("ode_sample: velocity shape disagrees with state");
      FrameMat<S> xm = x;
      const S hh = h / S(2);
      for (size_t i = 0; i < x.v.size(); ++i) xm.v[i] += hh * v1.v[i];
      FrameMat<S> v2 = f(xm, t0 + 0.5 * (t1 - t0));
      if (!v2.same_shape(x)) throw dim_error("ode_sample: velocity shape disagrees with state");
      for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += h * v2.v[i];
    }
    if (!all_finite(x)) throw numeric_error("ode_sample: state diverged at step " + std::to_string(k));
  }
  return x;
}

}  // namespace dv
