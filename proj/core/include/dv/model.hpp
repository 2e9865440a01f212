// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dv/rng.hpp"
#include "dv/tensor.hpp"

namespace dv {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 6;
  int vocab_size = 32;
  int frame_dim = 16;
  int max_positions = 192;
  int adapter_pool = 4;
  bool tie_lm_head = true;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || vocab_size <= 0 || frame_dim <= 0 ||
        max_positions <= 0 || adapter_pool <= 0)
      throw config_error("ModelConfig: extents must be positive");
    if (n_layers < 0) throw config_error("ModelConfig: n_layers must be non-negative");
    if (d_model % n_heads != 0) throw config_error("ModelConfig: n_heads must divide d_model");
    if (d_model % 2 != 0) throw config_error("ModelConfig: d_model must be even");
    if (vocab_size < 3) throw config_error("ModelConfig: vocabulary needs content, terminal and null ids");
  }

  // closed-form parameter count, checked against the registry in tests
  int64_t param_count() const {
    int64_t d = d_model, v = vocab_size, f = frame_dim;
    int64_t per_layer = 2 * (2 * d)                // ln gains+biases
                        + 4 * (d * d + d)          // wq wk wv wo with biases
                        + d * (4 * d) + 4 * d      // mlp in
                        + (4 * d) * d + d;         // mlp out
    int64_t n = v * d                              // token table
                + int64_t(max_positions) * d       // positions
                + per_layer * n_layers
                + 2 * d                            // final norm
                + d * d + d                        // time projection
                + 2 * f * d + d                    // frame input projection
                + f * d + d                        // audio adapter
                + d * f + f;                       // velocity head
    if (!tie_lm_head) n += v * d;
    return n;
  }
};

enum class Role : uint8_t { Text = 0, Time = 1, Frame = 2, Audio = 3 };

template <class S>
struct PackedSequence {
  Tensor<S> embeddings;            // L x d_model, already on the tape
  std::vector<Role> roles;         // length L
  std::vector<int> loss_positions; // positions whose outputs are scored

  int length() const { return static_cast<int>(roles.size()); }
};

// Sinusoidal basis for a scalar time in [0, 1]; geometric frequency ladder
// with base period 10000, even slots sine, odd slots cosine.
inline std::vector<double> time_embedding_basis(double t, int d_model) {
  if (!(t >= 0.0 && t <= 1.0)) throw domain_error("time_embedding_basis: t outside [0, 1]");
  if (d_model <= 0 || d_model % 2 != 0)
    throw config_error("time_embedding_basis: d_model must be positive and even");
  std::vector<double> out(d_model);
  for (int i = 0; i < d_model / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / d_model);
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  return out;
}

// Single transformer trunk shared by recognition and generation. Pre-norm
// blocks, learned absolute positions, multi-head attention with a caller
// supplied mask, exact-gelu MLP at 4x width. The LM head ties to the token
// table unless configured otherwise.
template <class S>
class Model {
 public:
  struct ParamEntry {
    std::string name;
    Tensor<S> tensor;
    bool decay;  // weight matrices decay, gains and biases do not
  };

  Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(substream(seed, 0xA0D));
    const int d = cfg_.d_model, v = cfg_.vocab_size, f = cfg_.frame_dim;
    const S base = S(0.02);
    const S resid = base / S(std::sqrt(2.0 * std::max(1, cfg_.n_layers)));

    tok_emb_ = add_param("tok_emb", {v, d}, true, rng, base);
    pos_emb_ = add_param("pos_emb", {cfg_.max_positions, d}, true, rng, base);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      std::string p = "layers." + std::to_string(l) + ".";
      Layer lyr;
      lyr.ln1_g = add_param(p + "ln1.gain", {d}, false, rng, S(0), S(1));
      lyr.ln1_b = add_param(p + "ln1.bias", {d}, false, rng, S(0), S(0));
      lyr.wq = add_param(p + "attn.wq", {d, d}, true, rng, base);
      lyr.bq = add_param(p + "attn.bq", {d}, false, rng, S(0), S(0));
      lyr.wk = add_param(p + "attn.wk", {d, d}, true, rng, base);
      lyr.bk = add_param(p + "attn.bk", {d}, false, rng, S(0), S(0));
      lyr.wv = add_param(p + "attn.wv", {d, d}, true, rng, base);
      lyr.bv = add_param(p + "attn.bv", {d}, false, rng, S(0), S(0));
      lyr.wo = add_param(p + "attn.wo", {d, d}, true, rng, resid);
      lyr.bo = add_param(p + "attn.bo", {d}, false, rng, S(0), S(0));
      lyr.ln2_g = add_param(p + "ln2.gain", {d}, false, rng, S(0), S(1));
      lyr.ln2_b = add_param(p + "ln2.bias", {d}, false, rng, S(0), S(0));
      lyr.w1 = add_param(p + "mlp.w1", {d, 4 * d}, true, rng, base);
      lyr.b1 = add_param(p + "mlp.b1", {4 * d}, false, rng, S(0), S(0));
      lyr.w2 = add_param(p + "mlp.w2", {4 * d, d}, true, rng, resid);
      lyr.b2 = add_param(p + "mlp.b2", {d}, false, rng, S(0), S(0));
      layers_.push_back(lyr);
    }
    final_g_ = add_param("final_ln.gain", {d}, false, rng, S(0), S(1));
    final_b_ = add_param("final_ln.bias", {d}, false, rng, S(0), S(0));
    time_w_ = add_param("time.w", {d, d}, true, rng, base);
    time_b_ = add_param("time.b", {d}, false, rng, S(0), S(0));
    frame_w_ = add_param("frame_in.w", {2 * f, d}, true, rng, base);
    frame_b_ = add_param("frame_in.b", {d}, false, rng, S(0), S(0));
    adapter_w_ = add_param("adapter.w", {f, d}, true, rng, base);
    adapter_b_ = add_param("adapter.b", {d}, false, rng, S(0), S(0));
    vel_w_ = add_param("velocity.w", {d, f}, true, rng, base);
    vel_b_ = add_param("velocity.b", {f}, false, rng, S(0), S(0));
    if (!cfg_.tie_lm_head) lm_w_ = add_param("lm_head.w", {v, d}, true, rng, base);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<ParamEntry>& params() { return params_; }
  const std::vector<ParamEntry>& params() const { return params_; }

  Tensor<S> param(const std::string& name) {
    for (auto& e : params_)
      if (e.name == name) return e.tensor;
    throw contract_error("Model::param: no parameter named " + name);
  }

  void zero_grad() {
    for (auto& e : params_) e.tensor.zero_grad();
  }

  int64_t registered_param_count() const {
    int64_t n = 0;
    for (const auto& e : params_) n += static_cast<int64_t>(e.tensor.numel());
    return n;
  }

  // --- input heads -------------------------------------------------------

  Tensor<S> embed_tokens(Tape<S>& tape, const std::vector<int>& ids) const {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw contract_error("embed_tokens: token id out of vocabulary");
    return gather_rows(tape, tok_emb_, ids);
  }

  Tensor<S> embed_time(Tape<S>& tape, double t) const {
    auto basis = time_embedding_basis(t, cfg_.d_model);
    std::vector<S> row(basis.size());
    for (size_t i = 0; i < basis.size(); ++i) row[i] = static_cast<S>(basis[i]);
    Tensor<S> b = Tensor<S>::from({1, cfg_.d_model}, std::move(row));
    return linear(tape, b, time_w_, time_b_);
  }

  // per-position concat of noisy frame and context frame, projected to width
  Tensor<S> project_frames(Tape<S>& tape, const FrameMatrix& noisy, const FrameMatrix& ctx) const {
    if (!noisy.same_shape(ctx)) throw dim_error("project_frames: noisy/context shapes disagree");
    if (noisy.cols != cfg_.frame_dim) throw dim_error("project_frames: frame width disagrees");
    if (noisy.rows <= 0) throw contract_error("project_frames: empty frame block");
    Tensor<S> cat = Tensor<S>::zeros({noisy.rows, 2 * cfg_.frame_dim});
    for (int i = 0; i < noisy.rows; ++i) {
      for (int j = 0; j < noisy.cols; ++j) {
        cat.at(i, j) = static_cast<S>(noisy.at(i, j));
        cat.at(i, noisy.cols + j) = static_cast<S>(ctx.at(i, j));
      }
    }
    return linear(tape, cat, frame_w_, frame_b_);
  }

  // mean-pool frames in windows of adapter_pool (ragged tail averaged over
  // its true length), then project to width
  Tensor<S> adapt_audio(Tape<S>& tape, const FrameMatrix& frames) const {
    if (frames.rows <= 0) throw contract_error("adapt_audio: empty audio");
    if (frames.cols != cfg_.frame_dim) throw dim_error("adapt_audio: frame width disagrees");
    const int p = cfg_.adapter_pool;
    const int out_len = (frames.rows + p - 1) / p;
    Tensor<S> pooled = Tensor<S>::zeros({out_len, cfg_.frame_dim});
    for (int i = 0; i < out_len; ++i) {
      const int lo = i * p, hi = std::min(frames.rows, (i + 1) * p);
      for (int j = 0; j < frames.cols; ++j) {
        S acc = S(0);
        for (int r = lo; r < hi; ++r) acc += static_cast<S>(frames.at(r, j));
        pooled.at(i, j) = acc / S(hi - lo);
      }
    }
    return linear(tape, pooled, adapter_w_, adapter_b_);
  }

  static int adapted_length(int frame_rows, int pool) { return (frame_rows + pool - 1) / pool; }

  // --- trunk --------------------------------------------------------------

  Tensor<S> layer_forward(Tape<S>& tape, const Tensor<S>& x, const AttentionMask& mask,
                          int layer_index) const {
    const Layer& L = layers_.at(layer_index);
    const int n = x.rows(), d = cfg_.d_model, h = cfg_.n_heads, dh = d / h;
    Tensor<S> u = layer_norm(tape, x, L.ln1_g, L.ln1_b);
    Tensor<S> q = linear(tape, u, L.wq, L.bq);
    Tensor<S> k = linear(tape, u, L.wk, L.bk);
    Tensor<S> v = linear(tape, u, L.wv, L.bv);
    std::vector<Tensor<S>> heads;
    Tensor<S> merged;
    for (int i = 0; i < h; ++i) {
      Tensor<S> qi = slice_cols(tape, q, i * dh, (i + 1) * dh);
      Tensor<S> ki = slice_cols(tape, k, i * dh, (i + 1) * dh);
      Tensor<S> vi = slice_cols(tape, v, i * dh, (i + 1) * dh);
      Tensor<S> scores = scale(tape, matmul_nt(tape, qi, ki), S(1.0 / std::sqrt(double(dh))));
      Tensor<S> probs = softmax_rows(tape, scores, mask);
      Tensor<S> oi = matmul(tape, probs, vi);
      merged = (i == 0) ? oi : concat_cols(tape, merged, oi);
    }
    (void)n;
    Tensor<S> attn = linear(tape, merged, L.wo, L.bo);
    Tensor<S> x1 = add(tape, x, attn);
    Tensor<S> u2 = layer_norm(tape, x1, L.ln2_g, L.ln2_b);
    Tensor<S> m = linear(tape, gelu(tape, linear(tape, u2, L.w1, L.b1)), L.w2, L.b2);
    return add(tape, x1, m);
  }

  Tensor<S> forward_backbone(Tape<S>& tape, const PackedSequence<S>& pack,
                             const AttentionMask& mask) const {
    const int L = pack.length();
    if (L <= 0) throw contract_error("forward_backbone: empty pack");
    if (pack.embeddings.rows() != L || pack.embeddings.cols() != cfg_.d_model)
      throw dim_error("forward_backbone: embeddings shape disagrees with roles");
    if (L > cfg_.max_positions)
      throw capacity_error("forward_backbone: sequence length " + std::to_string(L) +
                           " exceeds max_positions " + std::to_string(cfg_.max_positions));
    if (mask.rows != L || mask.cols != L) throw dim_error("forward_backbone: mask shape disagrees");
    mask.validate();
    Tensor<S> pos = slice_rows(tape, pos_emb_, 0, L);
    Tensor<S> x = add(tape, pack.embeddings, pos);
    for (int l = 0; l < cfg_.n_layers; ++l) x = layer_forward(tape, x, mask, l);
    return layer_norm(tape, x, final_g_, final_b_);
  }

  // --- output heads -------------------------------------------------------

  Tensor<S> lm_logits(Tape<S>& tape, const Tensor<S>& hidden) const {
    if (hidden.cols() != cfg_.d_model) throw dim_error("lm_logits: hidden width disagrees");
    return matmul_nt(tape, hidden, cfg_.tie_lm_head ? tok_emb_ : lm_w_);
  }

  Tensor<S> velocity_head(Tape<S>& tape, const Tensor<S>& hidden) const {
    if (hidden.cols() != cfg_.d_model) throw dim_error("velocity_head: hidden width disagrees");
    return linear(tape, hidden, vel_w_, vel_b_);
  }

 private:
  struct Layer {
    Tensor<S> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Tensor<S> add_param(const std::string& name, std::vector<int> shape, bool decay, Rng& rng,
                      S std_dev, S fill = std::numeric_limits<S>::quiet_NaN()) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    if (std_dev > S(0)) {
      for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(rng.normal()) * std_dev;
    } else if (!std::isnan(static_cast<double>(fill))) {
      std::fill(t.values().begin(), t.values().end(), fill);
    }
    t.set_requires_grad(true);
    params_.push_back(ParamEntry{name, t, decay});
    return t;
  }

  ModelConfig cfg_;
  std::vector<ParamEntry> params_;
  Tensor<S> tok_emb_, pos_emb_, final_g_, final_b_;
  Tensor<S> time_w_, time_b_, frame_w_, frame_b_, adapter_w_, adapter_b_, vel_w_, vel_b_, lm_w_;
  std::vector<Layer> layers_;
};

}  // namespace dv
