// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "dv/common.hpp"

namespace dv {

// Reverse-mode autodiff over dense row-major tensors. The whole stack is
// templated on the scalar type: float for training, double for the
// finite-difference harness. Ops are free functions that take an explicit
// Tape; recording order is creation order, which is already topological, so
// backward() is a single reverse sweep.

template <class S>
struct TensorData {
  std::vector<int> shape;
  AlignedVec<S> val;
  AlignedVec<S> grad;  // lazily sized to match val
  bool requires_grad = false;

  size_t numel() const { return val.size(); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<S>>();
    size_t n = checked_numel(shape);
    t.d_->shape = std::move(shape);
    t.d_->val.assign(n, S(0));
    return t;
  }

  static Tensor full(std::vector<int> shape, S v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.d_->val.begin(), t.d_->val.end(), v);
    return t;
  }

  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor from(std::vector<int> shape, const std::vector<S>& values) {
    size_t n = checked_numel(shape);
    if (n != values.size()) throw dim_error("Tensor::from: value count does not match shape");
    Tensor t;
    t.d_ = std::make_shared<TensorData<S>>();
    t.d_->shape = std::move(shape);
    t.d_->val.assign(values.begin(), values.end());
    return t;
  }

  template <class T>
  static Tensor from_frames(const FrameMat<T>& m) {
    Tensor t = zeros({m.rows, m.cols});
    for (size_t i = 0; i < m.v.size(); ++i) t.d_->val[i] = static_cast<S>(m.v[i]);
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  size_t numel() const { return d_->numel(); }

  int rows() const {
    if (ndim() != 2) throw dim_error("Tensor::rows: not a matrix");
    return d_->shape[0];
  }
  int cols() const {
    if (ndim() != 2) throw dim_error("Tensor::cols: not a matrix");
    return d_->shape[1];
  }

  S* data() { return d_->val.data(); }
  const S* data() const { return d_->val.data(); }
  S& at(int r, int c) { return d_->val[static_cast<size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return d_->val[static_cast<size_t>(r) * cols() + c]; }

  S item() const {
    if (numel() != 1) throw contract_error("Tensor::item: not a scalar");
    return d_->val[0];
  }

  void set_requires_grad(bool b) { d_->requires_grad = b; }
  bool requires_grad() const { return d_->requires_grad; }

  void ensure_grad() { d_->ensure_grad(); }
  void zero_grad() {
    d_->ensure_grad();
    std::fill(d_->grad.begin(), d_->grad.end(), S(0));
  }
  S* grad() {
    d_->ensure_grad();
    return d_->grad.data();
  }
  const AlignedVec<S>& grad_vec() const {
    const_cast<TensorData<S>*>(d_.get())->ensure_grad();
    return d_->grad;
  }
  AlignedVec<S>& values() { return d_->val; }
  const AlignedVec<S>& values() const { return d_->val; }

  std::shared_ptr<TensorData<S>> node() const { return d_; }

  bool all_finite() const {
    for (S x : d_->val)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

 private:
  static size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw dim_error("Tensor: empty shape");
    size_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw dim_error("Tensor: non-positive extent");
      n *= static_cast<size_t>(e);
    }
    return n;
  }

  std::shared_ptr<TensorData<S>> d_;
};

template <class S>
class Tape {
 public:
  template <class F>
  void record(const Tensor<S>& out, F&& backward_fn) {
    nodes_.push_back(Node{out.node(), std::function<void()>(std::forward<F>(backward_fn))});
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs one reverse sweep. Gradients of
  // intermediate (tape-produced) tensors are reset per call; leaf gradients
  // accumulate across calls until the caller zeroes them.
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) throw contract_error("Tape::backward: loss must be a scalar");
    for (auto& n : nodes_) {
      n.out->ensure_grad();
      std::fill(n.out->grad.begin(), n.out->grad.end(), S(0));
    }
    auto ld = loss.node();
    ld->ensure_grad();
    ld->grad[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  struct Node {
    std::shared_ptr<TensorData<S>> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

template <class S>
EMap<S> map_val(const std::shared_ptr<TensorData<S>>& d, int r, int c) {
  return EMap<S>(d->val.data(), r, c);
}
template <class S>
EMap<S> map_grad(const std::shared_ptr<TensorData<S>>& d, int r, int c) {
  d->ensure_grad();
  return EMap<S>(d->grad.data(), r, c);
}

template <class S>
void require_matrix(const Tensor<S>& t, const char* who) {
  if (t.ndim() != 2) throw dim_error(std::string(who) + ": expected a matrix");
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* who) {
  if (a.shape() != b.shape()) throw dim_error(std::string(who) + ": shape mismatch");
}

}  // namespace detail

// c = a @ b
template <class S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw dim_error("matmul: inner extents disagree");
  Tensor<S> c = Tensor<S>::zeros({m, n});
  detail::map_val<S>(c.node(), m, n).noalias() =
      detail::map_val<S>(a.node(), m, k) * detail::map_val<S>(b.node(), k, n);
  tape.record(c, [ad = a.node(), bd = b.node(), cd = c.node(), m, k, n]() {
    detail::map_grad<S>(ad, m, k).noalias() +=
        detail::map_grad<S>(cd, m, n) * detail::map_val<S>(bd, k, n).transpose();
    detail::map_grad<S>(bd, k, n).noalias() +=
        detail::map_val<S>(ad, m, k).transpose() * detail::map_grad<S>(cd, m, n);
  });
  return c;
}

// c = a @ b^T
template <class S>
Tensor<S> matmul_nt(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw dim_error("matmul_nt: inner extents disagree");
  Tensor<S> c = Tensor<S>::zeros({m, n});
  detail::map_val<S>(c.node(), m, n).noalias() =
      detail::map_val<S>(a.node(), m, k) * detail::map_val<S>(b.node(), n, k).transpose();
  tape.record(c, [ad = a.node(), bd = b.node(), cd = c.node(), m, k, n]() {
    detail::map_grad<S>(ad, m, k).noalias() +=
        detail::map_grad<S>(cd, m, n) * detail::map_val<S>(bd, n, k);
    detail::map_grad<S>(bd, n, k).noalias() +=
        detail::map_grad<S>(cd, m, n).transpose() * detail::map_val<S>(ad, m, k);
  });
  return c;
}

// y = x @ w + b (b broadcast over rows)
template <class S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(w, "linear");
  const int m = x.rows(), k = x.cols(), n = w.cols();
  if (w.rows() != k) throw dim_error("linear: inner extents disagree");
  if (b.ndim() != 1 || b.shape()[0] != n) throw dim_error("linear: bias extent disagrees");
  Tensor<S> y = Tensor<S>::zeros({m, n});
  auto ym = detail::map_val<S>(y.node(), m, n);
  ym.noalias() = detail::map_val<S>(x.node(), m, k) * detail::map_val<S>(w.node(), k, n);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorX<S>>(b.data(), n);
  tape.record(y, [xd = x.node(), wd = w.node(), bd = b.node(), yd = y.node(), m, k, n]() {
    detail::map_grad<S>(xd, m, k).noalias() +=
        detail::map_grad<S>(yd, m, n) * detail::map_val<S>(wd, k, n).transpose();
    detail::map_grad<S>(wd, k, n).noalias() +=
        detail::map_val<S>(xd, m, k).transpose() * detail::map_grad<S>(yd, m, n);
    bd->ensure_grad();
    Eigen::Map<Eigen::RowVectorX<S>>(bd->grad.data(), n) +=
        detail::map_grad<S>(yd, m, n).colwise().sum();
  });
  return y;
}

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> c = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  tape.record(c, [ad = a.node(), bd = b.node(), cd = c.node()]() {
    ad->ensure_grad();
    bd->ensure_grad();
    for (size_t i = 0; i < cd->numel(); ++i) {
      ad->grad[i] += cd->grad[i];
      bd->grad[i] += cd->grad[i];
    }
  });
  return c;
}

template <class S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> c = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  tape.record(c, [ad = a.node(), bd = b.node(), cd = c.node()]() {
    ad->ensure_grad();
    bd->ensure_grad();
    for (size_t i = 0; i < cd->numel(); ++i) {
      ad->grad[i] += cd->grad[i];
      bd->grad[i] -= cd->grad[i];
    }
  });
  return c;
}

template <class S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> c = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  tape.record(c, [ad = a.node(), bd = b.node(), cd = c.node()]() {
    ad->ensure_grad();
    bd->ensure_grad();
    for (size_t i = 0; i < cd->numel(); ++i) {
      ad->grad[i] += cd->grad[i] * bd->val[i];
      bd->grad[i] += cd->grad[i] * ad->val[i];
    }
  });
  return c;
}

template <class S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, S k) {
  Tensor<S> c = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] * k;
  tape.record(c, [ad = a.node(), cd = c.node(), k]() {
    ad->ensure_grad();
    for (size_t i = 0; i < cd->numel(); ++i) ad->grad[i] += cd->grad[i] * k;
  });
  return c;
}

// exact gaussian gelu: x * Phi(x)
template <class S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < y.numel(); ++i) {
    S v = x.data()[i];
    y.data()[i] = S(0.5) * v * (S(1) + S(std::erf(static_cast<double>(v) * M_SQRT1_2)));
  }
  tape.record(y, [xd = x.node(), yd = y.node()]() {
    xd->ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (size_t i = 0; i < yd->numel(); ++i) {
      double v = static_cast<double>(xd->val[i]);
      double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      xd->grad[i] += yd->grad[i] * static_cast<S>(phi + v * pdf);
    }
  });
  return y;
}

// Row softmax with boolean mask. Disallowed entries receive an additive -1e9
// before the max-subtracted exponential; after normalization they must be
// exactly zero (the shift guarantees underflow for any sane score magnitude),
// which keeps masked perturbation tests bit-exact.
template <class S>
Tensor<S> softmax_rows(Tape<S>& tape, const Tensor<S>& x, const AttentionMask& mask) {
  detail::require_matrix(x, "softmax_rows");
  const int m = x.rows(), n = x.cols();
  if (mask.rows != m || mask.cols != n) throw dim_error("softmax_rows: mask shape mismatch");
  for (int i = 0; i < m; ++i) {
    bool any = false;
    for (int j = 0; j < n && !any; ++j) any = mask.at(i, j);
    if (!any) throw contract_error("softmax_rows: fully masked row " + std::to_string(i));
  }
  Tensor<S> p = Tensor<S>::zeros({m, n});
  const S kShift = S(1e9);
  for (int i = 0; i < m; ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < n; ++j)
      if (mask.at(i, j)) mx = std::max(mx, x.at(i, j));
    S denom = S(0);
    for (int j = 0; j < n; ++j) {
      S s = x.at(i, j) - (mask.at(i, j) ? S(0) : kShift);
      S e = std::exp(s - mx);
      p.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < n; ++j) {
      p.at(i, j) /= denom;
      if (!mask.at(i, j) && p.at(i, j) != S(0))
        throw numeric_error("softmax_rows: masked probability did not underflow to zero");
    }
  }
  tape.record(p, [xd = x.node(), pd = p.node(), m, n]() {
    xd->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const size_t off = static_cast<size_t>(i) * n;
      S dot = S(0);
      for (int j = 0; j < n; ++j) dot += pd->grad[off + j] * pd->val[off + j];
      for (int j = 0; j < n; ++j)
        xd->grad[off + j] += pd->val[off + j] * (pd->grad[off + j] - dot);
    }
  });
  return p;
}

// per-row standardization with learned gain and bias
template <class S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps = S(1e-5)) {
  detail::require_matrix(x, "layer_norm");
  const int m = x.rows(), d = x.cols();
  if (gain.ndim() != 1 || gain.shape()[0] != d) throw dim_error("layer_norm: gain extent disagrees");
  if (bias.ndim() != 1 || bias.shape()[0] != d) throw dim_error("layer_norm: bias extent disagrees");
  Tensor<S> y = Tensor<S>::zeros({m, d});
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(m) * d);
  auto inv_std = std::make_shared<std::vector<S>>(m);
  for (int i = 0; i < m; ++i) {
    S mu = S(0);
    for (int j = 0; j < d; ++j) mu += x.at(i, j);
    mu /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) {
      S c = x.at(i, j) - mu;
      var += c * c;
    }
    var /= S(d);
    S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < d; ++j) {
      S xh = (x.at(i, j) - mu) * is;
      (*xhat)[static_cast<size_t>(i) * d + j] = xh;
      y.at(i, j) = xh * gain.data()[j] + bias.data()[j];
    }
  }
  tape.record(y, [xd = x.node(), gd = gain.node(), bd = bias.node(), yd = y.node(), xhat,
                  inv_std, m, d]() {
    xd->ensure_grad();
    gd->ensure_grad();
    bd->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const size_t off = static_cast<size_t>(i) * d;
      S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
      for (int j = 0; j < d; ++j) {
        S dy = yd->grad[off + j];
        S xh = (*xhat)[off + j];
        gd->grad[j] += dy * xh;
        bd->grad[j] += dy;
        S dxh = dy * gd->val[j];
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * xh;
      }
      const S is = (*inv_std)[i];
      for (int j = 0; j < d; ++j) {
        S dxh = yd->grad[off + j] * gd->val[j];
        S xh = (*xhat)[off + j];
        xd->grad[off + j] +=
            is * (dxh - sum_dxhat / S(d) - xh * sum_dxhat_xhat / S(d));
      }
    }
  });
  return y;
}

// mean negative log-likelihood over rows not listed in ignore_rows
template <class S>
Tensor<S> cross_entropy(Tape<S>& tape, const Tensor<S>& logits, const std::vector<int>& targets,
                        const std::unordered_set<int>& ignore_rows = {}) {
  detail::require_matrix(logits, "cross_entropy");
  const int n = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != n)
    throw dim_error("cross_entropy: one target per row required");
  int scored = 0;
  for (int i = 0; i < n; ++i) {
    if (ignore_rows.count(i)) continue;
    if (targets[i] < 0 || targets[i] >= v)
      throw contract_error("cross_entropy: target out of vocabulary at row " + std::to_string(i));
    ++scored;
  }
  if (scored == 0) throw contract_error("cross_entropy: no scored rows");
  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(n) * v);
  S total = S(0);
  for (int i = 0; i < n; ++i) {
    const size_t off = static_cast<size_t>(i) * v;
    S mx = logits.data()[off];
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.data()[off + j]);
    S denom = S(0);
    for (int j = 0; j < v; ++j) {
      S e = std::exp(logits.data()[off + j] - mx);
      (*probs)[off + j] = e;
      denom += e;
    }
    for (int j = 0; j < v; ++j) (*probs)[off + j] /= denom;
    if (!ignore_rows.count(i))
      total += std::log(denom) + mx - logits.data()[off + targets[i]];
  }
  Tensor<S> loss = Tensor<S>::scalar(total / S(scored));
  tape.record(loss, [ld = logits.node(), od = loss.node(), probs, targets, ignore_rows, n, v,
                     scored]() {
    ld->ensure_grad();
    const S d = od->grad[0] / S(scored);
    for (int i = 0; i < n; ++i) {
      if (ignore_rows.count(i)) continue;
      const size_t off = static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) {
        S p = (*probs)[off + j];
        ld->grad[off + j] += d * (j == targets[i] ? p - S(1) : p);
      }
    }
  });
  return loss;
}

template <class S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& x) {
  S total = S(0);
  for (size_t i = 0; i < x.numel(); ++i) total += x.data()[i];
  Tensor<S> y = Tensor<S>::scalar(total);
  tape.record(y, [xd = x.node(), yd = y.node()]() {
    xd->ensure_grad();
    for (size_t i = 0; i < xd->numel(); ++i) xd->grad[i] += yd->grad[0];
  });
  return y;
}

// out[i] = table[ids[i]], scatter-add on backward
template <class S>
Tensor<S> gather_rows(Tape<S>& tape, const Tensor<S>& table, const std::vector<int>& ids) {
  detail::require_matrix(table, "gather_rows");
  const int r = table.rows(), c = table.cols();
  if (ids.empty()) throw contract_error("gather_rows: empty id list");
  for (int id : ids)
    if (id < 0 || id >= r) throw contract_error("gather_rows: id out of range: " + std::to_string(id));
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(ids.size()), c});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data() + static_cast<size_t>(ids[i]) * c, c, out.data() + i * c);
  tape.record(out, [td = table.node(), od = out.node(), ids, c]() {
    td->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < c; ++j)
        td->grad[static_cast<size_t>(ids[i]) * c + j] += od->grad[i * c + j];
  });
  return out;
}

template <class S>
Tensor<S> slice_rows(Tape<S>& tape, const Tensor<S>& x, int r0, int r1) {
  detail::require_matrix(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1) throw dim_error("slice_rows: bad range");
  const int c = x.cols();
  Tensor<S> out = Tensor<S>::zeros({r1 - r0, c});
  std::copy_n(x.data() + static_cast<size_t>(r0) * c, static_cast<size_t>(r1 - r0) * c, out.data());
  tape.record(out, [xd = x.node(), od = out.node(), r0, c]() {
    xd->ensure_grad();
    for (size_t i = 0; i < od->numel(); ++i) xd->grad[static_cast<size_t>(r0) * c + i] += od->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> slice_cols(Tape<S>& tape, const Tensor<S>& x, int c0, int c1) {
  detail::require_matrix(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1) throw dim_error("slice_cols: bad range");
  const int m = x.rows(), c = x.cols(), w = c1 - c0;
  Tensor<S> out = Tensor<S>::zeros({m, w});
  for (int i = 0; i < m; ++i)
    std::copy_n(x.data() + static_cast<size_t>(i) * c + c0, w, out.data() + static_cast<size_t>(i) * w);
  tape.record(out, [xd = x.node(), od = out.node(), m, c, c0, w]() {
    xd->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        xd->grad[static_cast<size_t>(i) * c + c0 + j] += od->grad[static_cast<size_t>(i) * w + j];
  });
  return out;
}

template <class S>
Tensor<S> concat_rows(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw contract_error("concat_rows: no parts");
  const int c = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != c) throw dim_error("concat_rows: column extents disagree");
    total += p.rows();
  }
  Tensor<S> out = Tensor<S>::zeros({total, c});
  size_t off = 0;
  std::vector<std::shared_ptr<TensorData<S>>> srcs;
  std::vector<size_t> offs;
  for (const auto& p : parts) {
    std::copy_n(p.data(), p.numel(), out.data() + off);
    srcs.push_back(p.node());
    offs.push_back(off);
    off += p.numel();
  }
  tape.record(out, [srcs, offs, od = out.node()]() {
    for (size_t i = 0; i < srcs.size(); ++i) {
      srcs[i]->ensure_grad();
      for (size_t j = 0; j < srcs[i]->numel(); ++j) srcs[i]->grad[j] += od->grad[offs[i] + j];
    }
  });
  return out;
}

template <class S>
Tensor<S> concat_cols(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_matrix(a, "concat_cols");
  detail::require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) throw dim_error("concat_cols: row extents disagree");
  const int m = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor<S> out = Tensor<S>::zeros({m, ca + cb});
  for (int i = 0; i < m; ++i) {
    std::copy_n(a.data() + static_cast<size_t>(i) * ca, ca,
                out.data() + static_cast<size_t>(i) * (ca + cb));
    std::copy_n(b.data() + static_cast<size_t>(i) * cb, cb,
                out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
  }
  tape.record(out, [ad = a.node(), bd = b.node(), od = out.node(), m, ca, cb]() {
    ad->ensure_grad();
    bd->ensure_grad();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < ca; ++j)
        ad->grad[static_cast<size_t>(i) * ca + j] += od->grad[static_cast<size_t>(i) * (ca + cb) + j];
      for (int j = 0; j < cb; ++j)
        bd->grad[static_cast<size_t>(i) * cb + j] +=
            od->grad[static_cast<size_t>(i) * (ca + cb) + ca + j];
    }
  });
  return out;
}

}  // namespace dv
