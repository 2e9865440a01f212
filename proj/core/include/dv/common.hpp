// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace dv {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// shape disagreement between operands
struct dim_error : error {
  using error::error;
};
// a documented precondition was violated by the caller
struct contract_error : error {
  using error::error;
};
// scalar argument outside its legal interval
struct domain_error : error {
  using error::error;
};
// sequence does not fit the configured position budget
struct capacity_error : error {
  using error::error;
};
// non-finite value where a finite one is required
struct numeric_error : error {
  using error::error;
};
// invalid configuration value
struct config_error : error {
  using error::error;
};
// file i/o failure or malformed file
struct io_error : error {
  using error::error;
};

// Fixed 64-byte alignment for numeric buffers. Vectorized kernels pick their
// prologue by runtime pointer alignment, so reproducible arithmetic needs
// every buffer to start on the same boundary regardless of heap history.
template <class T, std::size_t Align = 64>
struct AlignedAlloc {
  using value_type = T;

  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }

  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };

  friend bool operator==(const AlignedAlloc&, const AlignedAlloc&) { return true; }
  friend bool operator!=(const AlignedAlloc&, const AlignedAlloc&) { return false; }
};

template <class S>
using AlignedVec = std::vector<S, AlignedAlloc<S>>;

// Dense row-major matrix of plain values (no gradient tracking).
template <class S = float>
struct FrameMat {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;

  FrameMat() = default;
  FrameMat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, S(0)) {
    if (r < 0 || c < 0) throw dim_error("FrameMat: negative extent");
  }

  S& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  const S& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t numel() const { return v.size(); }
  bool same_shape(const FrameMat& o) const { return rows == o.rows && cols == o.cols; }
};

using FrameMatrix = FrameMat<float>;

template <class S>
bool all_finite(const FrameMat<S>& m) {
  for (S x : m.v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

// Vocabulary layout: ids [0, V-2) carry content, V-2 terminates every
// transcript, V-1 is the learned null condition used when text is dropped.
constexpr int terminal_token(int vocab_size) { return vocab_size - 2; }
constexpr int null_token(int vocab_size) { return vocab_size - 1; }

// Boolean attention mask over score matrices. allow[i*cols+j] != 0 means
// position i may attend to position j. Square masks additionally require a
// true diagonal so every position sees itself.
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allow;

  AttentionMask() = default;
  AttentionMask(int r, int c) : rows(r), cols(c), allow(static_cast<size_t>(r) * c, 0) {}

  static AttentionMask full(int n) {
    AttentionMask m(n, n);
    std::fill(m.allow.begin(), m.allow.end(), uint8_t(1));
    return m;
  }

  static AttentionMask causal(int n) {
    AttentionMask m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) m.allow[static_cast<size_t>(i) * n + j] = 1;
    return m;
  }

  bool at(int i, int j) const { return allow[static_cast<size_t>(i) * cols + j] != 0; }
  void set(int i, int j, bool b) { allow[static_cast<size_t>(i) * cols + j] = b ? 1 : 0; }

  void validate() const {
    if (rows <= 0 || cols <= 0) throw contract_error("AttentionMask: empty mask");
    for (int i = 0; i < rows; ++i) {
      bool any = false;
      for (int j = 0; j < cols; ++j) any = any || at(i, j);
      if (!any) throw contract_error("AttentionMask: row " + std::to_string(i) + " attends nowhere");
    }
    if (rows == cols) {
      for (int i = 0; i < rows; ++i)
        if (!at(i, i)) throw contract_error("AttentionMask: diagonal must be true");
    }
  }
};

}  // namespace dv
