// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dv/rng.hpp"
#include "dv/tensor.hpp"

namespace dvtest {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline std::vector<double> random_vec(size_t n, dv::Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

// central differences, step h
inline std::vector<double> fd_gradient(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Checks tape gradients of an op graph against central differences. The
// builder maps freshly created input tensors to one output tensor; the
// harness reduces the output to a scalar through a fixed random weighting so
// every output element influences the loss.
struct GradCheckSpec {
  std::vector<std::vector<int>> shapes;
  std::function<dv::Tensor<double>(dv::Tape<double>&, std::vector<dv::Tensor<double>>&)> build;
  double tol = 1e-6;
  double abs_floor = 1e-8;
  double h = 1e-5;
  uint64_t seed = 1;
  double input_scale = 1.0;
};

struct GradCheckResult {
  double max_rel = 0.0;
  double max_abs = 0.0;
  bool ok = true;
};

inline GradCheckResult run_grad_check(const GradCheckSpec& spec) {
  dv::Rng rng(spec.seed);
  size_t total = 0;
  std::vector<size_t> sizes;
  for (const auto& s : spec.shapes) {
    size_t n = 1;
    for (int e : s) n *= static_cast<size_t>(e);
    sizes.push_back(n);
    total += n;
  }
  std::vector<double> x0 = random_vec(total, rng, spec.input_scale);

  auto make_inputs = [&](const std::vector<double>& x) {
    std::vector<dv::Tensor<double>> inputs;
    size_t off = 0;
    for (size_t i = 0; i < spec.shapes.size(); ++i) {
      std::vector<double> chunk(x.begin() + off, x.begin() + off + sizes[i]);
      off += sizes[i];
      auto t = dv::Tensor<double>::from(spec.shapes[i], std::move(chunk));
      t.set_requires_grad(true);
      inputs.push_back(t);
    }
    return inputs;
  };

  std::vector<double> weights;
  {
    dv::Tape<double> tape;
    auto inputs = make_inputs(x0);
    dv::Tensor<double> out = spec.build(tape, inputs);
    dv::Rng wrng(spec.seed ^ 0xC0FFEE);
    weights = random_vec(out.numel(), wrng);
  }

  auto loss_of = [&](const std::vector<double>& x) {
    dv::Tape<double> tape;
    auto inputs = make_inputs(x);
    dv::Tensor<double> out = spec.build(tape, inputs);
    double acc = 0.0;
    for (size_t i = 0; i < out.numel(); ++i) acc += out.data()[i] * weights[i];
    return acc;
  };

  std::vector<double> analytic(total);
  {
    dv::Tape<double> tape;
    auto inputs = make_inputs(x0);
    dv::Tensor<double> out = spec.build(tape, inputs);
    dv::Tensor<double> w = dv::Tensor<double>::from(out.shape(), weights);
    dv::Tensor<double> loss = dv::sum(tape, dv::mul(tape, out, w));
    tape.backward(loss);
    size_t off = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
      const auto& g = inputs[i].grad_vec();
      std::copy(g.begin(), g.end(), analytic.begin() + off);
      off += sizes[i];
    }
  }

  std::vector<double> numeric = fd_gradient(loss_of, x0, spec.h);
  GradCheckResult res;
  for (size_t i = 0; i < total; ++i) {
    const double abs_diff = std::abs(analytic[i] - numeric[i]);
    const double rel = rel_err(analytic[i], numeric[i]);
    res.max_abs = std::max(res.max_abs, abs_diff);
    if (abs_diff > spec.abs_floor) {
      res.max_rel = std::max(res.max_rel, rel);
      if (rel > spec.tol) res.ok = false;
    }
  }
  return res;
}

}  // namespace dvtest
