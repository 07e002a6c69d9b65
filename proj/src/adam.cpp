// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/adam.hpp"

#include <cmath>
#include <string>

#include "vcmil/errors.hpp"

namespace vcmil {

void adam_step(std::span<const Tensor> params, AdamState& state) {
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0f);
      state.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].numel() ||
        state.v[k].size() != params[k].numel()) {
      throw ShapeError("adam: moment buffer " + std::to_string(k) +
                       " does not match parameter shape " +
                       shape_str(params[k].shape()));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = params[k];
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  double ss = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) ss += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const float factor = static_cast<float>(max_norm / norm);
    for (const Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (float& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace vcmil
