// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vcmil/tensor.hpp"

namespace vcmil {

struct AdamState {
  std::uint64_t step = 0;
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  // First and second moments, one buffer per parameter in call order.
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

// One bias-corrected Adam update. Parameters that do not require a gradient
// or carry no gradient are left untouched, moments included.
void adam_step(std::span<const Tensor> params, AdamState& state);

// Rescales all gradients so their global l2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

}  // namespace vcmil
