// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vcmil/rng.hpp"
#include "vcmil/tensor.hpp"

namespace vcmil {

// Binary elementwise ops accept rhs of identical shape, a [1, C] row that is
// broadcast over the rows of a rank-2 lhs, or a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);
Tensor neg(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Scalar max over all elements; the gradient goes to the first argmax only.
Tensor max(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Exact form 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis. gamma and beta have the last-axis length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
// Unit l2 norm per row of a rank-2 tensor; zero rows stay zero.
Tensor l2_normalize(const Tensor& x);
// l2 magnitude of each row, shape [rows, 1].
Tensor row_norm(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);

// Inverted dropout. Identity when !training or p == 0; the mask is a pure
// function of (stream.seed, stream.stream, call index, element index).
Tensor dropout(const Tensor& x, float p, bool training, DropoutStream* stream);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, float s) { return scale(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, float s) { return add_scalar(a, s); }
inline Tensor operator-(float s, const Tensor& a) {
  return add_scalar(neg(a), s);
}
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace vcmil
