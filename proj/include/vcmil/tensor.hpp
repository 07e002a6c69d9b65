// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f32 tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto a shared node. Ops build new nodes; when
// grad mode is on and any input requires a gradient, the output node keeps
// its inputs alive together with a closure that pushes the output gradient
// back into them. backward() walks that graph in reverse topological order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vcmil {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until populated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<float>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const float> data() const;
  // Writable view; intended for parameters and the optimizer only.
  std::span<float> mutable_data() const;
  float item() const;
  float at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value) const;
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad() const;
  void zero_grad() const;

  // Same values, no tape history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& impl() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Grad mode is thread-local so eval-mode forwards on other threads never
// touch the tape.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Accumulates d(loss)/d(t) into every requires_grad leaf reachable from loss.
// Leaves keep accumulating across calls until zero_grad().
void backward(const Tensor& loss);

namespace detail {

// Builds an op output. The closure is attached only when grad mode is on and
// at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<float> values,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn);
Tensor make_result(Shape shape, std::vector<float> values,
                   const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace vcmil
