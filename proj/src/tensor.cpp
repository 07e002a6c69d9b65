// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "vcmil/errors.hpp"

namespace vcmil {

const char* to_string(DataErrorCode code) {
  switch (code) {
    case DataErrorCode::kIo: return "io";
    case DataErrorCode::kBadMagic: return "bad-magic";
    case DataErrorCode::kUnsupportedVersion: return "unsupported-version";
    case DataErrorCode::kTruncated: return "truncated";
    case DataErrorCode::kDimMismatch: return "dim-mismatch";
    case DataErrorCode::kManifest: return "manifest";
    case DataErrorCode::kGroundTruth: return "ground-truth";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

namespace {

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const float> Tensor::data() const { return checked(node_).data; }

std::span<float> Tensor::mutable_data() const {
  checked(node_);
  return node_->data;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

float Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= rows() || col >= cols()) {
    throw ShapeError("at(" + std::to_string(row) + ", " + std::to_string(col) +
                     ") on " + shape_str(shape()));
  }
  return node_->data[row * cols() + col];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) const {
  checked(node_);
  node_->requires_grad = value;
}

bool Tensor::has_grad() const {
  const auto& n = checked(node_);
  return n.grad.size() == n.data.size() && !n.data.empty();
}

std::span<const float> Tensor::grad() const { return checked(node_).grad; }

std::span<float> Tensor::mutable_grad() const {
  checked(node_);
  return node_->grad_buffer();
}

void Tensor::zero_grad() const {
  checked(node_);
  if (!node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
  }
}

Tensor Tensor::detach() const {
  return Tensor(shape(), std::vector<float>(data().begin(), data().end()));
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape())
                                        : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss with no gradient path");
  }

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (node->backward_fn) {
      node->grad.assign(node->data.size(), 0.0f);
    } else {
      node->grad_buffer();
    }
  }
  loss.impl()->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

namespace detail {

namespace {

Tensor finish(Shape shape, std::vector<float> values,
              std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(values));
  if (grad_enabled() && !parents.empty()) {
    auto& node = *out.impl();
    node.requires_grad = true;
    node.parents = std::move(parents);
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace

Tensor make_result(Shape shape, std::vector<float> values,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  std::vector<std::shared_ptr<Node>> parents;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) parents.push_back(t->impl());
  }
  return finish(std::move(shape), std::move(values), std::move(parents),
                std::move(backward_fn));
}

Tensor make_result(Shape shape, std::vector<float> values,
                   const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn) {
  std::vector<std::shared_ptr<Node>> parents;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) parents.push_back(t.impl());
  }
  return finish(std::move(shape), std::move(values), std::move(parents),
                std::move(backward_fn));
}

}  // namespace detail

}  // namespace vcmil
