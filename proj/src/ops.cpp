// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vcmil/errors.hpp"

namespace vcmil {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

void accumulate(const NodePtr& node, std::size_t i, float g) {
  node->grad_buffer()[i] += g;
}

enum class Broadcast { kSame, kRow, kScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
    return Broadcast::kRow;
  }
  throw ShapeError(std::string(op) + ": cannot combine " +
                   shape_str(a.shape()) + " with " + shape_str(b.shape()));
}

std::size_t rhs_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return i;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

std::size_t last_cols(const Tensor& a) {
  return a.rank() == 0 ? 1 : a.shape().back();
}

// Elementwise unary op: forward f(x), derivative df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  NodePtr xn = x.impl();
  return detail::make_result(x.shape(), std::move(out), {&x},
                             [xn, df](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] += self.grad[i] *
                                         df(xn->data[i], self.data[i]);
                               }
                             });
}

// (M x K) * (K x N) into out (M x N), double accumulation per row.
void gemm_nn(const float* a, const float* b, float* out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate_out) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* orow = out + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = accumulate_out ? orow[j] + static_cast<float>(acc[j])
                               : static_cast<float>(acc[j]);
    }
  }
}

// out (M x N) += A (M x K) * B^T where B is (N x K).
void gemm_nt_acc(const float* a, const float* b, float* out, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += static_cast<double>(arow[p]) * brow[p];
      }
      out[i * n + j] += static_cast<float>(acc);
    }
  }
}

// out (M x N) += A^T * B where A is (K x M) and B is (K x N).
void gemm_tn_acc(const float* a, const float* b, float* out, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::vector<double> acc(m * n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = acc.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < m * n; ++i) out[i] += static_cast<float>(acc[i]);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_rank2(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  const std::size_t cols = last_cols(a);
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[i] + bd[rhs_index(kind, i, cols)];
  }
  NodePtr an = a.impl(), bn = b.impl();
  return detail::make_result(
      a.shape(), std::move(out), {&a, &b}, [an, bn, kind, cols](Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const float g = self.grad[i];
          if (an->requires_grad) accumulate(an, i, g);
          if (bn->requires_grad) accumulate(bn, rhs_index(kind, i, cols), g);
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "sub");
  const std::size_t cols = last_cols(a);
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[i] - bd[rhs_index(kind, i, cols)];
  }
  NodePtr an = a.impl(), bn = b.impl();
  return detail::make_result(
      a.shape(), std::move(out), {&a, &b}, [an, bn, kind, cols](Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const float g = self.grad[i];
          if (an->requires_grad) accumulate(an, i, g);
          if (bn->requires_grad) accumulate(bn, rhs_index(kind, i, cols), -g);
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const std::size_t cols = last_cols(a);
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[i] * bd[rhs_index(kind, i, cols)];
  }
  NodePtr an = a.impl(), bn = b.impl();
  return detail::make_result(
      a.shape(), std::move(out), {&a, &b}, [an, bn, kind, cols](Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const float g = self.grad[i];
          const std::size_t j = rhs_index(kind, i, cols);
          if (an->requires_grad) accumulate(an, i, g * bn->data[j]);
          if (bn->requires_grad) accumulate(bn, j, g * an->data[i]);
        }
      });
}

Tensor scale(const Tensor& x, float factor) {
  return unary(
      x, [factor](float v) { return v * factor; },
      [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& x, float value) {
  return unary(
      x, [value](float v) { return v + value; },
      [](float, float) { return 1.0f; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0f); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<float> out(m * n);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  NodePtr an = a.impl(), bn = b.impl();
  return detail::make_result(
      {m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) {
          // dA = dC * B^T
          gemm_nt_acc(self.grad.data(), bn->data.data(),
                      an->grad_buffer().data(), m, n, k);
        }
        if (bn->requires_grad) {
          // dB = A^T * dC
          gemm_tn_acc(an->data.data(), self.grad.data(),
                      bn->grad_buffer().data(), k, m, n);
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<float> out(r * c);
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  }
  NodePtr xn = x.impl();
  return detail::make_result({c, r}, std::move(out), {&x},
                             [xn, r, c](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t i = 0; i < r; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   g[i * c + j] += self.grad[j * r + i];
                                 }
                               }
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  NodePtr xn = x.impl();
  return detail::make_result(std::move(shape), std::move(out), {&x},
                             [xn](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] += self.grad[i];
                               }
                             });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  NodePtr xn = x.impl();
  return detail::make_result({1}, {static_cast<float>(total)}, {&x},
                             [xn](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (float& gi : g) gi += self.grad[0];
                             });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  const float inv = 1.0f / static_cast<float>(x.numel());
  double total = 0.0;
  for (float v : x.data()) total += v;
  NodePtr xn = x.impl();
  return detail::make_result(
      {1}, {static_cast<float>(total / static_cast<double>(x.numel()))}, {&x},
      [xn, inv](Node& self) {
        auto& g = xn->grad_buffer();
        for (float& gi : g) gi += self.grad[0] * inv;
      });
}

Tensor max(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("max of an empty tensor");
  auto d = x.data();
  const std::size_t arg =
      static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
  NodePtr xn = x.impl();
  return detail::make_result({1}, {d[arg]}, {&x}, [xn, arg](Node& self) {
    accumulate(xn, arg, self.grad[0]);
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](float v) { return std::tanh(v); },
      [](float, float y) { return 1.0f - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x,
      [](float v) {
        const double d = v;
        return static_cast<float>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
      },
      [](float v, float) {
        const double d = v;
        const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
        return static_cast<float>(cdf + d * pdf);
      });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](float v) { return std::log(v); },
      [](float v, float) { return 1.0f / v; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary(
      x, [lo, hi](float v) { return std::clamp(v, lo, hi); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t t = 0; t < s.inner; ++t) {
      const std::size_t base = o * s.length * s.inner + t;
      float peak = -std::numeric_limits<float>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) {
        peak = std::max(peak, in[base + l * s.inner]);
      }
      double total = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const float e = std::exp(in[base + l * s.inner] - peak);
        out[base + l * s.inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t l = 0; l < s.length; ++l) {
        out[base + l * s.inner] =
            static_cast<float>(out[base + l * s.inner] * inv);
      }
    }
  }
  NodePtr xn = x.impl();
  return detail::make_result(
      x.shape(), std::move(out), {&x}, [xn, s](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t t = 0; t < s.inner; ++t) {
            const std::size_t base = o * s.length * s.inner + t;
            double dot = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t i = base + l * s.inner;
              dot += static_cast<double>(self.grad[i]) * self.data[i];
            }
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t i = base + l * s.inner;
              g[i] += static_cast<float>(self.data[i] * (self.grad[i] - dot));
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm on a rank-0 tensor");
  const std::size_t width = x.shape().back();
  if (gamma.numel() != width || beta.numel() != width) {
    throw ShapeError("layer_norm: gamma/beta must have " +
                     std::to_string(width) + " elements");
  }
  const std::size_t rows = x.numel() / width;
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(rows);
  auto in = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    for (std::size_t j = 0; j < width; ++j) {
      const float h = static_cast<float>((row[j] - mu) * is);
      xhat[r * width + j] = h;
      out[r * width + j] = h * gd[j] + bd[j];
    }
  }
  NodePtr xn = x.impl(), gn = gamma.impl(), bn = beta.impl();
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       width](Node& self) {
        for (std::size_t r = 0; r < rows; ++r) {
          const float* dy = self.grad.data() + r * width;
          const float* h = xhat.data() + r * width;
          if (gn->requires_grad) {
            auto& gg = gn->grad_buffer();
            for (std::size_t j = 0; j < width; ++j) gg[j] += dy[j] * h[j];
          }
          if (bn->requires_grad) {
            auto& bg = bn->grad_buffer();
            for (std::size_t j = 0; j < width; ++j) bg[j] += dy[j];
          }
          if (xn->requires_grad) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              const double dh = static_cast<double>(dy[j]) * gn->data[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh /= static_cast<double>(width);
            mean_dh_h /= static_cast<double>(width);
            auto& xg = xn->grad_buffer();
            for (std::size_t j = 0; j < width; ++j) {
              const double dh = static_cast<double>(dy[j]) * gn->data[j];
              xg[r * width + j] += static_cast<float>(
                  inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h));
            }
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x) {
  require_rank2(x, "l2_normalize");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<float> out(x.numel(), 0.0f);
  std::vector<float> norms(rows, 0.0f);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      ss += static_cast<double>(in[r * cols + j]) * in[r * cols + j];
    }
    const double n = std::sqrt(ss);
    norms[r] = static_cast<float>(n);
    if (n > 0.0) {
      for (std::size_t j = 0; j < cols; ++j) {
        out[r * cols + j] = static_cast<float>(in[r * cols + j] / n);
      }
    }
  }
  NodePtr xn = x.impl();
  return detail::make_result(
      x.shape(), std::move(out), {&x},
      [xn, norms = std::move(norms), rows, cols](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          if (norms[r] <= 0.0f) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            dot += static_cast<double>(self.grad[r * cols + j]) *
                   self.data[r * cols + j];
          }
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t i = r * cols + j;
            g[i] += static_cast<float>((self.grad[i] - self.data[i] * dot) /
                                       norms[r]);
          }
        }
      });
}

Tensor row_norm(const Tensor& x) {
  require_rank2(x, "row_norm");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<float> out(rows);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      ss += static_cast<double>(in[r * cols + j]) * in[r * cols + j];
    }
    out[r] = static_cast<float>(std::sqrt(ss));
  }
  NodePtr xn = x.impl();
  return detail::make_result({rows, 1}, std::move(out), {&x},
                             [xn, rows, cols](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const float n = self.data[r];
                                 if (n <= 0.0f) continue;
                                 const float k = self.grad[r] / n;
                                 for (std::size_t j = 0; j < cols; ++j) {
                                   g[r * cols + j] += k * xn->data[r * cols + j];
                                 }
                               }
                             });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) {
    throw ShapeError("concat axis " + std::to_string(axis) + " invalid for " +
                     shape_str(shape));
  }
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != shape[i]) {
        throw ShapeError("concat: " + shape_str(ps) + " vs " +
                         shape_str(shape));
      }
    }
    total += ps[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis);
  std::vector<float> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    auto pd = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pd.data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * s.length + offset) * s.inner);
    }
    offset += len;
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.impl());
  return detail::make_result(
      std::move(shape), std::move(out), parts,
      [nodes, offsets, s, axis](Node& self) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const NodePtr& pn = nodes[k];
          if (!pn->requires_grad) continue;
          const std::size_t len = pn->shape[axis];
          auto& g = pn->grad_buffer();
          for (std::size_t o = 0; o < s.outer; ++o) {
            const float* src =
                self.grad.data() + (o * s.length + offsets[k]) * s.inner;
            float* dst = g.data() + o * len * s.inner;
            for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (start + length > s.length || length == 0) {
    throw ShapeError("slice [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for " +
                     shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<float> out(shape_numel(shape));
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(in.data() + (o * s.length + start) * s.inner,
                length * s.inner, out.data() + o * length * s.inner);
  }
  NodePtr xn = x.impl();
  return detail::make_result(
      std::move(shape), std::move(out), {&x},
      [xn, s, start, length](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const float* src = self.grad.data() + o * length * s.inner;
          float* dst = g.data() + (o * s.length + start) * s.inner;
          for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
        }
      });
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "index_rows");
  const std::size_t cols = x.cols();
  std::vector<float> out(rows.size() * cols);
  auto in = x.data();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) {
      throw ShapeError("index_rows: row " + std::to_string(rows[k]) +
                       " out of range");
    }
    std::copy_n(in.data() + rows[k] * cols, cols, out.data() + k * cols);
  }
  NodePtr xn = x.impl();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return detail::make_result(
      {rows.size(), cols}, std::move(out), {&x},
      [xn, idx = std::move(idx), cols](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t k = 0; k < idx.size(); ++k) {
          for (std::size_t j = 0; j < cols; ++j) {
            g[idx[k] * cols + j] += self.grad[k * cols + j];
          }
        }
      });
}

Tensor dropout(const Tensor& x, float p, bool training,
               DropoutStream* stream) {
  if (p < 0.0f || p >= 1.0f) throw ContractError("dropout p must be in [0, 1)");
  if (!training || p == 0.0f) return x;
  if (stream == nullptr) {
    throw ContractError("training-mode dropout needs a DropoutStream");
  }
  const std::uint64_t call = stream->calls++;
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::uint64_t bits =
        counter_hash(stream->seed, stream->stream, (call << 32) ^ i);
    mask[i] = to_unit_float(bits) >= p ? keep_scale : 0.0f;
  }
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  NodePtr xn = x.impl();
  return detail::make_result(x.shape(), std::move(out), {&x},
                             [xn, mask = std::move(mask)](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] += self.grad[i] * mask[i];
                               }
                             });
}

}  // namespace vcmil
