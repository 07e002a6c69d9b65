// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used only by tests. None of them call into the
// code they check beyond reading tensors and parameters.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "reference_net.hpp"
#include "vcmil/model.hpp"
#include "vcmil/tensor.hpp"

namespace vcmil::oracle {

// --- finite differences ----------------------------------------------------

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;  // |a - n| / max(|a|, |n|), over entries above the floor
  double max_abs_error = 0.0;
  std::string worst;
};

// Compares analytic gradients against central differences of an f64 loss.
// An entry passes when |a - n| <= max(rel_tol * max(|a|, |n|), abs_floor).
inline GradCheck finite_difference(const std::function<double(const RefParams&)>& loss,
                                   RefParams params,
                                   const std::map<std::string, std::vector<float>>& analytic,
                                   double h, double rel_tol, double abs_floor) {
  GradCheck out;
  for (auto& [name, p] : params) {
    const auto& grad = analytic.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double lp = loss(params);
      p.value[i] = orig - h;
      const double lm = loss(params);
      p.value[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = grad[i];
      const double err = std::abs(a - numeric);
      const double mag = std::max(std::abs(a), std::abs(numeric));
      ++out.checked;
      out.max_abs_error = std::max(out.max_abs_error, err);
      if (err > abs_floor && mag > 0.0 && err / mag > out.max_rel_error) {
        out.max_rel_error = err / mag;
      }
      if (err > std::max(rel_tol * mag, abs_floor)) {
        ++out.failures;
        if (out.worst.empty()) {
          out.worst = name + "[" + std::to_string(i) + "] analytic=" +
                      std::to_string(a) + " numeric=" + std::to_string(numeric);
        }
      }
    }
  }
  return out;
}

// --- metrics ---------------------------------------------------------------

inline double pairwise_auc(std::span<const float> s, std::span<const std::uint8_t> y) {
  double greater = 0.0, ties = 0.0, pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg) += 1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      if (s[i] > s[j]) greater += 1.0;
      if (s[i] == s[j]) ties += 1.0;
    }
  }
  return (greater + 0.5 * ties) / (pos * neg);
}

// Recomputes precision and recall from scratch at every distinct threshold.
inline double sweep_ap(std::span<const float> s, std::span<const std::uint8_t> y) {
  std::vector<float> thresholds(s.begin(), s.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double total_pos = 0.0;
  for (auto v : y) total_pos += v;
  double ap = 0.0, prev_recall = 0.0;
  for (float t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] ? tp : fp) += 1.0;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

// --- segmentation ------------------------------------------------------------

// Segment of snippet j out of N when pooling into S segments, in closed form:
// for N >= S the unique i with floor(iN/S) <= j < floor((i+1)N/S), i.e.
// ceil((j+1)S/N) - 1; for N < S the first segment whose nearest snippet
// index floor(iN/S) equals j, i.e. ceil(jS/N).
inline std::size_t nearest_segment(std::size_t j, std::size_t n, std::size_t s) {
  if (n >= s) return ((j + 1) * s + n - 1) / n - 1;
  return (j * s + n - 1) / n;
}

// --- attention ----------------------------------------------------------------

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  }
  return m;
}

inline std::vector<double> affine(const std::vector<double>& x, const Linear& f) {
  std::vector<double> out(f.out_features());
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = f.bias.at(0, o);
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * f.weight.at(i, o);
    out[o] = acc;
  }
  return out;
}

inline std::vector<double> norm(const std::vector<double>& x, const LayerNorm& ln) {
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * ln.gamma.data()[i] +
             ln.beta.data()[i];
  }
  return out;
}

struct ReferenceBert {
  Matrix y;  // y_cls first, then y_1..y_S
  double p_video = 0.0;
};

// One block, one head. For every position i (the classification token
// included): a = LN(x), weights f(x_i, x_j) = softmax_j(theta(a_i) . phi(a_j) /
// sqrt(d)) normalized by their sum, u_i = x_i + Out(sum_j f(x_i, x_j) g(a_j)),
// y_i = u_i + PFFN(LN(u_i)) with PFFN(x) = W2 GELU(W1 x + b1) + b2.
inline ReferenceBert reference_bert(const BertAggregator& bert, const Tensor& segments) {
  const auto& block = bert.blocks.at(0);
  const std::size_t s = segments.rows();
  const std::size_t d = bert.cls_token.cols();
  Matrix x(s + 1, std::vector<double>(d));
  const Matrix seg = to_matrix(segments);
  for (std::size_t c = 0; c < d; ++c) x[0][c] = bert.cls_token.at(0, c);
  for (std::size_t r = 0; r < s; ++r) x[r + 1] = seg[r];
  for (std::size_t r = 0; r <= s; ++r) {
    for (std::size_t c = 0; c < d; ++c) x[r][c] += bert.positional.at(r, c);
  }

  Matrix q, k, v;
  for (const auto& row : x) {
    const auto a = norm(row, block.attn_norm);
    q.push_back(affine(a, block.query));
    k.push_back(affine(a, block.key));
    v.push_back(affine(a, block.value));
  }
  ReferenceBert out;
  for (std::size_t i = 0; i <= s; ++i) {
    std::vector<double> sim(s + 1);
    for (std::size_t j = 0; j <= s; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i][c] * k[j][c];
      sim[j] = std::exp(dot / std::sqrt(static_cast<double>(d)));
    }
    double normalizer = 0.0;
    for (double e : sim) normalizer += e;
    std::vector<double> mixed(d, 0.0);
    for (std::size_t j = 0; j <= s; ++j) {
      for (std::size_t c = 0; c < d; ++c) mixed[c] += v[j][c] * sim[j] / normalizer;
    }
    std::vector<double> u = affine(mixed, block.out);
    for (std::size_t c = 0; c < d; ++c) u[c] += x[i][c];
    std::vector<double> hidden = affine(norm(u, block.ffn_norm), block.ffn_in);
    for (double& h : hidden) h = 0.5 * h * (1.0 + std::erf(h / std::sqrt(2.0)));
    std::vector<double> y = affine(hidden, block.ffn_out);
    for (std::size_t c = 0; c < d; ++c) y[c] += u[c];
    out.y.push_back(std::move(y));
  }
  const double logit = affine(out.y[0], bert.classifier)[0];
  out.p_video = 1.0 / (1.0 + std::exp(-logit));
  return out;
}

}  // namespace vcmil::oracle
