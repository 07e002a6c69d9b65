// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Score arguments are [M, 1] (or any shape with M
// elements) tensors of per-instance probabilities; feature arguments are
// [M, D] matrices of the instances those scores came from.

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "vcmil/tensor.hpp"

namespace vcmil {

enum class LossMode { kMilBert, kRtfmBert };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

struct LossConfig {
  float lambda_smooth = 8e-5f;
  float lambda_sparse = 8e-5f;
  float beta = 0.5f;
  std::size_t rtfm_k = 3;
  float rtfm_margin = 100.0f;
  LossMode mode = LossMode::kMilBert;

  void validate() const;
};

inline constexpr float kBceEpsilon = 1e-7f;

struct MilRankingTerms {
  Tensor hinge;   // max(0, 1 - max s_a + max s_n)
  Tensor smooth;  // lambda_smooth * sum (s_a[i] - s_a[i+1])^2
  Tensor sparse;  // lambda_sparse * sum s_a[i]
  Tensor total;
};

MilRankingTerms mil_ranking_loss(const Tensor& scores_abnormal,
                                 const Tensor& scores_normal,
                                 const LossConfig& cfg);

// -log(p_a) - log(1 - p_n), both clamped to [eps, 1 - eps].
Tensor video_bce_loss(const Tensor& p_abnormal, const Tensor& p_normal);

// Indices of the k rows with the largest l2 norm, ties to the lower index,
// returned in descending-magnitude order.
std::vector<std::size_t> rtfm_select_topk(const Tensor& features,
                                          std::size_t k);

struct RtfmTerms {
  Tensor bce;      // BCE(mean top-k s_a, 1) + BCE(mean top-k s_n, 0)
  Tensor ranking;  // max(0, margin - mean top-k |f_a| + mean top-k |f_n|)
};

RtfmTerms rtfm_loss(const Tensor& features_abnormal,
                    const Tensor& features_normal,
                    const Tensor& scores_abnormal,
                    const Tensor& scores_normal, const LossConfig& cfg);

struct LossParts {
  std::optional<MilRankingTerms> mil;
  std::optional<Tensor> bce_video;
  std::optional<RtfmTerms> rtfm;
};

// MIL_BERT: hinge + smooth + sparse + BCE_video.
// RTFM_BERT: beta * BCE_video + (1 - beta) * BCE_rtfm + ranking.
Tensor combined_loss(LossMode mode, const LossParts& parts,
                     const LossConfig& cfg);

}  // namespace vcmil
