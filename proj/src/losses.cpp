// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vcmil/errors.hpp"
#include "vcmil/ops.hpp"

namespace vcmil {

std::string_view to_string(LossMode mode) {
  return mode == LossMode::kMilBert ? "mil_bert" : "rtfm_bert";
}

LossMode parse_loss_mode(std::string_view text) {
  if (text == "mil_bert" || text == "MIL_BERT") return LossMode::kMilBert;
  if (text == "rtfm_bert" || text == "RTFM_BERT") return LossMode::kRtfmBert;
  throw ConfigError("unknown loss mode '" + std::string(text) +
                    "' (expected mil_bert or rtfm_bert)");
}

void LossConfig::validate() const {
  if (!(beta >= 0.0f && beta <= 1.0f)) {
    throw ConfigError("loss: beta must be in [0, 1]");
  }
  if (rtfm_k == 0) throw ConfigError("loss: rtfm_k must be >= 1");
  if (lambda_smooth < 0.0f || lambda_sparse < 0.0f || rtfm_margin < 0.0f) {
    throw ConfigError("loss: lambdas and margin must be non-negative");
  }
}

namespace {

Tensor flat(const Tensor& scores, const char* what) {
  if (!scores.defined() || scores.numel() == 0) {
    throw ContractError(std::string(what) + ": empty bag");
  }
  return scores.rank() == 1 ? scores : reshape(scores, {scores.numel()});
}

}  // namespace

MilRankingTerms mil_ranking_loss(const Tensor& scores_abnormal,
                                 const Tensor& scores_normal,
                                 const LossConfig& cfg) {
  const Tensor sa = flat(scores_abnormal, "mil_ranking_loss (abnormal)");
  const Tensor sn = flat(scores_normal, "mil_ranking_loss (normal)");

  MilRankingTerms t;
  t.hinge = relu(1.0f - max(sa) + max(sn));
  const std::size_t m = sa.numel();
  if (m > 1) {
    const Tensor diff = sub(slice(sa, 0, 0, m - 1), slice(sa, 0, 1, m - 1));
    t.smooth = scale(sum(mul(diff, diff)), cfg.lambda_smooth);
  } else {
    t.smooth = Tensor::scalar(0.0f);
  }
  t.sparse = scale(sum(sa), cfg.lambda_sparse);
  t.total = add(add(t.hinge, t.smooth), t.sparse);
  return t;
}

Tensor video_bce_loss(const Tensor& p_abnormal, const Tensor& p_normal) {
  if (p_abnormal.numel() != 1 || p_normal.numel() != 1) {
    throw ShapeError("video_bce_loss expects one score per video");
  }
  const Tensor pa = clamp(reshape(p_abnormal, {1}), kBceEpsilon, 1.0f - kBceEpsilon);
  const Tensor pn = clamp(reshape(p_normal, {1}), kBceEpsilon, 1.0f - kBceEpsilon);
  return neg(add(log(pa), log(1.0f - pn)));
}

std::vector<std::size_t> rtfm_select_topk(const Tensor& features,
                                          std::size_t k) {
  if (features.rank() != 2) {
    throw ShapeError("rtfm_select_topk expects [M, D] features");
  }
  const std::size_t m = features.rows();
  if (k == 0 || k > m) {
    throw ContractError("rtfm_select_topk: k=" + std::to_string(k) +
                        " out of range for " + std::to_string(m) +
                        " instances");
  }
  const std::size_t d = features.cols();
  auto data = features.data();
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      ss += static_cast<double>(data[i * d + j]) * data[i * d + j];
    }
    norms[i] = std::sqrt(ss);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (norms[a] != norms[b]) return norms[a] > norms[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

RtfmTerms rtfm_loss(const Tensor& features_abnormal,
                    const Tensor& features_normal,
                    const Tensor& scores_abnormal, const Tensor& scores_normal,
                    const LossConfig& cfg) {
  if (features_abnormal.rank() != 2 || features_normal.rank() != 2 ||
      features_abnormal.cols() != features_normal.cols()) {
    throw ShapeError("rtfm_loss: feature bags must be [M, D] with equal D");
  }
  const Tensor sa = flat(scores_abnormal, "rtfm_loss (abnormal)");
  const Tensor sn = flat(scores_normal, "rtfm_loss (normal)");
  if (sa.numel() != features_abnormal.rows() ||
      sn.numel() != features_normal.rows()) {
    throw ShapeError("rtfm_loss: one score per feature row required");
  }
  const auto top_a = rtfm_select_topk(features_abnormal, cfg.rtfm_k);
  const auto top_n = rtfm_select_topk(features_normal, cfg.rtfm_k);

  auto mean_scores = [](const Tensor& s, const std::vector<std::size_t>& idx) {
    return mean(index_rows(reshape(s, {s.numel(), 1}), idx));
  };
  const Tensor pa = clamp(mean_scores(sa, top_a), kBceEpsilon, 1.0f - kBceEpsilon);
  const Tensor pn = clamp(mean_scores(sn, top_n), kBceEpsilon, 1.0f - kBceEpsilon);

  RtfmTerms t;
  t.bce = neg(add(log(pa), log(1.0f - pn)));
  const Tensor mag_a = mean(index_rows(row_norm(features_abnormal), top_a));
  const Tensor mag_n = mean(index_rows(row_norm(features_normal), top_n));
  t.ranking = relu(add(cfg.rtfm_margin - mag_a, mag_n));
  return t;
}

Tensor combined_loss(LossMode mode, const LossParts& parts,
                     const LossConfig& cfg) {
  if (!parts.bce_video) {
    throw ContractError("combined_loss: video BCE term missing");
  }
  if (mode == LossMode::kMilBert) {
    if (!parts.mil) throw ContractError("combined_loss: MIL terms missing");
    return add(parts.mil->total, *parts.bce_video);
  }
  if (!parts.rtfm) throw ContractError("combined_loss: RTFM terms missing");
  return add(add(scale(*parts.bce_video, cfg.beta),
                 scale(parts.rtfm->bce, 1.0f - cfg.beta)),
             parts.rtfm->ranking);
}

}  // namespace vcmil
