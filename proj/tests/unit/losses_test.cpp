// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "vcmil/errors.hpp"
#include "vcmil/losses.hpp"
#include "vcmil/ops.hpp"

using namespace vcmil;
using vcmil::testing::check_gradient;
using vcmil::testing::random_tensor;

namespace {

Tensor column(std::vector<float> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

LossConfig no_lambdas() {
  LossConfig c;
  c.lambda_smooth = 0.0f;
  c.lambda_sparse = 0.0f;
  return c;
}

Tensor uniform_scores(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.01f, 0.99f);
  std::vector<float> v(n);
  for (float& x : v) x = dist(rng);
  return column(std::move(v));
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("hinge endpoints") {
  const auto cfg = no_lambdas();
  CHECK(mil_ranking_loss(column({0.0f, 1.0f, 0.2f}), column({0.0f, 0.0f, 0.0f}), cfg)
            .hinge.item() == 0.0f);
  CHECK(mil_ranking_loss(column({0.3f, 0.6f}), column({0.6f, 0.1f}), cfg)
            .hinge.item() == 1.0f);
}

TEST_CASE("constant abnormal bag") {
  LossConfig cfg;
  const float c = 0.25f;
  const auto t = mil_ranking_loss(column(std::vector<float>(32, c)),
                                  column(std::vector<float>(32, 0.1f)), cfg);
  CHECK(t.smooth.item() == 0.0f);
  CHECK(t.sparse.item() == doctest::Approx(32.0 * 8e-5 * c).epsilon(1e-6));
  CHECK(t.total.item() ==
        doctest::Approx(t.hinge.item() + t.smooth.item() + t.sparse.item()));
}

TEST_CASE("smoothness and sparsity by hand") {
  LossConfig cfg;
  cfg.lambda_smooth = 0.5f;
  cfg.lambda_sparse = 0.25f;
  const auto t = mil_ranking_loss(column({0.1f, 0.4f, 0.2f}), column({0.3f}), cfg);
  CHECK(t.smooth.item() == doctest::Approx(0.5 * (0.09 + 0.04)));
  CHECK(t.sparse.item() == doctest::Approx(0.25 * 0.7));
  CHECK(t.hinge.item() == doctest::Approx(0.9));
}

TEST_CASE("ranking loss permutation invariance") {
  const auto cfg = no_lambdas();
  const Tensor a = uniform_scores(32, 1), n = uniform_scores(32, 2);
  std::vector<std::size_t> perm(32);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  const float base = mil_ranking_loss(a, n, cfg).total.item();
  CHECK(mil_ranking_loss(index_rows(a, perm), n, cfg).total.item() == base);
  CHECK(mil_ranking_loss(a, index_rows(n, perm), cfg).total.item() == base);

  // The normal bag never enters the smoothness term.
  LossConfig smooth;
  CHECK(mil_ranking_loss(a, index_rows(n, perm), smooth).total.item() ==
        mil_ranking_loss(a, n, smooth).total.item());
}

TEST_CASE("ranking loss errors and ranges") {
  LossConfig cfg;
  CHECK_THROWS_AS(mil_ranking_loss(Tensor::zeros({0, 1}), column({0.5f}), cfg), ContractError);
  CHECK_THROWS_AS(mil_ranking_loss(Tensor(), column({0.5f}), cfg), ContractError);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = mil_ranking_loss(uniform_scores(32, seed), uniform_scores(32, seed + 100), cfg);
    CHECK(t.total.item() >= 0.0f);
    CHECK(std::isfinite(t.total.item()));
  }
}

TEST_CASE("video bce") {
  const float eps = kBceEpsilon;
  CHECK(video_bce_loss(Tensor::scalar(1.0f - eps), Tensor::scalar(eps)).item() <
        1e-5f);
  CHECK(video_bce_loss(Tensor::scalar(0.5f), Tensor::scalar(0.5f)).item() ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-7));
  const Tensor pa = Tensor::scalar(0.0f, true);
  const Tensor worst = video_bce_loss(pa, Tensor::scalar(1.0f));
  CHECK(std::isfinite(worst.item()));
  CHECK(worst.item() > 30.0f);
  backward(worst);
  CHECK(std::isfinite(pa.grad()[0]));
  CHECK_THROWS_AS(video_bce_loss(column({0.5f, 0.5f}), Tensor::scalar(0.5f)), ShapeError);
}

TEST_CASE("top-k selection") {
  CHECK(rtfm_select_topk(Tensor({4, 1}, {0, 0, 5, 0}), 1) == std::vector<std::size_t>{2});
  CHECK(rtfm_select_topk(Tensor::full({4, 3}, 1.0f), 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(rtfm_select_topk(Tensor::zeros({4, 3}), 5), ContractError);
  CHECK_THROWS_AS(rtfm_select_topk(Tensor::zeros({4, 3}), 0), ContractError);

  // Exhaustive sort oracle.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor({32, 4}, seed);
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t r = 0; r < 32; ++r) {
      double ss = 0.0;
      for (std::size_t c = 0; c < 4; ++c) ss += double(x.at(r, c)) * x.at(r, c);
      keyed.push_back({-std::sqrt(ss), r});
    }
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t k : {1, 3, 7}) {
      std::vector<std::size_t> want;
      for (std::size_t i = 0; i < k; ++i) want.push_back(keyed[i].second);
      CHECK(rtfm_select_topk(x, k) == want);
    }
  }
}

TEST_CASE("rtfm loss by hand") {
  LossConfig cfg;
  cfg.rtfm_k = 2;
  cfg.rtfm_margin = 4.0f;
  // Magnitudes 1, 3, 2, 0 and 1, 1, 0.5, 2.
  const Tensor fa({4, 2}, {1, 0, 0, 3, 0, 2, 0, 0});
  const Tensor fn({4, 2}, {1, 0, 0, 1, 0.5f, 0, 0, 2});
  const Tensor sa = column({0.1f, 0.8f, 0.6f, 0.9f});
  const Tensor sn = column({0.2f, 0.4f, 0.3f, 0.1f});
  const auto t = rtfm_loss(fa, fn, sa, sn, cfg);
  // Abnormal picks rows 1, 2 (mean score 0.7, mean magnitude 2.5); normal
  // picks row 3 then row 0 (mean score 0.15, mean magnitude 1.5).
  CHECK(t.bce.item() == doctest::Approx(-std::log(0.7) - std::log(0.85)).epsilon(1e-6));
  CHECK(t.ranking.item() == doctest::Approx(4.0 - 2.5 + 1.5));
}

TEST_CASE("rtfm ranking endpoints") {
  LossConfig cfg;
  const Tensor f = random_tensor({32, 8}, 4);
  const Tensor s = uniform_scores(32, 5);
  CHECK(rtfm_loss(f, f, s, s, cfg).ranking.item() == doctest::Approx(100.0));
  const Tensor far = Tensor::full({32, 8}, 50.0f);
  CHECK(rtfm_loss(far, f, s, s, cfg).ranking.item() == 0.0f);
  CHECK_THROWS_AS(rtfm_loss(f, random_tensor({32, 4}, 0), s, s, cfg), ShapeError);
  CHECK_THROWS_AS(rtfm_loss(f, f, uniform_scores(31, 0), s, cfg), ShapeError);
}

TEST_CASE("loss gradients match finite differences") {
  LossConfig cfg;
  cfg.lambda_smooth = 0.1f;
  cfg.lambda_sparse = 0.1f;
  check_gradient(
      [&](const auto& in) { return mil_ranking_loss(in[0], in[1], cfg).total; },
      {uniform_scores(8, 6), uniform_scores(8, 7)});
  check_gradient([](const auto& in) { return video_bce_loss(in[0], in[1]); },
                 {Tensor::scalar(0.7f), Tensor::scalar(0.2f)});
  LossConfig rtfm;
  rtfm.rtfm_margin = 1.0f;
  rtfm.rtfm_k = 2;
  const Tensor fa = random_tensor({6, 3}, 8), fn = random_tensor({6, 3}, 9);
  const Tensor sa = uniform_scores(6, 10), sn = uniform_scores(6, 11);
  REQUIRE(rtfm_loss(fa, fn, sa, sn, rtfm).ranking.item() > 0.1f);
  check_gradient(
      [&](const auto& in) {
        const auto t = rtfm_loss(in[0], in[1], in[2], in[3], rtfm);
        return add(t.bce, t.ranking);
      },
      {fa, fn, sa, sn});
}

TEST_CASE("combined loss composition") {
  LossConfig cfg;
  LossParts parts;
  CHECK_THROWS_AS(combined_loss(LossMode::kMilBert, parts, cfg), ContractError);
  parts.bce_video = Tensor::scalar(0.4f);
  CHECK_THROWS_AS(combined_loss(LossMode::kMilBert, parts, cfg), ContractError);
  CHECK_THROWS_AS(combined_loss(LossMode::kRtfmBert, parts, cfg), ContractError);

  parts.mil = MilRankingTerms{Tensor::scalar(0.5f), Tensor::scalar(0.01f),
                              Tensor::scalar(0.02f), Tensor::scalar(0.53f)};
  CHECK(combined_loss(LossMode::kMilBert, parts, cfg).item() == doctest::Approx(0.93));

  parts.rtfm = RtfmTerms{Tensor::scalar(0.8f), Tensor::scalar(3.0f)};
  cfg.beta = 0.5f;
  CHECK(combined_loss(LossMode::kRtfmBert, parts, cfg).item() ==
        doctest::Approx(0.5 * 0.4 + 0.5 * 0.8 + 3.0));
  cfg.beta = 1.0f;
  CHECK(combined_loss(LossMode::kRtfmBert, parts, cfg).item() == doctest::Approx(3.4));
}

TEST_CASE("beta endpoints cut one bce path") {
  for (float beta : {0.0f, 1.0f}) {
    LossConfig cfg;
    cfg.beta = beta;
    const Tensor pa = Tensor::scalar(0.6f, true), pn = Tensor::scalar(0.3f, true);
    const Tensor sa = uniform_scores(6, 12), sn = uniform_scores(6, 13);
    sa.set_requires_grad(true);
    sn.set_requires_grad(true);
    LossParts parts;
    parts.bce_video = video_bce_loss(pa, pn);
    parts.rtfm = rtfm_loss(random_tensor({6, 3}, 14), random_tensor({6, 3}, 15), sa, sn, cfg);
    backward(combined_loss(LossMode::kRtfmBert, parts, cfg));
    auto norm = [](const Tensor& t) {
      double s = 0.0;
      if (t.has_grad()) {
        for (float g : t.grad()) s += std::abs(g);
      }
      return s;
    };
    const double video = norm(pa) + norm(pn), instance = norm(sa) + norm(sn);
    CHECK((beta == 0.0f ? video : instance) == 0.0);
    CHECK((beta == 0.0f ? instance : video) > 0.0);
  }
}

TEST_CASE("config validation and names") {
  LossConfig cfg;
  cfg.beta = 1.5f;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LossConfig{};
  cfg.rtfm_k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_loss_mode("rtfm_bert") == LossMode::kRtfmBert);
  CHECK(to_string(LossMode::kMilBert) == "mil_bert");
  CHECK_THROWS_AS(parse_loss_mode("rtfm"), ConfigError);
}

}  // TEST_SUITE
