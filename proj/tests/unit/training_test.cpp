// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <limits>
#include <json.hpp>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "vcmil/binary_io.hpp"
#include "vcmil/errors.hpp"
#include "vcmil/training.hpp"

using namespace vcmil;
using vcmil::testing::TempDir;
using vcmil::testing::values;

namespace {

struct Splits {
  std::vector<FeatureSequence> train;
  std::vector<FeatureSequence> test;
};

Splits small_data(std::uint64_t seed = 1) {
  SynthConfig sc;
  sc.n_train = 16;
  sc.n_test = 8;
  sc.dim = 16;
  sc.min_snippets = 32;
  sc.max_snippets = 48;
  sc.anomaly_scale = 3.0;
  sc.seed = seed;
  Splits out;
  for (auto& v : synth_videos(sc)) {
    (v.split == Split::kTrain ? out.train : out.test).push_back(std::move(v.sequence));
  }
  return out;
}

RunConfig small_run(std::size_t epochs) {
  RunConfig c;
  c.train.model.bert_heads = 2;
  c.train.model.mil.hidden1 = 16;
  c.train.model.mil.hidden2 = 8;
  c.train.epochs = epochs;
  c.train.lr = 1e-3f;
  c.train.seed = 5;
  return c;
}

double segment_auc(const std::vector<MetricReport>& reports) {
  for (const auto& r : reports) {
    if (r.granularity == Granularity::kSegment) return r.auc;
  }
  FAIL("no segment report");
  return 0.0;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("loss trends down") {
  const Splits d = small_data();
  Trainer t(small_run(4), d.train, d.test);
  t.run();
  const auto steps = t.log().steps();
  REQUIRE(steps.size() == 4 * t.pairs_per_epoch());
  REQUIRE(steps.size() >= 20);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += steps[i].total;
    last += steps[steps.size() - 1 - i].total;
  }
  CHECK(last < first);
  for (const auto& s : steps) {
    CHECK(s.hinge.has_value());
    CHECK(std::isfinite(s.total));
    CHECK(s.grad_norm >= 0.0);
  }
  CHECK(t.log().evals().size() == 1);
}

TEST_CASE("identical seeds give identical logs") {
  const Splits d = small_data();
  Trainer a(small_run(2), d.train, d.test);
  Trainer b(small_run(2), d.train, d.test);
  a.run();
  b.run();
  CHECK(a.log().to_jsonl() == b.log().to_jsonl());
  CHECK(a.log().to_jsonl().find("wall") == std::string::npos);
  CHECK(b.log().timing_jsonl().find("wall") != std::string::npos);

  RunConfig other = small_run(2);
  other.train.seed = 6;
  Trainer c(other, d.train, d.test);
  c.run();
  CHECK(c.log().to_jsonl() != a.log().to_jsonl());
}

TEST_CASE("log lines are valid json") {
  const Splits d = small_data();
  Trainer t(small_run(1), d.train, d.test);
  t.run();
  const std::string text = t.log().to_jsonl();
  std::size_t lines = 0, start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    const auto j = nlohmann::json::parse(text.substr(start, end - start));
    CHECK(j.contains("step"));
    start = end + 1;
    ++lines;
  }
  CHECK(lines == t.log().entries().size());
}

TEST_CASE("zero epochs keeps the initial weights") {
  const Splits d = small_data();
  TempDir dir("train_zero");
  Trainer t(small_run(0), d.train, d.test);
  t.set_output_dir(dir.path());
  t.run();
  CHECK(t.completed_steps() == 0);
  RunConfig cfg = small_run(0);
  cfg.train.model.dim_in = 16;
  const AnomalyModel init(cfg.train.model, cfg.train.seed);
  const LoadedCheckpoint ck = load_checkpoint(dir / "last.ckpt");
  const auto a = init.parameters(), b = ck.model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(values(a[i].tensor) == values(b[i].tensor));
  }
}

TEST_CASE("two-step training freezes the aggregator") {
  const Splits d = small_data();
  RunConfig cfg = small_run(4);
  cfg.train.two_step_epochs = 2;
  Trainer t(cfg, d.train, d.test);
  t.run_epoch();
  t.run_epoch();
  CHECK_FALSE(t.model().aggregator_frozen());
  const AnomalyModel before = t.model().clone();
  t.run_epoch();
  t.run_epoch();
  CHECK(t.model().aggregator_frozen());
  const auto a = before.parameters(), b = t.model().parameters();
  bool head_moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name.rfind("bert.", 0) == 0) {
      CHECK(values(a[i].tensor) == values(b[i].tensor));
    } else if (values(a[i].tensor) != values(b[i].tensor)) {
      head_moved = true;
    }
  }
  CHECK(head_moved);
  const auto steps = t.log().steps();
  CHECK_FALSE(steps.front().hinge.has_value());
  CHECK(steps.back().hinge.has_value());

  Trainer joint(small_run(4), d.train, d.test);
  joint.run();
  CHECK(std::abs(segment_auc(t.evaluate_now()) - segment_auc(joint.evaluate_now())) < 0.03);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  const Splits d = small_data();
  TempDir dir("train_resume");
  Trainer full(small_run(3), d.train, d.test);
  full.run();

  Trainer first(small_run(3), d.train, d.test);
  first.set_output_dir(dir.path());
  first.run_epoch();
  for (int i = 0; i < 3; ++i) first.step();
  first.save(dir / "mid.ckpt");

  Trainer resumed(load_checkpoint(dir / "mid.ckpt"), d.train, d.test);
  CHECK(resumed.completed_steps() == first.completed_steps());
  resumed.run();
  const auto a = full.log().steps(), b = resumed.log().steps();
  REQUIRE(b.size() == a.size() - first.completed_steps());
  REQUIRE(b.size() >= 10);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& x = a[i + first.completed_steps()];
    CHECK(x.step == b[i].step);
    CHECK(x.abnormal_id == b[i].abnormal_id);
    CHECK(x.normal_id == b[i].normal_id);
    CHECK(x.total == b[i].total);
  }
  const auto pa = full.model().parameters(), pb = resumed.model().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(values(pa[i].tensor) == values(pb[i].tensor));
  }
}

TEST_CASE("non-finite loss aborts with a dump") {
  Splits d = small_data();
  for (auto& v : d.train) {
    v.features.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  }
  TempDir dir("train_nan");
  Trainer t(small_run(1), d.train, d.test);
  t.set_output_dir(dir.path());
  CHECK_THROWS_AS(t.step(), NumericAbort);
  REQUIRE(std::filesystem::exists(dir / "nan_dump.json"));
  const auto dump = nlohmann::json::parse(io::read_file(dir / "nan_dump.json"));
  CHECK(dump["record"]["step"] == 1);
  CHECK(dump["abnormal"]["non_finite_features"] == 1);
}

TEST_CASE("learning rate schedule") {
  TrainConfig tc;
  tc.lr = 1e-3f;
  tc.lr_min = 1e-5f;
  tc.epochs = 100;
  tc.cosine_start = 50;
  CHECK(scheduled_lr(tc, 0.0) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(tc, 49.9) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(tc, 75.0) == doctest::Approx(0.5 * (1e-3 + 1e-5)).epsilon(1e-6));
  CHECK(scheduled_lr(tc, 100.0) == doctest::Approx(1e-5).epsilon(1e-6));
  double prev = scheduled_lr(tc, 50.0);
  for (double e = 51.0; e <= 100.0; e += 1.0) {
    const double lr = scheduled_lr(tc, e);
    CHECK(lr <= prev);
    prev = lr;
  }
  tc.cosine_start = 200;
  CHECK(scheduled_lr(tc, 100.0) == doctest::Approx(1e-3));
}

TEST_CASE("missing class in the training split") {
  Splits d = small_data();
  std::vector<FeatureSequence> normals;
  for (auto& v : d.train) {
    if (v.label == VideoLabel::kNormal) normals.push_back(v);
  }
  CHECK_THROWS_AS(Trainer(small_run(1), normals, d.test), ConfigError);
}

}  // TEST_SUITE
