// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "vcmil/binary_io.hpp"
#include "vcmil/data.hpp"
#include "vcmil/errors.hpp"

using namespace vcmil;
using vcmil::testing::random_tensor;
using vcmil::testing::TempDir;
using vcmil::testing::values;

namespace fs = std::filesystem;

namespace {

Tensor ramp(std::size_t n, std::size_t d = 2) {
  std::vector<float> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) v[i * d + c] = static_cast<float>(i);
  }
  return Tensor({n, d}, std::move(v));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

DataErrorCode error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.code();
  }
  FAIL("no DataError thrown");
  return DataErrorCode::kIo;
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("segmentation of 64 snippets pools pairs") {
  const SegmentedVideo s = segment(ramp(64));
  REQUIRE(s.segments.shape() == Shape{32, 2});
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(s.groups[i] == std::pair<std::size_t, std::size_t>{2 * i, 2 * i + 2});
    CHECK(s.segments.at(i, 0) == doctest::Approx(2.0 * i + 0.5));
  }
  std::vector<float> scores(32);
  for (std::size_t i = 0; i < 32; ++i) scores[i] = static_cast<float>(i);
  const auto back = inverse_segment(scores, s.assignment);
  REQUIRE(back.size() == 64);
  for (std::size_t j = 0; j < 64; j += 2) CHECK(back[j] == back[j + 1]);
}

TEST_CASE("segmentation of 32 snippets is the identity") {
  const Tensor x = random_tensor({32, 3}, 1);
  const SegmentedVideo s = segment(x);
  CHECK(values(s.segments) == values(x));
  for (std::size_t j = 0; j < 32; ++j) CHECK(s.assignment[j] == j);
  std::vector<float> scores(32);
  for (std::size_t i = 0; i < 32; ++i) scores[i] = 0.01f * static_cast<float>(i);
  CHECK(inverse_segment(scores, s.assignment) == scores);
}

TEST_CASE("short videos repeat the nearest snippet") {
  const SegmentedVideo s = segment(ramp(5));
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(s.segments.at(i, 0) == static_cast<float>(i * 5 / 32));
  }
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(s.assignment[j] == oracle::nearest_segment(j, 5, 32));
  }
}

TEST_CASE("segmentation invariants over many lengths") {
  for (std::size_t n : {1, 2, 7, 31, 33, 45, 64, 100, 257}) {
    CAPTURE(n);
    const SegmentedVideo s = segment(ramp(n));
    CHECK(s.segments.rows() == 32);
    REQUIRE(s.assignment.size() == n);
    std::set<std::size_t> segs;
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(s.assignment[j] == oracle::nearest_segment(j, n, 32));
      if (j > 0) CHECK(s.assignment[j] >= s.assignment[j - 1]);
      segs.insert(s.assignment[j]);
    }
    if (n >= 32) {
      CHECK(segs.size() == 32);
      std::size_t lo = n, hi = 0, covered = 0;
      for (const auto& [b, e] : s.groups) {
        CHECK(b == covered);
        covered = e;
        lo = std::min(lo, e - b);
        hi = std::max(hi, e - b);
      }
      CHECK(covered == n);
      CHECK(hi - lo <= 1);
    }
    // Constant per segment after the round trip.
    std::vector<float> scores(32);
    for (std::size_t i = 0; i < 32; ++i) scores[i] = static_cast<float>(i);
    const auto back = inverse_segment(scores, s.assignment);
    for (std::size_t j = 0; j < n; ++j) CHECK(back[j] == scores[s.assignment[j]]);
  }
  CHECK_THROWS_AS(segment(Tensor::zeros({0, 2})), ContractError);
}

TEST_CASE("feature file round trip and errors") {
  TempDir dir("features");
  const Tensor x = random_tensor({7, 5}, 2);
  save_feature_file(dir / "a.vfea", x);
  const Tensor y = load_feature_file(dir / "a.vfea");
  CHECK(y.shape() == x.shape());
  CHECK(values(y) == values(x));
  CHECK(error_code([&] { load_feature_file(dir / "a.vfea", 4); }) ==
        DataErrorCode::kDimMismatch);

  const std::string bytes = io::read_file(dir / "a.vfea");
  io::write_file(dir / "short.vfea", bytes.substr(0, bytes.size() - 3));
  CHECK(error_code([&] { load_feature_file(dir / "short.vfea"); }) ==
        DataErrorCode::kTruncated);
  io::write_file(dir / "magic.vfea", "XFEA" + bytes.substr(4));
  CHECK(error_code([&] { load_feature_file(dir / "magic.vfea"); }) ==
        DataErrorCode::kBadMagic);
  std::string v2 = bytes;
  v2[4] = 2;
  io::write_file(dir / "v2.vfea", v2);
  CHECK(error_code([&] { load_feature_file(dir / "v2.vfea"); }) ==
        DataErrorCode::kUnsupportedVersion);
  CHECK(error_code([&] { load_feature_file(dir / "missing.vfea"); }) ==
        DataErrorCode::kIo);
}

TEST_CASE("ground truth files") {
  TempDir dir("gt");
  const std::vector<std::uint8_t> gt{0, 0, 1, 1, 0};
  save_ground_truth(dir / "g.txt", gt);
  CHECK(load_ground_truth(dir / "g.txt") == gt);
  write_text(dir / "bad.txt", "0\n2\n");
  CHECK(error_code([&] { load_ground_truth(dir / "bad.txt"); }) ==
        DataErrorCode::kGroundTruth);
}

TEST_CASE("l2 normalization") {
  FeatureSequence seq;
  seq.features = Tensor({2, 2}, {3, 4, 0, 0});
  const FeatureSequence once = l2_normalize_features(seq);
  CHECK(values(once.features) == std::vector<float>{0.6f, 0.8f, 0.0f, 0.0f});
  seq.features = random_tensor({6, 4}, 3);
  const FeatureSequence a = l2_normalize_features(seq);
  const FeatureSequence b = l2_normalize_features(a);
  for (std::size_t i = 0; i < 24; ++i) {
    CHECK(b.features.data()[i] == doctest::Approx(a.features.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("manifest parsing") {
  TempDir dir("manifest");
  save_feature_file(dir / "a.vfea", random_tensor({4, 3}, 4));
  save_feature_file(dir / "b.vfea", random_tensor({6, 3}, 5));
  save_ground_truth(dir / "b.gt", std::vector<std::uint8_t>(96, 0));
  write_text(dir / "m.tsv",
             "# comment\n\n"
             "a.vfea\tva\tabnormal\ttrain\t0\n"
             "b.vfea\tvb\tnormal\ttest\t0\tb.gt\n");
  const Manifest m = read_manifest(dir / "m.tsv");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].label == VideoLabel::kAbnormal);
  CHECK(m.entries[0].line == 3);
  CHECK(m.entries[1].gt_path == dir / "b.gt");
  const auto test = load_split(m, Split::kTest, {false, 3, true});
  REQUIRE(test.size() == 1);
  CHECK(test[0].frame_gt->size() == 96);
  CHECK(load_split(m, Split::kTrain).at(0).snippets() == 4);
  CHECK_THROWS_AS(load_split(m, Split::kTrain, {false, 5, false}), DataError);

  write_manifest(dir / "copy.tsv", m);
  const Manifest again = read_manifest(dir / "copy.tsv");
  CHECK(again.entries[1].feature_path == m.entries[1].feature_path);
  CHECK(again.entries[1].gt_path == m.entries[1].gt_path);

  write_text(dir / "bad_label.tsv", "a.vfea\tva\tweird\ttrain\t0\n");
  const std::string msg = error_text([&] { read_manifest(dir / "bad_label.tsv"); });
  CHECK(msg.find("bad_label.tsv:1:") != std::string::npos);
  write_text(dir / "dup.tsv", "a.vfea\tva\tnormal\ttrain\t0\n\na.vfea\tva\tnormal\ttrain\t0\n");
  CHECK(error_text([&] { read_manifest(dir / "dup.tsv"); }).find("dup.tsv:3:") !=
        std::string::npos);
  write_text(dir / "fields.tsv", "a.vfea\tva\tnormal\n");
  CHECK(error_code([&] { read_manifest(dir / "fields.tsv"); }) == DataErrorCode::kManifest);
  write_text(dir / "nogt.tsv", "a.vfea\tva\tnormal\ttest\t0\n");
  CHECK(error_code([&] {
          load_split(read_manifest(dir / "nogt.tsv"), Split::kTest, {false, {}, true});
        }) == DataErrorCode::kGroundTruth);
  write_text(dir / "gtlen.tsv", "a.vfea\tva\tnormal\ttest\t0\tb.gt\n");
  CHECK(error_code([&] { load_split(read_manifest(dir / "gtlen.tsv"), Split::kTest); }) ==
        DataErrorCode::kGroundTruth);
}

TEST_CASE("paired iterator") {
  const std::vector<VideoLabel> labels{
      VideoLabel::kAbnormal, VideoLabel::kNormal,   VideoLabel::kNormal, VideoLabel::kAbnormal,
      VideoLabel::kNormal,   VideoLabel::kAbnormal, VideoLabel::kNormal, VideoLabel::kNormal};
  PairedBatchIterator it(labels, 1);
  CHECK(it.pairs_per_epoch() == 5);
  std::set<std::size_t> normals, abnormals;
  for (int i = 0; i < 5; ++i) {
    const auto [a, n] = it.next();
    CHECK(labels[a] == VideoLabel::kAbnormal);
    CHECK(labels[n] == VideoLabel::kNormal);
    normals.insert(n);
    abnormals.insert(a);
  }
  CHECK(normals.size() == 5);
  CHECK(abnormals.size() == 3);

  SUBCASE("state round trip") {
    const std::string state = it.save_state();
    std::vector<std::pair<std::size_t, std::size_t>> expect;
    for (int i = 0; i < 12; ++i) expect.push_back(it.next());
    PairedBatchIterator other(labels, 99);
    other.load_state(state);
    for (const auto& p : expect) CHECK(other.next() == p);
  }

  SUBCASE("needs both classes") {
    const std::vector<VideoLabel> only(3, VideoLabel::kNormal);
    CHECK_THROWS_AS(PairedBatchIterator(only, 0), ConfigError);
  }
}

TEST_CASE("iterator seeds") {
  std::vector<VideoLabel> labels;
  for (int i = 0; i < 12; ++i) {
    labels.push_back(i % 2 ? VideoLabel::kNormal : VideoLabel::kAbnormal);
  }
  auto sequence = [&](std::uint64_t seed) {
    PairedBatchIterator it(labels, seed);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (int i = 0; i < 6; ++i) out.push_back(it.next());
    return out;
  };
  CHECK(sequence(4) == sequence(4));
  std::set<std::vector<std::pair<std::size_t, std::size_t>>> distinct;
  for (std::uint64_t seed = 0; seed < 100; ++seed) distinct.insert(sequence(seed));
  CHECK(distinct.size() == 100);
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.n_train = 10;
  cfg.n_test = 6;
  cfg.dim = 8;
  const auto videos = synth_videos(cfg);
  REQUIRE(videos.size() == 16);
  double planted = 0.0, normal = 0.0;
  std::size_t n_planted = 0, n_normal = 0;
  for (const auto& v : videos) {
    const auto& gt = *v.sequence.frame_gt;
    CHECK(gt.size() == 16 * v.sequence.snippets());
    for (std::size_t f = 0; f < gt.size(); ++f) {
      const std::size_t j = f / 16;
      CHECK(gt[f] == (j >= v.window_begin && j < v.window_end ? 1 : 0));
    }
    if (v.sequence.label == VideoLabel::kNormal) CHECK(v.window_end == v.window_begin);
    for (std::size_t j = 0; j < v.sequence.snippets(); ++j) {
      double ss = 0.0;
      for (std::size_t c = 0; c < 8; ++c) {
        ss += double(v.sequence.features.at(j, c)) * v.sequence.features.at(j, c);
      }
      const bool in = j >= v.window_begin && j < v.window_end;
      (in ? planted : normal) += std::sqrt(ss);
      ++(in ? n_planted : n_normal);
    }
  }
  REQUIRE(n_planted > 0);
  CHECK(planted / n_planted > normal / n_normal);

  cfg.anomaly_rate = 0.0;
  for (const auto& v : synth_videos(cfg)) CHECK(v.sequence.label == VideoLabel::kNormal);

  cfg = SynthConfig{};
  cfg.dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("synthetic files on disk") {
  TempDir dir("synth");
  SynthConfig cfg;
  cfg.n_train = 4;
  cfg.n_test = 2;
  cfg.dim = 6;
  cfg.crops = 3;
  synth_generate(cfg, dir / "a");
  synth_generate(cfg, dir / "b");
  const Manifest m = read_manifest(dir / "a" / "manifest.tsv");
  CHECK(m.entries.size() == 18);
  CHECK(io::read_file(dir / "a" / "manifest.tsv") == io::read_file(dir / "b" / "manifest.tsv"));
  for (const auto& e : m.entries) {
    const fs::path other = dir / "b" / e.feature_path.lexically_relative(dir / "a");
    CHECK(io::read_file(e.feature_path) == io::read_file(other));
  }
  const auto test = load_split(m, Split::kTest, {false, 6, true});
  CHECK(test.size() == 6);
  // Crops of one video share the clip length.
  CHECK(test[0].video_id == test[1].video_id);
  CHECK(test[0].snippets() == test[1].snippets());
  CHECK(test[0].crop != test[1].crop);
}

}  // TEST_SUITE
