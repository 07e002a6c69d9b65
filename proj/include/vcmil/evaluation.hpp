// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frame-level scoring and metrics.
//
// Corrected scores multiply each instance score by the video score,
// score(v_i) = s(v_i) * p(video), which needs the classifier and therefore
// the whole video. Plain scores are s(v_i) alone and only need the input
// projection and MIL head, so they also work on a live snippet stream.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vcmil/data.hpp"
#include "vcmil/model.hpp"

namespace vcmil {

enum class ScoreMode { kCorrected, kPlain };
enum class Granularity { kSnippet, kSegment };

std::string_view to_string(ScoreMode mode);
std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view text);

struct ScoreOptions {
  ScoreMode mode = ScoreMode::kCorrected;
  Granularity granularity = Granularity::kSegment;
  // Online scoring consumes snippets as they arrive; only plain snippet
  // scoring is possible then.
  bool online = false;
};

struct ScoreRecord {
  std::string video_id;
  Granularity granularity = Granularity::kSegment;
  ScoreMode mode = ScoreMode::kCorrected;
  std::vector<float> instance_scores;  // per segment or per snippet
  std::optional<float> video_score;
  std::vector<float> snippet_scores;  // after inverse segmentation
  std::vector<float> frame_scores;    // 16 per snippet
};

// Repeats each snippet score kFramesPerSnippet times.
std::vector<float> expand_to_frames(std::span<const float> snippet_scores);

ScoreRecord score_video(const AnomalyModel& model, const FeatureSequence& seq,
                        const ScoreOptions& options);

// Scores every crop of one video and averages per snippet, in score space.
ScoreRecord score_crops(const AnomalyModel& model,
                        std::span<const FeatureSequence* const> crops,
                        const ScoreOptions& options);

// Pairwise rule [#(pos > neg) + 0.5 #(pos = neg)] / (#pos #neg), computed
// from tie-grouped rank statistics in f64.
double roc_auc(std::span<const float> scores, std::span<const std::uint8_t> gt);

// Sum over descending distinct thresholds of (R_n - R_{n-1}) P_n.
double average_precision(std::span<const float> scores,
                         std::span<const std::uint8_t> gt);

struct VideoBreakdown {
  std::string video_id;
  VideoLabel label = VideoLabel::kNormal;
  std::optional<float> video_score;
  float max_corrected = 0.0f;
  float max_plain = 0.0f;
  std::size_t frames = 0;
  std::size_t positive_frames = 0;
};

struct MetricReport {
  Granularity granularity = Granularity::kSegment;
  double auc = 0.0;    // corrected
  double auc_2 = 0.0;  // plain
  std::optional<double> ap;
  std::optional<double> ap_2;
  std::size_t frames = 0;
  std::size_t positive_frames = 0;
  std::vector<VideoBreakdown> per_video;
};

struct EvalOptions {
  std::vector<Granularity> granularities{Granularity::kSegment};
  std::size_t threads = 1;
};

// Groups crops by video id, scores each video in both modes, aligns frame
// scores with the ground truth (tail frames take the last snippet's score),
// pools all frames and computes AUC/AP.
std::vector<MetricReport> evaluate(const AnomalyModel& model,
                                   std::span<const FeatureSequence> test_set,
                                   const EvalOptions& options);

// Frame scores stretched or cut to the ground-truth length.
std::vector<float> align_to_frames(std::span<const float> frame_scores,
                                   std::size_t frames);

std::string report_to_json(std::span<const MetricReport> reports);
void write_score_csv(const std::filesystem::path& path,
                     std::span<const float> frame_scores);

// Worker count from VCMIL_THREADS, capped at hardware concurrency.
std::size_t default_threads();

}  // namespace vcmil
