// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Snippet-feature ingestion: feature files, manifests, ground truth,
// 32-segment pooling and its inverse, paired class sampling, and the
// synthetic dataset generator.
//
// Feature file layout (little endian):
//   "VFEA" | version u16 | N u32 | D u32 | N*D f32, row-major
// Manifest: one tab-separated entry per line,
//   path  video_id  label  split  crop  [gt_path]
// with label in {normal, abnormal}, split in {train, test}. Blank lines and
// lines starting with '#' are ignored; relative paths resolve against the
// manifest's directory. Ground truth files hold one 0/1 per frame per line.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vcmil/tensor.hpp"

namespace vcmil {

inline constexpr std::size_t kFramesPerSnippet = 16;
inline constexpr std::size_t kSegmentCount = 32;
inline constexpr std::uint16_t kFeatureFileVersion = 1;

enum class VideoLabel { kNormal, kAbnormal };
enum class Split { kTrain, kTest };

std::string_view to_string(VideoLabel label);
std::string_view to_string(Split split);

struct FeatureSequence {
  std::string video_id;
  std::size_t crop = 0;
  Tensor features;  // [N, D], no gradient
  VideoLabel label = VideoLabel::kNormal;
  std::optional<std::vector<std::uint8_t>> frame_gt;

  std::size_t snippets() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

struct SegmentedVideo {
  Tensor segments;  // [32, D], mean of each group's snippets
  // Snippet range [begin, end) pooled into each segment.
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  // Segment each snippet maps back to. When N < 32 a snippet feeds several
  // consecutive segments and maps to the first of them.
  std::vector<std::size_t> assignment;
};

// Segment i pools snippets [floor(iN/S), floor((i+1)N/S)); when that range
// is empty (N < S) it takes the single snippet floor(iN/S).
SegmentedVideo segment(const Tensor& features,
                       std::size_t segments = kSegmentCount);

std::vector<float> inverse_segment(std::span<const float> segment_scores,
                                   std::span<const std::size_t> assignment);

void save_feature_file(const std::filesystem::path& path,
                       const Tensor& features);
// expected_dim, when given, must match the header's D.
Tensor load_feature_file(const std::filesystem::path& path,
                         std::optional<std::size_t> expected_dim = {});

std::vector<std::uint8_t> load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const std::filesystem::path& path,
                       std::span<const std::uint8_t> frames);

// Per-row unit l2 norm; zero rows stay zero.
FeatureSequence l2_normalize_features(FeatureSequence seq);

struct ManifestEntry {
  std::filesystem::path feature_path;
  std::string video_id;
  VideoLabel label = VideoLabel::kNormal;
  Split split = Split::kTrain;
  std::size_t crop = 0;
  std::optional<std::filesystem::path> gt_path;
  std::size_t line = 0;
};

struct Manifest {
  std::filesystem::path source;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct LoadOptions {
  bool l2_normalize = false;
  std::optional<std::size_t> expected_dim;
  bool require_ground_truth = false;
};

// One FeatureSequence per (video, crop) entry of the split, in manifest order.
std::vector<FeatureSequence> load_split(const Manifest& manifest, Split split,
                                        const LoadOptions& options = {});

// Endless stream of (abnormal, normal) index pairs. Each class is shuffled
// independently and reshuffled when exhausted; one epoch is
// max(#abnormal, #normal) pairs.
class PairedBatchIterator {
 public:
  PairedBatchIterator(std::span<const VideoLabel> labels, std::uint64_t seed);

  std::pair<std::size_t, std::size_t> next();
  std::size_t pairs_per_epoch() const;

  // Text snapshot of the shuffle engines and cursors, for resuming.
  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  struct ClassStream {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::mt19937_64 engine;
    std::size_t take();
  };
  ClassStream abnormal_;
  ClassStream normal_;
};

struct SynthConfig {
  std::size_t n_train = 40;
  std::size_t n_test = 20;
  std::size_t dim = 64;
  double anomaly_rate = 0.5;
  std::size_t min_snippets = 24;
  std::size_t max_snippets = 96;
  double noise = 1.0;           // per-coordinate snippet noise
  double video_drift = 0.25;    // per-video offset of the normal pattern
  double anomaly_scale = 1.5;   // anomaly center magnitude vs normal center
  double min_window = 0.1;      // planted window, fraction of N
  double max_window = 0.4;
  std::size_t crops = 1;
  double crop_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthVideo {
  FeatureSequence sequence;
  Split split = Split::kTrain;
  // Planted anomalous snippets [window_begin, window_end); empty for normal.
  std::size_t window_begin = 0;
  std::size_t window_end = 0;
};

// In-memory generation; every split's videos carry frame_gt.
std::vector<SynthVideo> synth_videos(const SynthConfig& config);

// Writes features/, gt/ (test split only) and manifest.tsv under out_dir.
Manifest synth_generate(const SynthConfig& config,
                        const std::filesystem::path& out_dir);

}  // namespace vcmil
