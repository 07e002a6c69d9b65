// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "vcmil/binary_io.hpp"
#include "vcmil/errors.hpp"
#include "vcmil/ops.hpp"
#include "vcmil/rng.hpp"

namespace vcmil {

namespace fs = std::filesystem;

std::string_view to_string(VideoLabel label) {
  return label == VideoLabel::kAbnormal ? "abnormal" : "normal";
}

std::string_view to_string(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

SegmentedVideo segment(const Tensor& features, std::size_t segments) {
  if (!features.defined() || features.rank() != 2) {
    throw ShapeError("segment expects [N, D] features");
  }
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n == 0) throw ContractError("segment: video has no snippets");
  if (segments == 0) throw ContractError("segment: zero segments requested");

  SegmentedVideo out;
  out.groups.resize(segments);
  std::vector<float> pooled(segments * d);
  auto in = features.data();
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < segments; ++i) {
    const std::size_t begin = i * n / segments;
    std::size_t end = (i + 1) * n / segments;
    if (end <= begin) end = begin + 1;
    out.groups[i] = {begin, end};
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = begin; j < end; ++j) {
      for (std::size_t k = 0; k < d; ++k) acc[k] += in[j * d + k];
    }
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (std::size_t k = 0; k < d; ++k) {
      pooled[i * d + k] = static_cast<float>(acc[k] * inv);
    }
  }
  out.segments = Tensor({segments, d}, std::move(pooled));

  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  out.assignment.assign(n, kUnassigned);
  for (std::size_t i = 0; i < segments; ++i) {
    for (std::size_t j = out.groups[i].first; j < out.groups[i].second; ++j) {
      if (out.assignment[j] == kUnassigned) out.assignment[j] = i;
    }
  }
  return out;
}

std::vector<float> inverse_segment(std::span<const float> segment_scores,
                                   std::span<const std::size_t> assignment) {
  std::vector<float> out(assignment.size());
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (assignment[j] >= segment_scores.size()) {
      throw ShapeError("inverse_segment: snippet " + std::to_string(j) +
                       " maps to segment " + std::to_string(assignment[j]) +
                       " but only " + std::to_string(segment_scores.size()) +
                       " scores were given");
    }
    out[j] = segment_scores[assignment[j]];
  }
  return out;
}

void save_feature_file(const fs::path& path, const Tensor& features) {
  if (features.rank() != 2) throw ShapeError("feature file needs [N, D]");
  io::ByteWriter w;
  w.bytes("VFEA");
  w.u16(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  w.f32s(features.data());
  try {
    io::write_file(path, w.buffer());
  } catch (const std::exception& e) {
    throw DataError(DataErrorCode::kIo, e.what());
  }
}

Tensor load_feature_file(const fs::path& path,
                         std::optional<std::size_t> expected_dim) {
  std::string raw;
  try {
    raw = io::read_file(path);
  } catch (const std::exception& e) {
    throw DataError(DataErrorCode::kIo, e.what());
  }
  const std::string where = path.string() + ": ";
  io::ByteReader r(raw);
  try {
    if (r.bytes(4) != "VFEA") {
      throw DataError(DataErrorCode::kBadMagic, where + "not a VFEA file");
    }
    const std::uint16_t version = r.u16();
    if (version != kFeatureFileVersion) {
      throw DataError(DataErrorCode::kUnsupportedVersion,
                      where + "unsupported version " + std::to_string(version));
    }
    const std::size_t n = r.u32();
    const std::size_t d = r.u32();
    if (n == 0 || d == 0) {
      throw DataError(DataErrorCode::kDimMismatch,
                      where + "empty feature matrix [" + std::to_string(n) +
                          ", " + std::to_string(d) + "]");
    }
    if (expected_dim && *expected_dim != d) {
      throw DataError(DataErrorCode::kDimMismatch,
                      where + "feature dim " + std::to_string(d) +
                          " but expected " + std::to_string(*expected_dim));
    }
    if (r.remaining() < n * d * 4) {
      throw DataError(DataErrorCode::kTruncated,
                      where + "payload holds " + std::to_string(r.remaining()) +
                          " bytes, header promises " +
                          std::to_string(n * d * 4));
    }
    std::vector<float> values(n * d);
    r.f32s(values);
    return Tensor({n, d}, std::move(values));
  } catch (const io::ShortRead& e) {
    throw DataError(DataErrorCode::kTruncated, where + e.what());
  }
}

std::vector<std::uint8_t> load_ground_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError(DataErrorCode::kIo, "cannot open " + path.string());
  }
  std::vector<std::uint8_t> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line != "0" && line != "1") {
      throw DataError(DataErrorCode::kGroundTruth,
                      path.string() + ":" + std::to_string(lineno) +
                          ": expected 0 or 1, got '" + line + "'");
    }
    frames.push_back(line == "1" ? 1 : 0);
  }
  return frames;
}

void save_ground_truth(const fs::path& path,
                       std::span<const std::uint8_t> frames) {
  std::string text;
  text.reserve(frames.size() * 2);
  for (std::uint8_t f : frames) {
    text.push_back(f ? '1' : '0');
    text.push_back('\n');
  }
  try {
    io::write_file(path, text);
  } catch (const std::exception& e) {
    throw DataError(DataErrorCode::kIo, e.what());
  }
}

FeatureSequence l2_normalize_features(FeatureSequence seq) {
  NoGradGuard no_grad;
  seq.features = l2_normalize(seq.features);
  return seq;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError(DataErrorCode::kIo, "cannot open manifest " + path.string());
  }
  Manifest m;
  m.source = path;
  const fs::path base = path.parent_path();
  std::set<std::pair<std::string, std::size_t>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fail = [&](const std::string& msg) {
      throw DataError(DataErrorCode::kManifest,
                      path.string() + ":" + std::to_string(lineno) + ": " + msg);
    };
    const auto fields = split_tabs(line);
    if (fields.size() < 5 || fields.size() > 6) {
      fail("expected 5 or 6 tab-separated fields, got " +
           std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.line = lineno;
    e.feature_path = fs::path(fields[0]).is_absolute() ? fs::path(fields[0])
                                                       : base / fields[0];
    e.video_id = fields[1];
    if (e.video_id.empty()) fail("empty video id");
    if (fields[2] == "abnormal") {
      e.label = VideoLabel::kAbnormal;
    } else if (fields[2] == "normal") {
      e.label = VideoLabel::kNormal;
    } else {
      fail("label must be normal or abnormal, got '" + fields[2] + "'");
    }
    if (fields[3] == "train") {
      e.split = Split::kTrain;
    } else if (fields[3] == "test") {
      e.split = Split::kTest;
    } else {
      fail("split must be train or test, got '" + fields[3] + "'");
    }
    const auto& c = fields[4];
    auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), e.crop);
    if (ec != std::errc() || ptr != c.data() + c.size()) {
      fail("crop must be a non-negative integer, got '" + c + "'");
    }
    if (fields.size() == 6 && !fields[5].empty()) {
      e.gt_path = fs::path(fields[5]).is_absolute() ? fs::path(fields[5])
                                                    : base / fields[5];
    }
    if (!seen.emplace(e.video_id, e.crop).second) {
      fail("duplicate entry for video '" + e.video_id + "' crop " +
           std::to_string(e.crop));
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    if (base.empty()) return p.generic_string();
    const fs::path r = p.lexically_relative(base);
    return (r.empty() ? p : r).generic_string();
  };
  std::ostringstream out;
  out << "# path\tvideo_id\tlabel\tsplit\tcrop\tgt_path\n";
  for (const auto& e : manifest.entries) {
    out << rel(e.feature_path) << '\t' << e.video_id << '\t'
        << to_string(e.label) << '\t' << to_string(e.split) << '\t' << e.crop;
    if (e.gt_path) out << '\t' << rel(*e.gt_path);
    out << '\n';
  }
  try {
    io::write_file(path, out.str());
  } catch (const std::exception& e) {
    throw DataError(DataErrorCode::kIo, e.what());
  }
}

std::vector<FeatureSequence> load_split(const Manifest& manifest, Split split,
                                        const LoadOptions& options) {
  std::vector<FeatureSequence> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    const std::string where =
        manifest.source.string() + ":" + std::to_string(e.line) + ": ";
    FeatureSequence seq;
    seq.video_id = e.video_id;
    seq.crop = e.crop;
    seq.label = e.label;
    try {
      seq.features = load_feature_file(e.feature_path, options.expected_dim);
    } catch (const DataError& err) {
      throw DataError(err.code(), where + err.what());
    }
    if (e.gt_path) {
      auto gt = load_ground_truth(*e.gt_path);
      const std::size_t expected = kFramesPerSnippet * seq.snippets();
      const std::size_t diff =
          gt.size() > expected ? gt.size() - expected : expected - gt.size();
      if (diff > kFramesPerSnippet) {
        throw DataError(DataErrorCode::kGroundTruth,
                        where + "ground truth has " + std::to_string(gt.size()) +
                            " frames, features cover " +
                            std::to_string(expected));
      }
      seq.frame_gt = std::move(gt);
    } else if (options.require_ground_truth) {
      throw DataError(DataErrorCode::kGroundTruth,
                      where + "test entry '" + e.video_id +
                          "' has no ground truth file");
    }
    if (options.l2_normalize) seq = l2_normalize_features(std::move(seq));
    out.push_back(std::move(seq));
  }
  return out;
}

std::size_t PairedBatchIterator::ClassStream::take() {
  if (cursor == order.size()) {
    std::shuffle(order.begin(), order.end(), engine);
    cursor = 0;
  }
  return order[cursor++];
}

PairedBatchIterator::PairedBatchIterator(std::span<const VideoLabel> labels,
                                         std::uint64_t seed) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == VideoLabel::kAbnormal ? abnormal_ : normal_).order.push_back(i);
  }
  if (abnormal_.order.empty() || normal_.order.empty()) {
    throw ConfigError("training needs both abnormal and normal videos (got " +
                      std::to_string(abnormal_.order.size()) + " abnormal, " +
                      std::to_string(normal_.order.size()) + " normal)");
  }
  abnormal_.engine.seed(splitmix64(seed ^ 0x61626e6f726d616cULL));
  normal_.engine.seed(splitmix64(seed ^ 0x6e6f726d616c0000ULL));
  // Force a shuffle on first take.
  abnormal_.cursor = abnormal_.order.size();
  normal_.cursor = normal_.order.size();
}

std::pair<std::size_t, std::size_t> PairedBatchIterator::next() {
  const std::size_t a = abnormal_.take();
  const std::size_t n = normal_.take();
  return {a, n};
}

std::size_t PairedBatchIterator::pairs_per_epoch() const {
  return std::max(abnormal_.order.size(), normal_.order.size());
}

std::string PairedBatchIterator::save_state() const {
  std::ostringstream os;
  for (const ClassStream* s : {&abnormal_, &normal_}) {
    os << s->cursor << ' ' << s->order.size();
    for (std::size_t i : s->order) os << ' ' << i;
    os << ' ' << s->engine << '\n';
  }
  return os.str();
}

void PairedBatchIterator::load_state(const std::string& state) {
  std::istringstream is(state);
  for (ClassStream* s : {&abnormal_, &normal_}) {
    std::size_t cursor = 0, size = 0;
    is >> cursor >> size;
    if (!is || size != s->order.size() || cursor > size) {
      throw ConfigError("iterator state does not match this dataset");
    }
    std::vector<std::size_t> order(size);
    for (auto& i : order) is >> i;
    std::mt19937_64 engine;
    is >> engine;
    if (!is) throw ConfigError("corrupt iterator state");
    std::vector<std::size_t> a = order, b = s->order;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw ConfigError("iterator state does not match this dataset");
    s->order = std::move(order);
    s->cursor = cursor;
    s->engine = engine;
  }
}

void SynthConfig::validate() const {
  if (n_train + n_test == 0) throw ConfigError("synth: no videos requested");
  if (dim == 0) throw ConfigError("synth: dim must be positive");
  if (!(anomaly_rate >= 0.0 && anomaly_rate <= 1.0)) {
    throw ConfigError("synth: anomaly_rate must be in [0, 1]");
  }
  if (min_snippets == 0 || min_snippets > max_snippets) {
    throw ConfigError("synth: need 1 <= min_snippets <= max_snippets");
  }
  if (!(min_window > 0.0 && min_window <= max_window && max_window <= 1.0)) {
    throw ConfigError("synth: need 0 < min_window <= max_window <= 1");
  }
  if (noise < 0.0 || video_drift < 0.0 || crop_noise < 0.0 ||
      anomaly_scale <= 0.0) {
    throw ConfigError("synth: noise levels must be >= 0, anomaly_scale > 0");
  }
  if (crops == 0) throw ConfigError("synth: crops must be >= 1");
}

namespace {

std::size_t abnormal_count(std::size_t n, double rate) {
  if (n == 0 || rate <= 0.0) return 0;
  if (rate >= 1.0) return n;
  auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  // Keep both classes whenever the split can hold both.
  if (n >= 2) k = std::clamp<std::size_t>(k, 1, n - 1);
  return k;
}

}  // namespace

std::vector<SynthVideo> synth_videos(const SynthConfig& config) {
  config.validate();
  InitRng rng(config.seed);
  const std::size_t d = config.dim;
  std::vector<double> normal_center(d), anomaly_center(d);
  for (auto& v : normal_center) v = rng.normal();
  for (auto& v : anomaly_center) v = rng.normal();
  auto norm = [](const std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
  };
  const double rescale =
      config.anomaly_scale * norm(normal_center) / norm(anomaly_center);
  for (auto& v : anomaly_center) v *= rescale;

  std::vector<SynthVideo> videos;
  for (Split split : {Split::kTrain, Split::kTest}) {
    const std::size_t count =
        split == Split::kTrain ? config.n_train : config.n_test;
    const std::size_t n_abnormal = abnormal_count(count, config.anomaly_rate);
    // Interleave labels so prefixes of the list stay mixed.
    std::vector<VideoLabel> labels(count, VideoLabel::kNormal);
    for (std::size_t k = 0; k < n_abnormal; ++k) {
      labels[k * count / n_abnormal] = VideoLabel::kAbnormal;
    }
    for (std::size_t v = 0; v < count; ++v) {
      const std::size_t n =
          config.min_snippets +
          rng.below(config.max_snippets - config.min_snippets + 1);
      SynthVideo video;
      video.split = split;
      char id[64];
      std::snprintf(id, sizeof id, "synth_%s_%04zu",
                    split == Split::kTrain ? "train" : "test", v);
      const VideoLabel label = labels[v];
      if (label == VideoLabel::kAbnormal) {
        const double frac = rng.uniform(config.min_window, config.max_window);
        const std::size_t len = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))),
            1, n);
        video.window_begin = rng.below(n - len + 1);
        video.window_end = video.window_begin + len;
      }
      std::vector<double> drift(d);
      for (auto& x : drift) x = rng.normal(0.0, config.video_drift);
      std::vector<double> base(n * d);
      for (std::size_t j = 0; j < n; ++j) {
        const bool planted = j >= video.window_begin && j < video.window_end;
        for (std::size_t k = 0; k < d; ++k) {
          const double center =
              planted ? anomaly_center[k] : normal_center[k] + drift[k];
          base[j * d + k] = center + rng.normal(0.0, config.noise);
        }
      }
      std::vector<std::uint8_t> gt(n * kFramesPerSnippet, 0);
      for (std::size_t f = video.window_begin * kFramesPerSnippet;
           f < video.window_end * kFramesPerSnippet; ++f) {
        gt[f] = 1;
      }
      for (std::size_t c = 0; c < config.crops; ++c) {
        std::vector<float> values(n * d);
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double jitter =
              config.crops > 1 ? rng.normal(0.0, config.crop_noise) : 0.0;
          values[i] = static_cast<float>(base[i] + jitter);
        }
        SynthVideo crop = video;
        crop.sequence.video_id = id;
        crop.sequence.crop = c;
        crop.sequence.label = label;
        crop.sequence.features = Tensor({n, d}, std::move(values));
        crop.sequence.frame_gt = gt;
        videos.push_back(std::move(crop));
      }
    }
  }
  return videos;
}

Manifest synth_generate(const SynthConfig& config, const fs::path& out_dir) {
  const auto videos = synth_videos(config);
  Manifest manifest;
  manifest.source = out_dir / "manifest.tsv";
  try {
    fs::create_directories(out_dir / "features");
    fs::create_directories(out_dir / "gt");
  } catch (const fs::filesystem_error& e) {
    throw DataError(DataErrorCode::kIo, e.what());
  }
  for (const SynthVideo& v : videos) {
    const auto& seq = v.sequence;
    ManifestEntry e;
    e.video_id = seq.video_id;
    e.crop = seq.crop;
    e.label = seq.label;
    e.split = v.split;
    e.feature_path = out_dir / "features" /
                     (seq.video_id + "_c" + std::to_string(seq.crop) + ".vfea");
    save_feature_file(e.feature_path, seq.features);
    if (v.split == Split::kTest) {
      e.gt_path = out_dir / "gt" / (seq.video_id + ".txt");
      if (seq.crop == 0) save_ground_truth(*e.gt_path, *seq.frame_gt);
    }
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest.source, manifest);
  return read_manifest(manifest.source);
}

}  // namespace vcmil
