// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "vcmil/binary_io.hpp"
#include "vcmil/errors.hpp"
#include "vcmil/ops.hpp"

namespace vcmil {

std::string_view to_string(ScoreMode mode) {
  return mode == ScoreMode::kCorrected ? "corrected" : "plain";
}

std::string_view to_string(Granularity g) {
  return g == Granularity::kSnippet ? "snippet" : "segment";
}

Granularity parse_granularity(std::string_view text) {
  if (text == "snippet") return Granularity::kSnippet;
  if (text == "segment") return Granularity::kSegment;
  throw ConfigError("unknown granularity '" + std::string(text) +
                    "' (expected snippet or segment)");
}

std::vector<float> expand_to_frames(std::span<const float> snippet_scores) {
  std::vector<float> frames;
  frames.reserve(snippet_scores.size() * kFramesPerSnippet);
  for (float s : snippet_scores) frames.insert(frames.end(), kFramesPerSnippet, s);
  return frames;
}

namespace {

struct RawScores {
  std::vector<float> instance;  // plain s(v_i)
  std::vector<float> snippet;   // plain, per snippet
  std::optional<float> video;
};

RawScores raw_scores(const AnomalyModel& model, const FeatureSequence& seq,
                     const ScoreOptions& options, bool need_video_score) {
  if (options.online && (options.mode == ScoreMode::kCorrected ||
                         options.granularity == Granularity::kSegment)) {
    throw ContractError(
        "online scoring supports plain snippet scores only: the video score "
        "and the segment split both need the complete video");
  }
  const bool encoded = model.config().mil_input == MilInput::kEncoded;
  if (encoded && options.granularity == Granularity::kSnippet) {
    throw ContractError("encoder outputs y_i exist per segment only");
  }
  if ((need_video_score || encoded) && !model.has_aggregator()) {
    throw ContractError("this scoring mode needs the video classifier");
  }

  NoGradGuard no_grad;
  ForwardContext ctx;
  RawScores out;
  std::optional<SegmentedVideo> seg;
  Tensor embedded_segments;
  if (options.granularity == Granularity::kSegment || need_video_score ||
      encoded) {
    seg = segment(seq.features, model.config().seq_len);
    embedded_segments = model.embed(seg->segments);
  }
  BertOutput cls;
  if (need_video_score || encoded) {
    cls = model.classify(embedded_segments, ctx);
    if (need_video_score) out.video = cls.p_video.item();
  }
  if (options.granularity == Granularity::kSegment) {
    const Tensor& inst = encoded ? cls.y : embedded_segments;
    const Tensor s = model.score(inst, ctx);
    out.instance.assign(s.data().begin(), s.data().end());
    out.snippet = inverse_segment(out.instance, seg->assignment);
  } else {
    const Tensor s = model.score(model.embed(seq.features), ctx);
    out.instance.assign(s.data().begin(), s.data().end());
    out.snippet = out.instance;
  }
  return out;
}

ScoreRecord to_record(const FeatureSequence& seq, const RawScores& raw,
                      const ScoreOptions& options) {
  ScoreRecord rec;
  rec.video_id = seq.video_id;
  rec.granularity = options.granularity;
  rec.mode = options.mode;
  rec.video_score = raw.video;
  rec.instance_scores = raw.instance;
  rec.snippet_scores = raw.snippet;
  if (options.mode == ScoreMode::kCorrected) {
    const float p = *raw.video;
    for (float& s : rec.instance_scores) s *= p;
    for (float& s : rec.snippet_scores) s *= p;
  }
  rec.frame_scores = expand_to_frames(rec.snippet_scores);
  return rec;
}

}  // namespace

ScoreRecord score_video(const AnomalyModel& model, const FeatureSequence& seq,
                        const ScoreOptions& options) {
  const RawScores raw = raw_scores(model, seq, options,
                                   options.mode == ScoreMode::kCorrected);
  return to_record(seq, raw, options);
}

ScoreRecord score_crops(const AnomalyModel& model,
                        std::span<const FeatureSequence* const> crops,
                        const ScoreOptions& options) {
  if (crops.empty()) throw ContractError("score_crops: no crops given");
  ScoreRecord acc = score_video(model, *crops.front(), options);
  for (std::size_t c = 1; c < crops.size(); ++c) {
    const ScoreRecord r = score_video(model, *crops[c], options);
    if (r.snippet_scores.size() != acc.snippet_scores.size() ||
        r.instance_scores.size() != acc.instance_scores.size()) {
      throw ShapeError("crops of video '" + acc.video_id +
                       "' have different snippet counts");
    }
    for (std::size_t i = 0; i < acc.instance_scores.size(); ++i) {
      acc.instance_scores[i] += r.instance_scores[i];
    }
    for (std::size_t i = 0; i < acc.snippet_scores.size(); ++i) {
      acc.snippet_scores[i] += r.snippet_scores[i];
    }
    if (acc.video_score) *acc.video_score += *r.video_score;
  }
  const float inv = 1.0f / static_cast<float>(crops.size());
  for (float& s : acc.instance_scores) s *= inv;
  for (float& s : acc.snippet_scores) s *= inv;
  if (acc.video_score) *acc.video_score *= inv;
  acc.frame_scores = expand_to_frames(acc.snippet_scores);
  return acc;
}

namespace {

void check_metric_inputs(std::span<const float> scores,
                         std::span<const std::uint8_t> gt) {
  if (scores.size() != gt.size()) {
    throw ShapeError("metric: " + std::to_string(scores.size()) +
                     " scores vs " + std::to_string(gt.size()) + " labels");
  }
  for (float s : scores) {
    if (!std::isfinite(s)) throw MetricError("metric: non-finite score");
  }
}

}  // namespace

double roc_auc(std::span<const float> scores, std::span<const std::uint8_t> gt) {
  check_metric_inputs(scores, gt);
  std::size_t pos = 0;
  for (auto g : gt) pos += g ? 1 : 0;
  const std::size_t neg = gt.size() - pos;
  if (pos == 0 || neg == 0) {
    throw MetricError("ROC-AUC is undefined when the ground truth has a "
                      "single class");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return static_cast<double>(scores[a]) < static_cast<double>(scores[b]);
  });
  // u counts (pos, neg) pairs with pos ranked above neg, ties as one half.
  double u = 0.0;
  double neg_below = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_pos = 0.0, group_neg = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (gt[order[j]] ? group_pos : group_neg) += 1.0;
      ++j;
    }
    u += group_pos * (neg_below + 0.5 * group_neg);
    neg_below += group_neg;
    i = j;
  }
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(std::span<const float> scores,
                         std::span<const std::uint8_t> gt) {
  check_metric_inputs(scores, gt);
  std::size_t pos = 0;
  for (auto g : gt) pos += g ? 1 : 0;
  if (pos == 0) {
    throw MetricError("average precision is undefined without positives");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  const double total_pos = static_cast<double>(pos);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (gt[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<float> align_to_frames(std::span<const float> frame_scores,
                                   std::size_t frames) {
  if (frame_scores.empty()) throw ContractError("no frame scores to align");
  std::vector<float> out(frame_scores.begin(),
                         frame_scores.begin() +
                             static_cast<long>(std::min(frames, frame_scores.size())));
  out.resize(frames, frame_scores.back());
  return out;
}

std::size_t default_threads() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VCMIL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) hw = std::min(hw, static_cast<std::size_t>(v));
  }
  return hw;
}

namespace {

struct VideoGroup {
  std::string video_id;
  std::vector<const FeatureSequence*> crops;
  const std::vector<std::uint8_t>* gt = nullptr;
};

struct VideoResult {
  std::vector<float> corrected;  // aligned frames
  std::vector<float> plain;
  std::optional<float> video_score;
};

template <typename F>
void parallel_for(std::size_t count, std::size_t threads, F&& body) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = next++; i < count; i = next++) body(i);
        } catch (...) {
          errors[t] = std::current_exception();
          next = count;
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<MetricReport> evaluate(const AnomalyModel& model,
                                   std::span<const FeatureSequence> test_set,
                                   const EvalOptions& options) {
  std::vector<VideoGroup> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& seq : test_set) {
    auto [it, inserted] = index.emplace(seq.video_id, groups.size());
    if (inserted) groups.push_back({seq.video_id, {}, nullptr});
    VideoGroup& g = groups[it->second];
    g.crops.push_back(&seq);
    if (!g.gt && seq.frame_gt) g.gt = &*seq.frame_gt;
  }
  if (groups.empty()) throw ContractError("evaluate: empty test set");
  for (const auto& g : groups) {
    if (!g.gt) {
      throw DataError(DataErrorCode::kGroundTruth,
                      "test video '" + g.video_id + "' has no frame ground truth");
    }
  }

  std::vector<MetricReport> reports;
  for (Granularity gran : options.granularities) {
    std::vector<VideoResult> results(groups.size());
    parallel_for(groups.size(), options.threads, [&](std::size_t i) {
      const VideoGroup& g = groups[i];
      ScoreOptions so;
      so.granularity = gran;
      so.mode = ScoreMode::kCorrected;
      const ScoreRecord corrected = score_crops(model, g.crops, so);
      so.mode = ScoreMode::kPlain;
      const ScoreRecord plain = score_crops(model, g.crops, so);
      results[i].corrected = align_to_frames(corrected.frame_scores, g.gt->size());
      results[i].plain = align_to_frames(plain.frame_scores, g.gt->size());
      results[i].video_score = corrected.video_score;
    });

    MetricReport report;
    report.granularity = gran;
    std::vector<float> corrected, plain;
    std::vector<std::uint8_t> gt;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const auto& r = results[i];
      const auto& g = *groups[i].gt;
      corrected.insert(corrected.end(), r.corrected.begin(), r.corrected.end());
      plain.insert(plain.end(), r.plain.begin(), r.plain.end());
      gt.insert(gt.end(), g.begin(), g.end());
      VideoBreakdown b;
      b.video_id = groups[i].video_id;
      b.label = groups[i].crops.front()->label;
      b.video_score = r.video_score;
      b.max_corrected = *std::max_element(r.corrected.begin(), r.corrected.end());
      b.max_plain = *std::max_element(r.plain.begin(), r.plain.end());
      b.frames = g.size();
      b.positive_frames = static_cast<std::size_t>(std::count(g.begin(), g.end(), 1));
      report.per_video.push_back(std::move(b));
    }
    report.frames = gt.size();
    report.positive_frames = static_cast<std::size_t>(std::count(gt.begin(), gt.end(), 1));
    report.auc = roc_auc(corrected, gt);
    report.auc_2 = roc_auc(plain, gt);
    report.ap = average_precision(corrected, gt);
    report.ap_2 = average_precision(plain, gt);
    reports.push_back(std::move(report));
  }
  return reports;
}

std::string report_to_json(std::span<const MetricReport> reports) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["granularity"] = to_string(r.granularity);
    j["auc"] = r.auc;
    j["auc_2"] = r.auc_2;
    j["ap"] = r.ap ? nlohmann::ordered_json(*r.ap) : nlohmann::ordered_json();
    j["ap_2"] = r.ap_2 ? nlohmann::ordered_json(*r.ap_2) : nlohmann::ordered_json();
    j["frames"] = r.frames;
    j["positive_frames"] = r.positive_frames;
    nlohmann::ordered_json videos = nlohmann::ordered_json::array();
    for (const auto& v : r.per_video) {
      nlohmann::ordered_json vj;
      vj["video_id"] = v.video_id;
      vj["label"] = to_string(v.label);
      vj["video_score"] = v.video_score ? nlohmann::ordered_json(*v.video_score)
                                        : nlohmann::ordered_json();
      vj["max_corrected"] = v.max_corrected;
      vj["max_plain"] = v.max_plain;
      vj["frames"] = v.frames;
      vj["positive_frames"] = v.positive_frames;
      videos.push_back(std::move(vj));
    }
    j["per_video"] = std::move(videos);
    out.push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

void write_score_csv(const std::filesystem::path& path,
                     std::span<const float> frame_scores) {
  std::ostringstream os;
  os << "frame_index,score\n";
  os.precision(9);
  for (std::size_t i = 0; i < frame_scores.size(); ++i) {
    os << i << ',' << frame_scores[i] << '\n';
  }
  try {
    io::write_file(path, os.str());
  } catch (const std::exception& e) {
    throw DataError(DataErrorCode::kIo, e.what());
  }
}

}  // namespace vcmil
