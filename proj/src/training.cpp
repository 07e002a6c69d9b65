// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "vcmil/binary_io.hpp"
#include "vcmil/errors.hpp"
#include "vcmil/losses.hpp"
#include "vcmil/ops.hpp"

namespace vcmil {

namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kIteratorSalt = 0x70a1f3c2b9e4d105ULL;
constexpr std::uint64_t kDropoutSalt = 0x2d7e91b4c6a3f058ULL;

ordered_json optional_value(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json();
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::vector<VideoLabel> labels_of(const std::vector<FeatureSequence>& videos) {
  std::vector<VideoLabel> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(v.label);
  return out;
}

void prepare(std::vector<FeatureSequence>& videos, bool l2) {
  if (!l2) return;
  for (auto& v : videos) v = l2_normalize_features(std::move(v));
}

RunConfig resolve_dim(RunConfig config,
                      const std::vector<FeatureSequence>& train_set) {
  if (train_set.empty()) throw ConfigError("training set is empty");
  const std::size_t d = train_set.front().dim();
  for (const auto& v : train_set) {
    if (v.dim() != d) {
      throw DataError(DataErrorCode::kDimMismatch,
                      "video '" + v.video_id + "' has D=" +
                          std::to_string(v.dim()) + ", expected " +
                          std::to_string(d));
    }
  }
  auto& mc = config.train.model;
  if (mc.dim_in == 0) mc.dim_in = d;
  if (mc.dim_in != d) {
    throw ConfigError("model.dim_in is " + std::to_string(mc.dim_in) +
                      " but the training features have D=" + std::to_string(d));
  }
  config.train.validate();
  return config;
}

double value_of(const Tensor& t) { return static_cast<double>(t.item()); }

}  // namespace

std::vector<StepRecord> RunLog::steps() const {
  std::vector<StepRecord> out;
  for (const auto& e : entries_) {
    if (const auto* s = std::get_if<StepRecord>(&e)) out.push_back(*s);
  }
  return out;
}

std::vector<EvalRecord> RunLog::evals() const {
  std::vector<EvalRecord> out;
  for (const auto& e : entries_) {
    if (const auto* s = std::get_if<EvalRecord>(&e)) out.push_back(*s);
  }
  return out;
}

std::string RunLog::to_json_line(const Entry& entry) {
  ordered_json j;
  if (const auto* s = std::get_if<StepRecord>(&entry)) {
    j["type"] = "step";
    j["epoch"] = s->epoch;
    j["step"] = s->step;
    j["abnormal"] = s->abnormal_id;
    j["normal"] = s->normal_id;
    j["hinge"] = optional_value(s->hinge);
    j["smooth"] = optional_value(s->smooth);
    j["sparse"] = optional_value(s->sparse);
    j["bce_bert"] = optional_value(s->bce_bert);
    j["bce_rtfm"] = optional_value(s->bce_rtfm);
    j["rtfm_rank"] = optional_value(s->rtfm_rank);
    j["total"] = s->total;
    j["grad_norm"] = s->grad_norm;
    j["lr"] = s->lr;
  } else {
    const auto& e = std::get<EvalRecord>(entry);
    j["type"] = "eval";
    j["epoch"] = e.epoch;
    j["step"] = e.step;
    j["metrics"] = ordered_json::parse(report_to_json(e.reports));
  }
  return j.dump();
}

std::string RunLog::to_jsonl(std::size_t from) const {
  std::string out;
  for (std::size_t i = from; i < entries_.size(); ++i) {
    out += to_json_line(entries_[i]);
    out += '\n';
  }
  return out;
}

std::string RunLog::timing_jsonl(std::size_t from) const {
  std::string out;
  for (std::size_t i = from; i < entries_.size(); ++i) {
    ordered_json j;
    std::visit(
        [&](const auto& r) {
          j["type"] = std::is_same_v<std::decay_t<decltype(r)>, StepRecord>
                          ? "step"
                          : "eval";
          j["step"] = r.step;
          j["wall_seconds"] = r.wall_seconds;
        },
        entries_[i]);
    out += j.dump();
    out += '\n';
  }
  return out;
}

double scheduled_lr(const TrainConfig& config, double progress) {
  const double base = config.lr;
  const double start = static_cast<double>(config.cosine_start);
  const double end = static_cast<double>(config.epochs);
  if (end <= start || progress < start) return base;
  const double t = std::min(1.0, (progress - start) / (end - start));
  const double floor = config.lr_min;
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

Trainer::Trainer(Prepared prepared)
    : config_(std::move(prepared.config)),
      model_(std::move(prepared.model)),
      train_(std::move(prepared.train_set)),
      test_(std::move(prepared.test_set)),
      iterator_(labels_of(train_),
                splitmix64(config_.train.seed ^ kIteratorSalt)),
      started_(std::chrono::steady_clock::now()) {
  train_segments_.reserve(train_.size());
  for (const auto& v : train_) {
    train_segments_.push_back(segment(v.features, config_.train.model.seq_len).segments);
  }
  adam_.lr = config_.train.lr;
}

Trainer::Prepared Trainer::prepare_fresh(RunConfig config,
                                         std::vector<FeatureSequence> train_set,
                                         std::vector<FeatureSequence> test_set) {
  prepare(train_set, config.data.l2_normalize);
  prepare(test_set, config.data.l2_normalize);
  config = resolve_dim(std::move(config), train_set);
  AnomalyModel model(config.train.model, config.train.seed);
  return {std::move(config), std::move(model), std::move(train_set),
          std::move(test_set)};
}

Trainer::Trainer(RunConfig config, std::vector<FeatureSequence> train_set,
                 std::vector<FeatureSequence> test_set)
    : Trainer(prepare_fresh(std::move(config), std::move(train_set),
                            std::move(test_set))) {}

Trainer::Trainer(LoadedCheckpoint checkpoint,
                 std::vector<FeatureSequence> train_set,
                 std::vector<FeatureSequence> test_set)
    : Trainer([&] {
        RunConfig config = checkpoint.contents.config;
        prepare(train_set, config.data.l2_normalize);
        prepare(test_set, config.data.l2_normalize);
        config = resolve_dim(std::move(config), train_set);
        return Prepared{std::move(config), std::move(checkpoint.model),
                        std::move(train_set), std::move(test_set)};
      }()) {
  if (checkpoint.contents.adam) adam_ = *checkpoint.contents.adam;
  if (const auto& t = checkpoint.contents.trainer) {
    step_ = t->step;
    if (!t->iterator.empty()) iterator_.load_state(t->iterator);
    best_metric_ = t->best_metric;
    best_epoch_ = t->best_epoch;
  }
  resumed_ = true;
}

std::uint64_t Trainer::completed_epochs() const {
  return step_ / iterator_.pairs_per_epoch();
}

TrainerState Trainer::state() const {
  TrainerState s;
  s.epoch = completed_epochs();
  s.step = step_;
  s.iterator = iterator_.save_state();
  s.best_metric = best_metric_;
  s.best_epoch = best_epoch_;
  return s;
}

void Trainer::save(const std::filesystem::path& path) const {
  const TrainerState s = state();
  save_checkpoint(path, model_, config_, &adam_, &s);
}

void Trainer::set_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw DataError(DataErrorCode::kIo,
                    "cannot create output directory " + dir.string() + ": " +
                        ec.message());
  }
  out_dir_ = dir;
  if (!resumed_) {
    io::write_file(dir / "runlog.jsonl", "");
    io::write_file(dir / "timing.jsonl", "");
  }
  flushed_ = 0;
  flush_logs();
}

void Trainer::flush_logs() {
  if (!out_dir_ || flushed_ == log_.entries().size()) return;
  for (const auto& [name, text] :
       {std::pair{"runlog.jsonl", log_.to_jsonl(flushed_)},
        std::pair{"timing.jsonl", log_.timing_jsonl(flushed_)}}) {
    std::ofstream out(*out_dir_ / name, std::ios::app | std::ios::binary);
    out << text;
    if (!out) {
      throw DataError(DataErrorCode::kIo,
                      "cannot append to " + (*out_dir_ / name).string());
    }
  }
  flushed_ = log_.entries().size();
}

void Trainer::numeric_abort(const std::string& reason, const StepRecord& record,
                            std::size_t a, std::size_t n, const VideoPass& pa,
                            const VideoPass& pn) {
  ordered_json dump;
  dump["reason"] = reason;
  dump["record"] = ordered_json::parse(RunLog::to_json_line(record));
  for (const auto& [key, index, pass] :
       {std::tuple{"abnormal", a, &pa}, std::tuple{"normal", n, &pn}}) {
    const FeatureSequence& v = train_[index];
    std::size_t non_finite = 0;
    for (float x : v.features.data()) non_finite += std::isfinite(x) ? 0 : 1;
    ordered_json j;
    j["video_id"] = v.video_id;
    j["crop"] = v.crop;
    j["snippets"] = v.snippets();
    j["non_finite_features"] = non_finite;
    if (pass->p_video.defined()) j["p_video"] = value_of(pass->p_video);
    std::vector<double> scores;
    for (float s : pass->instance_scores.data()) scores.push_back(s);
    j["instance_scores"] = scores;
    dump[key] = std::move(j);
  }
  const std::string text = dump.dump(2);
  if (out_dir_) io::write_file(*out_dir_ / "nan_dump.json", text + "\n");
  flush_logs();
  throw NumericAbort(reason + " at step " + std::to_string(record.step) +
                     "\n" + text);
}

StepRecord Trainer::step() {
  const TrainConfig& tc = config_.train;
  const std::size_t ppe = iterator_.pairs_per_epoch();
  const std::uint64_t epoch = step_ / ppe;
  const bool classifier_only = epoch < tc.two_step_epochs;
  if (tc.two_step_epochs > 0 && !classifier_only && !model_.aggregator_frozen()) {
    model_.freeze_aggregator();
  }

  const auto [a, n] = iterator_.next();
  DropoutStream dropout{splitmix64(tc.seed ^ kDropoutSalt), step_, 0};
  ForwardContext ctx{true, &dropout, nullptr};
  const bool snippets = tc.model.mil_input == MilInput::kSnippets;
  const VideoPass pa = model_.forward(
      train_segments_[a], snippets ? &train_[a].features : nullptr, ctx);
  const VideoPass pn = model_.forward(
      train_segments_[n], snippets ? &train_[n].features : nullptr, ctx);

  StepRecord rec;
  rec.epoch = epoch;
  rec.step = step_ + 1;
  rec.abnormal_id = train_[a].video_id;
  rec.normal_id = train_[n].video_id;
  rec.lr = scheduled_lr(tc, static_cast<double>(step_) / static_cast<double>(ppe));

  LossParts parts;
  parts.bce_video = video_bce_loss(pa.p_video, pn.p_video);
  rec.bce_bert = value_of(*parts.bce_video);
  Tensor total;
  if (classifier_only) {
    total = *parts.bce_video;
  } else {
    if (tc.loss.mode == LossMode::kMilBert) {
      parts.mil = mil_ranking_loss(pa.instance_scores, pn.instance_scores, tc.loss);
      rec.hinge = value_of(parts.mil->hinge);
      rec.smooth = value_of(parts.mil->smooth);
      rec.sparse = value_of(parts.mil->sparse);
    } else {
      parts.rtfm = rtfm_loss(pa.instances, pn.instances, pa.instance_scores,
                             pn.instance_scores, tc.loss);
      rec.bce_rtfm = value_of(parts.rtfm->bce);
      rec.rtfm_rank = value_of(parts.rtfm->ranking);
    }
    total = combined_loss(tc.loss.mode, parts, tc.loss);
  }
  rec.total = value_of(total);
  if (!std::isfinite(rec.total)) {
    numeric_abort("non-finite loss", rec, a, n, pa, pn);
  }

  const std::vector<Tensor> params = model_.parameter_tensors();
  for (const Tensor& p : params) p.zero_grad();
  backward(total);
  rec.grad_norm = tc.clip_norm > 0.0
                      ? clip_grad_norm(params, tc.clip_norm)
                      : clip_grad_norm(params, INFINITY);
  if (!std::isfinite(rec.grad_norm)) {
    numeric_abort("non-finite gradient", rec, a, n, pa, pn);
  }
  adam_.lr = static_cast<float>(rec.lr);
  adam_step(params, adam_);

  ++step_;
  rec.wall_seconds = elapsed_since(started_);
  log_.append(rec);
  return rec;
}

std::vector<MetricReport> Trainer::evaluate_now() {
  if (test_.empty()) throw ContractError("no test set to evaluate on");
  EvalOptions options;
  options.granularities = config_.eval.granularities;
  options.threads = default_threads();
  std::vector<MetricReport> reports = evaluate(model_, test_, options);

  EvalRecord rec;
  rec.epoch = completed_epochs();
  rec.step = step_;
  rec.reports = reports;
  rec.wall_seconds = elapsed_since(started_);
  log_.append(std::move(rec));

  const double metric = reports.front().auc;
  if (!best_metric_ || metric > *best_metric_) {
    best_metric_ = metric;
    best_epoch_ = completed_epochs();
    if (out_dir_) save(*out_dir_ / "best.ckpt");
  }
  return reports;
}

void Trainer::run_epoch() {
  const std::size_t ppe = iterator_.pairs_per_epoch();
  do {
    step();
  } while (step_ % ppe != 0);

  const std::uint64_t epoch = completed_epochs();
  const bool final = epoch >= config_.train.epochs;
  const std::size_t every = config_.train.eval_every;
  const bool due = final || (every > 0 && epoch % every == 0);
  if (due) {
    if (!test_.empty()) evaluate_now();
    if (out_dir_) save(*out_dir_ / "last.ckpt");
  }
  flush_logs();
}

void Trainer::run() {
  while (completed_epochs() < config_.train.epochs) run_epoch();
  if (out_dir_) {
    save(*out_dir_ / "last.ckpt");
    if (!std::filesystem::exists(*out_dir_ / "best.ckpt")) {
      save(*out_dir_ / "best.ckpt");
    }
  }
  flush_logs();
}

}  // namespace vcmil
