// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop. Each optimizer step draws one (abnormal, normal) pair,
// segments both videos, runs the aggregator and MIL head, combines the
// losses and applies one clipped Adam update.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vcmil/adam.hpp"
#include "vcmil/checkpoint.hpp"
#include "vcmil/config.hpp"
#include "vcmil/data.hpp"
#include "vcmil/evaluation.hpp"
#include "vcmil/model.hpp"

namespace vcmil {

struct StepRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;  // 1-based global step
  std::string abnormal_id;
  std::string normal_id;
  std::optional<double> hinge;
  std::optional<double> smooth;
  std::optional<double> sparse;
  std::optional<double> bce_bert;
  std::optional<double> bce_rtfm;
  std::optional<double> rtfm_rank;
  double total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct EvalRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::vector<MetricReport> reports;
  double wall_seconds = 0.0;
};

// Append-only record of a run. to_jsonl() omits wall-clock times so that
// identical runs serialize identically; timing_jsonl() carries them.
class RunLog {
 public:
  using Entry = std::variant<StepRecord, EvalRecord>;

  void append(Entry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<StepRecord> steps() const;
  std::vector<EvalRecord> evals() const;

  static std::string to_json_line(const Entry& entry);
  std::string to_jsonl(std::size_t from = 0) const;
  std::string timing_jsonl(std::size_t from = 0) const;

 private:
  std::vector<Entry> entries_;
};

// Learning rate after `progress` epochs (fractional).
double scheduled_lr(const TrainConfig& config, double progress);

class Trainer {
 public:
  // Fresh run. model.dim_in == 0 takes D from the training data.
  Trainer(RunConfig config, std::vector<FeatureSequence> train_set,
          std::vector<FeatureSequence> test_set = {});
  // Resumes from a checkpoint holding optimizer and trainer state.
  Trainer(LoadedCheckpoint checkpoint, std::vector<FeatureSequence> train_set,
          std::vector<FeatureSequence> test_set = {});

  // Writes last.ckpt, best.ckpt, runlog.jsonl and timing.jsonl under dir.
  // Existing logs are appended to when resuming and replaced otherwise.
  void set_output_dir(const std::filesystem::path& dir);

  StepRecord step();
  // Runs the remaining steps of the current epoch, then evaluates and
  // checkpoints when due.
  void run_epoch();
  // Trains until config.train.epochs epochs are complete.
  void run();
  std::vector<MetricReport> evaluate_now();

  void save(const std::filesystem::path& path) const;

  const AnomalyModel& model() const { return model_; }
  AnomalyModel& model() { return model_; }
  const AdamState& adam() const { return adam_; }
  const RunConfig& config() const { return config_; }
  TrainerState state() const;
  const RunLog& log() const { return log_; }
  std::size_t pairs_per_epoch() const { return iterator_.pairs_per_epoch(); }
  std::uint64_t completed_steps() const { return step_; }
  std::uint64_t completed_epochs() const;
  bool has_test_set() const { return !test_.empty(); }

 private:
  struct Prepared {
    RunConfig config;
    AnomalyModel model;
    std::vector<FeatureSequence> train_set;
    std::vector<FeatureSequence> test_set;
  };
  explicit Trainer(Prepared prepared);
  static Prepared prepare_fresh(RunConfig config,
                                std::vector<FeatureSequence> train_set,
                                std::vector<FeatureSequence> test_set);
  void flush_logs();
  [[noreturn]] void numeric_abort(const std::string& reason,
                                  const StepRecord& record, std::size_t a,
                                  std::size_t n, const VideoPass& pa,
                                  const VideoPass& pn);

  RunConfig config_;
  AnomalyModel model_;
  std::vector<FeatureSequence> train_;
  std::vector<FeatureSequence> test_;
  std::vector<Tensor> train_segments_;
  PairedBatchIterator iterator_;
  std::chrono::steady_clock::time_point started_;
  AdamState adam_;
  std::uint64_t step_ = 0;
  std::optional<double> best_metric_;
  std::uint64_t best_epoch_ = 0;
  RunLog log_;
  std::optional<std::filesystem::path> out_dir_;
  std::size_t flushed_ = 0;
  bool resumed_ = false;
};

}  // namespace vcmil
