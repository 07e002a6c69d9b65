// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its text form:
//
//   # comment
//   [train]
//   lr = 0.0001
//   epochs = 100
//
// Every key belongs to a section and is addressed as section.key in
// overrides. Unknown sections or keys are errors. to_text() writes every key,
// so its output fully determines a run.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vcmil/data.hpp"
#include "vcmil/evaluation.hpp"
#include "vcmil/losses.hpp"
#include "vcmil/model.hpp"

namespace vcmil {

struct TrainConfig {
  ModelConfig model;  // dim_in == 0: taken from the training data
  LossConfig loss;
  float lr = 1e-4f;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  // Evaluate on the test split every this many epochs; 0 evaluates once at
  // the end.
  std::size_t eval_every = 0;
  double clip_norm = 10.0;
  // Constant lr before this epoch, cosine decay to lr_min after it.
  std::size_t cosine_start = 50;
  float lr_min = 0.0f;
  // When > 0, the first two_step_epochs train the video classifier alone;
  // the aggregator is then frozen and the full loss trains the rest.
  std::size_t two_step_epochs = 0;

  void validate() const;
};

enum class ScoreSelection { kBoth, kCorrected, kPlain };

struct DataSettings {
  std::string manifest;
  bool l2_normalize = false;
};

struct EvalSettings {
  std::vector<Granularity> granularities{Granularity::kSegment};
  ScoreSelection scores = ScoreSelection::kBoth;
};

struct RunConfig {
  SynthConfig synth;
  TrainConfig train;
  DataSettings data;
  EvalSettings eval;

  void validate() const;
};

// Applies one section.key=value assignment.
void apply_setting(RunConfig& config, std::string_view key,
                   std::string_view value);
// Parses "section.key=value".
void apply_override(RunConfig& config, std::string_view assignment);

// Parses config text on top of `config`. `origin` prefixes error messages.
void parse_config_text(RunConfig& config, std::string_view text,
                       std::string_view origin = "config");
RunConfig load_config_file(const std::filesystem::path& path);

std::string to_text(const RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace vcmil
