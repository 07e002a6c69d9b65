// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container (little endian):
//
//   "VCMILCKP" | version u32
//   config    : u32 length + resolved run config text
//   frozen    : u8
//   params    : u32 count, then per tensor
//               name (u32 length + bytes) | ndim u32 | dims u32... | f32 data
//   adam      : u8 present, then step u64 | lr beta1 beta2 eps f32 |
//               u32 count | per buffer u32 length + f32 m, same for v
//   trainer   : u8 present, then epoch u64 | step u64 | iterator text |
//               u8 has_best | best f64 | best_epoch u64
//   checksum  : u64 FNV-1a over every preceding byte

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "vcmil/adam.hpp"
#include "vcmil/config.hpp"
#include "vcmil/model.hpp"

namespace vcmil {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainerState {
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::string iterator;     // PairedBatchIterator::save_state()
  std::optional<double> best_metric;
  std::uint64_t best_epoch = 0;
};

struct CheckpointContents {
  RunConfig config;
  std::optional<AdamState> adam;
  std::optional<TrainerState> trainer;
};

void save_checkpoint(const std::filesystem::path& path,
                     const AnomalyModel& model, const RunConfig& config,
                     const AdamState* adam = nullptr,
                     const TrainerState* trainer = nullptr);

struct LoadedCheckpoint {
  AnomalyModel model;
  CheckpointContents contents;
};

struct CheckpointLoadOptions {
  // Builds only the input projection and MIL head (plain scoring). Ignored
  // when the head consumes encoder outputs.
  bool head_only = false;
  // Feature width the caller will feed; a mismatch is a ConfigError.
  std::optional<std::size_t> expected_dim;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const CheckpointLoadOptions& options = {});

}  // namespace vcmil
