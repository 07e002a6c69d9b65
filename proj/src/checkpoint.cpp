// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/checkpoint.hpp"

#include <map>

#include "vcmil/binary_io.hpp"
#include "vcmil/errors.hpp"

namespace vcmil {

namespace {

constexpr std::string_view kMagic = "VCMILCKP";

void write_floats(io::ByteWriter& w, const std::vector<float>& values) {
  w.u32(static_cast<std::uint32_t>(values.size()));
  w.f32s(values);
}

std::vector<float> read_floats(io::ByteReader& r) {
  std::vector<float> out(r.u32());
  r.f32s(out);
  return out;
}

bool is_aggregator_param(const std::string& name) {
  return name.rfind("bert.", 0) == 0 || name.rfind("lstm.", 0) == 0;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const AnomalyModel& model, const RunConfig& config,
                     const AdamState* adam, const TrainerState* trainer) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  RunConfig echoed = config;
  echoed.train.model = model.config();
  w.str(to_text(echoed));
  w.u8(model.aggregator_frozen() ? 1 : 0);

  const ParamList params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(p.tensor.data());
  }

  w.u8(adam ? 1 : 0);
  if (adam) {
    w.u64(adam->step);
    w.f32(adam->lr);
    w.f32(adam->beta1);
    w.f32(adam->beta2);
    w.f32(adam->eps);
    w.u32(static_cast<std::uint32_t>(adam->m.size()));
    for (const auto& m : adam->m) write_floats(w, m);
    for (const auto& v : adam->v) write_floats(w, v);
  }

  w.u8(trainer ? 1 : 0);
  if (trainer) {
    w.u64(trainer->epoch);
    w.u64(trainer->step);
    w.str(trainer->iterator);
    w.u8(trainer->best_metric ? 1 : 0);
    w.u64(std::bit_cast<std::uint64_t>(trainer->best_metric.value_or(0.0)));
    w.u64(trainer->best_epoch);
  }

  std::string bytes = w.buffer();
  io::ByteWriter tail;
  tail.u64(io::fnv1a64(bytes));
  bytes += tail.buffer();
  try {
    io::write_file(path, bytes);
  } catch (const std::exception& e) {
    throw CheckpointError("cannot write checkpoint: " + std::string(e.what()));
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const CheckpointLoadOptions& options) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError("cannot read checkpoint: " + std::string(e.what()));
  }
  const std::string where = path.string() + ": ";
  if (bytes.size() < kMagic.size() + 4 + 8 ||
      std::string_view(bytes).substr(0, kMagic.size()) != kMagic) {
    throw CheckpointError(where + "not a checkpoint file");
  }
  {
    io::ByteReader r(std::string_view(bytes).substr(kMagic.size(), 4));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
      throw CheckpointError(where + "unsupported checkpoint version " +
                            std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
  }
  const std::string_view body = std::string_view(bytes).substr(0, bytes.size() - 8);
  io::ByteReader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.u64() != io::fnv1a64(body)) {
    throw CheckpointError(where + "checksum mismatch, file is corrupt");
  }

  try {
    io::ByteReader r(body.substr(kMagic.size() + 4));
    CheckpointContents contents;
    parse_config_text(contents.config, r.str(), path.string() + "[config]");
    const ModelConfig& mc = contents.config.train.model;
    if (options.expected_dim && *options.expected_dim != mc.dim_in) {
      throw ConfigError(where + "model expects feature dimension " +
                        std::to_string(mc.dim_in) + ", data has " +
                        std::to_string(*options.expected_dim));
    }
    const bool frozen = r.u8() != 0;
    const bool head_only =
        options.head_only && mc.mil_input != MilInput::kEncoded;
    AnomalyModel model(mc, 0, !head_only);

    std::map<std::string, Tensor> slots;
    for (auto& p : model.parameters()) slots.emplace(p.name, p.tensor);
    const std::uint32_t count = r.u32();
    std::size_t filled = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name = r.str();
      Shape shape(r.u32());
      for (auto& d : shape) d = r.u32();
      const std::size_t n = shape_numel(shape);
      auto it = slots.find(name);
      if (it == slots.end()) {
        if (head_only && is_aggregator_param(name)) {
          r.bytes(n * 4);
          continue;
        }
        throw CheckpointError(where + "unexpected parameter '" + name + "'");
      }
      if (it->second.shape() != shape) {
        throw CheckpointError(where + "parameter '" + name + "' has shape " +
                              shape_str(shape) + ", model expects " +
                              shape_str(it->second.shape()));
      }
      r.f32s(it->second.mutable_data());
      ++filled;
    }
    if (filled != slots.size()) {
      throw CheckpointError(where + "checkpoint is missing parameters");
    }
    if (frozen && model.has_aggregator()) model.freeze_aggregator();

    if (r.u8()) {
      AdamState adam;
      adam.step = r.u64();
      adam.lr = r.f32();
      adam.beta1 = r.f32();
      adam.beta2 = r.f32();
      adam.eps = r.f32();
      const std::uint32_t buffers = r.u32();
      for (std::uint32_t i = 0; i < buffers; ++i) adam.m.push_back(read_floats(r));
      for (std::uint32_t i = 0; i < buffers; ++i) adam.v.push_back(read_floats(r));
      contents.adam = std::move(adam);
    }
    if (r.u8()) {
      TrainerState t;
      t.epoch = r.u64();
      t.step = r.u64();
      t.iterator = r.str();
      const bool has_best = r.u8() != 0;
      const double best = std::bit_cast<double>(r.u64());
      if (has_best) t.best_metric = best;
      t.best_epoch = r.u64();
      contents.trainer = std::move(t);
    }
    if (r.remaining() != 0) {
      throw CheckpointError(where + "trailing bytes after trainer state");
    }
    return {std::move(model), std::move(contents)};
  } catch (const io::ShortRead& e) {
    throw CheckpointError(where + "truncated checkpoint: " + e.what());
  }
}

}  // namespace vcmil
