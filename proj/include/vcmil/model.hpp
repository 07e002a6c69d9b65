// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// Learnable parts of the detector: an optional input projection, a video
// classifier (transformer encoder with a classification token, or a stacked
// LSTM) and the per-instance MIL scoring head.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vcmil/rng.hpp"
#include "vcmil/tensor.hpp"

namespace vcmil {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

struct ForwardContext {
  bool training = false;
  DropoutStream* dropout = nullptr;
  // When set, every post-softmax attention map is appended here.
  std::vector<Tensor>* attention_sink = nullptr;
};

enum class Aggregator { kBert, kLstm };
// Which features the MIL head scores: segment means x_i, encoder outputs
// y_i, or raw snippet features f_i.
enum class MilInput { kSegments, kEncoded, kSnippets };

std::string_view to_string(Aggregator a);
std::string_view to_string(MilInput m);
Aggregator parse_aggregator(std::string_view text);
MilInput parse_mil_input(std::string_view text);

class Linear {
 public:
  Linear() = default;
  // Xavier-uniform weight, zero bias.
  Linear(std::size_t in, std::size_t out, InitRng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }

  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
};

struct LayerNorm {
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor gamma;
  Tensor beta;
};

struct BertConfig {
  std::size_t dim_in = 0;
  std::size_t dim_model = 0;  // 0: same as dim_in, no input projection
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t seq_len = 32;
  std::size_t ffn_dim = 0;  // 0: 4 * dim_model
  float dropout_p = 0.1f;

  std::size_t model_width() const { return dim_model ? dim_model : dim_in; }
  std::size_t ffn_width() const { return ffn_dim ? ffn_dim : 4 * model_width(); }
  void validate() const;
};

struct BertOutput {
  Tensor y_cls;    // [1, dim_model]
  Tensor logit;    // [1, 1]
  Tensor p_video;  // [1, 1], sigmoid(logit)
  Tensor y;        // [seq_len, dim_model]
};

// Pre-norm encoder over [x_cls; x_1 .. x_S] plus learned positions. Each
// block: h += Out(MultiHeadAttention(LN(h))); h += PFFN(LN(h)) with
// PFFN(x) = W2 GELU(W1 x + b1) + b2. Attention is unmasked.
class BertAggregator {
 public:
  struct Block {
    LayerNorm attn_norm;
    Linear query;  // theta
    Linear key;    // phi
    Linear value;  // g
    Linear out;
    LayerNorm ffn_norm;
    Linear ffn_in;   // W1, b1
    Linear ffn_out;  // W2, b2
  };

  BertAggregator() = default;
  BertAggregator(const BertConfig& config, InitRng& rng);

  BertOutput forward(const Tensor& segments, ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParamList& out) const;
  const BertConfig& config() const { return config_; }

  std::optional<Linear> input_proj;
  Tensor positional;  // [seq_len + 1, dim_model]
  Tensor cls_token;   // [1, dim_model]
  std::vector<Block> blocks;
  Linear classifier;  // dim_model -> 1

 private:
  BertConfig config_;
};

struct LstmConfig {
  std::size_t dim_in = 0;  // hidden width equals dim_in
  std::size_t layers = 2;
  std::size_t seq_len = 32;
};

struct LstmOutput {
  Tensor hidden;   // final hidden state of the top layer, [1, dim_in]
  Tensor p_video;  // [1, 1]
};

// Stacked LSTM, gate order (input, forget, cell, output).
class LstmAggregator {
 public:
  struct Layer {
    Linear input;      // [in, 4H] with bias
    Tensor recurrent;  // [H, 4H]
  };

  LstmAggregator() = default;
  LstmAggregator(const LstmConfig& config, InitRng& rng);

  LstmOutput forward(const Tensor& segments, ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParamList& out) const;
  const LstmConfig& config() const { return config_; }

  std::vector<Layer> layers;
  Linear classifier;

 private:
  LstmConfig config_;
};

struct MilHeadConfig {
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 32;
  float dropout_p = 0.6f;
};

// D -> hidden1 -> hidden2 -> 1, ReLU + dropout after each hidden layer,
// sigmoid output. Rows are scored independently.
class MilHead {
 public:
  MilHead() = default;
  MilHead(std::size_t dim_in, const MilHeadConfig& config, InitRng& rng);

  Tensor forward(const Tensor& instances, ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Linear fc1, fc2, fc3;

 private:
  MilHeadConfig config_;
};

struct ModelConfig {
  std::size_t dim_in = 0;
  bool use_input_fc = false;
  std::size_t input_fc_dim = 1024;
  Aggregator aggregator = Aggregator::kBert;
  MilInput mil_input = MilInput::kSegments;
  std::size_t seq_len = 32;
  std::size_t bert_layers = 2;
  std::size_t bert_heads = 8;
  std::size_t bert_dim_model = 0;
  std::size_t bert_ffn_dim = 0;
  float bert_dropout = 0.1f;
  std::size_t lstm_layers = 2;
  MilHeadConfig mil;

  // Width of the features after the optional input projection.
  std::size_t feature_dim() const {
    return use_input_fc ? input_fc_dim : dim_in;
  }
  BertConfig bert_config() const;
  LstmConfig lstm_config() const;
  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

struct VideoPass {
  Tensor segments;         // embedded segment features [seq_len, F]
  Tensor instances;        // rows the MIL head scored
  Tensor instance_scores;  // [M, 1]
  Tensor p_video;          // [1, 1]; undefined when no aggregator ran
  Tensor encoded;          // y_i, BERT only
};

class AnomalyModel {
 public:
  // Builds every component. With with_aggregator == false only the input
  // projection and MIL head exist, which is all plain-mode scoring needs
  // (except when the head consumes y_i).
  AnomalyModel(const ModelConfig& config, std::uint64_t seed,
               bool with_aggregator = true);

  AnomalyModel(AnomalyModel&&) = default;
  AnomalyModel& operator=(AnomalyModel&&) = default;
  AnomalyModel(const AnomalyModel&) = delete;
  AnomalyModel& operator=(const AnomalyModel&) = delete;

  // Deep copy with independent parameter storage.
  AnomalyModel clone() const;

  const ModelConfig& config() const { return config_; }
  bool has_aggregator() const { return bert_.has_value() || lstm_.has_value(); }

  // Input projection (linear + ReLU) or identity.
  Tensor embed(const Tensor& features) const;
  // Video-level score from embedded segments; also y_i for BERT.
  BertOutput classify(const Tensor& embedded_segments, ForwardContext& ctx) const;
  Tensor score(const Tensor& instances, ForwardContext& ctx) const;

  // Full pass for one video. `snippets` (raw N x D) is needed only when the
  // MIL head consumes f_i. Set run_aggregator to false for plain scoring.
  VideoPass forward(const Tensor& segments, const Tensor* snippets,
                    ForwardContext& ctx, bool run_aggregator = true) const;

  ParamList parameters() const;
  std::vector<Tensor> parameter_tensors() const;

  void freeze_aggregator();
  bool aggregator_frozen() const { return frozen_; }

  const std::optional<Linear>& input_fc() const { return input_fc_; }
  const std::optional<BertAggregator>& bert() const { return bert_; }
  const std::optional<LstmAggregator>& lstm() const { return lstm_; }
  const MilHead& mil_head() const { return mil_; }

 private:
  ModelConfig config_;
  std::optional<Linear> input_fc_;
  std::optional<BertAggregator> bert_;
  std::optional<LstmAggregator> lstm_;
  MilHead mil_;
  bool frozen_ = false;
};

}  // namespace vcmil
