// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/model.hpp"

#include <cmath>
#include <string>

#include "vcmil/errors.hpp"
#include "vcmil/ops.hpp"

namespace vcmil {

std::string_view to_string(Aggregator a) {
  return a == Aggregator::kBert ? "bert" : "lstm";
}

std::string_view to_string(MilInput m) {
  switch (m) {
    case MilInput::kSegments: return "x_i";
    case MilInput::kEncoded: return "y_i";
    case MilInput::kSnippets: return "f_i";
  }
  return "x_i";
}

Aggregator parse_aggregator(std::string_view text) {
  if (text == "bert") return Aggregator::kBert;
  if (text == "lstm") return Aggregator::kLstm;
  throw ConfigError("unknown aggregator '" + std::string(text) +
                    "' (expected bert or lstm)");
}

MilInput parse_mil_input(std::string_view text) {
  if (text == "x_i" || text == "x") return MilInput::kSegments;
  if (text == "y_i" || text == "y") return MilInput::kEncoded;
  if (text == "f_i" || text == "f") return MilInput::kSnippets;
  throw ConfigError("unknown mil input '" + std::string(text) +
                    "' (expected x_i, y_i or f_i)");
}

namespace {

Tensor gaussian(Shape shape, double stddev, InitRng& rng) {
  std::vector<float> values(shape_numel(shape));
  for (float& v : values) v = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor uniform(Shape shape, double limit, InitRng& rng) {
  std::vector<float> values(shape_numel(shape));
  for (float& v : values) v = static_cast<float>(rng.uniform(-limit, limit));
  return Tensor(std::move(shape), std::move(values), true);
}

void require_matrix(const Tensor& x, std::size_t rows, std::size_t cols,
                    const char* what) {
  if (x.rank() != 2 || (rows && x.rows() != rows) || x.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected [" +
                     (rows ? std::to_string(rows) : std::string("M")) + ", " +
                     std::to_string(cols) + "], got " + shape_str(x.shape()));
  }
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, InitRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  weight = uniform({in, out}, limit, rng);
  bias = Tensor::zeros({1, out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma(Tensor::full({width}, 1.0f, true)),
      beta(Tensor::zeros({width}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const {
  return layer_norm(x, gamma, beta);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BertConfig::validate() const {
  if (dim_in == 0) throw ConfigError("bert: dim_in must be positive");
  if (layers == 0) throw ConfigError("bert: need at least one layer");
  if (heads == 0 || model_width() % heads != 0) {
    throw ConfigError("bert: dim_model " + std::to_string(model_width()) +
                      " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (seq_len == 0) throw ConfigError("bert: seq_len must be >= 1");
  if (dropout_p < 0.0f || dropout_p >= 1.0f) {
    throw ConfigError("bert: dropout must be in [0, 1)");
  }
}

BertAggregator::BertAggregator(const BertConfig& config, InitRng& rng)
    : config_(config) {
  config_.validate();
  const std::size_t width = config_.model_width();
  if (config_.dim_model && config_.dim_model != config_.dim_in) {
    input_proj = Linear(config_.dim_in, width, rng);
  }
  positional = gaussian({config_.seq_len + 1, width}, 0.02, rng);
  cls_token = gaussian({1, width}, 0.02, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Block b;
    b.attn_norm = LayerNorm(width);
    b.query = Linear(width, width, rng);
    b.key = Linear(width, width, rng);
    b.value = Linear(width, width, rng);
    b.out = Linear(width, width, rng);
    b.ffn_norm = LayerNorm(width);
    b.ffn_in = Linear(width, config_.ffn_width(), rng);
    b.ffn_out = Linear(config_.ffn_width(), width, rng);
    blocks.push_back(std::move(b));
  }
  classifier = Linear(width, 1, rng);
}

BertOutput BertAggregator::forward(const Tensor& segments,
                                   ForwardContext& ctx) const {
  require_matrix(segments, config_.seq_len, config_.dim_in, "bert input");
  const std::size_t width = config_.model_width();
  const std::size_t head_dim = width / config_.heads;
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(head_dim));

  Tensor x = input_proj ? input_proj->forward(segments) : segments;
  Tensor h = add(concat({cls_token, x}, 0), positional);

  for (const Block& b : blocks) {
    const Tensor a = b.attn_norm.forward(h);
    const Tensor q = b.query.forward(a);
    const Tensor k = b.key.forward(a);
    const Tensor v = b.value.forward(a);
    std::vector<Tensor> heads;
    heads.reserve(config_.heads);
    for (std::size_t hd = 0; hd < config_.heads; ++hd) {
      const Tensor qh = slice(q, 1, hd * head_dim, head_dim);
      const Tensor kh = slice(k, 1, hd * head_dim, head_dim);
      const Tensor vh = slice(v, 1, hd * head_dim, head_dim);
      const Tensor weights =
          softmax(scale(matmul(qh, transpose(kh)), scale_factor), 1);
      if (ctx.attention_sink) ctx.attention_sink->push_back(weights);
      heads.push_back(matmul(weights, vh));
    }
    const Tensor attended =
        heads.size() == 1 ? heads.front() : concat(heads, 1);
    h = add(h, dropout(b.out.forward(attended), config_.dropout_p,
                       ctx.training, ctx.dropout));
    const Tensor f =
        b.ffn_out.forward(gelu(b.ffn_in.forward(b.ffn_norm.forward(h))));
    h = add(h, dropout(f, config_.dropout_p, ctx.training, ctx.dropout));
  }

  BertOutput out;
  out.y_cls = slice(h, 0, 0, 1);
  out.y = slice(h, 0, 1, config_.seq_len);
  out.logit = classifier.forward(out.y_cls);
  out.p_video = sigmoid(out.logit);
  return out;
}

void BertAggregator::collect(const std::string& prefix, ParamList& out) const {
  if (input_proj) input_proj->collect(prefix + ".input_proj", out);
  out.push_back({prefix + ".positional", positional});
  out.push_back({prefix + ".cls_token", cls_token});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = prefix + ".blocks." + std::to_string(l);
    const Block& b = blocks[l];
    b.attn_norm.collect(p + ".attn_norm", out);
    b.query.collect(p + ".query", out);
    b.key.collect(p + ".key", out);
    b.value.collect(p + ".value", out);
    b.out.collect(p + ".out", out);
    b.ffn_norm.collect(p + ".ffn_norm", out);
    b.ffn_in.collect(p + ".ffn_in", out);
    b.ffn_out.collect(p + ".ffn_out", out);
  }
  classifier.collect(prefix + ".classifier", out);
}

LstmAggregator::LstmAggregator(const LstmConfig& config, InitRng& rng)
    : config_(config) {
  if (config_.dim_in == 0 || config_.layers == 0 || config_.seq_len == 0) {
    throw ConfigError("lstm: dim_in, layers and seq_len must be positive");
  }
  const std::size_t hidden = config_.dim_in;
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Layer layer;
    layer.input.weight = uniform({hidden, 4 * hidden}, limit, rng);
    layer.input.bias = uniform({1, 4 * hidden}, limit, rng);
    layer.recurrent = uniform({hidden, 4 * hidden}, limit, rng);
    layers.push_back(std::move(layer));
  }
  classifier = Linear(hidden, 1, rng);
}

LstmOutput LstmAggregator::forward(const Tensor& segments,
                                   ForwardContext&) const {
  require_matrix(segments, config_.seq_len, config_.dim_in, "lstm input");
  const std::size_t hidden = config_.dim_in;
  Tensor x = segments;
  Tensor h;
  for (const Layer& layer : layers) {
    const Tensor pre = layer.input.forward(x);
    h = Tensor::zeros({1, hidden});
    Tensor c = Tensor::zeros({1, hidden});
    std::vector<Tensor> outputs;
    outputs.reserve(config_.seq_len);
    for (std::size_t t = 0; t < config_.seq_len; ++t) {
      const Tensor z = add(slice(pre, 0, t, 1), matmul(h, layer.recurrent));
      const Tensor in_gate = sigmoid(slice(z, 1, 0, hidden));
      const Tensor forget_gate = sigmoid(slice(z, 1, hidden, hidden));
      const Tensor cell = tanh(slice(z, 1, 2 * hidden, hidden));
      const Tensor out_gate = sigmoid(slice(z, 1, 3 * hidden, hidden));
      c = add(mul(forget_gate, c), mul(in_gate, cell));
      h = mul(out_gate, tanh(c));
      outputs.push_back(h);
    }
    x = concat(outputs, 0);
  }
  LstmOutput out;
  out.hidden = h;
  out.p_video = sigmoid(classifier.forward(h));
  return out;
}

void LstmAggregator::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = prefix + ".layers." + std::to_string(l);
    layers[l].input.collect(p + ".input", out);
    out.push_back({p + ".recurrent", layers[l].recurrent});
  }
  classifier.collect(prefix + ".classifier", out);
}

MilHead::MilHead(std::size_t dim_in, const MilHeadConfig& config, InitRng& rng)
    : fc1(dim_in, config.hidden1, rng),
      fc2(config.hidden1, config.hidden2, rng),
      fc3(config.hidden2, 1, rng),
      config_(config) {}

Tensor MilHead::forward(const Tensor& instances, ForwardContext& ctx) const {
  require_matrix(instances, 0, fc1.in_features(), "mil head input");
  if (instances.rows() == 0) throw ContractError("mil head: empty bag");
  Tensor h = dropout(relu(fc1.forward(instances)), config_.dropout_p,
                     ctx.training, ctx.dropout);
  h = dropout(relu(fc2.forward(h)), config_.dropout_p, ctx.training,
              ctx.dropout);
  return sigmoid(fc3.forward(h));
}

void MilHead::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
  fc3.collect(prefix + ".fc3", out);
}

BertConfig ModelConfig::bert_config() const {
  BertConfig b;
  b.dim_in = feature_dim();
  b.dim_model = bert_dim_model;
  b.layers = bert_layers;
  b.heads = bert_heads;
  b.seq_len = seq_len;
  b.ffn_dim = bert_ffn_dim;
  b.dropout_p = bert_dropout;
  return b;
}

LstmConfig ModelConfig::lstm_config() const {
  return LstmConfig{feature_dim(), lstm_layers, seq_len};
}

void ModelConfig::validate() const {
  if (dim_in == 0) throw ConfigError("model: dim_in must be positive");
  if (use_input_fc && input_fc_dim == 0) {
    throw ConfigError("model: input_fc_dim must be positive");
  }
  if (seq_len == 0) throw ConfigError("model: seq_len must be >= 1");
  if (mil_input == MilInput::kEncoded && aggregator != Aggregator::kBert) {
    throw ConfigError("model: mil_input y_i requires the bert aggregator");
  }
  if (mil.hidden1 == 0 || mil.hidden2 == 0) {
    throw ConfigError("model: MIL hidden widths must be positive");
  }
  if (mil.dropout_p < 0.0f || mil.dropout_p >= 1.0f) {
    throw ConfigError("model: MIL dropout must be in [0, 1)");
  }
  if (aggregator == Aggregator::kBert) bert_config().validate();
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.dim_in == b.dim_in && a.use_input_fc == b.use_input_fc &&
         a.input_fc_dim == b.input_fc_dim && a.aggregator == b.aggregator &&
         a.mil_input == b.mil_input && a.seq_len == b.seq_len &&
         a.bert_layers == b.bert_layers && a.bert_heads == b.bert_heads &&
         a.bert_dim_model == b.bert_dim_model &&
         a.bert_ffn_dim == b.bert_ffn_dim && a.bert_dropout == b.bert_dropout &&
         a.lstm_layers == b.lstm_layers && a.mil.hidden1 == b.mil.hidden1 &&
         a.mil.hidden2 == b.mil.hidden2 && a.mil.dropout_p == b.mil.dropout_p;
}

AnomalyModel::AnomalyModel(const ModelConfig& config, std::uint64_t seed,
                           bool with_aggregator)
    : config_(config) {
  config_.validate();
  InitRng rng(seed);
  if (config_.use_input_fc) {
    input_fc_ = Linear(config_.dim_in, config_.input_fc_dim, rng);
  }
  // The head is initialized before the aggregator so that a head-only model
  // gets the same head weights as a full one built from the same seed.
  mil_ = MilHead(config_.feature_dim(), config_.mil, rng);
  if (with_aggregator) {
    if (config_.aggregator == Aggregator::kBert) {
      bert_ = BertAggregator(config_.bert_config(), rng);
    } else {
      lstm_ = LstmAggregator(config_.lstm_config(), rng);
    }
  }
}

AnomalyModel AnomalyModel::clone() const {
  AnomalyModel copy(config_, 0, has_aggregator());
  const ParamList src = parameters();
  const ParamList dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor.data();
    std::copy(from.begin(), from.end(), dst[i].tensor.mutable_data().begin());
    dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
  }
  copy.frozen_ = frozen_;
  return copy;
}

Tensor AnomalyModel::embed(const Tensor& features) const {
  require_matrix(features, 0, config_.dim_in, "features");
  return input_fc_ ? relu(input_fc_->forward(features)) : features;
}

BertOutput AnomalyModel::classify(const Tensor& embedded_segments,
                                  ForwardContext& ctx) const {
  if (bert_) return bert_->forward(embedded_segments, ctx);
  if (lstm_) {
    LstmOutput l = lstm_->forward(embedded_segments, ctx);
    BertOutput out;
    out.p_video = l.p_video;
    return out;
  }
  throw ContractError("model was built without a video classifier");
}

Tensor AnomalyModel::score(const Tensor& instances, ForwardContext& ctx) const {
  return mil_.forward(instances, ctx);
}

VideoPass AnomalyModel::forward(const Tensor& segments, const Tensor* snippets,
                                ForwardContext& ctx,
                                bool run_aggregator) const {
  VideoPass pass;
  pass.segments = embed(segments);
  const bool need_encoded = config_.mil_input == MilInput::kEncoded;
  if (run_aggregator || need_encoded) {
    BertOutput cls = classify(pass.segments, ctx);
    if (run_aggregator) pass.p_video = cls.p_video;
    pass.encoded = cls.y;
  }
  switch (config_.mil_input) {
    case MilInput::kSegments:
      pass.instances = pass.segments;
      break;
    case MilInput::kEncoded:
      pass.instances = pass.encoded;
      break;
    case MilInput::kSnippets:
      if (snippets == nullptr) {
        throw ContractError("mil_input f_i needs the raw snippet features");
      }
      pass.instances = embed(*snippets);
      break;
  }
  pass.instance_scores = score(pass.instances, ctx);
  return pass;
}

ParamList AnomalyModel::parameters() const {
  ParamList out;
  if (input_fc_) input_fc_->collect("input_fc", out);
  mil_.collect("mil", out);
  if (bert_) bert_->collect("bert", out);
  if (lstm_) lstm_->collect("lstm", out);
  return out;
}

std::vector<Tensor> AnomalyModel::parameter_tensors() const {
  std::vector<Tensor> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

void AnomalyModel::freeze_aggregator() {
  ParamList agg;
  if (bert_) bert_->collect("bert", agg);
  if (lstm_) lstm_->collect("lstm", agg);
  for (auto& p : agg) {
    p.tensor.set_requires_grad(false);
    p.tensor.zero_grad();
  }
  frozen_ = true;
}

}  // namespace vcmil
