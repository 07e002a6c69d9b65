// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "vcmil/binary_io.hpp"
#include "vcmil/errors.hpp"

namespace vcmil {

void TrainConfig::validate() const {
  // dim_in == 0 defers the model checks until the data fixes D.
  if (model.dim_in != 0) model.validate();
  loss.validate();
  if (!(lr > 0.0f)) throw ConfigError("train.lr must be positive");
  if (!(lr_min >= 0.0f && lr_min <= lr)) {
    throw ConfigError("train.lr_min must be in [0, train.lr]");
  }
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
}

void RunConfig::validate() const {
  synth.validate();
  train.validate();
  if (eval.granularities.empty()) {
    throw ConfigError("eval.granularity must name at least one granularity");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + std::string(v) + "'");
}

template <typename T>
T parse_number(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

struct Key {
  std::string name;  // section.key
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
Key number_key(std::string name, Access access) {
  return {std::move(name),
          [access](RunConfig& c, std::string_view v) {
            access(c) = parse_number<T>(v);
          },
          [access](const RunConfig& c) {
            return format_number<T>(access(const_cast<RunConfig&>(c)));
          }};
}

template <typename Access>
Key bool_key(std::string name, Access access) {
  return {std::move(name),
          [access](RunConfig& c, std::string_view v) { access(c) = parse_bool(v); },
          [access](const RunConfig& c) {
            return format_bool(access(const_cast<RunConfig&>(c)));
          }};
}

std::string granularities_to_text(const std::vector<Granularity>& g) {
  if (g.size() == 2) return "both";
  return g.empty() ? "" : std::string(to_string(g.front()));
}

std::vector<Granularity> parse_granularities(std::string_view v) {
  if (v == "both") return {Granularity::kSegment, Granularity::kSnippet};
  return {parse_granularity(v)};
}

std::string_view to_string(ScoreSelection s) {
  switch (s) {
    case ScoreSelection::kCorrected: return "corrected";
    case ScoreSelection::kPlain: return "plain";
    default: return "both";
  }
}

ScoreSelection parse_score_selection(std::string_view v) {
  if (v == "both") return ScoreSelection::kBoth;
  if (v == "corrected") return ScoreSelection::kCorrected;
  if (v == "plain") return ScoreSelection::kPlain;
  throw ConfigError("expected both, corrected or plain, got '" +
                    std::string(v) + "'");
}

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    using S = std::size_t;
    using U = std::uint64_t;
    // synth
    k.push_back(number_key<S>("synth.n_train", [](RunConfig& c) -> S& { return c.synth.n_train; }));
    k.push_back(number_key<S>("synth.n_test", [](RunConfig& c) -> S& { return c.synth.n_test; }));
    k.push_back(number_key<S>("synth.dim", [](RunConfig& c) -> S& { return c.synth.dim; }));
    k.push_back(number_key<double>("synth.anomaly_rate", [](RunConfig& c) -> double& { return c.synth.anomaly_rate; }));
    k.push_back(number_key<S>("synth.min_snippets", [](RunConfig& c) -> S& { return c.synth.min_snippets; }));
    k.push_back(number_key<S>("synth.max_snippets", [](RunConfig& c) -> S& { return c.synth.max_snippets; }));
    k.push_back(number_key<double>("synth.noise", [](RunConfig& c) -> double& { return c.synth.noise; }));
    k.push_back(number_key<double>("synth.video_drift", [](RunConfig& c) -> double& { return c.synth.video_drift; }));
    k.push_back(number_key<double>("synth.anomaly_scale", [](RunConfig& c) -> double& { return c.synth.anomaly_scale; }));
    k.push_back(number_key<double>("synth.min_window", [](RunConfig& c) -> double& { return c.synth.min_window; }));
    k.push_back(number_key<double>("synth.max_window", [](RunConfig& c) -> double& { return c.synth.max_window; }));
    k.push_back(number_key<S>("synth.crops", [](RunConfig& c) -> S& { return c.synth.crops; }));
    k.push_back(number_key<double>("synth.crop_noise", [](RunConfig& c) -> double& { return c.synth.crop_noise; }));
    k.push_back(number_key<U>("synth.seed", [](RunConfig& c) -> U& { return c.synth.seed; }));
    // model
    k.push_back(number_key<S>("model.dim_in", [](RunConfig& c) -> S& { return c.train.model.dim_in; }));
    k.push_back(bool_key("model.use_input_fc", [](RunConfig& c) -> bool& { return c.train.model.use_input_fc; }));
    k.push_back(number_key<S>("model.input_fc_dim", [](RunConfig& c) -> S& { return c.train.model.input_fc_dim; }));
    k.push_back({"model.aggregator",
                 [](RunConfig& c, std::string_view v) { c.train.model.aggregator = parse_aggregator(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.model.aggregator)); }});
    k.push_back({"model.mil_input",
                 [](RunConfig& c, std::string_view v) { c.train.model.mil_input = parse_mil_input(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.model.mil_input)); }});
    k.push_back(number_key<S>("model.seq_len", [](RunConfig& c) -> S& { return c.train.model.seq_len; }));
    k.push_back(number_key<S>("model.bert_layers", [](RunConfig& c) -> S& { return c.train.model.bert_layers; }));
    k.push_back(number_key<S>("model.bert_heads", [](RunConfig& c) -> S& { return c.train.model.bert_heads; }));
    k.push_back(number_key<S>("model.bert_dim_model", [](RunConfig& c) -> S& { return c.train.model.bert_dim_model; }));
    k.push_back(number_key<S>("model.bert_ffn_dim", [](RunConfig& c) -> S& { return c.train.model.bert_ffn_dim; }));
    k.push_back(number_key<float>("model.bert_dropout", [](RunConfig& c) -> float& { return c.train.model.bert_dropout; }));
    k.push_back(number_key<S>("model.lstm_layers", [](RunConfig& c) -> S& { return c.train.model.lstm_layers; }));
    k.push_back(number_key<S>("model.mil_hidden1", [](RunConfig& c) -> S& { return c.train.model.mil.hidden1; }));
    k.push_back(number_key<S>("model.mil_hidden2", [](RunConfig& c) -> S& { return c.train.model.mil.hidden2; }));
    k.push_back(number_key<float>("model.mil_dropout", [](RunConfig& c) -> float& { return c.train.model.mil.dropout_p; }));
    // loss
    k.push_back({"loss.mode",
                 [](RunConfig& c, std::string_view v) { c.train.loss.mode = parse_loss_mode(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.loss.mode)); }});
    k.push_back(number_key<float>("loss.lambda_smooth", [](RunConfig& c) -> float& { return c.train.loss.lambda_smooth; }));
    k.push_back(number_key<float>("loss.lambda_sparse", [](RunConfig& c) -> float& { return c.train.loss.lambda_sparse; }));
    k.push_back(number_key<float>("loss.beta", [](RunConfig& c) -> float& { return c.train.loss.beta; }));
    k.push_back(number_key<S>("loss.rtfm_k", [](RunConfig& c) -> S& { return c.train.loss.rtfm_k; }));
    k.push_back(number_key<float>("loss.rtfm_margin", [](RunConfig& c) -> float& { return c.train.loss.rtfm_margin; }));
    // train
    k.push_back(number_key<float>("train.lr", [](RunConfig& c) -> float& { return c.train.lr; }));
    k.push_back(number_key<S>("train.epochs", [](RunConfig& c) -> S& { return c.train.epochs; }));
    k.push_back(number_key<U>("train.seed", [](RunConfig& c) -> U& { return c.train.seed; }));
    k.push_back(number_key<S>("train.eval_every", [](RunConfig& c) -> S& { return c.train.eval_every; }));
    k.push_back(number_key<double>("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; }));
    k.push_back(number_key<S>("train.cosine_start", [](RunConfig& c) -> S& { return c.train.cosine_start; }));
    k.push_back(number_key<float>("train.lr_min", [](RunConfig& c) -> float& { return c.train.lr_min; }));
    k.push_back(number_key<S>("train.two_step_epochs", [](RunConfig& c) -> S& { return c.train.two_step_epochs; }));
    // data
    k.push_back({"data.manifest",
                 [](RunConfig& c, std::string_view v) { c.data.manifest = std::string(v); },
                 [](const RunConfig& c) { return c.data.manifest; }});
    k.push_back(bool_key("data.l2_normalize", [](RunConfig& c) -> bool& { return c.data.l2_normalize; }));
    // eval
    k.push_back({"eval.granularity",
                 [](RunConfig& c, std::string_view v) { c.eval.granularities = parse_granularities(v); },
                 [](const RunConfig& c) { return granularities_to_text(c.eval.granularities); }});
    k.push_back({"eval.scores",
                 [](RunConfig& c, std::string_view v) { c.eval.scores = parse_score_selection(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.eval.scores)); }});
    return k;
  }();
  return keys;
}

}  // namespace

void apply_setting(RunConfig& config, std::string_view key,
                   std::string_view value) {
  for (const Key& k : registry()) {
    if (k.name == key) {
      try {
        k.set(config, trim(value));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) +
                      "' is not of the form section.key=value");
  }
  apply_setting(config, trim(assignment.substr(0, eq)),
                assignment.substr(eq + 1));
}

void parse_config_text(RunConfig& config, std::string_view text,
                       std::string_view origin) {
  std::istringstream is{std::string(text)};
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const Key& k : registry()) {
        known = known || k.name.compare(0, section.size() + 1, section + ".") == 0;
      }
      if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError(where + ": key outside any section");
      key = section + "." + key;
    }
    try {
      apply_setting(config, key, std::string_view(line).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config file: " + std::string(e.what()));
  }
  RunConfig config;
  parse_config_text(config, text, path.string());
  return config;
}

std::string to_text(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const Key& k : registry()) {
    const auto dot = k.name.find('.');
    const std::string s = k.name.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << k.name.substr(dot + 1) << " = " << k.get(config) << '\n';
  }
  return os.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : registry()) out.push_back(k.name);
  return out;
}

}  // namespace vcmil
