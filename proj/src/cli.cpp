// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include "vcmil/cli.hpp"

#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "vcmil/binary_io.hpp"
#include "vcmil/checkpoint.hpp"
#include "vcmil/config.hpp"
#include "vcmil/errors.hpp"
#include "vcmil/evaluation.hpp"
#include "vcmil/training.hpp"

namespace vcmil {

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct TrainFlags {
  std::string manifest;
  std::string resume;
  std::optional<std::string> mode, aggregator, mil_input, granularity;
  std::optional<float> beta, lr;
  std::optional<std::size_t> epochs;
};

struct ScoreFlags {
  std::string manifest;
  std::string checkpoint;
  std::optional<std::string> granularity;
  bool corrected = false;
  bool plain = false;
  bool online = false;
  std::string split = "test";
};

void add_common(CLI::App* app, CommonOptions& o, bool out_required) {
  app->add_option("--config", o.config_path, "Config file (section/key = value)");
  app->add_option("--set", o.overrides, "Override, section.key=value")
      ->take_all();
  app->add_option("--seed", o.seed, "Random seed");
  auto* out = app->add_option("--out", o.out, "Output directory");
  if (out_required) out->required();
}

RunConfig base_config(const CommonOptions& o, RunConfig config = {}) {
  if (!o.config_path.empty()) {
    std::string text;
    try {
      text = io::read_file(o.config_path);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config file: " + std::string(e.what()));
    }
    parse_config_text(config, text, o.config_path);
  }
  for (const auto& s : o.overrides) apply_override(config, s);
  return config;
}

void write_config(const fs::path& dir, const RunConfig& config) {
  io::write_file(dir / "config.txt", to_text(config));
}

std::vector<FeatureSequence> load(const fs::path& manifest_path, Split split,
                                  bool require_gt) {
  const Manifest manifest = read_manifest(manifest_path);
  LoadOptions options;
  options.require_ground_truth = require_gt;
  return load_split(manifest, split, options);
}

fs::path manifest_path(const std::string& flag, const RunConfig& config) {
  const std::string& path = flag.empty() ? config.data.manifest : flag;
  if (path.empty()) {
    throw ConfigError("no manifest: pass --manifest or set data.manifest");
  }
  return path;
}

std::string format_metric(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

void print_reports(std::ostream& out, std::span<const MetricReport> reports) {
  for (const auto& r : reports) {
    out << "granularity=" << to_string(r.granularity)
        << " AUC=" << format_metric(r.auc) << " AUC-2=" << format_metric(r.auc_2);
    if (r.ap) out << " AP=" << format_metric(*r.ap);
    if (r.ap_2) out << " AP-2=" << format_metric(*r.ap_2);
    out << " frames=" << r.frames << '\n';
  }
}

int cmd_synth(const CommonOptions& common, std::ostream& out) {
  RunConfig config = base_config(common);
  if (common.seed) config.synth.seed = *common.seed;
  config.synth.validate();
  const fs::path dir = common.out;
  synth_generate(config.synth, dir);
  config.data.manifest = (dir / "manifest.tsv").string();
  write_config(dir, config);
  out << "wrote " << config.synth.n_train << " train and " << config.synth.n_test
      << " test videos to " << dir.string() << '\n';
  return kExitOk;
}

void apply_train_flags(RunConfig& config, const CommonOptions& common,
                       const TrainFlags& flags) {
  if (common.seed) config.train.seed = *common.seed;
  if (flags.mode) config.train.loss.mode = parse_loss_mode(*flags.mode);
  if (flags.aggregator) {
    config.train.model.aggregator = parse_aggregator(*flags.aggregator);
  }
  if (flags.mil_input) config.train.model.mil_input = parse_mil_input(*flags.mil_input);
  if (flags.beta) config.train.loss.beta = *flags.beta;
  if (flags.lr) config.train.lr = *flags.lr;
  if (flags.epochs) config.train.epochs = *flags.epochs;
  if (flags.granularity) apply_setting(config, "eval.granularity", *flags.granularity);
  if (!flags.manifest.empty()) config.data.manifest = flags.manifest;
}

int cmd_train(const CommonOptions& common, const TrainFlags& flags,
              std::ostream& out) {
  std::optional<LoadedCheckpoint> resume;
  RunConfig config;
  if (!flags.resume.empty()) {
    resume.emplace(load_checkpoint(flags.resume));
    config = resume->contents.config;
  }
  config = base_config(common, config);
  apply_train_flags(config, common, flags);
  config.validate();
  if (resume && !(config.train.model == resume->model.config())) {
    throw ConfigError("resumed run cannot change the model section");
  }

  const fs::path manifest = manifest_path(flags.manifest, config);
  std::vector<FeatureSequence> train_set = load(manifest, Split::kTrain, false);
  std::vector<FeatureSequence> test_set = load(manifest, Split::kTest, false);
  bool test_has_gt = !test_set.empty();
  for (const auto& v : test_set) test_has_gt = test_has_gt && v.frame_gt.has_value();
  if (!test_has_gt) test_set.clear();

  std::optional<Trainer> trainer;
  if (resume) {
    resume->contents.config = config;
    trainer.emplace(std::move(*resume), std::move(train_set), std::move(test_set));
  } else {
    trainer.emplace(config, std::move(train_set), std::move(test_set));
  }
  const fs::path dir = common.out;
  trainer->set_output_dir(dir);
  write_config(dir, trainer->config());
  trainer->run();

  const auto evals = trainer->log().evals();
  if (!evals.empty()) {
    print_reports(out, evals.back().reports);
    io::write_file(dir / "metrics.json", report_to_json(evals.back().reports));
  }
  out << "trained " << trainer->completed_steps() << " steps, checkpoints in "
      << dir.string() << '\n';
  return kExitOk;
}

RunConfig scoring_config(const CommonOptions& common, const ScoreFlags& flags,
                         const fs::path& checkpoint) {
  // The checkpoint's config supplies data and model settings; only the eval
  // section and the manifest may be overridden.
  CheckpointLoadOptions peek;
  peek.head_only = true;
  const RunConfig stored = load_checkpoint(checkpoint, peek).contents.config;
  RunConfig config = base_config(common, stored);
  if (!(config.train.model == stored.train.model)) {
    throw ConfigError("model settings differ from the checkpoint");
  }
  if (flags.granularity) apply_setting(config, "eval.granularity", *flags.granularity);
  if (flags.corrected && flags.plain) {
    throw ConfigError("--corrected and --plain are mutually exclusive");
  }
  if (flags.corrected) config.eval.scores = ScoreSelection::kCorrected;
  if (flags.plain) config.eval.scores = ScoreSelection::kPlain;
  if (!flags.manifest.empty()) config.data.manifest = flags.manifest;
  return config;
}

LoadedCheckpoint load_for_data(const fs::path& checkpoint,
                               const std::vector<FeatureSequence>& videos,
                               bool head_only) {
  CheckpointLoadOptions options;
  options.head_only = head_only;
  if (!videos.empty()) options.expected_dim = videos.front().dim();
  return load_checkpoint(checkpoint, options);
}

std::vector<FeatureSequence> normalized(std::vector<FeatureSequence> videos,
                                        const RunConfig& config) {
  if (config.data.l2_normalize) {
    for (auto& v : videos) v = l2_normalize_features(std::move(v));
  }
  return videos;
}

int cmd_eval(const CommonOptions& common, const ScoreFlags& flags,
             std::ostream& out) {
  if (flags.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const RunConfig config = scoring_config(common, flags, flags.checkpoint);
  const auto test_set = normalized(
      load(manifest_path(flags.manifest, config), Split::kTest, true), config);
  if (test_set.empty()) throw DataError(DataErrorCode::kManifest, "no test videos");
  const LoadedCheckpoint ckpt = load_for_data(flags.checkpoint, test_set, false);

  EvalOptions options;
  options.granularities = config.eval.granularities;
  options.threads = default_threads();
  const auto reports = evaluate(ckpt.model, test_set, options);
  print_reports(out, reports);
  if (!common.out.empty()) {
    const fs::path dir = common.out;
    io::write_file(dir / "metrics.json", report_to_json(reports));
    write_config(dir, config);
  }
  return kExitOk;
}

int cmd_score(const CommonOptions& common, const ScoreFlags& flags,
              std::ostream& out) {
  if (flags.checkpoint.empty()) throw ConfigError("score needs --checkpoint");
  const RunConfig config = scoring_config(common, flags, flags.checkpoint);
  const fs::path manifest = manifest_path(flags.manifest, config);
  std::vector<FeatureSequence> videos;
  if (flags.split == "train" || flags.split == "all") {
    for (auto& v : load(manifest, Split::kTrain, false)) videos.push_back(std::move(v));
  }
  if (flags.split == "test" || flags.split == "all") {
    for (auto& v : load(manifest, Split::kTest, false)) videos.push_back(std::move(v));
  }
  if (flags.split != "train" && flags.split != "test" && flags.split != "all") {
    throw ConfigError("--split must be train, test or all");
  }
  videos = normalized(std::move(videos), config);

  std::vector<ScoreMode> modes;
  if (config.eval.scores != ScoreSelection::kPlain) modes.push_back(ScoreMode::kCorrected);
  if (config.eval.scores != ScoreSelection::kCorrected) modes.push_back(ScoreMode::kPlain);
  // Plain scoring needs no classifier, so it is not even constructed.
  const bool head_only = config.eval.scores == ScoreSelection::kPlain;
  const LoadedCheckpoint ckpt = load_for_data(flags.checkpoint, videos, head_only);

  std::vector<std::string> order;
  std::map<std::string, std::vector<const FeatureSequence*>> crops;
  for (const auto& v : videos) {
    auto& list = crops[v.video_id];
    if (list.empty()) order.push_back(v.video_id);
    list.push_back(&v);
  }
  const fs::path dir = common.out;
  std::size_t files = 0;
  for (Granularity g : config.eval.granularities) {
    for (ScoreMode mode : modes) {
      ScoreOptions options;
      options.mode = mode;
      options.granularity = g;
      options.online = flags.online;
      for (const auto& id : order) {
        const ScoreRecord rec = score_crops(ckpt.model, crops[id], options);
        const std::string name = id + "." + std::string(to_string(g)) + "." +
                                 std::string(to_string(mode)) + ".csv";
        write_score_csv(dir / name, rec.frame_scores);
        ++files;
      }
    }
  }
  write_config(dir, config);
  out << "wrote " << files << " score files to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Weakly supervised video anomaly detection over snippet features",
               "vcmil"};
  app.require_subcommand(1);

  CommonOptions synth_common, train_common, eval_common, score_common;
  TrainFlags train_flags;
  ScoreFlags eval_flags, score_flags;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, synth_common, true);

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_common, true);
  train->add_option("--manifest", train_flags.manifest, "Dataset manifest");
  train->add_option("--resume", train_flags.resume, "Checkpoint to resume from");
  train->add_option("--mode", train_flags.mode, "mil_bert or rtfm_bert");
  train->add_option("--aggregator", train_flags.aggregator, "bert or lstm");
  train->add_option("--mil-input", train_flags.mil_input, "x_i, y_i or f_i");
  train->add_option("--beta", train_flags.beta, "Video BCE weight in rtfm_bert");
  train->add_option("--epochs", train_flags.epochs, "Training epochs");
  train->add_option("--lr", train_flags.lr, "Initial learning rate");
  train->add_option("--granularity", train_flags.granularity,
                    "Evaluation granularity: segment, snippet or both");

  auto add_scoring = [](CLI::App* sub, ScoreFlags& f) {
    sub->add_option("--manifest", f.manifest, "Dataset manifest");
    sub->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->required();
    sub->add_option("--granularity", f.granularity, "segment, snippet or both");
  };
  auto* eval = app.add_subcommand("eval", "Frame-level AUC/AP on the test split");
  add_common(eval, eval_common, false);
  add_scoring(eval, eval_flags);

  auto* score = app.add_subcommand("score", "Write per-frame score CSVs");
  add_common(score, score_common, true);
  add_scoring(score, score_flags);
  score->add_flag("--corrected", score_flags.corrected, "Corrected scores only");
  score->add_flag("--plain", score_flags.plain, "Plain scores only");
  score->add_flag("--online", score_flags.online,
                  "Score snippets as a stream (plain snippet scores only)");
  score->add_option("--split", score_flags.split, "train, test or all");

  std::vector<std::string> argv_storage{"vcmil"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (*synth) return cmd_synth(synth_common, out);
    if (*train) return cmd_train(train_common, train_flags, out);
    if (*eval) return cmd_eval(eval_common, eval_flags, out);
    if (*score) return cmd_score(score_common, score_flags, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DataError& e) {
    err << "data error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return kExitDataError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const NumericAbort& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kExitNumericAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace vcmil
