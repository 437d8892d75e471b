#include "qnn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "qnn/checkpoint.hpp"
#include "qnn/config.hpp"
#include "qnn/data.hpp"
#include "qnn/model.hpp"
#include "qnn/selfcheck.hpp"
#include "qnn/training.hpp"

namespace qnn::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kModelKeys[] = {
    "front-end", "input-dim", "r2h-size", "r2h-activation", "stack", "depth", "hidden", "merge", "classes",
    "dropout", "dropout-granularity", "epochs", "batch-size", "lr", "lr-rule", "lr-threshold", "norm-eps",
    "seed", "precision",
};

struct ModelFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
};

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
  for (const char* key : kModelKeys) {
    flags.options[key] = cmd->add_option(std::string("--") + key, flags.values[key]);
  }
  cmd->add_option("--config", flags.config_path, "config file of `key = value` lines");
}

// Defaults < config file < flags. Returns the resolved config and the keys set
// explicitly by either source.
std::pair<ModelConfig, std::set<std::string>> resolve(const ModelFlags& flags) {
  ModelConfig config;
  std::set<std::string> explicit_keys;
  if (!flags.config_path.empty()) {
    for (auto& k : config.apply_file(flags.config_path)) explicit_keys.insert(k);
  }
  for (const auto& [key, opt] : flags.options) {
    if (opt->count() > 0) {
      config.set(key, flags.values.at(key));
      explicit_keys.insert(key);
    }
  }
  return {config, explicit_keys};
}

// Fills input-dim and classes from the data when neither flags nor the
// config file set them.
void infer_from_data(ModelConfig& config, const std::set<std::string>& explicit_keys,
                     const std::vector<const std::vector<Utterance>*>& sets) {
  std::size_t dim = 0;
  std::int32_t max_label = -1;
  for (const auto* set : sets)
    for (const auto& u : *set) {
      dim = u.dim;
      for (auto l : u.labels) max_label = std::max(max_label, l);
    }
  if (!explicit_keys.count("input-dim") && dim > 0) config.input_dim = dim;
  if (!explicit_keys.count("classes") && max_label >= 0) config.classes = static_cast<std::size_t>(max_label) + 1;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '"', '\'');
  return s;
}

// ---- train -------------------------------------------------------------------

template <typename T>
int run_train(const ModelConfig& config, const std::vector<Utterance>& train_set,
              const std::vector<Utterance>& valid_set, const fs::path& out_dir, std::ostream& out) {
  AcousticModel<T> model(config);
  out << "model " << config.digest() << ": " << count_params(model) << " parameters" << std::endl;
  TrainOptions options;
  options.out_dir = out_dir;
  options.log = &out;
  options.eval_threads = eval_threads_from_env();
  const auto reports = train(model, train_set, valid_set, options);
  json record;
  record["record"] = "train";
  record["epochs"] = reports.size();
  if (!reports.empty()) {
    record["final_valid_loss"] = reports.back().valid_loss;
    record["final_valid_fer"] = reports.back().valid_fer;
  }
  record["digest"] = config.digest();
  record["seed"] = config.seed;
  record["out"] = out_dir.string();
  out << record.dump() << std::endl;
  return kOk;
}

int cmd_train(const ModelFlags& flags, const std::string& train_path, const std::string& valid_path,
              const std::string& out_dir, std::ostream& out) {
  auto [config, explicit_keys] = resolve(flags);
  const auto train_set = read_features(train_path);
  const auto valid_set = read_features(valid_path);
  infer_from_data(config, explicit_keys, {&train_set, &valid_set});
  config.validate();
  if (config.precision == Precision::kF64) return run_train<double>(config, train_set, valid_set, out_dir, out);
  return run_train<float>(config, train_set, valid_set, out_dir, out);
}

// ---- eval --------------------------------------------------------------------

template <typename T>
int run_eval(const ModelConfig& config, const fs::path& checkpoint, const std::vector<Utterance>& test_set,
             std::size_t batch_size, std::ostream& out) {
  AcousticModel<T> model(config);
  ParamList<T> params = model.parameters();
  load_checkpoint(checkpoint, config, params);
  const EvalResult result = evaluate(model, test_set, batch_size, eval_threads_from_env());
  json record;
  record["record"] = "eval";
  record["loss"] = result.loss;
  record["frame_error_rate"] = result.frame_error_rate;
  record["frames"] = result.frames;
  record["errors"] = result.errors;
  record["digest"] = config.digest();
  record["seed"] = config.seed;
  out << record.dump() << std::endl;
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& test_path, std::string config_path,
             std::size_t batch_size, std::ostream& out) {
  if (config_path.empty()) config_path = (fs::path(checkpoint).parent_path() / "config.txt").string();
  ModelConfig config;
  config.apply_file(config_path);
  config.validate();
  const std::string stored = checkpoint_digest(checkpoint);
  if (stored != config.digest()) throw DigestMismatchError(config.digest(), stored);
  const auto test_set = read_features(test_path);
  if (config.precision == Precision::kF64) return run_eval<double>(config, checkpoint, test_set, batch_size, out);
  return run_eval<float>(config, checkpoint, test_set, batch_size, out);
}

// ---- selfcheck -----------------------------------------------------------------

int cmd_selfcheck(const std::string& inject, std::ostream& out, std::ostream& err) {
  SelfcheckOptions options;
  if (inject == "hamilton-sign") {
    options.inject_hamilton_sign_flip = true;
  } else if (!inject.empty()) {
    throw ConfigError("unknown fault '" + inject + "' (expected hamilton-sign)");
  }
  const auto started = std::chrono::steady_clock::now();
  const SelfcheckReport report = run_selfcheck(options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  print_selfcheck(report, out);
  json record;
  record["record"] = "selfcheck";
  record["ok"] = report.ok();
  for (const auto& s : report.suites) record["suites"][s.name] = {{"passed", s.passed}, {"failed", s.failed}};
  record["seconds"] = seconds;
  out << record.dump() << std::endl;
  if (!report.ok()) {
    err << "error kind=check message=\"" << one_line(report.first_failure()) << "\"" << std::endl;
    return kCheckFailed;
  }
  return kOk;
}

// ---- synth ---------------------------------------------------------------------

int cmd_synth(const SynthSpec& spec, const std::string& out_dir, std::ostream& out) {
  const SynthDataset ds = generate_synthetic(spec);
  fs::create_directories(out_dir);
  json record;
  record["record"] = "synth";
  record["seed"] = spec.seed;
  for (const auto& [name, set] : {std::pair{"train", &ds.train}, {"valid", &ds.valid}, {"test", &ds.test}}) {
    const fs::path path = fs::path(out_dir) / (std::string(name) + ".qfea");
    write_features(path, *set);
    std::vector<std::size_t> counts(spec.classes, 0);
    std::size_t frames = 0;
    for (const auto& u : *set)
      for (auto l : u.labels) {
        ++counts[static_cast<std::size_t>(l)];
        ++frames;
      }
    std::vector<double> priors;
    for (auto c : counts) priors.push_back(frames ? static_cast<double>(c) / static_cast<double>(frames) : 0.0);
    record[name] = {{"path", path.string()}, {"utterances", set->size()}, {"frames", frames}, {"label_priors", priors}};
    out << "wrote " << path.string() << " (" << set->size() << " utterances, " << frames << " frames)\n";
  }
  out << record.dump() << std::endl;
  return kOk;
}

// ---- params --------------------------------------------------------------------

json breakdown_json(const ParamBreakdown& p) {
  return {{"front_end", p.front_end}, {"stack", p.stack}, {"stack_weights", p.stack_weights},
          {"output", p.output}, {"total", p.total()}};
}

void print_breakdown(std::ostream& out, const std::string& title, const ParamBreakdown& p) {
  out << title << "\n";
  out << "  " << std::left << std::setw(22) << "front-end" << std::right << std::setw(14) << p.front_end << "\n";
  out << "  " << std::left << std::setw(22) << "recurrent stack" << std::right << std::setw(14) << p.stack << "\n";
  out << "  " << std::left << std::setw(22) << "  (weights only)" << std::right << std::setw(14) << p.stack_weights
      << "\n";
  out << "  " << std::left << std::setw(22) << "output layer" << std::right << std::setw(14) << p.output << "\n";
  out << "  " << std::left << std::setw(22) << "total" << std::right << std::setw(14) << p.total() << "\n";
}

int cmd_params(const ModelFlags& flags, std::ostream& out) {
  auto [config, explicit_keys] = resolve(flags);
  config.validate();
  const ParamBreakdown model = AcousticModel<float>(config).count();
  print_breakdown(out, "model (" + to_string(config.front_end) + " + " + to_string(config.stack) + ")", model);
  json record;
  record["record"] = "params";
  record["digest"] = config.digest();
  record["model"] = breakdown_json(model);

  if (config.stack == StackKind::kQLSTM && config.depth > 0) {
    // Real LSTM stack reading the same widths.
    ModelConfig matched = config;
    matched.stack = StackKind::kLSTM;
    const ParamBreakdown real_same_input = AcousticModel<float>(matched).count();
    // Real LSTM baseline on the raw features.
    ModelConfig baseline = matched;
    baseline.front_end = FrontEnd::kIdentity;
    const ParamBreakdown real_baseline = AcousticModel<float>(baseline).count();
    print_breakdown(out, "matched real LSTM (identity front-end)", real_baseline);
    const double weight_ratio =
        static_cast<double>(real_same_input.stack_weights) / static_cast<double>(model.stack_weights);
    const double stack_ratio = static_cast<double>(real_same_input.stack) / static_cast<double>(model.stack);
    const double total_ratio = static_cast<double>(real_baseline.total()) / static_cast<double>(model.total());
    out << std::fixed << std::setprecision(2);
    out << "recurrent weight ratio LSTM:QLSTM  " << weight_ratio << "\n";
    out << "recurrent stack ratio LSTM:QLSTM   " << stack_ratio << "\n";
    out << "full model ratio LSTM:QLSTM        " << total_ratio << "\n";
    out << std::defaultfloat;
    record["matched_lstm"] = breakdown_json(real_baseline);
    record["recurrent_weight_ratio"] = weight_ratio;
    record["recurrent_stack_ratio"] = stack_ratio;
    record["total_ratio"] = total_ratio;
  }
  out << record.dump() << std::endl;
  return kOk;
}

int fail(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << "error kind=" << kind << " message=\"" << one_line(message) << "\"" << std::endl;
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quaternion LSTM acoustic models with a real-to-quaternion encoder", "qnn"};
  app.require_subcommand(1);

  ModelFlags train_flags;
  std::string train_path, valid_path, out_dir;
  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics and checkpoints");
  add_model_flags(train_cmd, train_flags);
  train_cmd->add_option("--train", train_path, "training features (QFEA or CSV)")->required();
  train_cmd->add_option("--valid", valid_path, "validation features")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();

  std::string checkpoint, test_path, eval_config;
  std::size_t eval_batch = 16;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--test", test_path)->required();
  eval_cmd->add_option("--config", eval_config, "defaults to config.txt beside the checkpoint");
  eval_cmd->add_option("--batch-size", eval_batch)->check(CLI::PositiveNumber);

  std::string inject;
  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "run algebra, layer and gradient checks");
  selfcheck_cmd->add_option("--inject-fault", inject)->group("");

  SynthSpec spec;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic train/valid/test set");
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--classes", spec.classes);
  synth_cmd->add_option("--dim", spec.dim);
  synth_cmd->add_option("--delta-pairs", spec.delta_pairs);
  synth_cmd->add_option("--min-segment", spec.min_segment);
  synth_cmd->add_option("--max-segment", spec.max_segment);
  synth_cmd->add_option("--min-frames", spec.min_frames);
  synth_cmd->add_option("--max-frames", spec.max_frames);
  synth_cmd->add_option("--noise", spec.noise);
  synth_cmd->add_option("--slope", spec.slope);
  synth_cmd->add_option("--priors", spec.priors)->delimiter(',');
  synth_cmd->add_option("--train-utts", spec.train_utterances);
  synth_cmd->add_option("--valid-utts", spec.valid_utterances);
  synth_cmd->add_option("--test-utts", spec.test_utterances);
  synth_cmd->add_option("--seed", spec.seed);

  ModelFlags params_flags;
  auto* params_cmd = app.add_subcommand("params", "print parameter counts");
  add_model_flags(params_cmd, params_flags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags, train_path, valid_path, out_dir, out);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, test_path, eval_config, eval_batch, out);
    if (selfcheck_cmd->parsed()) return cmd_selfcheck(inject, out, err);
    if (synth_cmd->parsed()) return cmd_synth(spec, synth_out, out);
    if (params_cmd->parsed()) return cmd_params(params_flags, out);
  } catch (const ConfigError& e) {
    return fail(err, e.kind(), e.what(), kUsage);
  } catch (const DigestMismatchError& e) {
    return fail(err, e.kind(), e.what(), kCheckFailed);
  } catch (const IoError& e) {
    return fail(err, e.kind(), e.what(), kIo);
  } catch (const FormatError& e) {
    return fail(err, e.kind(), e.what(), kIo);
  } catch (const DataError& e) {
    return fail(err, e.kind(), e.what(), kIo);
  } catch (const Error& e) {
    return fail(err, e.kind(), e.what(), kCheckFailed);
  } catch (const std::exception& e) {
    return fail(err, "internal", e.what(), kCheckFailed);
  }
  return kUsage;
}

}  // namespace qnn::cli
