#include "qnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <thread>

#include <json.hpp>

#include "qnn/checkpoint.hpp"

namespace qnn {

// ---- Adam --------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(ParamList<T> params, Options options) : params_(std::move(params)), options_(options) {
  set_lr(options_.lr);
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::set_lr(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("Adam: learning rate must be positive");
  options_.lr = lr;
}

template <typename T>
void Adam<T>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("Adam: parameter '" + p.name + "' has no gradient");
  }
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T> tensor = params_[i].tensor;
    auto values = tensor.mutable_data();
    const auto grad = tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] = static_cast<T>(values[k] - options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

// ---- schedule ------------------------------------------------------------------

double LRSchedule::update(double val_loss, double lr) {
  bool halve = false;
  if (rule == LrRule::kLiteral) {
    halve = val_loss < threshold;
  } else if (prev_val_loss) {
    const double prev = *prev_val_loss;
    const double improvement = prev != 0.0 ? (prev - val_loss) / std::abs(prev) : prev - val_loss;
    halve = improvement < threshold;
  }
  prev_val_loss = val_loss;
  return halve ? lr * factor : lr;
}

// ---- evaluation ------------------------------------------------------------------

unsigned eval_threads_from_env() {
  if (const char* env = std::getenv("QNN_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return 1;
}

namespace {

struct BatchStats {
  double loss_sum = 0;
  std::size_t frames = 0;
  std::size_t errors = 0;
};

template <typename T>
BatchStats batch_stats(const AcousticModel<T>& model, const UtteranceBatch& batch) {
  NoGradGuard no_grad;
  const Tensor<T> logits = model.forward(batch, false);
  BatchStats s;
  s.frames = batch.valid_frames();
  s.loss_sum = static_cast<double>(cross_entropy_framewise(logits, batch).item()) * static_cast<double>(s.frames);
  const std::size_t classes = logits.shape().back();
  const auto z = logits.data();
  for (std::size_t row = 0; row < batch.mask.size(); ++row) {
    if (!batch.mask[row]) continue;
    const auto* first = z.data() + row * classes;
    const auto best = static_cast<std::int32_t>(std::max_element(first, first + classes) - first);
    if (best != batch.labels[row]) ++s.errors;
  }
  return s;
}

}  // namespace

template <typename T>
EvalResult evaluate(const AcousticModel<T>& model, const std::vector<Utterance>& utts, std::size_t batch_size,
                    unsigned threads) {
  const auto batches = make_batches(utts, batch_size, nullptr, false);
  std::vector<BatchStats> stats(batches.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(batches.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < batches.size(); ++i) stats[i] = batch_stats(model, batches[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> failures(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < batches.size(); i += workers) stats[i] = batch_stats(model, batches[i]);
        } catch (...) {
          failures[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& f : failures)
      if (f) std::rethrow_exception(f);
  }
  EvalResult result;
  double loss_sum = 0;
  for (const auto& s : stats) {
    loss_sum += s.loss_sum;
    result.frames += s.frames;
    result.errors += s.errors;
  }
  if (result.frames > 0) {
    result.loss = loss_sum / static_cast<double>(result.frames);
    result.frame_error_rate = 100.0 * static_cast<double>(result.errors) / static_cast<double>(result.frames);
  }
  return result;
}

// ---- training --------------------------------------------------------------------

std::string metrics_record(const EpochReport& report, const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["record"] = "epoch";
  j["epoch"] = report.epoch;
  j["train_loss"] = report.train_loss;
  j["valid_loss"] = report.valid_loss;
  j["valid_fer"] = report.valid_fer;
  j["lr"] = report.lr;
  j["next_lr"] = report.next_lr;
  j["lr0"] = config.lr;
  j["seed"] = config.seed;
  j["digest"] = config.digest();
  return j.dump();
}

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

}  // namespace

template <typename T>
std::vector<EpochReport> train(AcousticModel<T>& model, const std::vector<Utterance>& train_set,
                               const std::vector<Utterance>& valid_set, const TrainOptions& options) {
  const ModelConfig& config = model.config();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (valid_set.empty()) throw DataError("train: empty validation set");
  for (const auto* set : {&train_set, &valid_set})
    for (const auto& u : *set) {
      u.validate();
      if (u.dim != config.input_dim) {
        throw DataError("utterance '" + u.id + "' has " + std::to_string(u.dim) + " features, config expects " +
                        std::to_string(config.input_dim));
      }
      for (std::size_t t = 0; t < u.frames; ++t)
        if (u.labels[t] < 0 || static_cast<std::size_t>(u.labels[t]) >= config.classes) {
          throw DataError("utterance '" + u.id + "' frame " + std::to_string(t) + ": label " +
                          std::to_string(u.labels[t]) + " outside [0, " + std::to_string(config.classes) + ")");
        }
    }

  ParamList<T> params = model.parameters();
  Adam<T> adam(params, {.lr = config.lr});
  LRSchedule schedule{.rule = config.lr_rule, .threshold = config.lr_threshold};
  auto batch_rng = derived_rng(config.seed, 1);
  auto dropout_rng = derived_rng(config.seed, 2);

  std::ofstream metrics;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    std::ofstream(*options.out_dir / "config.txt") << config.serialize();
    save_checkpoint(*options.out_dir / "init.qnn", config, params);
    metrics.open(*options.out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics in '" + options.out_dir->string() + "'");
  }

  std::vector<EpochReport> reports;
  std::optional<EpochReport> best;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto batches = make_batches(train_set, config.batch_size, &batch_rng, true);
    double loss_sum = 0;
    std::size_t frames = 0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      const auto& batch = batches[i];
      const Tensor<T> loss = cross_entropy_framewise(model.forward(batch, true, &dropout_rng), batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::string ids;
        for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(i) +
                            " (utterances " + ids + ")");
      }
      adam.zero_grad();
      backward(loss);
      adam.step();
      loss_sum += value * static_cast<double>(batch.valid_frames());
      frames += batch.valid_frames();
    }
    const EvalResult valid = evaluate(model, valid_set, config.batch_size, options.eval_threads);
    EpochReport report;
    report.epoch = epoch;
    report.train_loss = loss_sum / static_cast<double>(frames);
    report.valid_loss = valid.loss;
    report.valid_fer = valid.frame_error_rate;
    report.lr = adam.lr();
    report.next_lr = schedule.update(valid.loss, adam.lr());
    adam.set_lr(report.next_lr);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    reports.push_back(report);

    if (options.log) {
      *options.log << "epoch " << epoch << "  train_loss " << report.train_loss << "  valid_loss "
                   << report.valid_loss << "  valid_fer " << report.valid_fer << "%  lr " << report.lr << "  ("
                   << report.seconds << " s)" << std::endl;
    }
    if (options.out_dir) {
      metrics << metrics_record(report, config) << "\n";
      save_checkpoint(*options.out_dir / "last.qnn", config, params);
      if (!best || report.valid_loss < best->valid_loss) {
        save_checkpoint(*options.out_dir / "best.qnn", config, params);
      }
    }
    if (!best || report.valid_loss < best->valid_loss) best = report;
  }

  if (options.out_dir) {
    nlohmann::ordered_json summary;
    summary["record"] = "summary";
    summary["epochs"] = reports.size();
    if (!reports.empty()) {
      summary["final_epoch"] = reports.back().epoch;
      summary["final_valid_loss"] = reports.back().valid_loss;
      summary["final_valid_fer"] = reports.back().valid_fer;
      summary["best_epoch"] = best->epoch;
      summary["best_valid_loss"] = best->valid_loss;
      summary["best_valid_fer"] = best->valid_fer;
    }
    summary["seed"] = config.seed;
    summary["digest"] = config.digest();
    metrics << summary.dump() << "\n";
  }
  return reports;
}

template class Adam<float>;
template class Adam<double>;
template EvalResult evaluate(const AcousticModel<float>&, const std::vector<Utterance>&, std::size_t, unsigned);
template EvalResult evaluate(const AcousticModel<double>&, const std::vector<Utterance>&, std::size_t, unsigned);
template std::vector<EpochReport> train(AcousticModel<float>&, const std::vector<Utterance>&,
                                        const std::vector<Utterance>&, const TrainOptions&);
template std::vector<EpochReport> train(AcousticModel<double>&, const std::vector<Utterance>&,
                                        const std::vector<Utterance>&, const TrainOptions&);

}  // namespace qnn
