#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qnn/data.hpp"
#include "qnn/model.hpp"

namespace qnn {

/// Adam with bias correction. Defaults are the usual (0.9, 0.999, 1e-8).
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(ParamList<T> params) : Adam(std::move(params), Options{}) {}
  Adam(ParamList<T> params, Options options);

  /// Throws ContractError if a parameter has no gradient.
  void step();
  void zero_grad();

  double lr() const { return options_.lr; }
  void set_lr(double lr);
  std::size_t steps() const { return steps_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  const ParamList<T>& params() const { return params_; }

 private:
  ParamList<T> params_;
  Options options_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Learning-rate halving driven by the validation loss.
///   stall:   halve when (prev − curr) / prev < threshold; never on the first
///            epoch.
///   literal: halve whenever curr < threshold.
struct LRSchedule {
  LrRule rule = LrRule::kStall;
  double threshold = 1e-3;
  double factor = 0.5;
  std::optional<double> prev_val_loss{};

  double update(double val_loss, double lr);
};

inline double lr_update(LRSchedule& schedule, double val_loss, double lr) {
  return schedule.update(val_loss, lr);
}

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double valid_fer = 0;  // percent
  double lr = 0;         // used during the epoch
  double next_lr = 0;    // after the schedule update
  double seconds = 0;
};

struct EvalResult {
  double loss = 0;
  double frame_error_rate = 0;  // percent
  std::size_t frames = 0;
  std::size_t errors = 0;
};

template <typename T>
Tensor<T> cross_entropy_framewise(const Tensor<T>& logits, const UtteranceBatch& batch) {
  return cross_entropy(logits, batch.labels, batch.mask);
}

/// Mask-aware mean loss and argmax frame error over `utts`. Batches are
/// spread over up to `threads` workers; results are combined in batch order
/// so the outcome does not depend on the thread count.
template <typename T>
EvalResult evaluate(const AcousticModel<T>& model, const std::vector<Utterance>& utts, std::size_t batch_size,
                    unsigned threads = 1);

/// Worker count from QNN_THREADS (default 1).
unsigned eval_threads_from_env();

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics, config snapshot, checkpoints
  std::ostream* log = nullptr;                   // human-readable progress
  unsigned eval_threads = 1;
};

/// Runs config.epochs epochs of framewise cross-entropy training. With an
/// out_dir, writes config.txt, init.qnn, last.qnn, best.qnn and
/// metrics.jsonl (one JSON record per epoch, then a summary record).
template <typename T>
std::vector<EpochReport> train(AcousticModel<T>& model, const std::vector<Utterance>& train_set,
                               const std::vector<Utterance>& valid_set, const TrainOptions& options = {});

/// One metrics line; wall-clock time is left out so reruns are byte-identical.
std::string metrics_record(const EpochReport& report, const ModelConfig& config);

}  // namespace qnn
