#pragma once

#include <optional>
#include <vector>

#include "qnn/config.hpp"
#include "qnn/data.hpp"
#include "qnn/layers.hpp"
#include "qnn/recurrent.hpp"

namespace qnn {

struct ParamBreakdown {
  std::size_t front_end = 0;
  std::size_t stack = 0;
  std::size_t stack_weights = 0;  // recurrent weight scalars, biases excluded
  std::size_t output = 0;

  std::size_t total() const { return front_end + stack + output; }
};

/// Front-end (R2H encoder, naive quaternion packing or identity), a stack of
/// bidirectional recurrent layers, and a real output layer producing class
/// logits per frame. Dropout sits after the front-end and after every stack
/// layer, never after the output layer.
template <typename T>
class AcousticModel {
 public:
  /// Validates the config and initializes parameters from config.seed.
  explicit AcousticModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Batch features as a T×B×D' tensor; naive-quat front-ends are packed into
  /// quarter-block layout here.
  Tensor<T> input_tensor(const UtteranceBatch& batch) const;

  /// Logits [T×B×C]. `dropout_rng` is required when training with dropout.
  Tensor<T> forward(const UtteranceBatch& batch, bool training = false, Rng* dropout_rng = nullptr) const;

  ParamList<T> parameters() const;
  ParamBreakdown count() const;

  const std::optional<R2HEncoder<T>>& encoder() const { return encoder_; }
  std::vector<BiLayer<T>>& stack() { return stack_; }
  const std::vector<BiLayer<T>>& stack() const { return stack_; }
  const RealLinear<T>& output() const { return output_; }

 private:
  ModelConfig config_;
  std::optional<R2HEncoder<T>> encoder_;
  std::vector<BiLayer<T>> stack_;
  RealLinear<T> output_;
};

template <typename T>
std::size_t count_params(const AcousticModel<T>& model) {
  return model.count().total();
}

}  // namespace qnn
