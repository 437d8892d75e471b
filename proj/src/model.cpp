#include "qnn/model.hpp"

namespace qnn {

template <typename T>
AcousticModel<T>::AcousticModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  if (config_.front_end == FrontEnd::kR2HNorm || config_.front_end == FrontEnd::kR2H) {
    encoder_.emplace(config_.input_dim, config_.r2h_size, config_.r2h_activation,
                     config_.front_end == FrontEnd::kR2HNorm, rng, config_.norm_eps);
  }
  stack_ = make_stack<T>(config_.stack, config_.front_end_width(), config_.hidden, config_.depth, config_.merge, rng);
  const std::size_t out_in = config_.depth > 0 ? config_.layer_output_width() : config_.front_end_width();
  output_ = RealLinear<T>(out_in, config_.classes, rng);
}

template <typename T>
Tensor<T> AcousticModel<T>::input_tensor(const UtteranceBatch& batch) const {
  if (batch.dim != config_.input_dim) {
    throw DimensionError("model expects " + std::to_string(config_.input_dim) + " features per frame, batch has " +
                         std::to_string(batch.dim));
  }
  const std::size_t rows = batch.max_frames * batch.batch;
  if (config_.front_end == FrontEnd::kNaiveQuat) {
    const ComposedFeatures packed = naive_quat_compose(batch.features, rows, batch.dim);
    return Tensor<T>({batch.max_frames, batch.batch, packed.dim},
                     std::vector<T>(packed.features.begin(), packed.features.end()));
  }
  return Tensor<T>({batch.max_frames, batch.batch, batch.dim},
                   std::vector<T>(batch.features.begin(), batch.features.end()));
}

template <typename T>
Tensor<T> AcousticModel<T>::forward(const UtteranceBatch& batch, bool training, Rng* dropout_rng) const {
  const bool dropping = training && config_.dropout > 0.0;
  if (dropping && dropout_rng == nullptr) throw ContractError("model forward: training dropout needs an rng");
  auto drop = [&](const Tensor<T>& x) {
    return dropping ? quaternion_dropout(x, config_.dropout, true, *dropout_rng, config_.effective_dropout_granularity()) : x;
  };
  Tensor<T> x = input_tensor(batch);
  if (encoder_) x = encoder_->forward(x);
  x = drop(x);
  for (const auto& layer : stack_) x = drop(layer.forward(x, batch.mask));
  return output_.forward(x);
}

template <typename T>
ParamList<T> AcousticModel<T>::parameters() const {
  ParamList<T> out;
  if (encoder_) encoder_->collect(out, "front.");
  for (std::size_t l = 0; l < stack_.size(); ++l) stack_[l].collect(out, "stack." + std::to_string(l) + ".");
  output_.collect(out, "output.");
  return out;
}

template <typename T>
ParamBreakdown AcousticModel<T>::count() const {
  ParamBreakdown p;
  if (encoder_) p.front_end = encoder_->param_count();
  for (const auto& layer : stack_) {
    p.stack += layer.param_count();
    p.stack_weights += layer.weight_count();
  }
  p.output = output_.param_count();
  return p;
}

template class AcousticModel<float>;
template class AcousticModel<double>;

}  // namespace qnn
