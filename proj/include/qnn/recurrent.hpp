#pragma once

// Quaternion and real LSTM cells, bidirectional layers and stacks.
//
// Gate pre-activations are laid out as four contiguous blocks of the hidden
// width in (forget, input, cell, output) order. For the quaternion cell each
// block is itself in quarter-block quaternion layout.

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "qnn/config.hpp"
#include "qnn/layers.hpp"

namespace qnn {

template <typename T>
struct CellState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
class RecurrentCell {
 public:
  virtual ~RecurrentCell() = default;

  virtual std::size_t input_width() const = 0;   // real
  virtual std::size_t hidden_width() const = 0;  // real

  /// Gate pre-activations contributed by the input, bias included:
  /// [N × 4·hidden] for x of shape [N × input_width].
  virtual Tensor<T> input_projection(const Tensor<T>& x) const = 0;
  /// Real matrix [hidden × 4·hidden]; the recurrent contribution is h·R.
  virtual Tensor<T> recurrent_matrix() const = 0;

  virtual std::size_t weight_count() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual void collect(ParamList<T>& out, const std::string& prefix) const = 0;

  /// One time step from raw input.
  CellState<T> step(const Tensor<T>& x_t, const CellState<T>& prev) const;
};

/// f = σ(pre_f), i = σ(pre_i), g = tanh(pre_c), o = σ(pre_o);
/// c = f ⊙ c_prev + i ⊙ g; h = o ⊙ tanh(c). ⊙ is the componentwise product.
template <typename T>
CellState<T> lstm_gates(const Tensor<T>& pre, const Tensor<T>& c_prev, std::size_t hidden);

/// Gate equations with quaternion weights: every input and recurrent
/// transform is a Hamilton product W ⊗ x.
template <typename T>
class QLSTMCell final : public RecurrentCell<T> {
 public:
  static constexpr int kGates = 4;

  QLSTMCell(std::size_t in_q, std::size_t hidden_q, Rng& rng);
  static QLSTMCell zeros(std::size_t in_q, std::size_t hidden_q);

  std::size_t input_width() const override { return 4 * in_q_; }
  std::size_t hidden_width() const override { return 4 * hidden_q_; }
  std::size_t hidden_quaternions() const { return hidden_q_; }

  Tensor<T> input_projection(const Tensor<T>& x) const override;
  Tensor<T> recurrent_matrix() const override;

  std::size_t weight_count() const override;
  std::size_t param_count() const override;
  void collect(ParamList<T>& out, const std::string& prefix) const override;

  // Gate g ∈ {0:f, 1:i, 2:c, 3:o}.
  QuatLinear<T>& input_weights(int g) { return w_[g]; }
  QuatLinear<T>& recurrent_weights(int g) { return r_[g]; }
  Tensor<T>& bias(int g) { return b_[g]; }

 private:
  QLSTMCell() = default;

  std::size_t in_q_ = 0;
  std::size_t hidden_q_ = 0;
  QuatLinear<T> w_[kGates];
  QuatLinear<T> r_[kGates];
  Tensor<T> b_[kGates];
};

/// Real-valued LSTM baseline: W: 4n×m, R: 4n×n, b: 4n.
template <typename T>
class LSTMCell final : public RecurrentCell<T> {
 public:
  LSTMCell(std::size_t input, std::size_t hidden, Rng& rng);

  std::size_t input_width() const override { return w_.dim(1); }
  std::size_t hidden_width() const override { return r_.dim(1); }

  Tensor<T> input_projection(const Tensor<T>& x) const override;
  Tensor<T> recurrent_matrix() const override;

  std::size_t weight_count() const override { return w_.size() + r_.size(); }
  std::size_t param_count() const override { return weight_count() + b_.size(); }
  void collect(ParamList<T>& out, const std::string& prefix) const override;

 private:
  Tensor<T> w_;
  Tensor<T> r_;
  Tensor<T> b_;
};

/// Runs `cell` over t = 0..T−1 of seq [T×B×D] from zero initial state.
template <typename T>
Tensor<T> run_direction(const RecurrentCell<T>& cell, const Tensor<T>& seq);

/// Lengths of the valid prefix of each batch column of a T×B mask. Throws
/// DimensionError if the mask size is wrong or valid frames are not a prefix.
std::vector<std::size_t> mask_lengths(std::span<const std::uint8_t> mask, std::size_t steps, std::size_t batch);

/// Pair of cells reading the sequence in both directions. The backward cell
/// reads each column's valid frames in reverse. Outputs are merged per time
/// step (sum by default) and zeroed on padded frames.
template <typename T>
class BiLayer {
 public:
  BiLayer(std::unique_ptr<RecurrentCell<T>> forward, std::unique_ptr<RecurrentCell<T>> backward,
          MergeMode merge = MergeMode::kSum);

  Tensor<T> forward(const Tensor<T>& seq, std::span<const std::uint8_t> mask) const;

  std::size_t input_width() const { return fwd_->input_width(); }
  std::size_t output_width() const;
  RecurrentCell<T>& forward_cell() { return *fwd_; }
  RecurrentCell<T>& backward_cell() { return *bwd_; }
  const RecurrentCell<T>& forward_cell() const { return *fwd_; }
  const RecurrentCell<T>& backward_cell() const { return *bwd_; }
  std::size_t weight_count() const { return fwd_->weight_count() + bwd_->weight_count(); }
  std::size_t param_count() const { return fwd_->param_count() + bwd_->param_count(); }
  void collect(ParamList<T>& out, const std::string& prefix) const;

 private:
  std::unique_ptr<RecurrentCell<T>> fwd_;
  std::unique_ptr<RecurrentCell<T>> bwd_;
  MergeMode merge_;
};

template <typename T>
Tensor<T> bidirectional_forward(const BiLayer<T>& layer, const Tensor<T>& seq, std::span<const std::uint8_t> mask) {
  return layer.forward(seq, mask);
}

/// Builds `depth` bidirectional layers of the given kind. The first layer
/// reads `input_width` reals; every later layer reads the previous output.
template <typename T>
std::vector<BiLayer<T>> make_stack(StackKind kind, std::size_t input_width, std::size_t hidden, std::size_t depth,
                                   MergeMode merge, Rng& rng);

}  // namespace qnn
