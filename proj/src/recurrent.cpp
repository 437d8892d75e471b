#include "qnn/recurrent.hpp"

#include <cmath>

namespace qnn {

namespace {
constexpr const char* kGateNames[4] = {"f", "i", "c", "o"};
}

template <typename T>
CellState<T> lstm_gates(const Tensor<T>& pre, const Tensor<T>& c_prev, std::size_t hidden) {
  if (pre.rank() != 2 || pre.dim(1) != 4 * hidden) {
    throw DimensionError("lstm_gates: pre-activations " + to_string(pre.shape()) + " do not hold 4 gates of " +
                         std::to_string(hidden));
  }
  const Tensor<T> f = sigmoid(slice(pre, 1, 0, hidden));
  const Tensor<T> i = sigmoid(slice(pre, 1, hidden, hidden));
  const Tensor<T> g = tanh(slice(pre, 1, 2 * hidden, hidden));
  const Tensor<T> o = sigmoid(slice(pre, 1, 3 * hidden, hidden));
  Tensor<T> c = add(mul(f, c_prev), mul(i, g));
  Tensor<T> h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

template <typename T>
CellState<T> RecurrentCell<T>::step(const Tensor<T>& x_t, const CellState<T>& prev) const {
  if (x_t.rank() != 2 || x_t.dim(1) != input_width()) {
    throw DimensionError("cell step: input " + to_string(x_t.shape()) + " does not match input width " +
                         std::to_string(input_width()));
  }
  const std::size_t batch = x_t.dim(0);
  const Shape state_shape{batch, hidden_width()};
  if (prev.h.shape() != state_shape || prev.c.shape() != state_shape) {
    throw DimensionError("cell step: state shapes " + to_string(prev.h.shape()) + "/" + to_string(prev.c.shape()) +
                         " differ from " + to_string(state_shape));
  }
  const Tensor<T> pre = add(input_projection(x_t), matmul(prev.h, recurrent_matrix()));
  return lstm_gates(pre, prev.c, hidden_width());
}

// ---- QLSTM -------------------------------------------------------------------

template <typename T>
QLSTMCell<T> QLSTMCell<T>::zeros(std::size_t in_q, std::size_t hidden_q) {
  QLSTMCell cell;
  cell.in_q_ = in_q;
  cell.hidden_q_ = hidden_q;
  for (int g = 0; g < kGates; ++g) {
    cell.w_[g] = QuatLinear<T>::zeros(in_q, hidden_q, false);
    cell.r_[g] = QuatLinear<T>::zeros(hidden_q, hidden_q, false);
    cell.b_[g] = Tensor<T>::zeros({4 * hidden_q}, true);
  }
  return cell;
}

template <typename T>
QLSTMCell<T>::QLSTMCell(std::size_t in_q, std::size_t hidden_q, Rng& rng) : in_q_(in_q), hidden_q_(hidden_q) {
  for (int g = 0; g < kGates; ++g) {
    w_[g] = QuatLinear<T>(in_q, hidden_q, false, rng);
    r_[g] = QuatLinear<T>(hidden_q, hidden_q, false, rng);
    b_[g] = Tensor<T>::zeros({4 * hidden_q}, true);
  }
}

template <typename T>
Tensor<T> QLSTMCell<T>::input_projection(const Tensor<T>& x) const {
  std::vector<Tensor<T>> blocks, biases;
  for (int g = 0; g < kGates; ++g) {
    blocks.push_back(w_[g].composite());
    biases.push_back(b_[g]);
  }
  return add_bias(matmul(x, concat(blocks, 1)), concat(biases, 0));
}

template <typename T>
Tensor<T> QLSTMCell<T>::recurrent_matrix() const {
  std::vector<Tensor<T>> blocks;
  for (int g = 0; g < kGates; ++g) blocks.push_back(r_[g].composite());
  return concat(blocks, 1);
}

template <typename T>
std::size_t QLSTMCell<T>::weight_count() const {
  std::size_t n = 0;
  for (int g = 0; g < kGates; ++g) n += w_[g].weight_count() + r_[g].weight_count();
  return n;
}

template <typename T>
std::size_t QLSTMCell<T>::param_count() const {
  std::size_t n = weight_count();
  for (int g = 0; g < kGates; ++g) n += b_[g].size();
  return n;
}

template <typename T>
void QLSTMCell<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (int g = 0; g < kGates; ++g) {
    w_[g].collect(out, prefix + "W_" + kGateNames[g] + ".");
    r_[g].collect(out, prefix + "R_" + kGateNames[g] + ".");
    out.push_back({prefix + "b_" + kGateNames[g], b_[g]});
  }
}

// ---- real LSTM ---------------------------------------------------------------

template <typename T>
LSTMCell<T>::LSTMCell(std::size_t input, std::size_t hidden, Rng& rng) {
  if (input == 0 || hidden == 0) throw ConfigError("LSTMCell: sizes must be positive");
  auto glorot = [&rng](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    // Per-gate fans: fan_in inputs into `hidden` units.
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + rows / 4));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>({rows, cols}, std::move(v), true);
  };
  w_ = glorot(4 * hidden, input, input);
  r_ = glorot(4 * hidden, hidden, hidden);
  b_ = Tensor<T>::zeros({4 * hidden}, true);
}

template <typename T>
Tensor<T> LSTMCell<T>::input_projection(const Tensor<T>& x) const {
  return add_bias(matmul(x, transpose(w_)), b_);
}

template <typename T>
Tensor<T> LSTMCell<T>::recurrent_matrix() const {
  return transpose(r_);
}

template <typename T>
void LSTMCell<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "W", w_});
  out.push_back({prefix + "R", r_});
  out.push_back({prefix + "b", b_});
}

// ---- sequences ---------------------------------------------------------------

template <typename T>
Tensor<T> run_direction(const RecurrentCell<T>& cell, const Tensor<T>& seq) {
  if (seq.rank() != 3 || seq.dim(2) != cell.input_width()) {
    throw DimensionError("run_direction: sequence " + to_string(seq.shape()) + " does not match input width " +
                         std::to_string(cell.input_width()));
  }
  const std::size_t steps = seq.dim(0), batch = seq.dim(1), width = seq.dim(2);
  const std::size_t hidden = cell.hidden_width();
  // Input contributions for every frame in one product.
  const Tensor<T> projected =
      reshape(cell.input_projection(reshape(seq, {steps * batch, width})), {steps, batch, 4 * hidden});
  const Tensor<T> recurrent = cell.recurrent_matrix();
  CellState<T> state{Tensor<T>::zeros({batch, hidden}), Tensor<T>::zeros({batch, hidden})};
  std::vector<Tensor<T>> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor<T> pre = add(select(projected, t), matmul(state.h, recurrent));
    state = lstm_gates(pre, state.c, hidden);
    outputs.push_back(state.h);
  }
  return stack(outputs);
}

std::vector<std::size_t> mask_lengths(std::span<const std::uint8_t> mask, std::size_t steps, std::size_t batch) {
  if (mask.size() != steps * batch) {
    throw DimensionError("mask has " + std::to_string(mask.size()) + " entries for a " + std::to_string(steps) +
                         "x" + std::to_string(batch) + " sequence");
  }
  std::vector<std::size_t> lengths(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t t = 0;
    while (t < steps && mask[t * batch + b]) ++t;
    lengths[b] = t;
    for (std::size_t rest = t; rest < steps; ++rest) {
      if (mask[rest * batch + b]) {
        throw DimensionError("mask column " + std::to_string(b) + " is not a valid prefix");
      }
    }
  }
  return lengths;
}

template <typename T>
BiLayer<T>::BiLayer(std::unique_ptr<RecurrentCell<T>> forward, std::unique_ptr<RecurrentCell<T>> backward,
                    MergeMode merge)
    : fwd_(std::move(forward)), bwd_(std::move(backward)), merge_(merge) {
  if (fwd_->input_width() != bwd_->input_width() || fwd_->hidden_width() != bwd_->hidden_width()) {
    throw ConfigError("BiLayer: forward and backward cells have different widths");
  }
}

template <typename T>
std::size_t BiLayer<T>::output_width() const {
  return merge_ == MergeMode::kSum ? fwd_->hidden_width() : 2 * fwd_->hidden_width();
}

template <typename T>
Tensor<T> BiLayer<T>::forward(const Tensor<T>& seq, std::span<const std::uint8_t> mask) const {
  if (seq.rank() != 3) throw DimensionError("BiLayer: expected T×B×D sequence, got " + to_string(seq.shape()));
  const std::size_t steps = seq.dim(0), batch = seq.dim(1);
  const std::vector<std::size_t> lengths = mask_lengths(mask, steps, batch);
  const Tensor<T> past = run_direction(*fwd_, seq);
  const Tensor<T> future = reverse_time(run_direction(*bwd_, reverse_time(seq, lengths)), lengths);
  const Tensor<T> merged = merge_ == MergeMode::kSum ? add(past, future) : concat<T>({past, future}, 2);
  const std::size_t width = merged.dim(2);
  std::vector<T> keep(merged.size());
  for (std::size_t row = 0; row < steps * batch; ++row) {
    std::fill_n(keep.begin() + row * width, width, mask[row] ? T(1) : T(0));
  }
  return mul(merged, Tensor<T>(merged.shape(), std::move(keep)));
}

template <typename T>
void BiLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  fwd_->collect(out, prefix + "fwd.");
  bwd_->collect(out, prefix + "bwd.");
}

template <typename T>
std::vector<BiLayer<T>> make_stack(StackKind kind, std::size_t input_width, std::size_t hidden, std::size_t depth,
                                   MergeMode merge, Rng& rng) {
  std::vector<BiLayer<T>> layers;
  std::size_t width = input_width;
  for (std::size_t l = 0; l < depth; ++l) {
    auto make_cell = [&]() -> std::unique_ptr<RecurrentCell<T>> {
      if (kind == StackKind::kQLSTM) {
        if (width % 4 != 0 || hidden % 4 != 0) {
          throw ConfigError("qlstm layer " + std::to_string(l) + ": widths " + std::to_string(width) + "/" +
                            std::to_string(hidden) + " must be multiples of 4");
        }
        return std::make_unique<QLSTMCell<T>>(width / 4, hidden / 4, rng);
      }
      return std::make_unique<LSTMCell<T>>(width, hidden, rng);
    };
    auto fwd = make_cell();
    auto bwd = make_cell();
    layers.emplace_back(std::move(fwd), std::move(bwd), merge);
    width = layers.back().output_width();
  }
  return layers;
}

#define QNN_INSTANTIATE_RECURRENT(T)                                                                  \
  template CellState<T> lstm_gates(const Tensor<T>&, const Tensor<T>&, std::size_t);                 \
  template class RecurrentCell<T>;                                                                    \
  template class QLSTMCell<T>;                                                                        \
  template class LSTMCell<T>;                                                                         \
  template class BiLayer<T>;                                                                          \
  template Tensor<T> run_direction(const RecurrentCell<T>&, const Tensor<T>&);                        \
  template std::vector<BiLayer<T>> make_stack(StackKind, std::size_t, std::size_t, std::size_t, MergeMode, Rng&);

QNN_INSTANTIATE_RECURRENT(float)
QNN_INSTANTIATE_RECURRENT(double)

#undef QNN_INSTANTIATE_RECURRENT

}  // namespace qnn
