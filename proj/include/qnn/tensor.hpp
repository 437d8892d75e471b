#pragma once

// Dense row-major real tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; `backward()`
// orders the reachable nodes into a Tape and replays the rules in reverse.
// Leaf gradients accumulate across calls until `zero_grad()`.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qnn/errors.hpp"

namespace qnn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class Activation { kSigmoid, kTanh, kHardTanh, kReLU };

std::string to_string(Activation act);
Activation parse_activation(const std::string& name);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  T* grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const& { return node_->data; }
  // A temporary may hold the last reference to its storage; hand out a copy.
  std::vector<T> data() && { return node_->data; }
  // Direct write access, for initializers and optimizers. Never use on a
  // tensor that is part of a graph awaiting backward.
  std::span<T> mutable_data() { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  // Zero-filled view if no gradient has been accumulated yet.
  std::span<const T> grad() const;
  std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->data.size()}; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op_name() const { return node_->op; }
  T item() const;

  // Same values, no graph history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Nodes reachable from a root that take part in backward, in topological
/// order: every record appears after all of its inputs.
template <typename T>
struct Tape {
  std::vector<detail::Node<T>*> records;
};

template <typename T>
Tape<T> build_tape(const Tensor<T>& root);

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// `loss` must hold exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- operations -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// Elementwise binary ops accept equal shapes, or one operand with a single
// element (scalar broadcast).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// x[..., N] + bias[N] on every row.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> hardtanh(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> activate(Activation act, const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
// x[index, ...] with the leading axis removed.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index);
// Inverse of select over all indices: joins equal-shape tensors on a new
// leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts);

// Reverses the leading (time) axis of a T×B×D sequence. With `lengths`, each
// batch column b reverses only its valid prefix [0, lengths[b]) and leaves the
// padded tail in place.
template <typename T>
Tensor<T> reverse_time(const Tensor<T>& seq, std::span<const std::size_t> lengths = {});

/// Composite real matrix [4·in × 4·out] of a quaternion weight matrix given by
/// its four component matrices (each out×in). For a quarter-block input row
/// vector x, matmul(x, composite) is Σ_j W[o][j] ⊗ x[j] per output o.
template <typename T>
Tensor<T> hamilton_compose(const Tensor<T>& w_r, const Tensor<T>& w_x, const Tensor<T>& w_y,
                           const Tensor<T>& w_z);

/// Per-quaternion q / (|q| + eps) along the last axis, quarter-block layout.
template <typename T>
Tensor<T> quat_normalize(const Tensor<T>& x, T eps);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean negative log-softmax over rows whose mask is set. Logits are
/// [..., C]; labels and mask have one entry per row. Rank-3 logits are read
/// as T×B×C and errors name (t, b).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::span<const std::uint8_t> mask);

}  // namespace qnn
