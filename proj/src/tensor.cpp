#include "qnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

namespace qnn {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data, const char* op,
                  std::vector<NodePtr<T>> parents,
                  std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  node->is_leaf = false;
  const bool needs_grad =
      g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                    [](const NodePtr<T>& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kRightScalar;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) +
                       " and " + to_string(b.shape()));
}

// Accumulates `g` into parent `p`'s grad, summing when p is a broadcast scalar.
template <typename T>
void accumulate_into(detail::Node<T>& p, const std::vector<T>& g, bool reduce) {
  if (!p.requires_grad) return;
  T* pg = p.grad_buffer();
  if (reduce) {
    T acc = 0;
    for (T v : g) acc += v;
    pg[0] += acc;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  }
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& x, const char* op, Fwd fwd, Bwd dydx) {
  require_defined(x, op);
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_op<T>(x.shape(), std::move(out), op, {x.node_ptr()},
                    [dydx](detail::Node<T>& self) {
                      auto& p = *self.parents[0];
                      T* pg = p.grad_buffer();
                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        pg[i] += self.grad[i] * dydx(p.data[i], self.data[i]);
                      }
                    });
}

// Splits a shape around `axis` into (outer, extent, inner) for strided copies.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kHardTanh: return "hardtanh";
    case Activation::kReLU: return "relu";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  if (name == "hardtanh") return Activation::kHardTanh;
  if (name == "relu") return Activation::kReLU;
  throw ConfigError("unknown activation '" + name + "' (expected sigmoid|tanh|hardtanh|relu)");
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + to_string(shape) + " holds " +
                         std::to_string(numel(shape)) + " elements, got " +
                         std::to_string(data.size()));
  }
  if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
    throw DimensionError("tensor: zero extent in shape " + to_string(shape));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<T>(numel(shape), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(numel(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ContractError("item(): tensor of shape " + to_string(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

// ---- tape / backward -------------------------------------------------------

template <typename T>
Tape<T> build_tape(const Tensor<T>& root) {
  Tape<T> tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  using N = detail::Node<T>;
  std::unordered_set<const N*> visited;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<N*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      N* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.records.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any tensor requiring grad");
  }
  Tape<T> tape = build_tape(loss);
  for (auto* node : tape.records) {
    if (!node->is_leaf) node->grad.assign(node->data.size(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = tape.records.rbegin(); it != tape.records.rend(); ++it) {
    auto* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
}

// ---- linear algebra --------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  std::vector<T> out(m * n);
  {
    Eigen::Map<const RowMajor<T>> A(a.data().data(), m, k);
    Eigen::Map<const RowMajor<T>> B(b.data().data(), k, n);
    Eigen::Map<RowMajor<T>> C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return make_op<T>({m, n}, std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                    [m, k, n](detail::Node<T>& self) {
                      auto& pa = *self.parents[0];
                      auto& pb = *self.parents[1];
                      Eigen::Map<const RowMajor<T>> G(self.grad.data(), m, n);
                      if (pa.requires_grad) {
                        Eigen::Map<const RowMajor<T>> B(pb.data.data(), k, n);
                        Eigen::Map<RowMajor<T>> GA(pa.grad_buffer(), m, k);
                        GA.noalias() += G * B.transpose();
                      }
                      if (pb.requires_grad) {
                        Eigen::Map<const RowMajor<T>> A(pa.data.data(), m, k);
                        Eigen::Map<RowMajor<T>> GB(pb.grad_buffer(), k, n);
                        GB.noalias() += A.transpose() * G;
                      }
                    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(rows * cols);
  const auto in = a.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
  return make_op<T>({cols, rows}, std::move(out), "transpose", {a.node_ptr()},
                    [rows, cols](detail::Node<T>& self) {
                      T* pg = self.parents[0]->grad_buffer();
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                          pg[i * cols + j] += self.grad[j * rows + i];
                    });
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  const Tensor<T>& big = kind == Broadcast::kLeftScalar ? b : a;
  std::vector<T> out(big.size());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = da[kind == Broadcast::kLeftScalar ? 0 : i] + db[kind == Broadcast::kRightScalar ? 0 : i];
  }
  return make_op<T>(big.shape(), std::move(out), "add", {a.node_ptr(), b.node_ptr()},
                    [kind](detail::Node<T>& self) {
                      accumulate_into(*self.parents[0], self.grad, kind == Broadcast::kLeftScalar);
                      accumulate_into(*self.parents[1], self.grad, kind == Broadcast::kRightScalar);
                    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind(a, b, "sub");
  const Tensor<T>& big = kind == Broadcast::kLeftScalar ? b : a;
  std::vector<T> out(big.size());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = da[kind == Broadcast::kLeftScalar ? 0 : i] - db[kind == Broadcast::kRightScalar ? 0 : i];
  }
  return make_op<T>(big.shape(), std::move(out), "sub", {a.node_ptr(), b.node_ptr()},
                    [kind](detail::Node<T>& self) {
                      accumulate_into(*self.parents[0], self.grad, kind == Broadcast::kLeftScalar);
                      if (self.parents[1]->requires_grad) {
                        std::vector<T> neg(self.grad.size());
                        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
                        accumulate_into(*self.parents[1], neg, kind == Broadcast::kRightScalar);
                      }
                    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const Tensor<T>& big = kind == Broadcast::kLeftScalar ? b : a;
  std::vector<T> out(big.size());
  const auto da = a.data();
  const auto db = b.data();
  const bool a_scalar = kind == Broadcast::kLeftScalar;
  const bool b_scalar = kind == Broadcast::kRightScalar;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = da[a_scalar ? 0 : i] * db[b_scalar ? 0 : i];
  }
  return make_op<T>(big.shape(), std::move(out), "mul", {a.node_ptr(), b.node_ptr()},
                    [a_scalar, b_scalar](detail::Node<T>& self) {
                      auto& pa = *self.parents[0];
                      auto& pb = *self.parents[1];
                      const std::size_t n = self.grad.size();
                      if (pa.requires_grad) {
                        std::vector<T> g(n);
                        for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb.data[b_scalar ? 0 : i];
                        accumulate_into(pa, g, a_scalar);
                      }
                      if (pb.requires_grad) {
                        std::vector<T> g(n);
                        for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa.data[a_scalar ? 0 : i];
                        accumulate_into(pb, g, b_scalar);
                      }
                    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(a, "scale", [factor](T v) { return v * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_defined(x, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) {
    throw DimensionError("add_bias: trailing extent of " + to_string(x.shape()) +
                         " does not match bias " + to_string(bias.shape()));
  }
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b[j];
  return make_op<T>(x.shape(), std::move(out), "add_bias", {x.node_ptr(), bias.node_ptr()},
                    [rows, n](detail::Node<T>& self) {
                      auto& px = *self.parents[0];
                      auto& pb = *self.parents[1];
                      if (px.requires_grad) {
                        T* g = px.grad_buffer();
                        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                      }
                      if (pb.requires_grad) {
                        T* g = pb.grad_buffer();
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                      }
                    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, "sigmoid",
      [](T v) {
        // Branches keep exp() from overflowing for large |v|.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(x, "tanh", [](T v) { return std::tanh(v); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> hardtanh(const Tensor<T>& x) {
  return unary<T>(x, "hardtanh", [](T v) { return std::clamp(v, T(-1), T(1)); },
                  [](T v, T) { return (v > T(-1) && v < T(1)) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> activate(Activation act, const Tensor<T>& x) {
  switch (act) {
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kHardTanh: return hardtanh(x);
    case Activation::kReLU: return relu(x);
  }
  throw ContractError("activate: unknown activation");
}

// ---- layout ----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_op<T>(shape, std::move(out), "reshape", {x.node_ptr()},
                    [](detail::Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer();
                      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw IndexError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    require_defined(p, "concat");
    Shape s = p.shape();
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch " + to_string(first) + " vs " + to_string(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: shapes " + to_string(first) + " and " + to_string(s) +
                             " differ off the concat axis");
      }
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit split = split_at(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    const std::size_t block = extents[p] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + o * block, block,
                  out.begin() + o * split.extent * split.inner + offset * split.inner);
    }
    offset += extents[p];
  }
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) parents.push_back(p.node_ptr());
  return make_op<T>(out_shape, std::move(out), "concat", std::move(parents),
                    [split, extents](detail::Node<T>& self) {
                      std::size_t offset = 0;
                      for (std::size_t p = 0; p < extents.size(); ++p) {
                        auto& parent = *self.parents[p];
                        const std::size_t block = extents[p] * split.inner;
                        if (parent.requires_grad) {
                          T* g = parent.grad_buffer();
                          for (std::size_t o = 0; o < split.outer; ++o) {
                            const T* src = self.grad.data() + o * split.extent * split.inner +
                                           offset * split.inner;
                            for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
                          }
                        }
                        offset += extents[p];
                      }
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  if (axis >= x.rank()) {
    throw IndexError("slice: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  }
  if (length == 0 || start + length > x.dim(axis)) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  const AxisSplit split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t block = length * split.inner;
  std::vector<T> out(split.outer * block);
  const auto src = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + o * split.extent * split.inner + start * split.inner, block,
                out.begin() + o * block);
  }
  return make_op<T>(out_shape, std::move(out), "slice", {x.node_ptr()},
                    [split, start, block](detail::Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer();
                      for (std::size_t o = 0; o < split.outer; ++o) {
                        T* dst = g + o * split.extent * split.inner + start * split.inner;
                        const T* src = self.grad.data() + o * block;
                        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                      }
                    });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index) {
  require_defined(x, "select");
  if (x.rank() < 2) throw DimensionError("select: needs rank >= 2, got " + to_string(x.shape()));
  if (index >= x.dim(0)) {
    throw IndexError("select: index " + std::to_string(index) + " out of range for " + to_string(x.shape()));
  }
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = numel(out_shape);
  std::vector<T> out(x.data().begin() + index * block, x.data().begin() + (index + 1) * block);
  return make_op<T>(out_shape, std::move(out), "select", {x.node_ptr()},
                    [index, block](detail::Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer() + index * block;
                      for (std::size_t i = 0; i < block; ++i) g[i] += self.grad[i];
                    });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const Shape& inner = parts.front().shape();
  const std::size_t block = numel(inner);
  std::vector<T> out;
  out.reserve(block * parts.size());
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    require_defined(p, "stack");
    if (p.shape() != inner) {
      throw DimensionError("stack: shapes " + to_string(inner) + " and " + to_string(p.shape()) + " differ");
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node_ptr());
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  return make_op<T>(out_shape, std::move(out), "stack", std::move(parents),
                    [block](detail::Node<T>& self) {
                      for (std::size_t p = 0; p < self.parents.size(); ++p) {
                        auto& parent = *self.parents[p];
                        if (!parent.requires_grad) continue;
                        T* g = parent.grad_buffer();
                        const T* src = self.grad.data() + p * block;
                        for (std::size_t i = 0; i < block; ++i) g[i] += src[i];
                      }
                    });
}

template <typename T>
Tensor<T> reverse_time(const Tensor<T>& seq, std::span<const std::size_t> lengths) {
  require_rank(seq, 3, "reverse_time");
  const std::size_t steps = seq.dim(0), batch = seq.dim(1), width = seq.dim(2);
  std::vector<std::size_t> lens(batch, steps);
  if (!lengths.empty()) {
    if (lengths.size() != batch) {
      throw DimensionError("reverse_time: " + std::to_string(lengths.size()) + " lengths for batch of " +
                           std::to_string(batch));
    }
    for (std::size_t b = 0; b < batch; ++b) {
      if (lengths[b] > steps) {
        throw IndexError("reverse_time: length " + std::to_string(lengths[b]) + " exceeds " +
                         std::to_string(steps) + " steps");
      }
      lens[b] = lengths[b];
    }
  }
  // source[t*batch+b] = row of the input that lands at (t, b).
  std::vector<std::size_t> source(steps * batch);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      source[t * batch + b] = (t < lens[b] ? lens[b] - 1 - t : t) * batch + b;
  std::vector<T> out(seq.size());
  const auto in = seq.data();
  for (std::size_t row = 0; row < source.size(); ++row)
    std::copy_n(in.begin() + source[row] * width, width, out.begin() + row * width);
  return make_op<T>(seq.shape(), std::move(out), "reverse_time", {seq.node_ptr()},
                    [source = std::move(source), width](detail::Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer();
                      for (std::size_t row = 0; row < source.size(); ++row) {
                        T* dst = g + source[row] * width;
                        const T* src = self.grad.data() + row * width;
                        for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                      }
                    });
}

// ---- quaternion structure ---------------------------------------------------

namespace {

// For output component `out_c` and input component `in_c`, which weight
// component multiplies the input and with what sign. Rows are the quaternion
// matrix of the weight (r, x, y, z order).
struct Term {
  int weight_component;
  int sign;
};

constexpr Term kHamiltonTable[4][4] = {
    {{0, +1}, {1, -1}, {2, -1}, {3, -1}},
    {{1, +1}, {0, +1}, {3, -1}, {2, +1}},
    {{2, +1}, {3, +1}, {0, +1}, {1, -1}},
    {{3, +1}, {2, -1}, {1, +1}, {0, +1}},
};

}  // namespace

template <typename T>
Tensor<T> hamilton_compose(const Tensor<T>& w_r, const Tensor<T>& w_x, const Tensor<T>& w_y,
                           const Tensor<T>& w_z) {
  const std::vector<const Tensor<T>*> comps{&w_r, &w_x, &w_y, &w_z};
  for (const auto* c : comps) require_rank(*c, 2, "hamilton_compose");
  const std::size_t out_q = w_r.dim(0), in_q = w_r.dim(1);
  for (const auto* c : comps) {
    if (c->shape() != w_r.shape()) {
      throw DimensionError("hamilton_compose: component shapes " + to_string(w_r.shape()) + " and " +
                           to_string(c->shape()) + " differ");
    }
  }
  const std::size_t rows = 4 * in_q, cols = 4 * out_q;
  std::vector<T> out(rows * cols);
  for (int in_c = 0; in_c < 4; ++in_c) {
    for (int out_c = 0; out_c < 4; ++out_c) {
      const Term term = kHamiltonTable[out_c][in_c];
      const auto w = comps[term.weight_component]->data();
      const T sign = static_cast<T>(term.sign);
      for (std::size_t j = 0; j < in_q; ++j) {
        T* row = out.data() + (in_c * in_q + j) * cols + out_c * out_q;
        for (std::size_t o = 0; o < out_q; ++o) row[o] = sign * w[o * in_q + j];
      }
    }
  }
  return make_op<T>({rows, cols}, std::move(out), "hamilton_compose",
                    {w_r.node_ptr(), w_x.node_ptr(), w_y.node_ptr(), w_z.node_ptr()},
                    [in_q, out_q, cols](detail::Node<T>& self) {
                      for (int in_c = 0; in_c < 4; ++in_c) {
                        for (int out_c = 0; out_c < 4; ++out_c) {
                          const Term term = kHamiltonTable[out_c][in_c];
                          auto& parent = *self.parents[term.weight_component];
                          if (!parent.requires_grad) continue;
                          T* g = parent.grad_buffer();
                          const T sign = static_cast<T>(term.sign);
                          for (std::size_t j = 0; j < in_q; ++j) {
                            const T* row = self.grad.data() + (in_c * in_q + j) * cols + out_c * out_q;
                            for (std::size_t o = 0; o < out_q; ++o) g[o * in_q + j] += sign * row[o];
                          }
                        }
                      }
                    });
}

template <typename T>
Tensor<T> quat_normalize(const Tensor<T>& x, T eps) {
  require_defined(x, "quat_normalize");
  if (x.rank() == 0 || x.shape().back() % 4 != 0) {
    throw DimensionError("quat_normalize: trailing extent of " + to_string(x.shape()) +
                         " is not a multiple of 4");
  }
  const std::size_t width = x.shape().back();
  const std::size_t h = width / 4;
  const std::size_t rows = x.size() / width;
  std::vector<T> out(x.size());
  std::vector<T> norms(rows * h);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * width;
    for (std::size_t q = 0; q < h; ++q) {
      T sq = 0;
      for (int c = 0; c < 4; ++c) sq += row[c * h + q] * row[c * h + q];
      const T n = std::sqrt(sq);
      norms[r * h + q] = n;
      const T inv = (n + eps) > T(0) ? T(1) / (n + eps) : T(0);
      for (int c = 0; c < 4; ++c) out[r * width + c * h + q] = row[c * h + q] * inv;
    }
  }
  return make_op<T>(x.shape(), std::move(out), "quat_normalize", {x.node_ptr()},
                    [norms = std::move(norms), eps, width, h, rows](detail::Node<T>& self) {
                      auto& p = *self.parents[0];
                      T* g = p.grad_buffer();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t q = 0; q < h; ++q) {
                          const T n = norms[r * h + q];
                          const T d = n + eps;
                          if (d <= T(0)) continue;
                          const std::size_t base = r * width + q;
                          // y = x/d, d = |x| + eps:
                          // dL/dx = g/d - x (g·x) / (|x| d²)
                          T dot = 0;
                          for (int c = 0; c < 4; ++c) dot += self.grad[base + c * h] * p.data[base + c * h];
                          const T radial = n > T(0) ? dot / (n * d * d) : T(0);
                          for (int c = 0; c < 4; ++c) {
                            g[base + c * h] += self.grad[base + c * h] / d - p.data[base + c * h] * radial;
                          }
                        }
                      }
                    });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_op<T>(Shape{}, std::vector<T>{acc}, "sum", {x.node_ptr()},
                    [](detail::Node<T>& self) {
                      auto& p = *self.parents[0];
                      T* g = p.grad_buffer();
                      for (std::size_t i = 0; i < p.data.size(); ++i) g[i] += self.grad[0];
                    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require_defined(x, "mean");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::span<const std::uint8_t> mask) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() < 2) {
    throw DimensionError("cross_entropy: logits need rank >= 2, got " + to_string(logits.shape()));
  }
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / classes;
  if (labels.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows but " +
                         std::to_string(labels.size()) + " labels and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  const std::size_t batch = logits.rank() == 3 ? logits.dim(1) : 0;
  std::vector<T> probs(logits.size(), T(0));
  const auto z = logits.data();
  T total = 0;
  std::size_t valid = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const std::int32_t label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      std::string where = batch ? "frame (t=" + std::to_string(r / batch) + ", b=" +
                                      std::to_string(r % batch) + ")"
                                : "row " + std::to_string(r);
      throw DataError("cross_entropy: label " + std::to_string(label) + " at " + where +
                      " outside [0, " + std::to_string(classes) + ")");
    }
    const T* row = z.data() + r * classes;
    const T max = *std::max_element(row, row + classes);
    T denom = 0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - max);
    const T log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - max - log_denom);
    total -= row[label] - max - log_denom;
    ++valid;
  }
  const T loss = valid ? total / static_cast<T>(valid) : T(0);
  std::vector<std::int32_t> saved_labels(labels.begin(), labels.end());
  std::vector<std::uint8_t> saved_mask(mask.begin(), mask.end());
  return make_op<T>(Shape{}, std::vector<T>{loss}, "cross_entropy", {logits.node_ptr()},
                    [probs = std::move(probs), saved_labels = std::move(saved_labels),
                     saved_mask = std::move(saved_mask), classes, valid](detail::Node<T>& self) {
                      if (valid == 0) return;
                      T* g = self.parents[0]->grad_buffer();
                      const T scale = self.grad[0] / static_cast<T>(valid);
                      for (std::size_t r = 0; r < saved_mask.size(); ++r) {
                        if (!saved_mask[r]) continue;
                        for (std::size_t c = 0; c < classes; ++c) {
                          const T onehot = static_cast<std::int32_t>(c) == saved_labels[r] ? T(1) : T(0);
                          g[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                      }
                    });
}

// ---- instantiations --------------------------------------------------------

#define QNN_INSTANTIATE_TENSOR(T)                                                              \
  template class Tensor<T>;                                                                    \
  template Tape<T> build_tape(const Tensor<T>&);                                               \
  template void backward(const Tensor<T>&);                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> hardtanh(const Tensor<T>&);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> activate(Activation, const Tensor<T>&);                                   \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> reverse_time(const Tensor<T>&, std::span<const std::size_t>);             \
  template Tensor<T> hamilton_compose(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      const Tensor<T>&);                                       \
  template Tensor<T> quat_normalize(const Tensor<T>&, T);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>,            \
                                   std::span<const std::uint8_t>);

QNN_INSTANTIATE_TENSOR(float)
QNN_INSTANTIATE_TENSOR(double)

#undef QNN_INSTANTIATE_TENSOR

}  // namespace qnn
