#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qnn/quaternion.hpp"
#include "qnn/tensor.hpp"

namespace qnn {

using Rng = std::mt19937_64;

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// H quaternions stored as a real vector of length 4H in quarter blocks:
/// quaternion h is (v[h], v[H+h], v[2H+h], v[3H+h]).
struct QuatLayout {
  std::size_t quaternions = 0;

  std::size_t real_width() const { return 4 * quaternions; }

  template <typename T>
  std::vector<Quaternion<T>> unpack(std::span<const T> v) const {
    check(v.size());
    std::vector<Quaternion<T>> out(quaternions);
    const std::size_t h = quaternions;
    for (std::size_t q = 0; q < h; ++q) out[q] = {v[q], v[h + q], v[2 * h + q], v[3 * h + q]};
    return out;
  }

  template <typename T>
  std::vector<T> pack(std::span<const Quaternion<T>> qs) const {
    if (qs.size() != quaternions) {
      throw DimensionError("QuatLayout::pack: expected " + std::to_string(quaternions) +
                           " quaternions, got " + std::to_string(qs.size()));
    }
    const std::size_t h = quaternions;
    std::vector<T> out(4 * h);
    for (std::size_t q = 0; q < h; ++q) {
      out[q] = qs[q].r;
      out[h + q] = qs[q].x;
      out[2 * h + q] = qs[q].y;
      out[3 * h + q] = qs[q].z;
    }
    return out;
  }

  static QuatLayout for_width(std::size_t real_width);

 private:
  void check(std::size_t n) const {
    if (n != real_width()) {
      throw DimensionError("QuatLayout: expected " + std::to_string(real_width()) + " reals, got " +
                           std::to_string(n));
    }
  }
};

/// σ = 1/√(2·(fan_in + fan_out)), fans in quaternion units.
double chi4_scale(std::size_t fan_in, std::size_t fan_out);

/// fan_out × fan_in quaternion weights, row-major. Magnitudes follow a Chi
/// distribution with four degrees of freedom scaled by chi4_scale(); each
/// weight is φ·(cos θ, u sin θ) for a uniform unit pure quaternion u and
/// θ ~ U(−π, π).
std::vector<Quaternion<double>> chi4_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Quaternion fully connected layer: out[o] = Σ_j W[o][j] ⊗ x[j] + b[o].
template <typename T>
class QuatLinear {
 public:
  QuatLinear() = default;
  // Chi-4 initialized weights, zero bias.
  QuatLinear(std::size_t in_q, std::size_t out_q, bool with_bias, Rng& rng);
  // All-zero weights and bias.
  static QuatLinear zeros(std::size_t in_q, std::size_t out_q, bool with_bias);

  std::size_t in_quaternions() const { return in_q_; }
  std::size_t out_quaternions() const { return out_q_; }
  bool has_bias() const { return bias_.defined(); }

  /// x: [..., 4·in_q] in quarter-block layout.
  Tensor<T> forward(const Tensor<T>& x) const;
  /// Real matrix [4·in_q × 4·out_q] implementing the Hamilton products.
  Tensor<T> composite() const;

  Quaternion<T> weight(std::size_t out, std::size_t in) const;
  void set_weight(std::size_t out, std::size_t in, const Quaternion<T>& q);
  // Component c ∈ {0:r, 1:x, 2:y, 3:z}, shape out_q × in_q.
  const Tensor<T>& component(int c) const { return w_[c]; }
  const Tensor<T>& bias() const { return bias_; }
  Tensor<T>& bias() { return bias_; }

  std::size_t weight_count() const { return 4 * in_q_ * out_q_; }
  std::size_t param_count() const { return weight_count() + (has_bias() ? 4 * out_q_ : 0); }
  void collect(ParamList<T>& out, const std::string& prefix) const;

 private:
  std::size_t in_q_ = 0;
  std::size_t out_q_ = 0;
  Tensor<T> w_[4];
  Tensor<T> bias_;
};

/// Real affine map y = x·Wᵀ + b with W: N×M, b: N.
template <typename T>
class RealLinear {
 public:
  RealLinear() = default;
  // Glorot-uniform weights, zero bias.
  RealLinear(std::size_t in, std::size_t out, Rng& rng);
  RealLinear(Tensor<T> weight, Tensor<T> bias);

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  Tensor<T> forward(const Tensor<T>& x) const;

  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }
  std::size_t weight_count() const { return weight_.size(); }
  std::size_t param_count() const { return weight_.size() + bias_.size(); }
  void collect(ParamList<T>& out, const std::string& prefix) const;

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <typename T>
Tensor<T> real_linear_forward(const Tensor<T>& weight, const Tensor<T>& bias, const Tensor<T>& x);

/// The activation applied to every real component independently.
template <typename T>
Tensor<T> split_activation(Activation kind, const Tensor<T>& x) {
  return activate(kind, x);
}

/// Real-to-quaternion encoder: dense layer, split activation, then optional
/// per-quaternion normalization q / (|q| + eps).
template <typename T>
class R2HEncoder {
 public:
  R2HEncoder() = default;
  R2HEncoder(std::size_t input_dim, std::size_t real_width, Activation act, bool normalized, Rng& rng,
             double eps = kDefaultNormEps);
  R2HEncoder(RealLinear<T> dense, Activation act, bool normalized, double eps = kDefaultNormEps);

  Tensor<T> forward(const Tensor<T>& x) const;

  std::size_t input_dim() const { return dense_.in_features(); }
  std::size_t output_width() const { return dense_.out_features(); }
  Activation activation() const { return activation_; }
  bool normalized() const { return normalized_; }
  const RealLinear<T>& dense() const { return dense_; }
  std::size_t param_count() const { return dense_.param_count(); }
  void collect(ParamList<T>& out, const std::string& prefix) const { dense_.collect(out, prefix + "dense."); }

 private:
  RealLinear<T> dense_;
  Activation activation_ = Activation::kTanh;
  bool normalized_ = true;
  T eps_ = static_cast<T>(kDefaultNormEps);
};

enum class DropoutGranularity { kQuaternion, kComponent };

/// Training mode: each quaternion (all four components together, or each
/// real component with kComponent) is zeroed with probability p and
/// survivors are scaled by 1/(1−p). Evaluation mode returns x unchanged.
template <typename T>
Tensor<T> quaternion_dropout(const Tensor<T>& x, double p, bool training, Rng& rng,
                             DropoutGranularity granularity = DropoutGranularity::kQuaternion);

}  // namespace qnn
