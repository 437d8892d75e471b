#include "qnn/layers.hpp"

#include <cmath>
#include <numbers>

namespace qnn {

QuatLayout QuatLayout::for_width(std::size_t real_width) {
  if (real_width == 0 || real_width % 4 != 0) {
    throw DimensionError("QuatLayout: real width " + std::to_string(real_width) +
                         " is not a positive multiple of 4");
  }
  return QuatLayout{real_width / 4};
}

double chi4_scale(std::size_t fan_in, std::size_t fan_out) {
  return 1.0 / std::sqrt(2.0 * static_cast<double>(fan_in + fan_out));
}

std::vector<Quaternion<double>> chi4_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw ConfigError("chi4_init: fans must be positive");
  const double sigma = chi4_scale(fan_in, fan_out);
  std::chi_squared_distribution<double> chi_sq(4.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::vector<Quaternion<double>> out(fan_in * fan_out);
  for (auto& w : out) {
    const double phi = sigma * std::sqrt(chi_sq(rng));
    double ux = 0, uy = 0, uz = 0, len = 0;
    do {
      ux = gauss(rng);
      uy = gauss(rng);
      uz = gauss(rng);
      len = std::sqrt(ux * ux + uy * uy + uz * uz);
    } while (len < 1e-12);
    const double theta = angle(rng);
    const double s = std::sin(theta) / len;
    w = {phi * std::cos(theta), phi * ux * s, phi * uy * s, phi * uz * s};
  }
  return out;
}

// ---- QuatLinear -------------------------------------------------------------

template <typename T>
QuatLinear<T> QuatLinear<T>::zeros(std::size_t in_q, std::size_t out_q, bool with_bias) {
  if (in_q == 0 || out_q == 0) throw ConfigError("QuatLinear: quaternion counts must be positive");
  QuatLinear layer;
  layer.in_q_ = in_q;
  layer.out_q_ = out_q;
  for (auto& w : layer.w_) w = Tensor<T>::zeros({out_q, in_q}, true);
  if (with_bias) layer.bias_ = Tensor<T>::zeros({4 * out_q}, true);
  return layer;
}

template <typename T>
QuatLinear<T>::QuatLinear(std::size_t in_q, std::size_t out_q, bool with_bias, Rng& rng)
    : QuatLinear(zeros(in_q, out_q, with_bias)) {
  const auto init = chi4_init(in_q, out_q, rng);
  for (std::size_t o = 0; o < out_q; ++o)
    for (std::size_t j = 0; j < in_q; ++j) {
      const auto& q = init[o * in_q + j];
      set_weight(o, j, {static_cast<T>(q.r), static_cast<T>(q.x), static_cast<T>(q.y), static_cast<T>(q.z)});
    }
}

template <typename T>
Tensor<T> QuatLinear<T>::composite() const {
  return hamilton_compose(w_[0], w_[1], w_[2], w_[3]);
}

template <typename T>
Tensor<T> QuatLinear<T>::forward(const Tensor<T>& x) const {
  if (x.rank() == 0 || x.shape().back() % 4 != 0) {
    throw DimensionError("QuatLinear: trailing extent of " + to_string(x.shape()) +
                         " is not a multiple of 4");
  }
  if (x.shape().back() != 4 * in_q_) {
    throw DimensionError("QuatLinear: expected trailing extent " + std::to_string(4 * in_q_) + ", got " +
                         to_string(x.shape()));
  }
  const std::size_t rows = x.size() / (4 * in_q_);
  Tensor<T> y = matmul(x.rank() == 2 ? x : reshape(x, {rows, 4 * in_q_}), composite());
  if (has_bias()) y = add_bias(y, bias_);
  if (x.rank() == 2) return y;
  Shape out_shape = x.shape();
  out_shape.back() = 4 * out_q_;
  return reshape(y, out_shape);
}

template <typename T>
Quaternion<T> QuatLinear<T>::weight(std::size_t out, std::size_t in) const {
  if (out >= out_q_ || in >= in_q_) throw IndexError("QuatLinear::weight: index out of range");
  const std::size_t i = out * in_q_ + in;
  return {w_[0].data()[i], w_[1].data()[i], w_[2].data()[i], w_[3].data()[i]};
}

template <typename T>
void QuatLinear<T>::set_weight(std::size_t out, std::size_t in, const Quaternion<T>& q) {
  if (out >= out_q_ || in >= in_q_) throw IndexError("QuatLinear::set_weight: index out of range");
  const std::size_t i = out * in_q_ + in;
  for (int c = 0; c < 4; ++c) w_[c].mutable_data()[i] = q[c];
}

template <typename T>
void QuatLinear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  static constexpr const char* kNames[4] = {"w_r", "w_x", "w_y", "w_z"};
  for (int c = 0; c < 4; ++c) out.push_back({prefix + kNames[c], w_[c]});
  if (has_bias()) out.push_back({prefix + "bias", bias_});
}

// ---- RealLinear ---------------------------------------------------------------

template <typename T>
RealLinear<T>::RealLinear(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("RealLinear: sizes must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  weight_ = Tensor<T>({out, in}, std::move(w), true);
  bias_ = Tensor<T>::zeros({out}, true);
}

template <typename T>
RealLinear<T>::RealLinear(Tensor<T> weight, Tensor<T> bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || bias_.rank() != 1 || bias_.dim(0) != weight_.dim(0)) {
    throw DimensionError("RealLinear: weight " + to_string(weight_.shape()) + " and bias " +
                         to_string(bias_.shape()) + " are inconsistent");
  }
}

template <typename T>
Tensor<T> real_linear_forward(const Tensor<T>& weight, const Tensor<T>& bias, const Tensor<T>& x) {
  if (weight.rank() != 2) throw DimensionError("real_linear: weight must be 2-D, got " + to_string(weight.shape()));
  const std::size_t in = weight.dim(1), out = weight.dim(0);
  if (x.rank() == 0 || x.shape().back() != in) {
    throw DimensionError("real_linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  const std::size_t rows = x.size() / in;
  Tensor<T> y = add_bias(matmul(x.rank() == 2 ? x : reshape(x, {rows, in}), transpose(weight)), bias);
  if (x.rank() == 2) return y;
  Shape out_shape = x.shape();
  out_shape.back() = out;
  return reshape(y, out_shape);
}

template <typename T>
Tensor<T> RealLinear<T>::forward(const Tensor<T>& x) const {
  return real_linear_forward(weight_, bias_, x);
}

template <typename T>
void RealLinear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "weight", weight_});
  out.push_back({prefix + "bias", bias_});
}

// ---- R2H ----------------------------------------------------------------------

template <typename T>
R2HEncoder<T>::R2HEncoder(std::size_t input_dim, std::size_t real_width, Activation act, bool normalized,
                          Rng& rng, double eps)
    : R2HEncoder(RealLinear<T>(input_dim, real_width, rng), act, normalized, eps) {}

template <typename T>
R2HEncoder<T>::R2HEncoder(RealLinear<T> dense, Activation act, bool normalized, double eps)
    : dense_(std::move(dense)), activation_(act), normalized_(normalized), eps_(static_cast<T>(eps)) {
  QuatLayout::for_width(dense_.out_features());
  if (!(eps > 0)) throw ConfigError("R2HEncoder: eps must be positive");
}

template <typename T>
Tensor<T> R2HEncoder<T>::forward(const Tensor<T>& x) const {
  Tensor<T> q = split_activation(activation_, dense_.forward(x));
  return normalized_ ? quat_normalize(q, eps_) : q;
}

// ---- dropout -----------------------------------------------------------------

template <typename T>
Tensor<T> quaternion_dropout(const Tensor<T>& x, double p, bool training, Rng& rng,
                             DropoutGranularity granularity) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p=" + std::to_string(p) + " outside [0, 1)");
  if (!training || p == 0.0) return x;
  const std::size_t width = x.shape().back();
  std::vector<T> mask(x.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  if (granularity == DropoutGranularity::kComponent) {
    for (auto& m : mask) m = uniform(rng) < p ? T(0) : keep_scale;
  } else {
    const std::size_t h = QuatLayout::for_width(width).quaternions;
    const std::size_t rows = x.size() / width;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < h; ++q) {
        const T m = uniform(rng) < p ? T(0) : keep_scale;
        for (int c = 0; c < 4; ++c) mask[r * width + c * h + q] = m;
      }
  }
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

#define QNN_INSTANTIATE_LAYERS(T)                                                                 \
  template class QuatLinear<T>;                                                                   \
  template class RealLinear<T>;                                                                   \
  template class R2HEncoder<T>;                                                                   \
  template Tensor<T> real_linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> quaternion_dropout(const Tensor<T>&, double, bool, Rng&, DropoutGranularity);

QNN_INSTANTIATE_LAYERS(float)
QNN_INSTANTIATE_LAYERS(double)

#undef QNN_INSTANTIATE_LAYERS

}  // namespace qnn
