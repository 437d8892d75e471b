#pragma once

// Quaternion algebra over real scalars. Everything here is a pure value
// function and is used as the reference semantics for the quaternion layers.

#include <array>
#include <cmath>
#include <ostream>

namespace qnn {

template <typename T = double>
struct Quaternion {
  T r{0};
  T x{0};
  T y{0};
  T z{0};

  constexpr Quaternion() = default;
  constexpr Quaternion(T r_, T x_, T y_, T z_) : r(r_), x(x_), y(y_), z(z_) {}

  constexpr std::array<T, 4> components() const { return {r, x, y, z}; }

  constexpr T operator[](int c) const {
    switch (c) {
      case 0: return r;
      case 1: return x;
      case 2: return y;
      default: return z;
    }
  }

  friend constexpr bool operator==(const Quaternion&, const Quaternion&) = default;

  friend constexpr Quaternion operator+(const Quaternion& a, const Quaternion& b) {
    return {a.r + b.r, a.x + b.x, a.y + b.y, a.z + b.z};
  }
  friend constexpr Quaternion operator-(const Quaternion& a, const Quaternion& b) {
    return {a.r - b.r, a.x - b.x, a.y - b.y, a.z - b.z};
  }
  friend constexpr Quaternion operator*(T s, const Quaternion& q) {
    return {s * q.r, s * q.x, s * q.y, s * q.z};
  }

  friend std::ostream& operator<<(std::ostream& os, const Quaternion& q) {
    return os << "(" << q.r << ", " << q.x << ", " << q.y << ", " << q.z << ")";
  }
};

/// 4x4 real matrix of a quaternion, row-major. Multiplying it by the column
/// vector (r, x, y, z) of another quaternion p yields hamilton(q, p).
template <typename T = double>
using QuatMatrix4 = std::array<std::array<T, 4>, 4>;

/// Hamilton product q1 ⊗ q2 (left operand q1). Non-commutative.
template <typename T>
constexpr Quaternion<T> hamilton(const Quaternion<T>& q1, const Quaternion<T>& q2) {
  return {
      q1.r * q2.r - q1.x * q2.x - q1.y * q2.y - q1.z * q2.z,
      q1.r * q2.x + q1.x * q2.r + q1.y * q2.z - q1.z * q2.y,
      q1.r * q2.y - q1.x * q2.z + q1.y * q2.r + q1.z * q2.x,
      q1.r * q2.z + q1.x * q2.y - q1.y * q2.x + q1.z * q2.r,
  };
}

template <typename T>
constexpr QuatMatrix4<T> to_matrix(const Quaternion<T>& q) {
  return {{
      {q.r, -q.x, -q.y, -q.z},
      {q.x, q.r, -q.z, q.y},
      {q.y, q.z, q.r, -q.x},
      {q.z, -q.y, q.x, q.r},
  }};
}

/// m · (p.r, p.x, p.y, p.z)ᵀ read back as a quaternion.
template <typename T>
constexpr Quaternion<T> apply(const QuatMatrix4<T>& m, const Quaternion<T>& p) {
  const std::array<T, 4> v = p.components();
  std::array<T, 4> out{};
  for (int row = 0; row < 4; ++row) {
    T acc = 0;
    for (int col = 0; col < 4; ++col) acc += m[row][col] * v[col];
    out[row] = acc;
  }
  return {out[0], out[1], out[2], out[3]};
}

template <typename T>
constexpr Quaternion<T> conjugate(const Quaternion<T>& q) {
  return {q.r, -q.x, -q.y, -q.z};
}

template <typename T>
T norm(const Quaternion<T>& q) {
  return std::sqrt(q.r * q.r + q.x * q.x + q.y * q.y + q.z * q.z);
}

inline constexpr double kDefaultNormEps = 1e-12;

/// q / (|q| + eps). The additive eps keeps the map total at q = 0, where it
/// returns the zero quaternion.
template <typename T>
Quaternion<T> normalize(const Quaternion<T>& q, T eps = static_cast<T>(kDefaultNormEps)) {
  const T denom = norm(q) + eps;
  if (denom == T(0)) return {};
  return (T(1) / denom) * q;
}

template <typename T>
bool is_finite(const Quaternion<T>& q) {
  return std::isfinite(q.r) && std::isfinite(q.x) && std::isfinite(q.y) && std::isfinite(q.z);
}

}  // namespace qnn
