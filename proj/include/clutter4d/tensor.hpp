#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>

#include <Eigen/Core>

#include "clutter4d/error.hpp"

namespace clutter4d {

using Index = Eigen::Index;

/// Axis order of every Tensor6: batch, channel, three spatial axes, time.
enum Axis : int { kBatch = 0, kChannel = 1, kX = 2, kY = 3, kZ = 4, kTime = 5 };

using Shape6 = std::array<Index, 6>;

Index numel(const Shape6& shape);
std::string to_string(const Shape6& shape);

/// Dense real array over (B, C, Lx, Ly, Lz, T), row-major with T fastest.
///
/// Storage is an Eigen column array so that element-wise expressions can be
/// written directly on `array()`. Copies are deep; there are no views.
template <typename Scalar>
class Tensor6 {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor6() : shape_{0, 0, 0, 0, 0, 0} {}
  explicit Tensor6(const Shape6& shape, Scalar fill = Scalar(0));
  Tensor6(const Shape6& shape, Storage data);

  const Shape6& shape() const { return shape_; }
  Index extent(int axis) const { return shape_[axis]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Index index(Index b, Index c, Index x, Index y, Index z, Index t) const {
    return ((((b * shape_[1] + c) * shape_[2] + x) * shape_[3] + y) * shape_[4] + z) * shape_[5] + t;
  }
  Scalar& operator()(Index b, Index c, Index x, Index y, Index z, Index t) {
    return data_[index(b, c, x, y, z, t)];
  }
  Scalar operator()(Index b, Index c, Index x, Index y, Index z, Index t) const {
    return data_[index(b, c, x, y, z, t)];
  }

  /// Number of scalars in one (b, c) block, i.e. Lx*Ly*Lz*T.
  Index block_size() const { return shape_[2] * shape_[3] * shape_[4] * shape_[5]; }

  bool operator==(const Tensor6& other) const {
    return shape_ == other.shape_ && (data_.size() == 0 || (data_ == other.data_).all());
  }

 private:
  Shape6 shape_;
  Storage data_;
};

using Tensor6D = Tensor6<float>;

/// Complex 3D+t volume. Shape is (Lx, Ly, Lz, T), T fastest.
template <typename Scalar>
class ComplexVolume {
 public:
  using Complex = std::complex<Scalar>;
  using Storage = Eigen::Array<Complex, Eigen::Dynamic, 1>;
  using Shape4 = std::array<Index, 4>;

  ComplexVolume() : shape_{0, 0, 0, 0} {}
  explicit ComplexVolume(const Shape4& shape);

  const Shape4& shape() const { return shape_; }
  Index extent(int axis) const { return shape_[axis]; }
  Index size() const { return data_.size(); }
  Index frames() const { return shape_[3]; }
  Index voxels_per_frame() const { return shape_[0] * shape_[1] * shape_[2]; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Index index(Index x, Index y, Index z, Index t) const {
    return ((x * shape_[1] + y) * shape_[2] + z) * shape_[3] + t;
  }
  Complex& operator()(Index x, Index y, Index z, Index t) { return data_[index(x, y, z, t)]; }
  Complex operator()(Index x, Index y, Index z, Index t) const { return data_[index(x, y, z, t)]; }

  /// Real and imaginary parts as (1, 1, Lx, Ly, Lz, T) tensors.
  Tensor6<Scalar> real() const;
  Tensor6<Scalar> imag() const;
  Tensor6<Scalar> magnitude() const;
  static ComplexVolume from_parts(const Tensor6<Scalar>& re, const Tensor6<Scalar>& im);

  bool operator==(const ComplexVolume& other) const {
    return shape_ == other.shape_ && (data_.size() == 0 || (data_ == other.data_).all());
  }

 private:
  Shape4 shape_;
  Storage data_;
};

using ComplexVolumeF = ComplexVolume<float>;

/// Reinterprets the extents without moving any scalar. `new_shape` may have
/// rank 1..6; missing trailing axes are padded with 1.
template <typename Scalar>
Tensor6<Scalar> reshape(const Tensor6<Scalar>& x, std::span<const Index> new_shape);

template <typename Scalar>
Tensor6<Scalar> reshape(const Tensor6<Scalar>& x, std::initializer_list<Index> new_shape) {
  return reshape(x, std::span<const Index>(new_shape.begin(), new_shape.size()));
}

enum class ElementwiseOp { kAdd, kSub, kMul, kDiv, kScale };

template <typename Scalar>
Tensor6<Scalar> elementwise(ElementwiseOp op, const Tensor6<Scalar>& a, const Tensor6<Scalar>& b);
template <typename Scalar>
Tensor6<Scalar> elementwise(ElementwiseOp op, const Tensor6<Scalar>& a, Scalar b);

template <typename Scalar>
Tensor6<Scalar> operator+(const Tensor6<Scalar>& a, const Tensor6<Scalar>& b) {
  return elementwise(ElementwiseOp::kAdd, a, b);
}
template <typename Scalar>
Tensor6<Scalar> operator-(const Tensor6<Scalar>& a, const Tensor6<Scalar>& b) {
  return elementwise(ElementwiseOp::kSub, a, b);
}
template <typename Scalar>
Tensor6<Scalar> operator*(const Tensor6<Scalar>& a, Scalar s) {
  return elementwise(ElementwiseOp::kScale, a, s);
}

struct Distribution {
  enum class Kind { kUniform, kNormal };
  Kind kind = Kind::kNormal;
  double a = 0.0;  // lower bound, or mean
  double b = 1.0;  // upper bound, or standard deviation

  static Distribution uniform(double lo, double hi) { return {Kind::kUniform, lo, hi}; }
  static Distribution normal(double mean, double stddev) { return {Kind::kNormal, mean, stddev}; }
};

/// Deterministic for a given seed. Scalars are drawn in storage order.
template <typename Scalar>
Tensor6<Scalar> seeded_fill(const Shape6& shape, const Distribution& dist, std::uint64_t seed);

template <typename To, typename From>
Tensor6<To> cast(const Tensor6<From>& x) {
  return Tensor6<To>(x.shape(), x.array().template cast<To>());
}

/// Throws NumericError if any element is NaN or infinite.
template <typename Scalar>
void require_finite(const Tensor6<Scalar>& x, const char* what);

/// Copies channel range [first, first+count) into a new tensor.
template <typename Scalar>
Tensor6<Scalar> slice_channels(const Tensor6<Scalar>& x, Index first, Index count);

/// Channel concatenation; all other extents must agree.
template <typename Scalar>
Tensor6<Scalar> concat_channels(const Tensor6<Scalar>& a, const Tensor6<Scalar>& b);

/// Sub-block [origin, origin+extent) over axes (X, Y, Z, T) of batch item b.
template <typename Scalar>
Tensor6<Scalar> crop(const Tensor6<Scalar>& x, const std::array<Index, 4>& origin,
                     const std::array<Index, 4>& extent, Index batch = 0);

/// Stacks single-item tensors along the batch axis.
template <typename Scalar>
Tensor6<Scalar> stack_batch(std::span<const Tensor6<Scalar>* const> items);

}  // namespace clutter4d
