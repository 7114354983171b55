#include "clutter4d/tensor.hpp"

#include <cmath>
#include <iostream>
#include <random>
#include <sstream>

namespace clutter4d {

void log_warning(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

Index numel(const Shape6& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape6& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <typename Scalar>
Tensor6<Scalar>::Tensor6(const Shape6& shape, Scalar fill) : shape_(shape) {
  data_ = Storage::Constant(numel(shape), fill);
}

template <typename Scalar>
Tensor6<Scalar>::Tensor6(const Shape6& shape, Storage data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != numel(shape))
    throw ShapeError("payload of " + std::to_string(data_.size()) + " scalars does not fit shape " +
                     to_string(shape));
}

template <typename Scalar>
ComplexVolume<Scalar>::ComplexVolume(const Shape4& shape) : shape_(shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in complex volume shape");
    n *= e;
  }
  data_ = Storage::Zero(n);
}

template <typename Scalar>
Tensor6<Scalar> ComplexVolume<Scalar>::real() const {
  return Tensor6<Scalar>({1, 1, shape_[0], shape_[1], shape_[2], shape_[3]}, data_.real());
}

template <typename Scalar>
Tensor6<Scalar> ComplexVolume<Scalar>::imag() const {
  return Tensor6<Scalar>({1, 1, shape_[0], shape_[1], shape_[2], shape_[3]}, data_.imag());
}

template <typename Scalar>
Tensor6<Scalar> ComplexVolume<Scalar>::magnitude() const {
  return Tensor6<Scalar>({1, 1, shape_[0], shape_[1], shape_[2], shape_[3]}, data_.abs());
}

template <typename Scalar>
ComplexVolume<Scalar> ComplexVolume<Scalar>::from_parts(const Tensor6<Scalar>& re,
                                                        const Tensor6<Scalar>& im) {
  if (re.shape() != im.shape())
    throw ShapeError("real part " + to_string(re.shape()) + " and imaginary part " +
                     to_string(im.shape()) + " differ");
  if (re.extent(kBatch) != 1 || re.extent(kChannel) != 1)
    throw ShapeError("complex volume parts must have B = C = 1, got " + to_string(re.shape()));
  ComplexVolume out({re.extent(kX), re.extent(kY), re.extent(kZ), re.extent(kTime)});
  out.data_.real() = re.array();
  out.data_.imag() = im.array();
  return out;
}

template <typename Scalar>
Tensor6<Scalar> reshape(const Tensor6<Scalar>& x, std::span<const Index> new_shape) {
  if (new_shape.empty() || new_shape.size() > 6)
    throw ShapeError("reshape target must have rank 1..6");
  Shape6 shape{1, 1, 1, 1, 1, 1};
  for (std::size_t i = 0; i < new_shape.size(); ++i) shape[i] = new_shape[i];
  if (numel(shape) != x.size())
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " (" + std::to_string(x.size()) +
                     " scalars) to " + to_string(shape));
  return Tensor6<Scalar>(shape, x.array());
}

namespace {

template <typename Scalar>
void require_same_shape(const Tensor6<Scalar>& a, const Tensor6<Scalar>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

}  // namespace

template <typename Scalar>
Tensor6<Scalar> elementwise(ElementwiseOp op, const Tensor6<Scalar>& a, const Tensor6<Scalar>& b) {
  require_same_shape(a, b, "elementwise");
  switch (op) {
    case ElementwiseOp::kAdd:
      return Tensor6<Scalar>(a.shape(), a.array() + b.array());
    case ElementwiseOp::kSub:
      return Tensor6<Scalar>(a.shape(), a.array() - b.array());
    case ElementwiseOp::kMul:
    case ElementwiseOp::kScale:
      return Tensor6<Scalar>(a.shape(), a.array() * b.array());
    case ElementwiseOp::kDiv:
      if (b.size() > 0 && (b.array() == Scalar(0)).any())
        throw NumericError("elementwise division by zero");
      return Tensor6<Scalar>(a.shape(), a.array() / b.array());
  }
  throw Error("unknown elementwise op");
}

template <typename Scalar>
Tensor6<Scalar> elementwise(ElementwiseOp op, const Tensor6<Scalar>& a, Scalar b) {
  switch (op) {
    case ElementwiseOp::kAdd:
      return Tensor6<Scalar>(a.shape(), a.array() + b);
    case ElementwiseOp::kSub:
      return Tensor6<Scalar>(a.shape(), a.array() - b);
    case ElementwiseOp::kMul:
    case ElementwiseOp::kScale:
      return Tensor6<Scalar>(a.shape(), a.array() * b);
    case ElementwiseOp::kDiv:
      if (b == Scalar(0)) throw NumericError("elementwise division by zero");
      return Tensor6<Scalar>(a.shape(), a.array() / b);
  }
  throw Error("unknown elementwise op");
}

template <typename Scalar>
Tensor6<Scalar> seeded_fill(const Shape6& shape, const Distribution& dist, std::uint64_t seed) {
  Tensor6<Scalar> out(shape);
  std::mt19937_64 rng(seed);
  auto& a = out.array();
  if (dist.kind == Distribution::Kind::kUniform) {
    if (dist.b < dist.a) throw ConfigError("uniform distribution needs a <= b");
    if (dist.a == dist.b) {
      a.setConstant(static_cast<Scalar>(dist.a));
      return out;
    }
    std::uniform_real_distribution<double> u(dist.a, dist.b);
    for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(u(rng));
  } else {
    if (dist.b < 0) throw ConfigError("normal distribution needs sigma >= 0");
    if (dist.b == 0) {
      a.setConstant(static_cast<Scalar>(dist.a));
      return out;
    }
    std::normal_distribution<double> n(dist.a, dist.b);
    for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(n(rng));
  }
  return out;
}

template <typename Scalar>
void require_finite(const Tensor6<Scalar>& x, const char* what) {
  if (x.size() > 0 && !x.array().isFinite().all())
    throw NumericError(std::string(what) + ": non-finite value");
}

template <typename Scalar>
Tensor6<Scalar> slice_channels(const Tensor6<Scalar>& x, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > x.extent(kChannel))
    throw ShapeError("channel slice out of range for " + to_string(x.shape()));
  Shape6 s = x.shape();
  s[kChannel] = count;
  Tensor6<Scalar> out(s);
  const Index block = x.block_size();
  for (Index b = 0; b < s[kBatch]; ++b)
    for (Index c = 0; c < count; ++c)
      out.array().segment((b * count + c) * block, block) =
          x.array().segment((b * x.extent(kChannel) + first + c) * block, block);
  return out;
}

template <typename Scalar>
Tensor6<Scalar> concat_channels(const Tensor6<Scalar>& a, const Tensor6<Scalar>& b) {
  Shape6 sa = a.shape(), sb = b.shape();
  sa[kChannel] = sb[kChannel] = 0;
  if (sa != sb)
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Shape6 s = a.shape();
  const Index ca = a.extent(kChannel), cb = b.extent(kChannel);
  s[kChannel] = ca + cb;
  Tensor6<Scalar> out(s);
  const Index block = a.block_size();
  for (Index n = 0; n < s[kBatch]; ++n) {
    out.array().segment(n * (ca + cb) * block, ca * block) = a.array().segment(n * ca * block, ca * block);
    out.array().segment((n * (ca + cb) + ca) * block, cb * block) =
        b.array().segment(n * cb * block, cb * block);
  }
  return out;
}

template <typename Scalar>
Tensor6<Scalar> crop(const Tensor6<Scalar>& x, const std::array<Index, 4>& origin,
                     const std::array<Index, 4>& extent, Index batch) {
  for (int i = 0; i < 4; ++i)
    if (origin[i] < 0 || extent[i] < 0 || origin[i] + extent[i] > x.extent(kX + i))
      throw ShapeError("crop window exceeds " + to_string(x.shape()));
  const Index channels = x.extent(kChannel);
  Tensor6<Scalar> out({1, channels, extent[0], extent[1], extent[2], extent[3]});
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < extent[0]; ++i)
      for (Index j = 0; j < extent[1]; ++j)
        for (Index k = 0; k < extent[2]; ++k)
          out.array().segment(out.index(0, c, i, j, k, 0), extent[3]) = x.array().segment(
              x.index(batch, c, origin[0] + i, origin[1] + j, origin[2] + k, origin[3]), extent[3]);
  return out;
}

template <typename Scalar>
Tensor6<Scalar> stack_batch(std::span<const Tensor6<Scalar>* const> items) {
  if (items.empty()) throw ShapeError("stack_batch needs at least one item");
  Shape6 s = items.front()->shape();
  if (s[kBatch] != 1) throw ShapeError("stack_batch items must have B = 1");
  s[kBatch] = static_cast<Index>(items.size());
  Tensor6<Scalar> out(s);
  const Index n = items.front()->size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != items.front()->shape()) throw ShapeError("stack_batch shape mismatch");
    out.array().segment(static_cast<Index>(i) * n, n) = items[i]->array();
  }
  return out;
}

#define CLUTTER4D_INSTANTIATE(S)                                                                 \
  template class Tensor6<S>;                                                                     \
  template class ComplexVolume<S>;                                                               \
  template Tensor6<S> reshape(const Tensor6<S>&, std::span<const Index>);                        \
  template Tensor6<S> elementwise(ElementwiseOp, const Tensor6<S>&, const Tensor6<S>&);          \
  template Tensor6<S> elementwise(ElementwiseOp, const Tensor6<S>&, S);                          \
  template Tensor6<S> seeded_fill<S>(const Shape6&, const Distribution&, std::uint64_t);         \
  template void require_finite(const Tensor6<S>&, const char*);                                  \
  template Tensor6<S> slice_channels(const Tensor6<S>&, Index, Index);                           \
  template Tensor6<S> concat_channels(const Tensor6<S>&, const Tensor6<S>&);                     \
  template Tensor6<S> crop(const Tensor6<S>&, const std::array<Index, 4>&,                       \
                           const std::array<Index, 4>&, Index);                                  \
  template Tensor6<S> stack_batch(std::span<const Tensor6<S>* const>);

CLUTTER4D_INSTANTIATE(float)
CLUTTER4D_INSTANTIATE(double)

}  // namespace clutter4d
