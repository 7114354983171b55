#pragma once

#include <array>
#include <vector>

#include "clutter4d/tensor.hpp"

namespace clutter4d {

/// Extents over (x, y, z, t).
using Window4 = std::array<Index, 4>;

template <typename Scalar>
using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Stride-1 4D convolution with zero-filled `same` padding.
/// Weights are laid out (C_out, C_in, kx, ky, kz, kt); every kernel extent is odd.
template <typename Scalar>
struct Conv4DLayer {
  Tensor6<Scalar> weights;
  Vector<Scalar> bias;

  Conv4DLayer() = default;
  Conv4DLayer(Index in_channels, Index out_channels, const Window4& kernel);

  Index in_channels() const { return weights.extent(1); }
  Index out_channels() const { return weights.extent(0); }
  Window4 kernel() const { return {weights.extent(2), weights.extent(3), weights.extent(4), weights.extent(5)}; }
  void validate() const;
};

template <typename To, typename From>
Conv4DLayer<To> cast(const Conv4DLayer<From>& layer) {
  Conv4DLayer<To> out;
  out.weights = cast<To>(layer.weights);
  out.bias = layer.bias.template cast<To>();
  return out;
}

template <typename Scalar>
struct Conv4DGrads {
  Tensor6<Scalar> input;
  Tensor6<Scalar> weights;
  Vector<Scalar> bias;
};

/// Output(b, co, x, y, z, t) = bias[co] + sum over ci and the 4D kernel support.
/// Evaluated as a sum over temporal taps of 3D convolutions, each 3D
/// convolution being an im2col product.
template <typename Scalar>
Tensor6<Scalar> conv4d_forward(const Tensor6<Scalar>& x, const Conv4DLayer<Scalar>& layer);

template <typename Scalar>
Conv4DGrads<Scalar> conv4d_backward(const Tensor6<Scalar>& grad_out, const Tensor6<Scalar>& cached_x,
                                    const Conv4DLayer<Scalar>& layer);

template <typename Scalar>
struct PoolResult {
  Tensor6<Scalar> output;
  /// Flat input index of the maximum that produced each output element.
  std::vector<Index> argmax;
  Shape6 input_shape{};
};

/// Max pooling with floor semantics, staged as 3D pooling of every time slice
/// followed by 1D pooling along time. Ties resolve to the first element in
/// row-major scan order of the 4D window.
template <typename Scalar>
PoolResult<Scalar> maxpool4d(const Tensor6<Scalar>& x, const Window4& window);

template <typename Scalar>
Tensor6<Scalar> maxpool4d_backward(const Tensor6<Scalar>& grad_out, const PoolResult<Scalar>& pooled);

/// Nearest-neighbour upsampling: every 3D slice is expanded by (i, j, k),
/// then each expanded slice is repeated l times along time.
template <typename Scalar>
Tensor6<Scalar> upsample4d(const Tensor6<Scalar>& x, const Window4& factors);

template <typename Scalar>
Tensor6<Scalar> upsample4d_backward(const Tensor6<Scalar>& grad_out, const Window4& factors);

enum class NormMode { kTrain, kEval };

template <typename Scalar>
struct BatchNorm4DLayer {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNorm4DLayer() = default;
  explicit BatchNorm4DLayer(Index channels);
  Index channels() const { return gamma.size(); }
};

template <typename To, typename From>
BatchNorm4DLayer<To> cast(const BatchNorm4DLayer<From>& layer) {
  BatchNorm4DLayer<To> out;
  out.gamma = layer.gamma.template cast<To>();
  out.beta = layer.beta.template cast<To>();
  out.running_mean = layer.running_mean.template cast<To>();
  out.running_var = layer.running_var.template cast<To>();
  out.momentum = layer.momentum;
  out.epsilon = layer.epsilon;
  return out;
}

template <typename Scalar>
struct BatchNormResult {
  Tensor6<Scalar> output;
  Tensor6<Scalar> normalized;  // x_hat, kept for backward
  Vector<Scalar> inv_std;
  Vector<Scalar> batch_mean;
  Vector<Scalar> batch_var;  // biased, used for normalization
  NormMode mode = NormMode::kTrain;
};

/// Folds (B, C, Lx, Ly, Lz, T) to (B, C, Lx, Ly, Lz*T), normalizes every
/// channel over all remaining axes and unfolds again. The layer is read-only;
/// the training driver applies the running-stat update separately.
template <typename Scalar>
BatchNormResult<Scalar> batchnorm4d(const Tensor6<Scalar>& x, const BatchNorm4DLayer<Scalar>& layer,
                                    NormMode mode);

/// running = (1 - momentum) * running + momentum * batch (variance unbiased).
template <typename Scalar>
void update_running_stats(BatchNorm4DLayer<Scalar>& layer, const BatchNormResult<Scalar>& result,
                          Index count_per_channel);

template <typename Scalar>
struct BatchNormGrads {
  Tensor6<Scalar> input;
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm4d_backward(const Tensor6<Scalar>& grad_out,
                                            const BatchNormResult<Scalar>& cache,
                                            const BatchNorm4DLayer<Scalar>& layer);

template <typename Scalar>
Tensor6<Scalar> leaky_relu(const Tensor6<Scalar>& x, Scalar slope);
template <typename Scalar>
Tensor6<Scalar> leaky_relu_backward(const Tensor6<Scalar>& grad_out, const Tensor6<Scalar>& x, Scalar slope);

template <typename Scalar>
Tensor6<Scalar> sigmoid(const Tensor6<Scalar>& x);
/// Takes the forward output y = sigmoid(x).
template <typename Scalar>
Tensor6<Scalar> sigmoid_backward(const Tensor6<Scalar>& grad_out, const Tensor6<Scalar>& y);

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  Tensor6<Scalar> grad;
};

/// Mean squared error; grad = 2 (pred - target) / N.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor6<Scalar>& pred, const Tensor6<Scalar>& target);

}  // namespace clutter4d
