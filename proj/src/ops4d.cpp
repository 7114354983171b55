#include "clutter4d/ops4d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace clutter4d {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_window(const Window4& w, const char* what) {
  for (Index e : w)
    if (e < 1) throw ShapeError(std::string(what) + ": window extents must be >= 1");
}

// Batch item `b` rearranged so that row (t * C + c) holds the Lx*Ly*Lz
// voxels of channel c at time t.
template <typename Scalar>
RowMatrix<Scalar> to_slice_major(const Tensor6<Scalar>& x, Index b) {
  const Index channels = x.extent(kChannel), frames = x.extent(kTime);
  const Index voxels = x.extent(kX) * x.extent(kY) * x.extent(kZ);
  RowMatrix<Scalar> out(frames * channels, voxels);
  const Scalar* src = x.data() + x.index(b, 0, 0, 0, 0, 0);
  for (Index c = 0; c < channels; ++c)
    for (Index v = 0; v < voxels; ++v) {
      const Scalar* row = src + (c * voxels + v) * frames;
      for (Index t = 0; t < frames; ++t) out(t * channels + c, v) = row[t];
    }
  return out;
}

template <typename Scalar>
void from_slice_major(const RowMatrix<Scalar>& sm, Tensor6<Scalar>& y, Index b) {
  const Index channels = y.extent(kChannel), frames = y.extent(kTime);
  const Index voxels = y.extent(kX) * y.extent(kY) * y.extent(kZ);
  Scalar* dst = y.data() + y.index(b, 0, 0, 0, 0, 0);
  for (Index c = 0; c < channels; ++c)
    for (Index v = 0; v < voxels; ++v) {
      Scalar* row = dst + (c * voxels + v) * frames;
      for (Index t = 0; t < frames; ++t) row[t] = sm(t * channels + c, v);
    }
}

struct Grid3 {
  Index lx, ly, lz;
  Index kx, ky, kz;
  Index voxels() const { return lx * ly * lz; }
  Index taps() const { return kx * ky * kz; }
};

// 3D im2col of one time slice. `slice` is the C x V block of a slice-major
// matrix; row k = ((c * kx + ix) * ky + iy) * kz + iz of `col` holds the
// input shifted by the tap offset, zero outside the volume.
template <typename Scalar, typename SliceBlock>
void im2col(const SliceBlock& slice, Index channels, const Grid3& g, RowMatrix<Scalar>& col) {
  col.setZero(channels * g.taps(), g.voxels());
  const Index hx = g.kx / 2, hy = g.ky / 2, hz = g.kz / 2;
  for (Index c = 0; c < channels; ++c)
    for (Index ix = 0; ix < g.kx; ++ix)
      for (Index iy = 0; iy < g.ky; ++iy)
        for (Index iz = 0; iz < g.kz; ++iz) {
          const Index k = ((c * g.kx + ix) * g.ky + iy) * g.kz + iz;
          const Index dx = ix - hx, dy = iy - hy, dz = iz - hz;
          const Index z0 = std::max<Index>(0, -dz), z1 = std::min(g.lz, g.lz - dz);
          if (z1 <= z0) continue;
          for (Index x = 0; x < g.lx; ++x) {
            const Index xs = x + dx;
            if (xs < 0 || xs >= g.lx) continue;
            for (Index y = 0; y < g.ly; ++y) {
              const Index ys = y + dy;
              if (ys < 0 || ys >= g.ly) continue;
              const Index dst = (x * g.ly + y) * g.lz;
              const Index src = (xs * g.ly + ys) * g.lz;
              for (Index z = z0; z < z1; ++z) col(k, dst + z) = slice(c, src + z + dz);
            }
          }
        }
}

// Adjoint of im2col: scatter-adds `col` back into the C x V slice block.
template <typename Scalar, typename SliceBlock>
void col2im_add(const RowMatrix<Scalar>& col, Index channels, const Grid3& g, SliceBlock slice) {
  const Index hx = g.kx / 2, hy = g.ky / 2, hz = g.kz / 2;
  for (Index c = 0; c < channels; ++c)
    for (Index ix = 0; ix < g.kx; ++ix)
      for (Index iy = 0; iy < g.ky; ++iy)
        for (Index iz = 0; iz < g.kz; ++iz) {
          const Index k = ((c * g.kx + ix) * g.ky + iy) * g.kz + iz;
          const Index dx = ix - hx, dy = iy - hy, dz = iz - hz;
          const Index z0 = std::max<Index>(0, -dz), z1 = std::min(g.lz, g.lz - dz);
          if (z1 <= z0) continue;
          for (Index x = 0; x < g.lx; ++x) {
            const Index xs = x + dx;
            if (xs < 0 || xs >= g.lx) continue;
            for (Index y = 0; y < g.ly; ++y) {
              const Index ys = y + dy;
              if (ys < 0 || ys >= g.ly) continue;
              const Index dst = (x * g.ly + y) * g.lz;
              const Index src = (xs * g.ly + ys) * g.lz;
              for (Index z = z0; z < z1; ++z) slice(c, src + z + dz) += col(k, dst + z);
            }
          }
        }
}

// Weights as a (kt * C_out) x (C_in * kx * ky * kz) matrix; row block tk
// holds the 3D kernels of temporal tap tk.
template <typename Scalar>
RowMatrix<Scalar> stacked_weights(const Conv4DLayer<Scalar>& layer) {
  const Index co_n = layer.out_channels(), kt = layer.kernel()[3];
  const Index k_n = layer.in_channels() * layer.kernel()[0] * layer.kernel()[1] * layer.kernel()[2];
  RowMatrix<Scalar> w(kt * co_n, k_n);
  const Scalar* src = layer.weights.data();
  for (Index co = 0; co < co_n; ++co)
    for (Index k = 0; k < k_n; ++k)
      for (Index tk = 0; tk < kt; ++tk) w(tk * co_n + co, k) = src[(co * k_n + k) * kt + tk];
  return w;
}

template <typename Scalar>
void check_conv_input(const Tensor6<Scalar>& x, const Conv4DLayer<Scalar>& layer) {
  layer.validate();
  if (x.extent(kChannel) != layer.in_channels())
    throw ShapeError("conv4d: input has " + std::to_string(x.extent(kChannel)) + " channels, layer expects " +
                     std::to_string(layer.in_channels()));
}

}  // namespace

template <typename Scalar>
Conv4DLayer<Scalar>::Conv4DLayer(Index in_channels, Index out_channels, const Window4& kernel)
    : weights({out_channels, in_channels, kernel[0], kernel[1], kernel[2], kernel[3]}),
      bias(Vector<Scalar>::Zero(out_channels)) {
  validate();
}

template <typename Scalar>
void Conv4DLayer<Scalar>::validate() const {
  for (Index e : kernel())
    if (e < 1 || e % 2 == 0) throw ShapeError("conv4d: kernel extents must be odd, got " + to_string(weights.shape()));
  if (bias.size() != out_channels()) throw ShapeError("conv4d: bias length does not match output channels");
}

template <typename Scalar>
Tensor6<Scalar> conv4d_forward(const Tensor6<Scalar>& x, const Conv4DLayer<Scalar>& layer) {
  check_conv_input(x, layer);
  const Shape6& s = x.shape();
  const Index ci_n = layer.in_channels(), co_n = layer.out_channels();
  const Window4 kern = layer.kernel();
  const Index frames = s[kTime], kt = kern[3], ht = kt / 2;
  Tensor6<Scalar> out({s[kBatch], co_n, s[kX], s[kY], s[kZ], frames});
  if (out.empty()) return out;

  const Grid3 g{s[kX], s[kY], s[kZ], kern[0], kern[1], kern[2]};
  const RowMatrix<Scalar> w = stacked_weights(layer);
  RowMatrix<Scalar> col, taps;
  for (Index b = 0; b < s[kBatch]; ++b) {
    const RowMatrix<Scalar> xs = to_slice_major(x, b);
    RowMatrix<Scalar> ys = RowMatrix<Scalar>::Zero(frames * co_n, g.voxels());
    for (Index src_t = 0; src_t < frames; ++src_t) {
      im2col<Scalar>(xs.middleRows(src_t * ci_n, ci_n), ci_n, g, col);
      taps.noalias() = w * col;
      // Temporal tap tk reads input frame t + (tk - ht); route it to output t.
      for (Index tk = 0; tk < kt; ++tk) {
        const Index t = src_t - (tk - ht);
        if (t < 0 || t >= frames) continue;
        ys.middleRows(t * co_n, co_n) += taps.middleRows(tk * co_n, co_n);
      }
    }
    for (Index t = 0; t < frames; ++t)
      ys.middleRows(t * co_n, co_n).colwise() += layer.bias.matrix();
    from_slice_major(ys, out, b);
  }
  return out;
}

template <typename Scalar>
Conv4DGrads<Scalar> conv4d_backward(const Tensor6<Scalar>& grad_out, const Tensor6<Scalar>& cached_x,
                                    const Conv4DLayer<Scalar>& layer) {
  check_conv_input(cached_x, layer);
  const Shape6& s = cached_x.shape();
  const Index ci_n = layer.in_channels(), co_n = layer.out_channels();
  const Window4 kern = layer.kernel();
  const Index frames = s[kTime], kt = kern[3], ht = kt / 2;
  const Shape6 expected{s[kBatch], co_n, s[kX], s[kY], s[kZ], frames};
  if (grad_out.shape() != expected)
    throw ShapeError("conv4d_backward: grad_out " + to_string(grad_out.shape()) + " does not match output " +
                     to_string(expected));

  const Grid3 g{s[kX], s[kY], s[kZ], kern[0], kern[1], kern[2]};
  const RowMatrix<Scalar> w = stacked_weights(layer);
  RowMatrix<Scalar> grad_w = RowMatrix<Scalar>::Zero(w.rows(), w.cols());
  Conv4DGrads<Scalar> grads{Tensor6<Scalar>(s), Tensor6<Scalar>(layer.weights.shape()),
                            Vector<Scalar>::Zero(co_n)};
  RowMatrix<Scalar> col, gcol, stack(kt * co_n, g.voxels());
  for (Index b = 0; b < s[kBatch] && g.voxels() > 0; ++b) {
    const RowMatrix<Scalar> xs = to_slice_major(cached_x, b);
    const RowMatrix<Scalar> gs = to_slice_major(grad_out, b);
    RowMatrix<Scalar> gx = RowMatrix<Scalar>::Zero(frames * ci_n, g.voxels());
    for (Index src_t = 0; src_t < frames; ++src_t) {
      bool any = false;
      for (Index tk = 0; tk < kt; ++tk) {
        const Index t = src_t - (tk - ht);
        if (t < 0 || t >= frames) {
          stack.middleRows(tk * co_n, co_n).setZero();
        } else {
          stack.middleRows(tk * co_n, co_n) = gs.middleRows(t * co_n, co_n);
          any = true;
        }
      }
      if (!any) continue;
      im2col<Scalar>(xs.middleRows(src_t * ci_n, ci_n), ci_n, g, col);
      grad_w.noalias() += stack * col.transpose();
      gcol.noalias() = w.transpose() * stack;
      col2im_add<Scalar>(gcol, ci_n, g, gx.middleRows(src_t * ci_n, ci_n));
    }
    from_slice_major(gx, grads.input, b);
  }

  const Index k_n = w.cols();
  Scalar* dst = grads.weights.data();
  for (Index co = 0; co < co_n; ++co)
    for (Index k = 0; k < k_n; ++k)
      for (Index tk = 0; tk < kt; ++tk) dst[(co * k_n + k) * kt + tk] = grad_w(tk * co_n + co, k);

  const Index block = grad_out.block_size();
  for (Index b = 0; b < s[kBatch]; ++b)
    for (Index co = 0; co < co_n; ++co) {
      double acc = 0.0;
      const Scalar* p = grad_out.data() + grad_out.index(b, co, 0, 0, 0, 0);
      for (Index i = 0; i < block; ++i) acc += p[i];
      grads.bias[co] += static_cast<Scalar>(acc);
    }
  return grads;
}

template <typename Scalar>
PoolResult<Scalar> maxpool4d(const Tensor6<Scalar>& x, const Window4& window) {
  require_window(window, "maxpool4d");
  const Shape6& s = x.shape();
  for (int a = 0; a < 4; ++a)
    if (window[a] > s[kX + a])
      throw ShapeError("maxpool4d: window larger than tensor " + to_string(s));
  const Index px = s[kX] / window[0], py = s[kY] / window[1], pz = s[kZ] / window[2];
  const Index frames = s[kTime];

  // Stage 1: 3D pooling of every time slice.
  const Shape6 mid_shape{s[kBatch], s[kChannel], px, py, pz, frames};
  Tensor6<Scalar> mid(mid_shape);
  std::vector<Index> mid_idx(mid.size());
  for (Index b = 0; b < s[kBatch]; ++b)
    for (Index c = 0; c < s[kChannel]; ++c)
      for (Index t = 0; t < frames; ++t)
        for (Index ox = 0; ox < px; ++ox)
          for (Index oy = 0; oy < py; ++oy)
            for (Index oz = 0; oz < pz; ++oz) {
              Scalar best = -std::numeric_limits<Scalar>::infinity();
              Index best_i = x.index(b, c, ox * window[0], oy * window[1], oz * window[2], t);
              for (Index ix = 0; ix < window[0]; ++ix)
                for (Index iy = 0; iy < window[1]; ++iy)
                  for (Index iz = 0; iz < window[2]; ++iz) {
                    const Index i = x.index(b, c, ox * window[0] + ix, oy * window[1] + iy, oz * window[2] + iz, t);
                    if (x.data()[i] > best) {
                      best = x.data()[i];
                      best_i = i;
                    }
                  }
              const Index m = mid.index(b, c, ox, oy, oz, t);
              mid.data()[m] = best;
              mid_idx[m] = best_i;
            }

  // Stage 2: 1D pooling along time.
  const Index pt = frames / window[3];
  PoolResult<Scalar> r{Tensor6<Scalar>({s[kBatch], s[kChannel], px, py, pz, pt}), {}, s};
  r.argmax.resize(r.output.size());
  for (Index row = 0; row < mid.size() / std::max<Index>(frames, 1); ++row)
    for (Index ot = 0; ot < pt; ++ot) {
      const Index base = row * frames + ot * window[3];
      Scalar best = mid.data()[base];
      Index best_i = mid_idx[base];
      for (Index k = 1; k < window[3]; ++k) {
        const Scalar v = mid.data()[base + k];
        const Index i = mid_idx[base + k];
        if (v > best || (v == best && i < best_i)) {
          best = v;
          best_i = i;
        }
      }
      r.output.data()[row * pt + ot] = best;
      r.argmax[row * pt + ot] = best_i;
    }
  return r;
}

template <typename Scalar>
Tensor6<Scalar> maxpool4d_backward(const Tensor6<Scalar>& grad_out, const PoolResult<Scalar>& pooled) {
  if (grad_out.shape() != pooled.output.shape())
    throw ShapeError("maxpool4d_backward: gradient shape does not match pooled output");
  Tensor6<Scalar> grad(pooled.input_shape);
  for (Index i = 0; i < grad_out.size(); ++i) grad.data()[pooled.argmax[i]] += grad_out.data()[i];
  return grad;
}

template <typename Scalar>
Tensor6<Scalar> upsample4d(const Tensor6<Scalar>& x, const Window4& factors) {
  require_window(factors, "upsample4d");
  const Shape6& s = x.shape();
  Tensor6<Scalar> out({s[kBatch], s[kChannel], s[kX] * factors[0], s[kY] * factors[1], s[kZ] * factors[2],
                       s[kTime] * factors[3]});
  const Index frames = out.extent(kTime);
  for (Index b = 0; b < s[kBatch]; ++b)
    for (Index c = 0; c < s[kChannel]; ++c)
      for (Index ox = 0; ox < out.extent(kX); ++ox)
        for (Index oy = 0; oy < out.extent(kY); ++oy)
          for (Index oz = 0; oz < out.extent(kZ); ++oz) {
            const Scalar* src = x.data() + x.index(b, c, ox / factors[0], oy / factors[1], oz / factors[2], 0);
            Scalar* dst = out.data() + out.index(b, c, ox, oy, oz, 0);
            for (Index t = 0; t < frames; ++t) dst[t] = src[t / factors[3]];
          }
  return out;
}

template <typename Scalar>
Tensor6<Scalar> upsample4d_backward(const Tensor6<Scalar>& grad_out, const Window4& factors) {
  require_window(factors, "upsample4d_backward");
  const Shape6& s = grad_out.shape();
  for (int a = 0; a < 4; ++a)
    if (s[kX + a] % factors[a] != 0) throw ShapeError("upsample4d_backward: extent not divisible by factor");
  Tensor6<Scalar> grad({s[kBatch], s[kChannel], s[kX] / factors[0], s[kY] / factors[1], s[kZ] / factors[2],
                        s[kTime] / factors[3]});
  for (Index b = 0; b < s[kBatch]; ++b)
    for (Index c = 0; c < s[kChannel]; ++c)
      for (Index ox = 0; ox < s[kX]; ++ox)
        for (Index oy = 0; oy < s[kY]; ++oy)
          for (Index oz = 0; oz < s[kZ]; ++oz) {
            const Scalar* src = grad_out.data() + grad_out.index(b, c, ox, oy, oz, 0);
            Scalar* dst = grad.data() + grad.index(b, c, ox / factors[0], oy / factors[1], oz / factors[2], 0);
            for (Index t = 0; t < s[kTime]; ++t) dst[t / factors[3]] += src[t];
          }
  return grad;
}

template <typename Scalar>
BatchNorm4DLayer<Scalar>::BatchNorm4DLayer(Index channels)
    : gamma(Vector<Scalar>::Ones(channels)),
      beta(Vector<Scalar>::Zero(channels)),
      running_mean(Vector<Scalar>::Zero(channels)),
      running_var(Vector<Scalar>::Ones(channels)) {}

template <typename Scalar>
BatchNormResult<Scalar> batchnorm4d(const Tensor6<Scalar>& x, const BatchNorm4DLayer<Scalar>& layer,
                                    NormMode mode) {
  const Shape6& s = x.shape();
  const Index channels = s[kChannel];
  if (channels != layer.channels())
    throw ShapeError("batchnorm4d: input has " + std::to_string(channels) + " channels, layer has " +
                     std::to_string(layer.channels()));
  const Index count = s[kBatch] * s[kX] * s[kY] * s[kZ] * s[kTime];
  if (mode == NormMode::kTrain && count < 2)
    throw ShapeError("batchnorm4d: training mode needs at least two values per channel");

  // Fold time into the last spatial axis; element order is unchanged.
  const Tensor6<Scalar> folded = reshape(x, {s[kBatch], channels, s[kX], s[kY], s[kZ] * s[kTime]});
  const Index block = folded.block_size();

  BatchNormResult<Scalar> r;
  r.mode = mode;
  r.batch_mean = Vector<Scalar>::Zero(channels);
  r.batch_var = Vector<Scalar>::Zero(channels);
  r.inv_std.resize(channels);
  Tensor6<Scalar> normalized(folded.shape());
  Tensor6<Scalar> out(folded.shape());
  for (Index c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == NormMode::kTrain) {
      double sum = 0.0;
      for (Index b = 0; b < s[kBatch]; ++b)
        for (Index i = 0; i < block; ++i) sum += folded.data()[(b * channels + c) * block + i];
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (Index b = 0; b < s[kBatch]; ++b)
        for (Index i = 0; i < block; ++i) {
          const double d = folded.data()[(b * channels + c) * block + i] - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
    } else {
      mean = layer.running_mean[c];
      var = layer.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + layer.epsilon);
    r.batch_mean[c] = static_cast<Scalar>(mean);
    r.batch_var[c] = static_cast<Scalar>(var);
    r.inv_std[c] = static_cast<Scalar>(inv_std);
    for (Index b = 0; b < s[kBatch]; ++b)
      for (Index i = 0; i < block; ++i) {
        const Index j = (b * channels + c) * block + i;
        const Scalar xh = static_cast<Scalar>((folded.data()[j] - mean) * inv_std);
        normalized.data()[j] = xh;
        out.data()[j] = layer.gamma[c] * xh + layer.beta[c];
      }
  }
  r.output = reshape(out, std::span<const Index>(s.data(), s.size()));
  r.normalized = reshape(normalized, std::span<const Index>(s.data(), s.size()));
  return r;
}

template <typename Scalar>
void update_running_stats(BatchNorm4DLayer<Scalar>& layer, const BatchNormResult<Scalar>& result,
                          Index count_per_channel) {
  if (result.mode != NormMode::kTrain) return;
  const double m = layer.momentum;
  const double unbias = count_per_channel > 1
                            ? static_cast<double>(count_per_channel) / static_cast<double>(count_per_channel - 1)
                            : 1.0;
  for (Index c = 0; c < layer.channels(); ++c) {
    layer.running_mean[c] = static_cast<Scalar>((1 - m) * layer.running_mean[c] + m * result.batch_mean[c]);
    layer.running_var[c] = static_cast<Scalar>((1 - m) * layer.running_var[c] + m * result.batch_var[c] * unbias);
  }
}

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm4d_backward(const Tensor6<Scalar>& grad_out,
                                            const BatchNormResult<Scalar>& cache,
                                            const BatchNorm4DLayer<Scalar>& layer) {
  const Shape6& s = grad_out.shape();
  if (s != cache.normalized.shape()) throw ShapeError("batchnorm4d_backward: gradient shape mismatch");
  const Index channels = s[kChannel];
  const Index block = grad_out.block_size();
  const double count = static_cast<double>(s[kBatch] * block);
  BatchNormGrads<Scalar> g{Tensor6<Scalar>(s), Vector<Scalar>::Zero(channels), Vector<Scalar>::Zero(channels)};
  for (Index c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (Index b = 0; b < s[kBatch]; ++b)
      for (Index i = 0; i < block; ++i) {
        const Index j = (b * channels + c) * block + i;
        sum_dy += grad_out.data()[j];
        sum_dy_xh += static_cast<double>(grad_out.data()[j]) * cache.normalized.data()[j];
      }
    g.beta[c] = static_cast<Scalar>(sum_dy);
    g.gamma[c] = static_cast<Scalar>(sum_dy_xh);
    const double scale = static_cast<double>(layer.gamma[c]) * cache.inv_std[c];
    for (Index b = 0; b < s[kBatch]; ++b)
      for (Index i = 0; i < block; ++i) {
        const Index j = (b * channels + c) * block + i;
        double dx;
        if (cache.mode == NormMode::kTrain)
          dx = scale * (grad_out.data()[j] - sum_dy / count - cache.normalized.data()[j] * sum_dy_xh / count);
        else
          dx = scale * grad_out.data()[j];
        g.input.data()[j] = static_cast<Scalar>(dx);
      }
  }
  return g;
}

template <typename Scalar>
Tensor6<Scalar> leaky_relu(const Tensor6<Scalar>& x, Scalar slope) {
  if (!(slope > 0 && slope < 1)) throw ConfigError("leaky_relu: slope must lie in (0, 1)");
  return Tensor6<Scalar>(x.shape(), (x.array() > 0).select(x.array(), slope * x.array()));
}

template <typename Scalar>
Tensor6<Scalar> leaky_relu_backward(const Tensor6<Scalar>& grad_out, const Tensor6<Scalar>& x, Scalar slope) {
  if (grad_out.shape() != x.shape()) throw ShapeError("leaky_relu_backward: shape mismatch");
  return Tensor6<Scalar>(x.shape(), (x.array() > 0).select(grad_out.array(), slope * grad_out.array()));
}

template <typename Scalar>
Tensor6<Scalar> sigmoid(const Tensor6<Scalar>& x) {
  return Tensor6<Scalar>(x.shape(), Scalar(1) / (Scalar(1) + (-x.array()).exp()));
}

template <typename Scalar>
Tensor6<Scalar> sigmoid_backward(const Tensor6<Scalar>& grad_out, const Tensor6<Scalar>& y) {
  if (grad_out.shape() != y.shape()) throw ShapeError("sigmoid_backward: shape mismatch");
  return Tensor6<Scalar>(y.shape(), grad_out.array() * y.array() * (Scalar(1) - y.array()));
}

template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor6<Scalar>& pred, const Tensor6<Scalar>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_loss: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  LossResult<Scalar> r;
  const Index n = pred.size();
  if (n == 0) {
    r.grad = Tensor6<Scalar>(pred.shape());
    return r;
  }
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
    acc += d * d;
  }
  r.loss = acc / static_cast<double>(n);
  r.grad = Tensor6<Scalar>(pred.shape(), (pred.array() - target.array()) * (Scalar(2) / static_cast<Scalar>(n)));
  return r;
}

#define CLUTTER4D_INSTANTIATE(S)                                                                            \
  template struct Conv4DLayer<S>;                                                                           \
  template struct BatchNorm4DLayer<S>;                                                                      \
  template Tensor6<S> conv4d_forward(const Tensor6<S>&, const Conv4DLayer<S>&);                             \
  template Conv4DGrads<S> conv4d_backward(const Tensor6<S>&, const Tensor6<S>&, const Conv4DLayer<S>&);     \
  template PoolResult<S> maxpool4d(const Tensor6<S>&, const Window4&);                                      \
  template Tensor6<S> maxpool4d_backward(const Tensor6<S>&, const PoolResult<S>&);                          \
  template Tensor6<S> upsample4d(const Tensor6<S>&, const Window4&);                                        \
  template Tensor6<S> upsample4d_backward(const Tensor6<S>&, const Window4&);                               \
  template BatchNormResult<S> batchnorm4d(const Tensor6<S>&, const BatchNorm4DLayer<S>&, NormMode);         \
  template void update_running_stats(BatchNorm4DLayer<S>&, const BatchNormResult<S>&, Index);               \
  template BatchNormGrads<S> batchnorm4d_backward(const Tensor6<S>&, const BatchNormResult<S>&,             \
                                                  const BatchNorm4DLayer<S>&);                              \
  template Tensor6<S> leaky_relu(const Tensor6<S>&, S);                                                     \
  template Tensor6<S> leaky_relu_backward(const Tensor6<S>&, const Tensor6<S>&, S);                         \
  template Tensor6<S> sigmoid(const Tensor6<S>&);                                                           \
  template Tensor6<S> sigmoid_backward(const Tensor6<S>&, const Tensor6<S>&);                               \
  template LossResult<S> mse_loss(const Tensor6<S>&, const Tensor6<S>&);

CLUTTER4D_INSTANTIATE(float)
CLUTTER4D_INSTANTIATE(double)

}  // namespace clutter4d
