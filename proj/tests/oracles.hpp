#pragma once

// Independent reference implementations used only by the tests. None of these
// share code paths with the library operators they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "clutter4d/ops4d.hpp"

namespace oracle {

using clutter4d::Index;
using clutter4d::Shape6;
using clutter4d::Tensor6;

/// Direct evaluation of the 4D convolution sum, accumulated in double.
template <typename Scalar>
Tensor6<double> conv4d_direct(const Tensor6<Scalar>& x, const clutter4d::Conv4DLayer<Scalar>& layer) {
  const Shape6& s = x.shape();
  const Shape6& w = layer.weights.shape();
  const Index co_n = w[0], ci_n = w[1];
  Tensor6<double> out({s[0], co_n, s[2], s[3], s[4], s[5]});
  for (Index b = 0; b < s[0]; ++b)
    for (Index co = 0; co < co_n; ++co)
      for (Index px = 0; px < s[2]; ++px)
        for (Index py = 0; py < s[3]; ++py)
          for (Index pz = 0; pz < s[4]; ++pz)
            for (Index pt = 0; pt < s[5]; ++pt) {
              double acc = layer.bias[co];
              for (Index ci = 0; ci < ci_n; ++ci)
                for (Index kx = 0; kx < w[2]; ++kx)
                  for (Index ky = 0; ky < w[3]; ++ky)
                    for (Index kz = 0; kz < w[4]; ++kz)
                      for (Index kt = 0; kt < w[5]; ++kt) {
                        const Index ix = px + kx - w[2] / 2, iy = py + ky - w[3] / 2;
                        const Index iz = pz + kz - w[4] / 2, it = pt + kt - w[5] / 2;
                        if (ix < 0 || iy < 0 || iz < 0 || it < 0 || ix >= s[2] || iy >= s[3] || iz >= s[4] ||
                            it >= s[5])
                          continue;
                        acc += static_cast<double>(layer.weights(co, ci, kx, ky, kz, kt)) * x(b, ci, ix, iy, iz, it);
                      }
              out(b, co, px, py, pz, pt) = acc;
            }
  return out;
}

/// Single-shot max over every 4D window.
template <typename Scalar>
Tensor6<Scalar> maxpool_direct(const Tensor6<Scalar>& x, const clutter4d::Window4& w) {
  const Shape6& s = x.shape();
  Tensor6<Scalar> out({s[0], s[1], s[2] / w[0], s[3] / w[1], s[4] / w[2], s[5] / w[3]});
  for (Index b = 0; b < s[0]; ++b)
    for (Index c = 0; c < s[1]; ++c)
      for (Index ox = 0; ox < out.extent(2); ++ox)
        for (Index oy = 0; oy < out.extent(3); ++oy)
          for (Index oz = 0; oz < out.extent(4); ++oz)
            for (Index ot = 0; ot < out.extent(5); ++ot) {
              Scalar best = -std::numeric_limits<Scalar>::infinity();
              for (Index i = 0; i < w[0]; ++i)
                for (Index j = 0; j < w[1]; ++j)
                  for (Index k = 0; k < w[2]; ++k)
                    for (Index l = 0; l < w[3]; ++l)
                      best = std::max(best, x(b, c, ox * w[0] + i, oy * w[1] + j, oz * w[2] + k, ot * w[3] + l));
              out(b, c, ox, oy, oz, ot) = best;
            }
  return out;
}

/// Per-channel normalization over (B, Lx, Ly, Lz, T) with nested loops.
template <typename Scalar>
Tensor6<double> batchnorm_direct(const Tensor6<Scalar>& x, const clutter4d::Vector<Scalar>& gamma,
                                 const clutter4d::Vector<Scalar>& beta, double eps) {
  const Shape6& s = x.shape();
  Tensor6<double> out(s);
  for (Index c = 0; c < s[1]; ++c) {
    double sum = 0, n = 0;
    for (Index b = 0; b < s[0]; ++b)
      for (Index i = 0; i < s[2]; ++i)
        for (Index j = 0; j < s[3]; ++j)
          for (Index k = 0; k < s[4]; ++k)
            for (Index t = 0; t < s[5]; ++t) {
              sum += x(b, c, i, j, k, t);
              n += 1;
            }
    const double mean = sum / n;
    double sq = 0;
    for (Index b = 0; b < s[0]; ++b)
      for (Index i = 0; i < s[2]; ++i)
        for (Index j = 0; j < s[3]; ++j)
          for (Index k = 0; k < s[4]; ++k)
            for (Index t = 0; t < s[5]; ++t) sq += (x(b, c, i, j, k, t) - mean) * (x(b, c, i, j, k, t) - mean);
    const double inv = 1.0 / std::sqrt(sq / n + eps);
    for (Index b = 0; b < s[0]; ++b)
      for (Index i = 0; i < s[2]; ++i)
        for (Index j = 0; j < s[3]; ++j)
          for (Index k = 0; k < s[4]; ++k)
            for (Index t = 0; t < s[5]; ++t)
              out(b, c, i, j, k, t) = gamma[c] * (x(b, c, i, j, k, t) - mean) * inv + beta[c];
  }
  return out;
}

/// Relative error with an absolute floor so that near-zero gradients compare
/// on an absolute scale.
inline double rel_err(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Absolute floor for gradient comparisons: f32 analytic gradients carry
/// accumulation round-off, so near-zero entries are compared against a small
/// fraction of the largest entry. In f64 the floor is negligible.
template <typename Scalar>
double gradient_floor(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& analytic) {
  const double peak = analytic.size() ? static_cast<double>(analytic.abs().maxCoeff()) : 0.0;
  return sizeof(Scalar) == sizeof(float) ? std::max(1e-3 * peak, 1e-9) : 1e-9;
}

/// Central difference of `loss` with respect to `*param`, restoring it after.
template <typename Scalar>
double central_difference(Scalar* param, double step, const std::function<double()>& loss) {
  const Scalar saved = *param;
  const Scalar hi = static_cast<Scalar>(saved + step), lo = static_cast<Scalar>(saved - step);
  *param = hi;
  const double up = loss();
  *param = lo;
  const double down = loss();
  *param = saved;
  // Divide by the representable step, not the requested one.
  return (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
}

/// Double-accumulated sum of squared differences divided by N.
template <typename Scalar>
double mse_direct(const Tensor6<Scalar>& a, const Tensor6<Scalar>& b) {
  double acc = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace oracle
