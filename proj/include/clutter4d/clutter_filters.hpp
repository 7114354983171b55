#pragma once

#include <complex>

#include <Eigen/Core>

#include "clutter4d/tensor.hpp"

namespace clutter4d {

/// out[t] = v[t] - mean(v[t-h .. t+h]), h = (window - 1) / 2, centered. Near
/// the first and last frames the window is truncated to the frames present.
/// Applied independently to every (b, c, x, y, z) series.
template <typename Scalar>
Tensor6<Scalar> highpass_rolling_mean(const Tensor6<Scalar>& v, Index window = 11);

/// Real and imaginary parts are filtered separately.
template <typename Scalar>
ComplexVolume<Scalar> highpass_rolling_mean(const ComplexVolume<Scalar>& v, Index window = 11);

/// Space x time matrix of a frame block: row = voxel (x, y, z), column = frame.
template <typename Value>
using CasoratiMatrix = Eigen::Matrix<Value, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
CasoratiMatrix<std::complex<Scalar>> to_casorati(const ComplexVolume<Scalar>& v, Index first_frame, Index frames);
template <typename Scalar>
void from_casorati(const CasoratiMatrix<std::complex<Scalar>>& m, ComplexVolume<Scalar>& v, Index first_frame);

/// Real proxy: x must be (1, 1, Lx, Ly, Lz, T).
template <typename Scalar>
CasoratiMatrix<Scalar> to_casorati(const Tensor6<Scalar>& x, Index first_frame, Index frames);
template <typename Scalar>
void from_casorati(const CasoratiMatrix<Scalar>& m, Tensor6<Scalar>& x, Index first_frame);

/// Removes the `cutoff` leading singular components of a Casorati matrix:
/// M - M V_k V_k^H, with V_k the dominant right singular vectors. The
/// temporal basis comes from the Hermitian eigenproblem of M^H M in double.
/// Throws ConfigError if cutoff >= min(rows, cols) and NumericError if the
/// eigensolver fails.
template <typename Value>
CasoratiMatrix<Value> svd_clutter_filter(const CasoratiMatrix<Value>& m, Index cutoff);

struct SvdFilterOptions {
  Index cutoff = 20;
  Index block = 256;
};

/// Blockwise SVD filtering along time. A trailing partial block is filtered
/// when it holds more than 2 * cutoff frames and otherwise passed through
/// with a warning.
template <typename Scalar>
ComplexVolume<Scalar> svd_clutter_filter(const ComplexVolume<Scalar>& v, const SvdFilterOptions& opt = {});
template <typename Scalar>
Tensor6<Scalar> svd_clutter_filter(const Tensor6<Scalar>& x, const SvdFilterOptions& opt = {});

/// Frames are grouped into consecutive blocks of `block` frames (only whole
/// blocks; a sequence shorter than one block forms a single block). For every
/// position p within a block the frames at p are averaged over blocks, then
/// the population standard deviation over p is taken per voxel.
/// Input (1, C, Lx, Ly, Lz, T) gives (1, C, Lx, Ly, Lz, 1).
template <typename Scalar>
Tensor6<Scalar> temporal_accumulate_std(const Tensor6<Scalar>& v, Index block = 8);

}  // namespace clutter4d
