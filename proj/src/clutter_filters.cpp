#include "clutter4d/clutter_filters.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

namespace clutter4d {

namespace {

template <typename Scalar>
void highpass_series(const Scalar* in, Scalar* out, Index frames, Index half, std::vector<double>& prefix) {
  prefix.assign(frames + 1, 0.0);
  for (Index t = 0; t < frames; ++t) prefix[t + 1] = prefix[t] + static_cast<double>(in[t]);
  for (Index t = 0; t < frames; ++t) {
    const Index lo = std::max<Index>(0, t - half), hi = std::min(frames - 1, t + half);
    const double mean = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
    out[t] = static_cast<Scalar>(static_cast<double>(in[t]) - mean);
  }
}

void check_window(Index window, Index frames) {
  if (window < 1 || window % 2 == 0) throw ConfigError("high-pass window must be odd and >= 1");
  if (window > frames)
    throw ConfigError("high-pass window " + std::to_string(window) + " exceeds " + std::to_string(frames) +
                      " frames");
}

}  // namespace

template <typename Scalar>
Tensor6<Scalar> highpass_rolling_mean(const Tensor6<Scalar>& v, Index window) {
  const Index frames = v.extent(kTime);
  check_window(window, frames);
  Tensor6<Scalar> out(v.shape());
  std::vector<double> prefix;
  for (Index s = 0; s < v.size(); s += frames)
    highpass_series(v.data() + s, out.data() + s, frames, window / 2, prefix);
  return out;
}

template <typename Scalar>
ComplexVolume<Scalar> highpass_rolling_mean(const ComplexVolume<Scalar>& v, Index window) {
  return ComplexVolume<Scalar>::from_parts(highpass_rolling_mean(v.real(), window),
                                           highpass_rolling_mean(v.imag(), window));
}

template <typename Scalar>
CasoratiMatrix<std::complex<Scalar>> to_casorati(const ComplexVolume<Scalar>& v, Index first_frame, Index frames) {
  if (first_frame < 0 || frames < 0 || first_frame + frames > v.frames())
    throw ShapeError("Casorati block exceeds the volume's frames");
  const Index voxels = v.voxels_per_frame();
  CasoratiMatrix<std::complex<Scalar>> m(voxels, frames);
  for (Index r = 0; r < voxels; ++r)
    for (Index t = 0; t < frames; ++t) m(r, t) = v.array()[r * v.frames() + first_frame + t];
  return m;
}

template <typename Scalar>
void from_casorati(const CasoratiMatrix<std::complex<Scalar>>& m, ComplexVolume<Scalar>& v, Index first_frame) {
  if (m.rows() != v.voxels_per_frame() || first_frame < 0 || first_frame + m.cols() > v.frames())
    throw ShapeError("Casorati matrix does not fit the volume");
  for (Index r = 0; r < m.rows(); ++r)
    for (Index t = 0; t < m.cols(); ++t) v.array()[r * v.frames() + first_frame + t] = m(r, t);
}

template <typename Scalar>
CasoratiMatrix<Scalar> to_casorati(const Tensor6<Scalar>& x, Index first_frame, Index frames) {
  if (x.extent(kBatch) != 1 || x.extent(kChannel) != 1)
    throw ShapeError("Casorati input must have B = C = 1, got " + to_string(x.shape()));
  const Index total = x.extent(kTime);
  if (first_frame < 0 || frames < 0 || first_frame + frames > total)
    throw ShapeError("Casorati block exceeds the tensor's frames");
  const Index voxels = x.size() / std::max<Index>(total, 1);
  CasoratiMatrix<Scalar> m(voxels, frames);
  for (Index r = 0; r < voxels; ++r)
    for (Index t = 0; t < frames; ++t) m(r, t) = x.data()[r * total + first_frame + t];
  return m;
}

template <typename Scalar>
void from_casorati(const CasoratiMatrix<Scalar>& m, Tensor6<Scalar>& x, Index first_frame) {
  const Index total = x.extent(kTime);
  if (m.rows() * total != x.size() || first_frame < 0 || first_frame + m.cols() > total)
    throw ShapeError("Casorati matrix does not fit the tensor");
  for (Index r = 0; r < m.rows(); ++r)
    for (Index t = 0; t < m.cols(); ++t) x.data()[r * total + first_frame + t] = m(r, t);
}

template <typename Value>
CasoratiMatrix<Value> svd_clutter_filter(const CasoratiMatrix<Value>& m, Index cutoff) {
  if (cutoff < 0 || cutoff >= std::min(m.rows(), m.cols()))
    throw ConfigError("SVD cutoff " + std::to_string(cutoff) + " must be below min(rows, frames) = " +
                      std::to_string(std::min(m.rows(), m.cols())));
  if (cutoff == 0) return m;
  using Wide = std::conditional_t<Eigen::NumTraits<Value>::IsComplex, std::complex<double>, double>;
  const Eigen::Matrix<Wide, Eigen::Dynamic, Eigen::Dynamic> md = m.template cast<Wide>();
  const Eigen::Matrix<Wide, Eigen::Dynamic, Eigen::Dynamic> gram = md.adjoint() * md;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Wide, Eigen::Dynamic, Eigen::Dynamic>> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("SVD clutter filter: eigensolver did not converge");
  // Eigenvalues ascend, so the dominant temporal vectors are the last columns.
  const auto vk = eig.eigenvectors().rightCols(cutoff);
  const Eigen::Matrix<Wide, Eigen::Dynamic, Eigen::Dynamic> out = md - (md * vk) * vk.adjoint();
  return out.template cast<Value>();
}

namespace {

template <typename Volume, typename Load, typename Store>
void filter_blocks(const Volume& v, Index frames, const SvdFilterOptions& opt, Load load, Store store) {
  if (opt.block < 1) throw ConfigError("SVD block length must be >= 1");
  for (Index start = 0; start < frames; start += opt.block) {
    const Index len = std::min(opt.block, frames - start);
    if (len < opt.block && len <= 2 * opt.cutoff) {
      log_warning("SVD filter: trailing block of " + std::to_string(len) + " frames passed through unfiltered");
      continue;
    }
    store(svd_clutter_filter(load(v, start, len), opt.cutoff), start);
  }
}

}  // namespace

template <typename Scalar>
ComplexVolume<Scalar> svd_clutter_filter(const ComplexVolume<Scalar>& v, const SvdFilterOptions& opt) {
  ComplexVolume<Scalar> out = v;
  filter_blocks(
      v, v.frames(), opt, [](const auto& vol, Index s, Index n) { return to_casorati(vol, s, n); },
      [&](const auto& m, Index s) { from_casorati(m, out, s); });
  return out;
}

template <typename Scalar>
Tensor6<Scalar> svd_clutter_filter(const Tensor6<Scalar>& x, const SvdFilterOptions& opt) {
  Tensor6<Scalar> out = x;
  filter_blocks(
      x, x.extent(kTime), opt, [](const auto& t, Index s, Index n) { return to_casorati(t, s, n); },
      [&](const auto& m, Index s) { from_casorati(m, out, s); });
  return out;
}

template <typename Scalar>
Tensor6<Scalar> temporal_accumulate_std(const Tensor6<Scalar>& v, Index block) {
  const Index frames = v.extent(kTime);
  if (frames < 2) throw ShapeError("temporal accumulation needs at least 2 frames");
  if (block < 2) throw ConfigError("accumulation block must be >= 2 frames");
  const Index len = std::min(block, frames), blocks = frames / len;
  Shape6 s = v.shape();
  s[kTime] = 1;
  Tensor6<Scalar> out(s);
  std::vector<double> acc(len);
  for (Index series = 0; series < out.size(); ++series) {
    const Scalar* in = v.data() + series * frames;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Index b = 0; b < blocks; ++b)
      for (Index p = 0; p < len; ++p) acc[p] += static_cast<double>(in[b * len + p]);
    double mean = 0;
    for (double& a : acc) mean += (a /= static_cast<double>(blocks));
    mean /= static_cast<double>(len);
    double var = 0;
    for (double a : acc) var += (a - mean) * (a - mean);
    out.data()[series] = static_cast<Scalar>(std::sqrt(var / static_cast<double>(len)));
  }
  return out;
}

#define CLUTTER4D_INSTANTIATE(S)                                                                        \
  template Tensor6<S> highpass_rolling_mean(const Tensor6<S>&, Index);                                \
  template ComplexVolume<S> highpass_rolling_mean(const ComplexVolume<S>&, Index);                    \
  template CasoratiMatrix<std::complex<S>> to_casorati(const ComplexVolume<S>&, Index, Index);        \
  template void from_casorati(const CasoratiMatrix<std::complex<S>>&, ComplexVolume<S>&, Index);      \
  template CasoratiMatrix<S> to_casorati(const Tensor6<S>&, Index, Index);                            \
  template void from_casorati(const CasoratiMatrix<S>&, Tensor6<S>&, Index);                          \
  template CasoratiMatrix<S> svd_clutter_filter(const CasoratiMatrix<S>&, Index);                     \
  template CasoratiMatrix<std::complex<S>> svd_clutter_filter(const CasoratiMatrix<std::complex<S>>&, \
                                                              Index);                                 \
  template ComplexVolume<S> svd_clutter_filter(const ComplexVolume<S>&, const SvdFilterOptions&);     \
  template Tensor6<S> svd_clutter_filter(const Tensor6<S>&, const SvdFilterOptions&);                 \
  template Tensor6<S> temporal_accumulate_std(const Tensor6<S>&, Index);

CLUTTER4D_INSTANTIATE(float)
CLUTTER4D_INSTANTIATE(double)

}  // namespace clutter4d
