#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "clutter4d/labeling.hpp"
#include "clutter4d/tracking.hpp"
#include "clutter4d/unet4d.hpp"

namespace clutter4d {

/// Maps a batch (B, C, 16, 16, 16, 8) of patches to (B, 1, 16, 16, 16, 8).
using PatchModel = std::function<Tensor6D(const Tensor6D&)>;

/// Eval-mode forward of a trained network.
PatchModel unet_patch_model(const UNet4D<float>& model);

/// Separable Gaussian over (x, y, z, t) centered on the patch, sigma =
/// sigma_fraction * extent per axis. Shape (1, 1, x, y, z, t).
template <typename Scalar>
Tensor6<Scalar> blend_weights(const Extent4& extent, double sigma_fraction = 0.25);

struct InferenceConfig {
  Extent4 extent{16, 16, 16, 8};
  Extent4 overlap{6, 6, 6, 0};
  double sigma_fraction = 0.25;
  Index batch = 4;
  /// Concurrent batches. Accumulation order is fixed, so the result does
  /// not depend on this.
  int threads = 1;

  void validate() const;
};

/// Overlapped patch inference with Gaussian-weighted blending:
/// out = sum_p w_p * model(patch_p) / sum_p w_p. Input (1, C, X, Y, Z, T).
Tensor6D infer_volume(const PatchModel& model, const Tensor6D& channels, const InferenceConfig& cfg = {});

struct EvalConfig {
  double threshold = 0.5;
  Index border = 3;
  double match_radius = 2.0;
  /// Peak neighbourhood and separation of model-output detection.
  Extent3 diameter{5, 5, 5};
  Extent3 separation{7, 7, 7};

  void validate() const;
};

/// Per-frame centers.
using FramePoints = std::vector<std::vector<Point3>>;

/// True when the point is at least `border` voxels from every spatial face.
bool inside_border(const Point3& p, const Extent3& volume, Index border);

/// Local maxima of a (1, 1, X, Y, Z, T) output with peak >= threshold, away
/// from the border.
FramePoints detect_model_output(const Tensor6D& output, const EvalConfig& cfg);

/// Ground-truth centers per frame from generator tracks, with the same border rule.
FramePoints truth_points(const std::vector<TrackPoint>& tracks, const Extent4& volume, Index border);

struct DetectionReport {
  double lambda = 0.0;
  Index tp = 0;
  Index fp = 0;
  Index fn = 0;
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 0.0;
  double threshold = 0.5;
  Index seed_count = 1;
  double match_radius = 2.0;
  Index border = 3;

  /// Recomputes precision, recall and f1 from the counts.
  void finalize();
  DetectionReport& operator+=(const DetectionReport& other);
};

/// Greedy one-to-one matching per frame by ascending distance within
/// match_radius. Frame counts may differ; missing frames are empty.
DetectionReport score_detections(const FramePoints& detections, const FramePoints& truths, double match_radius);

/// Evaluates every (lambda, seed) pair and micro-averages counts over seeds.
using SweepEvaluator = std::function<DetectionReport(double lambda, std::uint64_t seed)>;
std::vector<DetectionReport> lambda_sweep(std::span<const double> lambdas, std::span<const std::uint64_t> seeds,
                                          const SweepEvaluator& evaluate);

/// Columns: lambda, tp, fp, fn, precision, recall, f1, threshold, seed_count.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<DetectionReport>& reports);
std::vector<DetectionReport> read_sweep_csv(const std::filesystem::path& path);

struct CalibrationSample {
  Tensor6D output;
  FramePoints truths;
};

/// Threshold with the best F1 summed over the samples; ties keep the
/// earliest candidate.
double calibrate_threshold(std::span<const CalibrationSample> samples, std::span<const double> candidates,
                           const EvalConfig& cfg);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Maximum over z and all frames of a (1, 1, X, Y, Z, T) tensor: an (X, Y) image.
Eigen::MatrixXd max_intensity_projection(const Tensor6D& v);

/// Binary 16-bit PGM, samples big-endian, linearly scaled from [lo, hi].
void write_pgm16(const std::filesystem::path& path, const Eigen::MatrixXd& image, double lo, double hi);
void write_pgm16(const std::filesystem::path& path, const Eigen::MatrixXd& image);

/// Mean over on-track voxels divided by mean over the rest, on a
/// (1, 1, X, Y, Z, 1) accumulation map. A voxel is on-track when it lies
/// within `radius` of a track point of any frame.
double track_contrast(const Tensor6D& map, const std::vector<TrackPoint>& tracks, double radius = 1.5);

}  // namespace clutter4d
