#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "clutter4d/clutter_filters.hpp"
#include "clutter4d/inference_eval.hpp"
#include "clutter4d/labeling.hpp"
#include "clutter4d/synth_ceus.hpp"
#include "clutter4d/tracking.hpp"
#include "clutter4d/unet4d.hpp"

namespace clutter4d {

/// Independent stream seed derived from a root seed (splitmix64 mixing).
std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream);

struct SynthConfig {
  Shape4 shape{32, 32, 32, 64};
  BubbleSim bubbles;
  ClutterSim clutter;
  /// Bubble gain relative to the clutter, whose RMS is 1.
  double lambda = 5.0;
  Index highpass_window = 11;
  double kappa = 1.0;

  void validate() const;
};

struct SynthVolume {
  ComplexVolumeF composite;
  ComplexVolumeF filtered;  // high-passed composite
  ComplexVolumeF clutter;
  BubbleField field;
  double noise_rms = 1.0;  // RMS of the high-passed clutter
  Tensor6D channels;       // raw network channels, not standardized
};

SynthVolume make_synth(const SynthConfig& cfg, std::uint64_t seed);

/// channels.t6d, composite/bubbles/clutter .re/.im, tracks.csv.
void write_synth(const std::filesystem::path& dir, const SynthVolume& v);

struct LabelingConfig {
  DetectionParams detection{{5, 5, 5}, {7, 7, 7}, 2.0, 0.0};
  /// Replaces detection.minmass by the elbow of these candidates when non-empty.
  std::vector<double> minmass_candidates;
  double max_disp = 4.0;
  Index min_length = 2;
  LabelConfig label;
  Extent4 patch{16, 16, 16, 8};
  Extent4 stride{16, 16, 16, 8};
};

struct LabeledVolume {
  std::vector<Trajectory> trajectories;
  std::vector<PatchPair> patches;  // raw inputs, normalized targets
  double minmass = 0.0;
};

/// Tracks bubbles on the bubble-only magnitude and cuts labeled patches.
LabeledVolume label_volume(const Tensor6D& channels, const Tensor6D& bubble_magnitude, const LabelingConfig& cfg);

struct CorpusConfig {
  SynthConfig synth;
  /// Volume i uses lambdas[i % size].
  std::vector<double> lambdas{1.0};
  Index volumes = 8;
  LabelingConfig labeling;
};

struct Corpus {
  PatchDataset<float> data;  // standardized inputs
  ChannelStats stats;
  std::vector<PatchRecord> records;
};

Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t seed);

/// Training-time augmentation: a fresh axis permutation and flips per draw.
PairTransform<float> augmentation_transform();

struct EvalSetup {
  SynthConfig synth;
  EvalConfig eval;
  InferenceConfig inference;
};

struct SyntheticEvaluation {
  DetectionReport report;
  Tensor6D output;
  SynthVolume volume;
};

/// Generates the volume for (lambda, seed), runs the model and scores it
/// against every true track point, hidden bubbles included.
SyntheticEvaluation evaluate_synthetic(const PatchModel& model, const ChannelStats& stats, const EvalSetup& setup,
                                       double lambda, std::uint64_t seed);

/// Per-voxel std accumulation of three renderings of the same volume.
struct AccumulationMaps {
  Tensor6D highpass;
  Tensor6D svd;
  Tensor6D model;
};

AccumulationMaps accumulation_maps(const SynthVolume& v, const Tensor6D& model_output, const SvdFilterOptions& svd,
                                   Index block = 8);

}  // namespace clutter4d
