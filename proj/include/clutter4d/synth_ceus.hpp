#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "clutter4d/tensor.hpp"

namespace clutter4d {

using Shape4 = std::array<Index, 4>;
using Point3 = std::array<double, 3>;

/// Ballistic point scatterer. Position at frame t is origin + velocity * (t - birth),
/// alive for birth <= t < death.
struct Bubble {
  int id = 0;
  Point3 origin{};
  Point3 velocity{};
  double amplitude = 1.0;
  double phase = 0.0;       // rad at birth
  double phase_rate = 0.0;  // rad per frame
  Index birth = 0;
  Index death = 0;
  bool hidden = false;  // rendered in the bubble-only volume but left out of the mixture

  Point3 position(Index frame) const;
};

struct BubbleSim {
  /// Number of bubbles kept alive at once; a bubble that dies or leaves the
  /// volume is replaced the next frame by a new one.
  Index count = 6;
  double min_speed = 1.0;  // voxels per frame
  double max_speed = 3.0;
  double min_amplitude = 0.5;
  double max_amplitude = 1.5;
  Index min_lifetime = 4;
  Index max_lifetime = 24;
  Point3 psf_sigma{1.2, 1.2, 1.2};
  double separation = 7.0;  // minimum distance to live bubbles at birth
  /// Phase advance per voxel of z displacement, a Doppler-like coupling.
  double doppler = 0.8;
  double hidden_fraction = 0.0;

  void validate() const;
};

/// One observation of a true track: sub-voxel center at a frame.
struct TrackPoint {
  int bubble_id = 0;
  Index frame = 0;
  Point3 position{};
  double amplitude = 0.0;
  bool hidden = false;
};

struct BubbleField {
  ComplexVolumeF all;      // every bubble
  ComplexVolumeF visible;  // bubbles that enter the mixture
  std::vector<Bubble> bubbles;
  std::vector<TrackPoint> tracks;  // sorted by (frame, bubble_id)
};

/// Gaussian PSF evaluated at the continuous center on the voxel grid, with a
/// coherent phase amplitude * exp(i (phase + phase_rate * age)). Track
/// points are kept for frames whose center lies inside the volume.
BubbleField render_bubbles(const std::vector<Bubble>& bubbles, const Shape4& shape, const Point3& psf_sigma);

/// Draws bubbles per BubbleSim and renders them. Throws ConfigError if a
/// bubble cannot be placed under the separation constraint.
BubbleField simulate_bubbles(const BubbleSim& cfg, const Shape4& shape, std::uint64_t seed);

struct ClutterSim {
  Index modes = 24;
  double max_spatial_frequency = 0.08;  // cycles per voxel
  double max_drift = 0.03;              // rad per frame
  /// Slow bulk displacement (voxels per frame) shared by all modes.
  double motion = 0.02;
  double noise_fraction = 0.06;  // share of the total energy in the white floor

  void validate() const;
};

/// Smooth complex field of drifting plane-wave modes plus a white floor,
/// scaled so that its RMS magnitude is 1.
ComplexVolumeF simulate_clutter(const ClutterSim& cfg, const Shape4& shape, std::uint64_t seed);

/// lambda * bubbles + clutter
ComplexVolumeF mix_composite(const ComplexVolumeF& bubbles, const ComplexVolumeF& clutter, double lambda);

/// Root mean square magnitude.
double rms(const ComplexVolumeF& v);

/// Four network channels from a high-pass-filtered volume v:
/// 0: |v|^2 / (|v|^2 + kappa * noise_rms^2), a coherence-like contrast in [0, 1)
/// 1: |v|
/// 2, 3: cos and sin of the phase change from the previous frame; (1, 0) on
///       frame 0 and wherever either sample is exactly zero.
Tensor6D make_channels(const ComplexVolumeF& v, double noise_rms, double kappa = 1.0);

void write_tracks_csv(const std::filesystem::path& path, const std::vector<TrackPoint>& tracks);
std::vector<TrackPoint> read_tracks_csv(const std::filesystem::path& path);

}  // namespace clutter4d
