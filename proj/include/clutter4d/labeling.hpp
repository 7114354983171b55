#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clutter4d/tensor.hpp"
#include "clutter4d/tracking.hpp"

namespace clutter4d {

/// Axis order (x, y, z, t) throughout.
using Extent4 = std::array<Index, 4>;

struct PatchSpec {
  Extent4 origin{};
  Extent4 extent{16, 16, 16, 8};
  Extent4 overlap{};

  bool operator==(const PatchSpec&) const = default;
};

/// Tile starts along one axis: 0, stride, 2*stride, ... with a trailing
/// partial tile shifted inward to end at `length`.
std::vector<Index> tile_starts(Index length, Index extent, Index stride);

/// Cartesian product of tile starts, t slowest and z fastest. Throws
/// ShapeError if the volume is smaller than a patch on any axis.
std::vector<PatchSpec> patch_grid(const Extent4& volume, const Extent4& extent, const Extent4& stride);

/// Grid with stride = extent - overlap on spatial axes and no temporal overlap.
std::vector<PatchSpec> overlap_grid(const Extent4& volume, const Extent4& extent, const Extent4& overlap);

/// Volume extents (x, y, z, t) of a B=1 tensor.
Extent4 volume_extent(const Tensor6D& v);

struct PatchPair {
  PatchSpec spec;
  Tensor6D input;
  Tensor6D target;
};

/// Crops every grid cell from the input channels and, if non-empty, the
/// aligned target.
std::vector<PatchPair> crop_patches(const Tensor6D& input, const Tensor6D& target, const std::vector<PatchSpec>& grid);

/// Copies patches back into a volume of `shape`; later patches overwrite.
Tensor6D reassemble(std::span<const Tensor6D> patches, std::span<const PatchSpec> specs, const Shape6& shape);

/// Spatial grey-level dilation with a cube of the given radius, per frame
/// and channel.
template <typename Scalar>
Tensor6<Scalar> dilate(const Tensor6<Scalar>& v, Index radius);

/// v / dilate(v) with 0/0 := 0. Every local maximum becomes exactly 1.
template <typename Scalar>
Tensor6<Scalar> dilation_normalize(const Tensor6<Scalar>& v, Index radius = 2);

enum class EdgePolicy {
  kWholePatch,  // a bubble touching the margin in any frame is removed from every frame
  kPerFrame,    // only the frames where its center is within the margin
};

struct LabelConfig {
  Extent3 diameter{5, 5, 5};
  Index margin = 2;
  Index dilation_radius = 2;
  EdgePolicy edge = EdgePolicy::kPerFrame;

  void validate() const;
};

/// Bubble-only magnitude kept inside the diameter window around each
/// trajectory point (rounded), zero elsewhere. Input is (1, 1, Lx, Ly, Lz, T).
Tensor6D render_footprints(const Tensor6D& bubble_magnitude, const std::vector<Trajectory>& trajectories,
                           const Extent3& diameter);

/// Zeroes the footprint of every trajectory whose center comes closer than
/// `margin` to a spatial face (or leaves the patch): in all frames of the
/// patch under kWholePatch, in the offending frames under kPerFrame.
/// Trajectories are in volume coordinates.
Tensor6D remove_edge_bubbles(Tensor6D gt_patch, const std::vector<Trajectory>& trajectories, const PatchSpec& spec,
                             const LabelConfig& cfg);

struct LabelPoint {
  int trajectory = 0;
  TrajectoryPoint point;  // volume coordinates
};

/// Trajectory points inside the patch whose labels survive the edge rule.
std::vector<LabelPoint> retained_points(const std::vector<Trajectory>& trajectories, const PatchSpec& spec,
                                        const LabelConfig& cfg);

/// crop -> remove_edge_bubbles -> dilation_normalize
Tensor6D label_patch(const Tensor6D& footprints, const std::vector<Trajectory>& trajectories, const PatchSpec& spec,
                     const LabelConfig& cfg);

struct AugmentDraw {
  std::array<int, 3> permutation{0, 1, 2};  // output spatial axis a reads input axis permutation[a]
  bool flip_x = false;
  bool flip_y = false;

  static AugmentDraw random(std::uint64_t seed);
  bool identity() const { return permutation == std::array<int, 3>{0, 1, 2} && !flip_x && !flip_y; }
};

/// Throws ShapeError unless the three spatial extents are equal.
template <typename Scalar>
Tensor6<Scalar> apply_augment(const Tensor6<Scalar>& v, const AugmentDraw& draw);

/// Same random draw applied to input and target.
void augment(Tensor6D& input, Tensor6D& target, std::uint64_t seed);

/// Mean and population standard deviation of channels 0 and 1.
struct ChannelStats {
  std::array<double, 2> mean{0, 0};
  std::array<double, 2> stddev{1, 1};
};

ChannelStats compute_channel_stats(std::span<const Tensor6D> corpus);

/// Channels 0 and 1 become (x - mean) / stddev; 2 and 3 are untouched.
/// Throws NumericError if a stddev is not positive.
Tensor6D standardize(const Tensor6D& channels, const ChannelStats& stats);

void save_channel_stats(const std::filesystem::path& path, const ChannelStats& stats);
ChannelStats load_channel_stats(const std::filesystem::path& path);

/// One line of the training-set manifest.
struct PatchRecord {
  std::string input;
  std::string target;
  std::string volume;
  Extent4 origin{};
};

void write_patch_manifest(const std::filesystem::path& path, const std::vector<PatchRecord>& records);
std::vector<PatchRecord> read_patch_manifest(const std::filesystem::path& path);

}  // namespace clutter4d
