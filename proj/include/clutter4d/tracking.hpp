#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "clutter4d/synth_ceus.hpp"
#include "clutter4d/tensor.hpp"

namespace clutter4d {

using Extent3 = std::array<Index, 3>;

struct DetectionParams {
  Extent3 diameter{5, 5, 5};
  Extent3 separation{7, 7, 7};
  double minmass = 1.0;
  /// Peaks below this value are ignored (0 disables the test).
  double threshold = 0.0;

  void validate() const;
};

struct Detection {
  Point3 position{};  // center of mass within the diameter window
  Extent3 peak{};     // integer voxel of the local maximum
  double mass = 0.0;
  double peak_value = 0.0;
};

/// Local maxima of one frame of a non-negative (1, 1, Lx, Ly, Lz, T) image
/// over the diameter neighbourhood, kept when the summed intensity in the
/// diameter window reaches minmass. Conflicts closer than `separation`
/// (ellipsoid-normalized distance < 1) keep the larger mass.
std::vector<Detection> detect_frame(const Tensor6D& image, Index frame, const DetectionParams& params);

/// One detection list per frame.
std::vector<std::vector<Detection>> detect_per_frame(const Tensor6D& image, const DetectionParams& params);

struct ElbowResult {
  std::size_t index = 0;
  bool degenerate = false;
};

/// Maximum distance to the chord joining the first and last points of the
/// (log candidate, count) curve, both axes scaled to [0, 1]. A curve with no
/// bend returns index 0 flagged degenerate.
ElbowResult elbow_index(std::span<const double> candidates, std::span<const double> counts);

/// Counts detections over all frames for every candidate minmass and returns
/// the elbow candidate. Candidates must be positive, ascending, at least 3.
double select_minmass_by_elbow(const Tensor6D& image, DetectionParams params, std::span<const double> candidates);

struct TrajectoryPoint {
  Index frame = 0;
  Point3 position{};
  double mass = 0.0;
};

struct Trajectory {
  int id = 0;
  std::vector<TrajectoryPoint> points;  // consecutive frames

  Index length() const { return static_cast<Index>(points.size()); }
};

/// Optimal assignment of rows to columns (or to nothing) minimizing the total
/// cost; pairs with cost above `unmatched_cost` are never linked. Returns the
/// matched column per row, -1 for none. Solved with the Hungarian method.
std::vector<Index> optimal_assignment(const Eigen::MatrixXd& cost, double unmatched_cost);

/// Frame-to-frame linking minimizing total squared displacement among pairs
/// closer than max_disp. No gap closing: a missing frame ends a trajectory.
std::vector<Trajectory> link_trajectories(const std::vector<std::vector<Detection>>& frames, double max_disp);

std::vector<Trajectory> filter_short(std::vector<Trajectory> trajectories, Index min_length = 2);

/// Columns: traj_id, frame, x, y, z, mass.
void write_trajectories_csv(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);

}  // namespace clutter4d
