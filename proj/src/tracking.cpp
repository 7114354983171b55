#include "clutter4d/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "clutter4d/io.hpp"

namespace clutter4d {

void DetectionParams::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (diameter[a] < 1 || diameter[a] % 2 == 0) throw ConfigError("detection diameter must be odd and >= 1");
    if (separation[a] < diameter[a]) throw ConfigError("separation must be >= diameter on every axis");
  }
  if (!(minmass > 0)) throw ConfigError("minmass must be > 0");
  if (!(threshold >= 0)) throw ConfigError("peak threshold must be >= 0");
}

namespace {

struct Candidate {
  Index flat;
  Detection det;
};

void require_image(const Tensor6D& image) {
  if (image.extent(kBatch) != 1 || image.extent(kChannel) != 1)
    throw ShapeError("detection expects a (1, 1, Lx, Ly, Lz, T) image");
}

// Local maxima with mass and centroid, before minmass and separation filtering.
std::vector<Candidate> frame_candidates(const Tensor6D& image, Index t, const DetectionParams& p) {
  const Index lx = image.extent(kX), ly = image.extent(kY), lz = image.extent(kZ);
  const Index rx = p.diameter[0] / 2, ry = p.diameter[1] / 2, rz = p.diameter[2] / 2;
  auto at = [&](Index x, Index y, Index z) { return image(0, 0, x, y, z, t); };
  std::vector<Candidate> out;
  for (Index x = 0; x < lx; ++x)
    for (Index y = 0; y < ly; ++y)
      for (Index z = 0; z < lz; ++z) {
        const float v = at(x, y, z);
        if (v < 0) throw NumericError("detection expects a non-negative image");
        if (!(v > 0) || v < p.threshold) continue;
        const Index flat = (x * ly + y) * lz + z;
        bool is_max = true;
        double mass = 0, cx = 0, cy = 0, cz = 0;
        for (Index i = std::max<Index>(0, x - rx); i <= std::min(lx - 1, x + rx) && is_max; ++i)
          for (Index j = std::max<Index>(0, y - ry); j <= std::min(ly - 1, y + ry) && is_max; ++j)
            for (Index k = std::max<Index>(0, z - rz); k <= std::min(lz - 1, z + rz); ++k) {
              const float w = at(i, j, k);
              // plateaus: the first voxel in scan order wins
              if (w > v || (w == v && (i * ly + j) * lz + k < flat)) {
                is_max = false;
                break;
              }
              mass += w;
              cx += w * i;
              cy += w * j;
              cz += w * k;
            }
        if (!is_max) continue;
        Detection d;
        d.peak = {x, y, z};
        d.mass = mass;
        d.peak_value = v;
        d.position = {cx / mass, cy / mass, cz / mass};
        out.push_back({flat, d});
      }
  return out;
}

std::vector<Detection> select(std::vector<Candidate> cands, const DetectionParams& p) {
  std::erase_if(cands, [&](const Candidate& c) { return c.det.mass < p.minmass; });
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return a.det.mass != b.det.mass ? a.det.mass > b.det.mass : a.flat < b.flat;
  });
  std::vector<Candidate> kept;
  for (const auto& c : cands) {
    bool ok = true;
    for (const auto& k : kept) {
      double d = 0;
      for (int a = 0; a < 3; ++a) {
        const double u = (c.det.position[a] - k.det.position[a]) / static_cast<double>(p.separation[a]);
        d += u * u;
      }
      if (d < 1.0) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) { return a.flat < b.flat; });
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (auto& c : kept) out.push_back(c.det);
  return out;
}

}  // namespace

std::vector<Detection> detect_frame(const Tensor6D& image, Index frame, const DetectionParams& params) {
  params.validate();
  require_image(image);
  if (frame < 0 || frame >= image.extent(kTime)) throw ShapeError("frame index out of range");
  return select(frame_candidates(image, frame, params), params);
}

std::vector<std::vector<Detection>> detect_per_frame(const Tensor6D& image, const DetectionParams& params) {
  params.validate();
  require_image(image);
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(image.extent(kTime)));
  for (Index t = 0; t < image.extent(kTime); ++t) out[t] = select(frame_candidates(image, t, params), params);
  return out;
}

ElbowResult elbow_index(std::span<const double> candidates, std::span<const double> counts) {
  const std::size_t n = candidates.size();
  if (n < 3 || counts.size() != n) throw ConfigError("elbow needs >= 3 candidates with one count each");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(candidates[i] > 0)) throw ConfigError("elbow candidates must be > 0");
    if (i > 0 && !(candidates[i] > candidates[i - 1])) throw ConfigError("elbow candidates must be ascending");
  }
  const double x0 = std::log(candidates.front()), xr = std::log(candidates.back()) - x0;
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  const double yr = *hi - *lo;
  if (yr <= 0) return {0, true};
  auto px = [&](std::size_t i) { return (std::log(candidates[i]) - x0) / xr; };
  auto py = [&](std::size_t i) { return (counts[i] - *lo) / yr; };
  const double dx = px(n - 1) - px(0), dy = py(n - 1) - py(0), len = std::hypot(dx, dy);
  ElbowResult best{0, true};
  double best_d = 1e-9;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double d = std::abs(dx * (py(i) - py(0)) - dy * (px(i) - px(0))) / len;
    if (d > best_d) {
      best_d = d;
      best = {i, false};
    }
  }
  return best;
}

double select_minmass_by_elbow(const Tensor6D& image, DetectionParams params, std::span<const double> candidates) {
  require_image(image);
  params.minmass = candidates.empty() ? 1.0 : candidates.front();
  params.validate();
  std::vector<std::vector<Candidate>> frames;
  for (Index t = 0; t < image.extent(kTime); ++t) frames.push_back(frame_candidates(image, t, params));
  std::vector<double> counts;
  for (double m : candidates) {
    params.minmass = m;
    double total = 0;
    for (const auto& f : frames) total += static_cast<double>(select(f, params).size());
    counts.push_back(total);
  }
  const ElbowResult e = elbow_index(candidates, counts);
  if (e.degenerate) log_warning("detection count curve has no elbow; using the smallest minmass");
  return candidates[e.index];
}

std::vector<Index> optimal_assignment(const Eigen::MatrixXd& cost, double unmatched_cost) {
  const Index rows = cost.rows(), cols = cost.cols(), n = rows + cols;
  std::vector<Index> result(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return result;
  // Square problem: real pairs, row->dummy, dummy->column, dummy->dummy.
  // Forbidden entries cost more than leaving both ends unmatched.
  const double forbidden = 2 * unmatched_cost + 1;
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n, n, forbidden);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (cost(i, j) <= unmatched_cost) c(i, j) = cost(i, j);
  for (Index i = 0; i < rows; ++i) c(i, cols + i) = unmatched_cost;
  for (Index j = 0; j < cols; ++j) c(rows + j, j) = unmatched_cost;
  c.bottomRightCorner(cols, rows).setZero();

  // Hungarian method with potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (Index j = 1; j <= cols; ++j) {
    const Index i = match[j] - 1;
    if (i < rows && cost(i, j - 1) <= unmatched_cost) result[i] = j - 1;
  }
  return result;
}

std::vector<Trajectory> link_trajectories(const std::vector<std::vector<Detection>>& frames, double max_disp) {
  if (!(max_disp > 0)) throw ConfigError("max_disp must be > 0");
  const double limit = max_disp * max_disp;
  auto canonical = [](std::vector<Detection> d) {
    std::sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) {
      return a.position != b.position ? a.position < b.position : a.mass < b.mass;
    });
    return d;
  };
  std::vector<Trajectory> trajs;
  std::vector<Detection> prev;
  std::vector<std::size_t> prev_traj;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const std::vector<Detection> cur = canonical(frames[t]);
    Eigen::MatrixXd cost(static_cast<Index>(prev.size()), static_cast<Index>(cur.size()));
    for (std::size_t i = 0; i < prev.size(); ++i)
      for (std::size_t j = 0; j < cur.size(); ++j) {
        double d = 0;
        for (int a = 0; a < 3; ++a) d += (prev[i].position[a] - cur[j].position[a]) * (prev[i].position[a] - cur[j].position[a]);
        cost(i, j) = d;
      }
    const std::vector<Index> assign = optimal_assignment(cost, limit);
    std::vector<std::size_t> cur_traj(cur.size(), trajs.size());
    std::vector<char> taken(cur.size(), 0);
    for (std::size_t i = 0; i < prev.size(); ++i)
      if (assign[i] >= 0) {
        cur_traj[assign[i]] = prev_traj[i];
        taken[assign[i]] = 1;
      }
    for (std::size_t j = 0; j < cur.size(); ++j) {
      if (!taken[j]) {
        cur_traj[j] = trajs.size();
        trajs.emplace_back();
      }
      trajs[cur_traj[j]].points.push_back({static_cast<Index>(t), cur[j].position, cur[j].mass});
    }
    prev = cur;
    prev_traj = std::move(cur_traj);
  }
  std::sort(trajs.begin(), trajs.end(), [](const Trajectory& a, const Trajectory& b) {
    const auto& p = a.points.front();
    const auto& q = b.points.front();
    return p.frame != q.frame ? p.frame < q.frame : p.position < q.position;
  });
  for (std::size_t i = 0; i < trajs.size(); ++i) trajs[i].id = static_cast<int>(i);
  return trajs;
}

std::vector<Trajectory> filter_short(std::vector<Trajectory> trajectories, Index min_length) {
  std::erase_if(trajectories, [&](const Trajectory& t) { return t.length() < min_length; });
  return trajectories;
}

void write_trajectories_csv(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "traj_id,frame,x,y,z,mass\n";
  for (const auto& tr : trajectories)
    for (const auto& p : tr.points)
      out << tr.id << ',' << p.frame << ',' << format_double(p.position[0]) << ',' << format_double(p.position[1])
          << ',' << format_double(p.position[2]) << ',' << format_double(p.mass) << '\n';
}

}  // namespace clutter4d
