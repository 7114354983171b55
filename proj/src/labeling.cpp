#include "clutter4d/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "clutter4d/io.hpp"

namespace clutter4d {

std::vector<Index> tile_starts(Index length, Index extent, Index stride) {
  if (extent < 1 || stride < 1) throw ConfigError("patch extent and stride must be >= 1");
  if (length < extent) throw ShapeError("volume axis of " + std::to_string(length) + " is smaller than a patch");
  std::vector<Index> starts;
  for (Index s = 0;; s += stride) {
    if (s + extent >= length) {
      starts.push_back(length - extent);
      break;
    }
    starts.push_back(s);
  }
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  return starts;
}

std::vector<PatchSpec> patch_grid(const Extent4& volume, const Extent4& extent, const Extent4& stride) {
  std::array<std::vector<Index>, 4> starts;
  for (int a = 0; a < 4; ++a) starts[a] = tile_starts(volume[a], extent[a], stride[a]);
  Extent4 overlap{};
  for (int a = 0; a < 4; ++a) overlap[a] = std::max<Index>(0, extent[a] - stride[a]);
  std::vector<PatchSpec> grid;
  for (Index t : starts[3])
    for (Index x : starts[0])
      for (Index y : starts[1])
        for (Index z : starts[2]) grid.push_back({{x, y, z, t}, extent, overlap});
  return grid;
}

std::vector<PatchSpec> overlap_grid(const Extent4& volume, const Extent4& extent, const Extent4& overlap) {
  Extent4 stride{};
  for (int a = 0; a < 4; ++a) {
    stride[a] = extent[a] - overlap[a];
    if (overlap[a] < 0 || stride[a] < 1) throw ConfigError("overlap must lie in [0, extent)");
  }
  return patch_grid(volume, extent, stride);
}

Extent4 volume_extent(const Tensor6D& v) {
  if (v.extent(kBatch) != 1) throw ShapeError("expected a single volume (B = 1)");
  return {v.extent(kX), v.extent(kY), v.extent(kZ), v.extent(kTime)};
}

std::vector<PatchPair> crop_patches(const Tensor6D& input, const Tensor6D& target, const std::vector<PatchSpec>& grid) {
  const Extent4 ext = volume_extent(input);
  if (target.size() > 0 && volume_extent(target) != ext) throw ShapeError("input and target volumes differ in shape");
  std::vector<PatchPair> out;
  out.reserve(grid.size());
  for (const auto& s : grid) {
    PatchPair p{s, crop(input, s.origin, s.extent), {}};
    if (target.size() > 0) p.target = crop(target, s.origin, s.extent);
    out.push_back(std::move(p));
  }
  return out;
}

Tensor6D reassemble(std::span<const Tensor6D> patches, std::span<const PatchSpec> specs, const Shape6& shape) {
  if (patches.size() != specs.size()) throw ShapeError("one spec per patch expected");
  Tensor6D out(shape);
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const auto& p = patches[n];
    const auto& s = specs[n];
    if (p.extent(kChannel) != shape[kChannel]) throw ShapeError("patch channel count differs from the volume");
    for (int a = 0; a < 4; ++a)
      if (p.extent(kX + a) != s.extent[a] || s.origin[a] + s.extent[a] > shape[kX + a])
        throw ShapeError("patch does not fit the volume");
    for (Index c = 0; c < shape[kChannel]; ++c)
      for (Index i = 0; i < s.extent[0]; ++i)
        for (Index j = 0; j < s.extent[1]; ++j)
          for (Index k = 0; k < s.extent[2]; ++k)
            out.array().segment(out.index(0, c, s.origin[0] + i, s.origin[1] + j, s.origin[2] + k, s.origin[3]),
                                s.extent[3]) = p.array().segment(p.index(0, c, i, j, k, 0), s.extent[3]);
  }
  return out;
}

namespace {

// Running max along one spatial axis, window [i - r, i + r] clipped.
template <typename Scalar>
Tensor6<Scalar> max_along(const Tensor6<Scalar>& v, int axis, Index r) {
  Tensor6<Scalar> out(v.shape());
  const Shape6 s = v.shape();
  for (Index b = 0; b < s[0]; ++b)
    for (Index c = 0; c < s[1]; ++c)
      for (Index x = 0; x < s[2]; ++x)
        for (Index y = 0; y < s[3]; ++y)
          for (Index z = 0; z < s[4]; ++z) {
            std::array<Index, 3> p{x, y, z};
            const Index len = s[axis], at = p[axis - kX];
            for (Index t = 0; t < s[5]; ++t) {
              Scalar m = v(b, c, x, y, z, t);
              for (Index q = std::max<Index>(0, at - r); q <= std::min(len - 1, at + r); ++q) {
                p[axis - kX] = q;
                m = std::max(m, v(b, c, p[0], p[1], p[2], t));
              }
              p[axis - kX] = at;
              out(b, c, x, y, z, t) = m;
            }
          }
  return out;
}

Index rounded(double p) { return static_cast<Index>(std::lround(p)); }

}  // namespace

template <typename Scalar>
Tensor6<Scalar> dilate(const Tensor6<Scalar>& v, Index radius) {
  if (radius < 0) throw ConfigError("dilation radius must be >= 0");
  if (radius == 0) return v;
  return max_along(max_along(max_along(v, kX, radius), kY, radius), kZ, radius);
}

template <typename Scalar>
Tensor6<Scalar> dilation_normalize(const Tensor6<Scalar>& v, Index radius) {
  if ((v.array() < Scalar(0)).any()) throw NumericError("dilation normalization expects non-negative values");
  const Tensor6<Scalar> d = dilate(v, radius);
  Tensor6<Scalar> out(v.shape());
  out.array() = (d.array() > Scalar(0)).select(v.array() / d.array(), Scalar(0));
  return out;
}

void LabelConfig::validate() const {
  for (Index d : diameter)
    if (d < 1 || d % 2 == 0) throw ConfigError("label diameter must be odd and >= 1");
  if (margin < 0) throw ConfigError("edge margin must be >= 0");
  if (dilation_radius < 0) throw ConfigError("dilation radius must be >= 0");
}

Tensor6D render_footprints(const Tensor6D& bubble_magnitude, const std::vector<Trajectory>& trajectories,
                           const Extent3& diameter) {
  const Extent4 ext = volume_extent(bubble_magnitude);
  if (bubble_magnitude.extent(kChannel) != 1) throw ShapeError("footprints need a single-channel magnitude");
  Tensor6D out(bubble_magnitude.shape());
  for (const auto& tr : trajectories)
    for (const auto& p : tr.points) {
      if (p.frame < 0 || p.frame >= ext[3]) continue;
      Extent3 lo, hi;
      for (int a = 0; a < 3; ++a) {
        const Index c = rounded(p.position[a]), r = diameter[a] / 2;
        lo[a] = std::max<Index>(0, c - r);
        hi[a] = std::min(ext[a] - 1, c + r);
      }
      for (Index x = lo[0]; x <= hi[0]; ++x)
        for (Index y = lo[1]; y <= hi[1]; ++y)
          for (Index z = lo[2]; z <= hi[2]; ++z) out(0, 0, x, y, z, p.frame) = bubble_magnitude(0, 0, x, y, z, p.frame);
    }
  return out;
}

namespace {

struct Placement {
  bool overlaps = false;  // footprint window intersects the patch
  bool near_edge = false;
  Extent3 centre{};  // patch coordinates
  Index t = 0;
};

// Per trajectory point inside the patch frames.
std::vector<Placement> placements(const Trajectory& tr, const PatchSpec& s, const LabelConfig& cfg) {
  std::vector<Placement> out;
  for (const auto& p : tr.points) {
    Placement q;
    q.t = p.frame - s.origin[3];
    if (q.t < 0 || q.t >= s.extent[3]) continue;
    q.overlaps = true;
    for (int a = 0; a < 3; ++a) {
      const Index c = rounded(p.position[a]) - s.origin[a], r = cfg.diameter[a] / 2;
      q.centre[a] = c;
      q.overlaps = q.overlaps && c + r >= 0 && c - r < s.extent[a];
      q.near_edge = q.near_edge || c < cfg.margin || c > s.extent[a] - 1 - cfg.margin;
    }
    out.push_back(q);
  }
  return out;
}

// Which placements lose their label under the configured policy.
std::vector<char> removed(const std::vector<Placement>& ps, EdgePolicy policy) {
  bool any = false;
  for (const auto& q : ps) any = any || q.near_edge;
  std::vector<char> out(ps.size(), 0);
  for (std::size_t i = 0; i < ps.size(); ++i)
    out[i] = policy == EdgePolicy::kWholePatch ? any : ps[i].near_edge;
  return out;
}

}  // namespace

Tensor6D remove_edge_bubbles(Tensor6D gt_patch, const std::vector<Trajectory>& trajectories, const PatchSpec& spec,
                             const LabelConfig& cfg) {
  cfg.validate();
  for (int a = 0; a < 4; ++a)
    if (gt_patch.extent(kX + a) != spec.extent[a]) throw ShapeError("target patch does not match its spec");
  for (const auto& tr : trajectories) {
    const auto ps = placements(tr, spec, cfg);
    const auto gone = removed(ps, cfg.edge);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!gone[i] || !ps[i].overlaps) continue;
      Extent3 lo, hi;
      for (int a = 0; a < 3; ++a) {
        const Index r = cfg.diameter[a] / 2;
        lo[a] = std::max<Index>(0, ps[i].centre[a] - r);
        hi[a] = std::min(spec.extent[a] - 1, ps[i].centre[a] + r);
      }
      for (Index x = lo[0]; x <= hi[0]; ++x)
        for (Index y = lo[1]; y <= hi[1]; ++y)
          for (Index z = lo[2]; z <= hi[2]; ++z)
            for (Index c = 0; c < gt_patch.extent(kChannel); ++c) gt_patch(0, c, x, y, z, ps[i].t) = 0.0f;
    }
  }
  return gt_patch;
}

std::vector<LabelPoint> retained_points(const std::vector<Trajectory>& trajectories, const PatchSpec& spec,
                                        const LabelConfig& cfg) {
  std::vector<LabelPoint> out;
  for (const auto& tr : trajectories) {
    const auto ps = placements(tr, spec, cfg);
    const auto gone = removed(ps, cfg.edge);
    std::size_t i = 0;
    for (const auto& p : tr.points) {
      const Index t = p.frame - spec.origin[3];
      if (t < 0 || t >= spec.extent[3]) continue;
      if (!gone[i]) out.push_back({tr.id, p});
      ++i;
    }
  }
  return out;
}

Tensor6D label_patch(const Tensor6D& footprints, const std::vector<Trajectory>& trajectories, const PatchSpec& spec,
                     const LabelConfig& cfg) {
  return dilation_normalize(remove_edge_bubbles(crop(footprints, spec.origin, spec.extent), trajectories, spec, cfg),
                            cfg.dilation_radius);
}

AugmentDraw AugmentDraw::random(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AugmentDraw d;
  const auto k = std::uniform_int_distribution<int>(0, 5)(rng);
  for (int i = 0; i < k; ++i) std::next_permutation(d.permutation.begin(), d.permutation.end());
  std::bernoulli_distribution coin(0.5);
  d.flip_x = coin(rng);
  d.flip_y = coin(rng);
  return d;
}

template <typename Scalar>
Tensor6<Scalar> apply_augment(const Tensor6<Scalar>& v, const AugmentDraw& draw) {
  const Shape6 s = v.shape();
  if (s[kX] != s[kY] || s[kY] != s[kZ]) throw ShapeError("axis permutation needs equal spatial extents");
  if (draw.identity()) return v;
  const Index n = s[kX];
  Tensor6<Scalar> out(s);
  for (Index b = 0; b < s[0]; ++b)
    for (Index c = 0; c < s[1]; ++c)
      for (Index x = 0; x < n; ++x)
        for (Index y = 0; y < n; ++y)
          for (Index z = 0; z < n; ++z) {
            const std::array<Index, 3> q{draw.flip_x ? n - 1 - x : x, draw.flip_y ? n - 1 - y : y, z};
            std::array<Index, 3> src{};
            for (int a = 0; a < 3; ++a) src[draw.permutation[a]] = q[a];
            out.array().segment(out.index(b, c, x, y, z, 0), s[kTime]) =
                v.array().segment(v.index(b, c, src[0], src[1], src[2], 0), s[kTime]);
          }
  return out;
}

void augment(Tensor6D& input, Tensor6D& target, std::uint64_t seed) {
  const AugmentDraw d = AugmentDraw::random(seed);
  input = apply_augment(input, d);
  target = apply_augment(target, d);
}

ChannelStats compute_channel_stats(std::span<const Tensor6D> corpus) {
  ChannelStats st;
  for (int c = 0; c < 2; ++c) {
    double sum = 0, sq = 0, n = 0;
    for (const auto& v : corpus) {
      if (v.extent(kChannel) < 2) throw ShapeError("channel statistics need at least two channels");
      for (Index b = 0; b < v.extent(kBatch); ++b) {
        const Index per = v.size() / (v.extent(kBatch) * v.extent(kChannel));
        const auto seg = v.array().segment(v.index(b, c, 0, 0, 0, 0), per).template cast<double>();
        sum += seg.sum();
        sq += seg.square().sum();
        n += static_cast<double>(per);
      }
    }
    if (n == 0) throw ConfigError("channel statistics need a non-empty corpus");
    st.mean[c] = sum / n;
    st.stddev[c] = std::sqrt(std::max(0.0, sq / n - st.mean[c] * st.mean[c]));
  }
  return st;
}

Tensor6D standardize(const Tensor6D& channels, const ChannelStats& stats) {
  if (channels.extent(kChannel) < 2) throw ShapeError("standardization needs at least two channels");
  for (double s : stats.stddev)
    if (!(s > 0) || !std::isfinite(s)) throw NumericError("channel standard deviation must be positive");
  Tensor6D out = channels;
  const Index per = channels.size() / (channels.extent(kBatch) * channels.extent(kChannel));
  for (Index b = 0; b < channels.extent(kBatch); ++b)
    for (int c = 0; c < 2; ++c) {
      auto seg = out.array().segment(out.index(b, c, 0, 0, 0, 0), per);
      seg = ((seg.template cast<double>() - stats.mean[c]) / stats.stddev[c]).template cast<float>();
    }
  return out;
}

void save_channel_stats(const std::filesystem::path& path, const ChannelStats& stats) {
  KeyValueFile kv;
  for (int c = 0; c < 2; ++c) {
    kv.set("channel" + std::to_string(c) + "_mean", stats.mean[c]);
    kv.set("channel" + std::to_string(c) + "_std", stats.stddev[c]);
  }
  kv.save(path);
}

ChannelStats load_channel_stats(const std::filesystem::path& path) {
  const KeyValueFile kv = KeyValueFile::load(path);
  ChannelStats st;
  for (int c = 0; c < 2; ++c) {
    st.mean[c] = kv.get_double("channel" + std::to_string(c) + "_mean");
    st.stddev[c] = kv.get_double("channel" + std::to_string(c) + "_std");
  }
  return st;
}

void write_patch_manifest(const std::filesystem::path& path, const std::vector<PatchRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "input,target,volume,x0,y0,z0,t0\n";
  for (const auto& r : records)
    out << r.input << ',' << r.target << ',' << r.volume << ',' << r.origin[0] << ',' << r.origin[1] << ','
        << r.origin[2] << ',' << r.origin[3] << '\n';
}

std::vector<PatchRecord> read_patch_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("no such file: " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<PatchRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw FormatError(path.string() + ": malformed manifest row: " + line);
    PatchRecord r{f[0], f[1], f[2], {}};
    try {
      for (int a = 0; a < 4; ++a) r.origin[a] = std::stoll(f[3 + a]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed manifest row: " + line);
    }
    records.push_back(r);
  }
  return records;
}

#define CLUTTER4D_INSTANTIATE(S)                                           \
  template Tensor6<S> dilate(const Tensor6<S>&, Index);                    \
  template Tensor6<S> dilation_normalize(const Tensor6<S>&, Index);        \
  template Tensor6<S> apply_augment(const Tensor6<S>&, const AugmentDraw&);

CLUTTER4D_INSTANTIATE(float)
CLUTTER4D_INSTANTIATE(double)

}  // namespace clutter4d
