#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "clutter4d/labeling.hpp"
#include "clutter4d/synth_ceus.hpp"

using namespace clutter4d;

namespace {

Tensor6D dilate_direct(const Tensor6D& v, Index r) {
  Tensor6D out(v.shape());
  const Shape6 s = v.shape();
  for (Index c = 0; c < s[1]; ++c)
    for (Index x = 0; x < s[2]; ++x)
      for (Index y = 0; y < s[3]; ++y)
        for (Index z = 0; z < s[4]; ++z)
          for (Index t = 0; t < s[5]; ++t) {
            float m = v(0, c, x, y, z, t);
            for (Index i = x - r; i <= x + r; ++i)
              for (Index j = y - r; j <= y + r; ++j)
                for (Index k = z - r; k <= z + r; ++k)
                  if (i >= 0 && j >= 0 && k >= 0 && i < s[2] && j < s[3] && k < s[4])
                    m = std::max(m, v(0, c, i, j, k, t));
            out(0, c, x, y, z, t) = m;
          }
  return out;
}

void add_blob(Tensor6D& v, Index t, Point3 c, double amp, double sigma = 1.2) {
  for (Index x = 0; x < v.extent(kX); ++x)
    for (Index y = 0; y < v.extent(kY); ++y)
      for (Index z = 0; z < v.extent(kZ); ++z) {
        const double r2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
        v(0, 0, x, y, z, t) += static_cast<float>(amp * std::exp(-r2 / (2 * sigma * sigma)));
      }
}

Trajectory straight(int id, Point3 start, Point3 step, Index first, Index frames) {
  Trajectory tr;
  tr.id = id;
  for (Index f = 0; f < frames; ++f)
    tr.points.push_back({first + f, {start[0] + step[0] * f, start[1] + step[1] * f, start[2] + step[2] * f}, 1.0});
  return tr;
}

std::vector<float> sorted_values(const Tensor6D& v) {
  std::vector<float> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TEST_CASE("dilation normalization") {
  Tensor6D spike({1, 1, 9, 9, 9, 2});
  spike(0, 0, 4, 4, 4, 1) = 5.0f;
  const Tensor6D n = dilation_normalize(spike, 2);
  CHECK(n(0, 0, 4, 4, 4, 1) == 1.0f);
  CHECK(n.array().maxCoeff() <= 1.0f);
  CHECK(n.array().sum() == 1.0f);

  const Tensor6D c({1, 1, 5, 5, 5, 3}, 0.7f);
  CHECK((dilation_normalize(c, 2).array() == 1.0f).all());

  Tensor6D blobs({1, 1, 20, 20, 20, 1});
  add_blob(blobs, 0, {5, 5, 5}, 0.3);
  add_blob(blobs, 0, {14, 13, 12}, 4.0);
  const Tensor6D bn = dilation_normalize(blobs, 2);
  CHECK(bn(0, 0, 5, 5, 5, 0) == 1.0f);
  CHECK(bn(0, 0, 14, 13, 12, 0) == 1.0f);
  CHECK(dilate(blobs, 2) == dilate_direct(blobs, 2));
  const Tensor6D oracle = dilate_direct(blobs, 2);
  for (Index i = 0; i < blobs.size(); ++i)
    CHECK(bn.data()[i] == (oracle.data()[i] > 0 ? blobs.data()[i] / oracle.data()[i] : 0.0f));
}

TEST_CASE("patch grid and cropping") {
  CHECK(tile_starts(16, 16, 16) == std::vector<Index>{0});
  CHECK(tile_starts(20, 16, 16) == std::vector<Index>{0, 4});
  CHECK(tile_starts(32, 16, 16) == std::vector<Index>{0, 16});
  CHECK(tile_starts(32, 16, 10) == std::vector<Index>{0, 10, 16});
  CHECK_THROWS_AS(tile_starts(12, 16, 16), ShapeError);

  CHECK(patch_grid({16, 16, 16, 8}, {16, 16, 16, 8}, {16, 16, 16, 8}).size() == 1);
  CHECK(patch_grid({32, 32, 32, 8}, {16, 16, 16, 8}, {16, 16, 16, 8}).size() == 8);
  const auto ov = overlap_grid({32, 32, 32, 16}, {16, 16, 16, 8}, {6, 6, 6, 0});
  CHECK(ov.size() == 3 * 3 * 3 * 2);
  CHECK(ov.front().overlap == Extent4{6, 6, 6, 0});

  const Tensor6D in = seeded_fill<float>({1, 4, 20, 24, 16, 12}, Distribution::normal(0, 1), 3);
  const Tensor6D gt = seeded_fill<float>({1, 1, 20, 24, 16, 12}, Distribution::uniform(0, 1), 4);
  const auto grid = patch_grid(volume_extent(in), {16, 16, 16, 8}, {16, 16, 16, 8});
  CHECK(grid.size() == 2 * 2 * 1 * 2);
  const auto pairs = crop_patches(in, gt, grid);
  for (const auto& p : pairs) {
    CHECK(p.input.shape() == Shape6{1, 4, 16, 16, 16, 8});
    CHECK(p.target.shape() == Shape6{1, 1, 16, 16, 16, 8});
    CHECK(p.target(0, 0, 3, 2, 1, 5) == gt(0, 0, p.spec.origin[0] + 3, p.spec.origin[1] + 2, p.spec.origin[2] + 1,
                                           p.spec.origin[3] + 5));
  }
  std::vector<Tensor6D> ins;
  for (const auto& p : pairs) ins.push_back(p.input);
  CHECK(reassemble(ins, grid, in.shape()) == in);
  CHECK_THROWS_AS(crop_patches(Tensor6D({1, 4, 8, 8, 8, 8}), Tensor6D(), {PatchSpec{}}), ShapeError);
}

TEST_CASE("edge bubbles are removed") {
  const PatchSpec spec{{0, 0, 0, 0}, {16, 16, 16, 8}, {}};
  LabelConfig cfg;
  cfg.edge = EdgePolicy::kWholePatch;
  Tensor6D vol({1, 1, 16, 16, 16, 8});
  const Trajectory edge = straight(0, {1, 8, 8}, {0, 0, 0}, 0, 8);
  const Trajectory centre = straight(1, {8, 8, 8}, {0, 0, 0}, 0, 8);
  const Trajectory crossing = straight(2, {8, 11, 4}, {0, 0, 1.5}, 0, 8);  // z reaches 14.5 at frame 7
  for (Index t = 0; t < 8; ++t) {
    add_blob(vol, t, edge.points[t].position, 1.0);
    add_blob(vol, t, centre.points[t].position, 1.0);
    add_blob(vol, t, crossing.points[t].position, 1.0);
  }
  const std::vector<Trajectory> all{edge, centre, crossing};
  const Tensor6D fp = render_footprints(vol, all, cfg.diameter);
  const Tensor6D out = remove_edge_bubbles(crop(fp, spec.origin, spec.extent), all, spec, cfg);
  for (Index t = 0; t < 8; ++t) {
    CHECK(out(0, 0, 1, 8, 8, t) == 0.0f);
    CHECK(out(0, 0, 8, 8, 8, t) == fp(0, 0, 8, 8, 8, t));
    CHECK(out(0, 0, 8, 8, 8, t) > 0.5f);
    // the crossing bubble is gone in every frame, including the early ones
    const auto& p = crossing.points[t].position;
    CHECK(out(0, 0, 8, 11, std::lround(p[2]), t) == 0.0f);
  }
  const auto kept = retained_points(all, spec, cfg);
  CHECK(kept.size() == 8);
  for (const auto& k : kept) CHECK(k.trajectory == 1);

  // per-frame policy: the crossing bubble keeps its label while clear of the face
  cfg.edge = EdgePolicy::kPerFrame;
  const Tensor6D pf = remove_edge_bubbles(crop(fp, spec.origin, spec.extent), all, spec, cfg);
  for (Index t = 0; t < 8; ++t) {
    const auto& p = crossing.points[t].position;
    const bool near = std::lround(p[2]) > 13;
    CHECK((pf(0, 0, 8, 11, std::lround(p[2]), t) == 0.0f) == near);
    CHECK(pf(0, 0, 1, 8, 8, t) == 0.0f);
  }
  CHECK(retained_points(all, spec, cfg).size() == 8 + 7);  // only frame 7 (z = 14.5) is lost
}

TEST_CASE("augmentation") {
  const Tensor6D v = seeded_fill<float>({1, 2, 6, 6, 6, 3}, Distribution::normal(0, 1), 9);
  CHECK(apply_augment(v, AugmentDraw{}) == v);
  AugmentDraw fx;
  fx.flip_x = true;
  CHECK(!(apply_augment(v, fx) == v));
  CHECK(apply_augment(apply_augment(v, fx), fx) == v);
  AugmentDraw swap_xz;
  swap_xz.permutation = {2, 1, 0};
  CHECK(apply_augment(v, swap_xz)(0, 1, 1, 2, 3, 2) == v(0, 1, 3, 2, 1, 2));
  CHECK_THROWS_AS(apply_augment(Tensor6D({1, 1, 4, 4, 6, 2}), fx), ShapeError);

  // value multiset and bubble count survive every draw; dilation commutes
  Tensor6D blobs({1, 1, 16, 16, 16, 2});
  add_blob(blobs, 0, {3, 5, 9}, 1.0);
  add_blob(blobs, 0, {11, 12, 4}, 2.0);
  add_blob(blobs, 1, {8, 3, 12}, 1.5);
  const auto count = [](const Tensor6D& x) {
    std::size_t n = 0;
    for (const auto& f : detect_per_frame(x, {})) n += f.size();
    return n;
  };
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const AugmentDraw d = AugmentDraw::random(seed);
    const Tensor6D a = apply_augment(blobs, d);
    CHECK(sorted_values(a) == sorted_values(blobs));
    CHECK(count(a) == 3);
    CHECK(dilation_normalize(a, 2) == apply_augment(dilation_normalize(blobs, 2), d));
  }
  Tensor6D in = v, tg = slice_channels(v, 0, 1);
  augment(in, tg, 5);
  CHECK(slice_channels(in, 0, 1) == tg);
}

TEST_CASE("channel standardization") {
  std::vector<Tensor6D> corpus;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Tensor6D v = seeded_fill<float>({1, 4, 4, 4, 4, 8}, Distribution::normal(2.0, 3.0), s);
    corpus.push_back(v);
  }
  const ChannelStats st = compute_channel_stats(corpus);
  std::vector<Tensor6D> out;
  for (const auto& v : corpus) out.push_back(standardize(v, st));
  const ChannelStats after = compute_channel_stats(out);
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(after.mean[c]) < 1e-4);
    CHECK(std::abs(after.stddev[c] - 1.0) < 1e-4);
  }
  CHECK(slice_channels(out[1], 2, 2) == slice_channels(corpus[1], 2, 2));

  std::vector<Tensor6D> flat{Tensor6D({1, 4, 2, 2, 2, 2}, 0.5f)};
  CHECK_THROWS_AS(standardize(flat[0], compute_channel_stats(flat)), NumericError);

  const auto path = std::filesystem::temp_directory_path() / "clutter4d_stats.txt";
  save_channel_stats(path, st);
  const ChannelStats back = load_channel_stats(path);
  CHECK(back.mean == st.mean);
  CHECK(back.stddev == st.stddev);
}

TEST_CASE("labels from simulated bubbles") {
  BubbleSim cfg;
  cfg.count = 2;
  cfg.separation = 14;
  const Shape4 shape{32, 32, 32, 16};
  const auto field = simulate_bubbles(cfg, shape, 7);
  const Tensor6D mag = field.all.magnitude();
  const auto trajs = filter_short(link_trajectories(detect_per_frame(mag, {}), 4));
  REQUIRE(!trajs.empty());
  const LabelConfig lc;
  const Tensor6D fp = render_footprints(mag, trajs, lc.diameter);
  Index centres = 0;
  for (const auto& spec : patch_grid({32, 32, 32, 16}, {16, 16, 16, 8}, {16, 16, 16, 8})) {
    const Tensor6D gt = label_patch(fp, trajs, spec, lc);
    CHECK(gt.array().minCoeff() >= 0.0f);
    CHECK(gt.array().maxCoeff() <= 1.0f);
    // outside the footprint windows of retained points everything is 0
    Tensor6D allowed(gt.shape());
    for (const auto& [id, p] : retained_points(trajs, spec, lc)) {
      const Index t = p.frame - spec.origin[3];
      std::array<Index, 3> c{};
      for (int a = 0; a < 3; ++a) c[a] = std::lround(p.position[a]) - spec.origin[a];
      for (Index x = c[0] - 2; x <= c[0] + 2; ++x)
        for (Index y = c[1] - 2; y <= c[1] + 2; ++y)
          for (Index z = c[2] - 2; z <= c[2] + 2; ++z) allowed(0, 0, x, y, z, t) = 1.0f;
      // the brightest voxel of the footprint is the label center
      float peak = -1;
      std::array<Index, 3> arg{};
      for (Index x = c[0] - 2; x <= c[0] + 2; ++x)
        for (Index y = c[1] - 2; y <= c[1] + 2; ++y)
          for (Index z = c[2] - 2; z <= c[2] + 2; ++z)
            if (mag(0, 0, x + spec.origin[0], y + spec.origin[1], z + spec.origin[2], p.frame) > peak) {
              peak = mag(0, 0, x + spec.origin[0], y + spec.origin[1], z + spec.origin[2], p.frame);
              arg = {x, y, z};
            }
      CHECK(gt(0, 0, arg[0], arg[1], arg[2], t) == 1.0f);
      ++centres;
    }
    for (Index i = 0; i < gt.size(); ++i)
      if (allowed.data()[i] == 0.0f) CHECK(gt.data()[i] == 0.0f);
  }
  MESSAGE(centres << " retained label centers checked");
  CHECK(centres > 0);
}

TEST_CASE("patch manifest") {
  const auto path = std::filesystem::temp_directory_path() / "clutter4d_manifest.csv";
  const std::vector<PatchRecord> recs{{"a_in.t6d", "a_gt.t6d", "vol0", {0, 16, 4, 8}}, {"b.t6d", "c.t6d", "v1", {1, 2, 3, 4}}};
  write_patch_manifest(path, recs);
  const auto back = read_patch_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].origin == recs[0].origin);
  CHECK(back[1].volume == "v1");
}
