#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "clutter4d/clutter_filters.hpp"
#include "clutter4d/tracking.hpp"

using namespace clutter4d;

namespace {

void add_blob(Tensor6D& img, Index t, Point3 c, double amp, double sigma = 1.2) {
  for (Index x = 0; x < img.extent(kX); ++x)
    for (Index y = 0; y < img.extent(kY); ++y)
      for (Index z = 0; z < img.extent(kZ); ++z) {
        const double r2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
        img(0, 0, x, y, z, t) += static_cast<float>(amp * std::exp(-r2 / (2 * sigma * sigma)));
      }
}

double dist(const Point3& a, const Point3& b) { return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]); }

Detection at(Point3 p, double mass = 10) {
  Detection d;
  d.position = p;
  d.mass = mass;
  return d;
}

// Minimum total cost over every partial one-to-one matching; unmatched rows
// and columns cost `u` each, pairs above `u` are not allowed.
double exhaustive_cost(const Eigen::MatrixXd& c, double u) {
  std::vector<char> used(c.cols(), 0);
  std::function<double(Index)> rec = [&](Index i) -> double {
    if (i == c.rows()) {
      double free_cols = 0;
      for (char b : used) free_cols += !b;
      return free_cols * u;
    }
    double best = u + rec(i + 1);
    for (Index j = 0; j < c.cols(); ++j)
      if (!used[j] && c(i, j) <= u) {
        used[j] = 1;
        best = std::min(best, c(i, j) + rec(i + 1));
        used[j] = 0;
      }
    return best;
  };
  return rec(0);
}

double assignment_cost(const Eigen::MatrixXd& c, const std::vector<Index>& a, double u) {
  double total = 0;
  std::vector<char> used(c.cols(), 0);
  for (Index i = 0; i < c.rows(); ++i) {
    if (a[i] < 0) {
      total += u;
      continue;
    }
    REQUIRE(!used[a[i]]);
    REQUIRE(c(i, a[i]) <= u);
    used[a[i]] = 1;
    total += c(i, a[i]);
  }
  for (char b : used) total += b ? 0 : u;
  return total;
}

}  // namespace

TEST_CASE("frame detection") {
  Tensor6D img({1, 1, 24, 24, 24, 3});
  CHECK(detect_frame(img, 0, {}).empty());

  const Point3 c{10.3, 9.6, 11.2};
  add_blob(img, 1, c, 5.0);
  const auto one = detect_frame(img, 1, {});
  REQUIRE(one.size() == 1);
  CHECK(dist(one[0].position, c) < 0.5);
  CHECK(one[0].peak == Extent3{10, 10, 11});

  add_blob(img, 2, {8, 8, 8}, 2.0);
  add_blob(img, 2, {11, 8, 8}, 3.0);
  const auto merged = detect_frame(img, 2, {});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].position[0] > 9.5);  // the stronger blob survives

  DetectionParams high;
  high.minmass = 1e4;
  CHECK(detect_frame(img, 1, high).empty());
  DetectionParams thr;
  thr.threshold = 6.0;
  CHECK(detect_frame(img, 1, thr).empty());

  DetectionParams bad;
  bad.separation = {3, 7, 7};
  CHECK_THROWS_AS(detect_frame(img, 0, bad), ConfigError);
  bad = {};
  bad.minmass = 0;
  CHECK_THROWS_AS(detect_frame(img, 0, bad), ConfigError);
  img(0, 0, 0, 0, 0, 0) = -1;
  CHECK_THROWS_AS(detect_frame(img, 0, {}), NumericError);

  // a flat plateau yields a single maximum
  Tensor6D flat({1, 1, 9, 9, 9, 1});
  for (Index x = 3; x <= 5; ++x) flat(0, 0, x, 4, 4, 0) = 1.0f;
  CHECK(detect_frame(flat, 0, {}).size() == 1);
}

TEST_CASE("elbow selection") {
  const std::vector<double> cand{1, 10, 100, 1000, 10000};
  CHECK(elbow_index(cand, std::vector<double>{1000, 900, 100, 90, 80}).index == 2);

  const auto linear = elbow_index(cand, std::vector<double>{500, 400, 300, 200, 100});
  CHECK(linear.degenerate);
  CHECK(linear.index == 0);
  CHECK(elbow_index(cand, std::vector<double>{7, 7, 7, 7, 7}).degenerate);

  const auto drop = elbow_index(cand, std::vector<double>{1000, 990, 60, 55, 50});
  CHECK(!drop.degenerate);
  CHECK((drop.index == 1 || drop.index == 2));

  CHECK_THROWS_AS(elbow_index(std::vector<double>{1, 2}, std::vector<double>{3, 4}), ConfigError);
  CHECK_THROWS_AS(elbow_index(std::vector<double>{1, 3, 2}, std::vector<double>{3, 4, 5}), ConfigError);

  // weak speckle everywhere plus a few real blobs: the elbow separates them
  Tensor6D img({1, 1, 32, 32, 32, 4});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0, 0.05f);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng);
  const std::vector<Point3> centers{{6, 6, 6}, {20, 8, 14}, {9, 24, 20}, {24, 24, 8}, {16, 16, 25}};
  for (Index t = 0; t < 4; ++t)
    for (const auto& c : centers) add_blob(img, t, c, 2.0);
  std::vector<double> grid;
  for (double m = 0.05; m < 500; m *= 2) grid.push_back(m);
  DetectionParams p;
  p.minmass = select_minmass_by_elbow(img, p, grid);
  const auto det = detect_per_frame(img, p);
  MESSAGE("elbow minmass " << p.minmass << " leaves " << det[0].size() << " detections per frame");
  for (const auto& f : det) CHECK(f.size() == centers.size());
}

TEST_CASE("optimal assignment matches exhaustive search") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 20);
  for (int trial = 0; trial < 300; ++trial) {
    const Index rows = trial % 4, cols = (trial / 4) % 4;
    Eigen::MatrixXd c(rows, cols);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    const double limit = 12;
    const auto a = optimal_assignment(c, limit);
    CHECK(assignment_cost(c, a, limit) == doctest::Approx(exhaustive_cost(c, limit)));
  }
}

TEST_CASE("trajectory linking") {
  SUBCASE("single mover") {
    std::vector<std::vector<Detection>> frames;
    for (int t = 0; t < 10; ++t) frames.push_back({at({5.0 + t, 5, 5})});
    const auto tr = link_trajectories(frames, 4);
    REQUIRE(tr.size() == 1);
    CHECK(tr[0].length() == 10);
  }
  SUBCASE("parallel movers never swap") {
    std::vector<std::vector<Detection>> frames;
    for (int t = 0; t < 8; ++t) frames.push_back({at({10, 2.0 + 3 * t, 5}), at({20, 2.0 + 3 * t, 5})});
    const auto tr = link_trajectories(frames, 4);
    REQUIRE(tr.size() == 2);
    for (const auto& x : tr) {
      CHECK(x.length() == 8);
      for (const auto& p : x.points) CHECK(p.position[0] == x.points.front().position[0]);
    }
  }
  SUBCASE("a missing frame splits the trajectory") {
    std::vector<std::vector<Detection>> frames;
    for (int t = 0; t < 6; ++t) frames.push_back(t == 3 ? std::vector<Detection>{} : std::vector{at({5.0 + t, 5, 5})});
    const auto tr = link_trajectories(frames, 4);
    REQUIRE(tr.size() == 2);
    CHECK(tr[0].length() == 3);
    CHECK(tr[1].length() == 2);
    CHECK(tr[1].points.front().frame == 4);
  }
  SUBCASE("jumps beyond max_disp are not linked") {
    const auto tr = link_trajectories({{at({0, 0, 0})}, {at({5, 0, 0})}}, 4);
    CHECK(tr.size() == 2);
  }
  SUBCASE("global optimum over greedy choice") {
    // greedy nearest-first would pair a->c (1.0) and leave b unmatched
    const auto tr = link_trajectories({{at({0, 0, 0}), at({3.5, 0, 0})}, {at({1, 0, 0}), at({-2, 0, 0})}}, 3.0);
    CHECK(tr.size() == 2);
  }
}

TEST_CASE("linking is invariant to detection order") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pos(0, 20), step(-2.5, 2.5);
  for (int scene = 0; scene < 10; ++scene) {
    std::vector<Point3> particles(6);
    for (auto& p : particles) p = {pos(rng), pos(rng), pos(rng)};
    std::vector<std::vector<Detection>> frames;
    for (int t = 0; t < 12; ++t) {
      std::vector<Detection> f;
      for (auto& p : particles) {
        for (auto& c : p) c += step(rng);
        f.push_back(at(p));
      }
      frames.push_back(f);
    }
    const auto ref = link_trajectories(frames, 4);
    for (int perm = 0; perm < 5; ++perm) {
      auto shuffled = frames;
      for (auto& f : shuffled) std::shuffle(f.begin(), f.end(), rng);
      const auto got = link_trajectories(shuffled, 4);
      REQUIRE(got.size() == ref.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i].length() == ref[i].length());
        for (Index k = 0; k < got[i].length(); ++k) CHECK(got[i].points[k].position == ref[i].points[k].position);
      }
    }
  }
}

TEST_CASE("short trajectories are removed") {
  CHECK(filter_short({}).empty());
  Trajectory single, pair;
  single.points = {{0, {1, 1, 1}, 1}};
  pair.points = {{0, {1, 1, 1}, 1}, {1, {2, 1, 1}, 1}};
  const auto kept = filter_short({single, pair});
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].length() == 2);
}

TEST_CASE("detect and link recovers strong simulated bubbles") {
  BubbleSim cfg;
  cfg.count = 6;
  const Shape4 shape{32, 32, 32, 40};
  const auto field = simulate_bubbles(cfg, shape, 21);
  const auto clutter = simulate_clutter(ClutterSim{}, shape, 22);
  const auto mix = highpass_rolling_mean(mix_composite(field.visible, clutter, 10.0 * rms(clutter)), 11);
  const Tensor6D image = mix.magnitude();

  std::vector<double> grid;
  for (double m = 0.5; m < 2000; m *= 1.5) grid.push_back(m);
  DetectionParams p;
  p.minmass = select_minmass_by_elbow(image, p, grid);
  const auto tr = filter_short(link_trajectories(detect_per_frame(image, p), 4));

  Index found = 0;
  for (const auto& truth : field.tracks) {
    bool hit = false;
    for (const auto& x : tr)
      for (const auto& q : x.points) hit = hit || (q.frame == truth.frame && dist(q.position, truth.position) <= 1.0);
    found += hit;
  }
  MESSAGE("minmass " << p.minmass << ": " << found << " of " << field.tracks.size() << " track points recovered");
  CHECK(found >= 0.9 * static_cast<double>(field.tracks.size()));
}

TEST_CASE("measured speeds follow the simulated speeds") {
  BubbleSim cfg;
  cfg.count = 5;
  cfg.min_lifetime = 10;
  const Shape4 shape{40, 40, 40, 32};
  const auto field = simulate_bubbles(cfg, shape, 4);
  const Tensor6D image = field.all.magnitude();
  DetectionParams p;
  p.minmass = 1.0;
  const auto tr = filter_short(link_trajectories(detect_per_frame(image, p), 4), 3);
  REQUIRE(!tr.empty());

  double sq = 0;
  Index n = 0;
  for (const auto& x : tr) {
    // identify the bubble by the nearest true track point on the first frame
    const auto& first = x.points.front();
    const TrackPoint* best = nullptr;
    for (const auto& t : field.tracks)
      if (t.frame == first.frame && (!best || dist(t.position, first.position) < dist(best->position, first.position)))
        best = &t;
    REQUIRE(best);
    const Bubble& b = *std::find_if(field.bubbles.begin(), field.bubbles.end(),
                                    [&](const Bubble& c) { return c.id == best->bubble_id; });
    const double truth = std::hypot(b.velocity[0], b.velocity[1], b.velocity[2]);
    const auto& last = x.points.back();
    const double measured = dist(first.position, last.position) / static_cast<double>(last.frame - first.frame);
    sq += (measured - truth) * (measured - truth);
    ++n;
  }
  const double err = std::sqrt(sq / n);
  MESSAGE(n << " trajectories, speed RMS error " << err);
  CHECK(err < 0.25);
}

TEST_CASE("trajectory csv") {
  const auto path = std::filesystem::temp_directory_path() / "clutter4d_traj.csv";
  Trajectory t;
  t.id = 3;
  t.points = {{0, {1, 2, 3}, 4.5}, {1, {1.5, 2, 3}, 4.0}};
  write_trajectories_csv(path, {t});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "traj_id,frame,x,y,z,mass");
  CHECK(row == "3,0,1,2,3,4.5");
}
