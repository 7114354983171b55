#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "clutter4d/clutter_filters.hpp"
#include "clutter4d/synth_ceus.hpp"

using namespace clutter4d;

namespace {

Bubble make_bubble(Point3 origin, Point3 velocity, Index birth, Index death) {
  Bubble b;
  b.origin = origin;
  b.velocity = velocity;
  b.birth = birth;
  b.death = death;
  return b;
}

std::array<Index, 3> argmax_frame(const ComplexVolumeF& v, Index t) {
  std::array<Index, 3> best{};
  float peak = -1;
  for (Index x = 0; x < v.extent(0); ++x)
    for (Index y = 0; y < v.extent(1); ++y)
      for (Index z = 0; z < v.extent(2); ++z)
        if (std::abs(v(x, y, z, t)) > peak) {
          peak = std::abs(v(x, y, z, t));
          best = {x, y, z};
        }
  return best;
}

}  // namespace

TEST_CASE("bubble rendering") {
  SUBCASE("no bubbles") {
    BubbleSim cfg;
    cfg.count = 0;
    const auto f = simulate_bubbles(cfg, {8, 8, 8, 4}, 1);
    CHECK((f.all.array() == std::complex<float>(0, 0)).all());
    CHECK(f.tracks.empty());
  }
  SUBCASE("static bubble") {
    const auto f = render_bubbles({make_bubble({5, 6, 7}, {0, 0, 0}, 0, 6)}, {12, 12, 12, 6}, {1.2, 1.2, 1.2});
    for (Index t = 0; t < 6; ++t) {
      CHECK(argmax_frame(f.all, t) == std::array<Index, 3>{5, 6, 7});
      CHECK(std::abs(f.all(5, 6, 7, t)) == doctest::Approx(1.0));
      CHECK(f.all(4, 6, 7, t) == f.all(4, 6, 7, 0));
    }
    CHECK(f.tracks.size() == 6);
  }
  SUBCASE("moving bubble is localized per frame") {
    const double s = 2.0 / std::sqrt(3.0);
    const auto f = render_bubbles({make_bubble({3.3, 4.1, 3.7}, {s, s, s}, 0, 8)}, {24, 24, 24, 8}, {1.2, 1.2, 1.2});
    REQUIRE(f.tracks.size() == 8);
    for (Index t = 0; t < 8; ++t) {
      const auto& p = f.tracks[t];
      CHECK(p.frame == t);
      if (t > 0) {
        const auto& q = f.tracks[t - 1];
        CHECK(std::hypot(p.position[0] - q.position[0], p.position[1] - q.position[1],
                         p.position[2] - q.position[2]) == doctest::Approx(2.0));
      }
      const auto peak = argmax_frame(f.all, t);
      for (int a = 0; a < 3; ++a) CHECK(std::abs(peak[a] - p.position[a]) <= 0.5 + 1e-9);
    }
  }
}

TEST_CASE("bubble simulation statistics") {
  BubbleSim cfg;
  cfg.count = 6;
  const auto f = simulate_bubbles(cfg, {32, 32, 32, 64}, 3);
  const auto g = simulate_bubbles(cfg, {32, 32, 32, 64}, 3);
  CHECK(f.all == g.all);
  REQUIRE(f.bubbles.size() > 10);
  double mean_speed = 0;
  for (const auto& b : f.bubbles) {
    const double v = std::hypot(b.velocity[0], b.velocity[1], b.velocity[2]);
    CHECK(v >= 1.0);
    CHECK(v <= 3.0);
    mean_speed += v / f.bubbles.size();
    // separation from every other bubble alive at its birth
    for (const auto& o : f.bubbles) {
      if (o.id == b.id || b.birth < o.birth || b.birth >= o.death) continue;
      const Point3 p = o.position(b.birth);
      CHECK(std::hypot(p[0] - b.origin[0], p[1] - b.origin[1], p[2] - b.origin[2]) >= 7.0);
    }
  }
  CHECK(mean_speed > 1.6);
  CHECK(mean_speed < 2.4);

  BubbleSim crowded;
  crowded.count = 200;
  CHECK_THROWS_AS(simulate_bubbles(crowded, {8, 8, 8, 4}, 1), ConfigError);
}

TEST_CASE("clutter simulation") {
  const Shape4 shape{16, 16, 16, 48};
  const auto c = simulate_clutter(ClutterSim{}, shape, 5);
  CHECK(rms(c) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(c == simulate_clutter(ClutterSim{}, shape, 5));
  const auto hp = highpass_rolling_mean(c, 11);
  const double passed = rms(hp) * rms(hp);
  MESSAGE("clutter energy passing the high-pass: " << passed);
  CHECK(passed < 0.1);
}

TEST_CASE("mixing is linear") {
  ComplexVolumeF a({4, 4, 4, 6}), b({4, 4, 4, 6}), c({4, 4, 4, 6}), zero({4, 4, 4, 6});
  for (Index i = 0; i < a.size(); ++i) {
    a.array()[i] = {0.1f * (i % 7), -0.2f};
    b.array()[i] = {1.0f, 0.03f * (i % 5)};
    c.array()[i] = {-0.5f, 0.25f * (i % 3)};
  }
  CHECK(mix_composite(a, b, 0.0) == b);
  ComplexVolumeF scaled(a.shape());
  scaled.array() = 2.5f * a.array();
  CHECK(mix_composite(a, zero, 2.5) == scaled);
  ComplexVolumeF ac(a.shape());
  ac.array() = a.array() + c.array();
  const auto lhs = mix_composite(a, b, 0.75), rhs = mix_composite(c, zero, 0.75), both = mix_composite(ac, b, 0.75);
  CHECK(((lhs.array() + rhs.array()) - both.array()).abs().maxCoeff() < 1e-6f);
  CHECK_THROWS_AS(mix_composite(a, ComplexVolumeF({4, 4, 4, 5}), 1.0), ShapeError);
}

TEST_CASE("network channels") {
  ComplexVolumeF v({3, 3, 3, 5});
  for (Index x = 0; x < 3; ++x)
    for (Index y = 0; y < 3; ++y)
      for (Index z = 0; z < 3; ++z)
        for (Index t = 0; t < 5; ++t) v(x, y, z, t) = std::polar(1.0f + x, 0.3f * y + 0.1f * z);
  v(1, 1, 1, 2) = 0;
  for (Index t = 0; t < 5; ++t) v(2, 2, 2, t) = std::polar(2.0f, static_cast<float>(t * std::numbers::pi / 2));

  const Tensor6D ch = make_channels(v, 1.0);
  CHECK(ch.shape() == Shape6{1, 4, 3, 3, 3, 5});
  for (Index x = 0; x < 3; ++x)
    for (Index y = 0; y < 3; ++y)
      for (Index z = 0; z < 3; ++z)
        for (Index t = 0; t < 5; ++t) {
          const float c = ch(0, 2, x, y, z, t), s = ch(0, 3, x, y, z, t);
          CHECK(c * c + s * s == doctest::Approx(1.0).epsilon(1e-6));
          CHECK(ch(0, 0, x, y, z, t) >= 0.0f);
          CHECK(ch(0, 0, x, y, z, t) < 1.0f);
          CHECK(ch(0, 1, x, y, z, t) == doctest::Approx(std::abs(v(x, y, z, t))));
          if (x != 2 || y != 2 || z != 2) {
            CHECK(c == doctest::Approx(1.0));
            CHECK(s == doctest::Approx(0.0));
          }
        }
  for (Index t = 1; t < 5; ++t) {
    CHECK(ch(0, 2, 2, 2, 2, t) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(ch(0, 3, 2, 2, 2, t) == doctest::Approx(1.0));
  }
  CHECK(ch(0, 2, 2, 2, 2, 0) == 1.0f);
  // contrast channel grows with the signal
  CHECK(ch(0, 0, 2, 0, 0, 0) > ch(0, 0, 0, 0, 0, 0));
}

TEST_CASE("strong bubbles dominate their neighborhood") {
  BubbleSim cfg;
  cfg.count = 6;
  const Shape4 shape{32, 32, 32, 32};
  const auto f = simulate_bubbles(cfg, shape, 11);
  const auto clutter = simulate_clutter(ClutterSim{}, shape, 12);
  const auto mix = mix_composite(f.visible, clutter, 10.0 * rms(clutter));
  Index good = 0, total = 0;
  for (const auto& p : f.tracks) {
    std::array<Index, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = static_cast<Index>(std::lround(p.position[a]));
    // Where does the composite peak within the 5-voxel neighborhood? It must
    // sit on the bubble: within one voxel of the true center on every axis.
    float best = -1;
    std::array<Index, 3> arg{};
    for (Index x = std::max<Index>(0, c[0] - 2); x <= std::min<Index>(shape[0] - 1, c[0] + 2); ++x)
      for (Index y = std::max<Index>(0, c[1] - 2); y <= std::min<Index>(shape[1] - 1, c[1] + 2); ++y)
        for (Index z = std::max<Index>(0, c[2] - 2); z <= std::min<Index>(shape[2] - 1, c[2] + 2); ++z)
          if (std::abs(mix(x, y, z, p.frame)) > best) {
            best = std::abs(mix(x, y, z, p.frame));
            arg = {x, y, z};
          }
    bool on_bubble = true;
    for (int a = 0; a < 3; ++a) on_bubble = on_bubble && std::abs(arg[a] - p.position[a]) <= 1.0;
    good += on_bubble;
    ++total;
  }
  MESSAGE(good << " of " << total << " track points keep their peak");
  CHECK(good >= 0.95 * total);
}

TEST_CASE("tracks.csv round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "clutter4d_tracks_test";
  std::filesystem::create_directories(dir);
  BubbleSim cfg;
  const auto f = simulate_bubbles(cfg, {16, 16, 16, 10}, 2);
  write_tracks_csv(dir / "tracks.csv", f.tracks);
  const auto back = read_tracks_csv(dir / "tracks.csv");
  REQUIRE(back.size() == f.tracks.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].bubble_id == f.tracks[i].bubble_id);
    CHECK(back[i].position == f.tracks[i].position);
  }
}
