#include "clutter4d/synth_ceus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "clutter4d/io.hpp"

namespace clutter4d {

Point3 Bubble::position(Index frame) const {
  const double age = static_cast<double>(frame - birth);
  return {origin[0] + velocity[0] * age, origin[1] + velocity[1] * age, origin[2] + velocity[2] * age};
}

void BubbleSim::validate() const {
  if (count < 0) throw ConfigError("bubble count must be >= 0");
  if (min_speed < 0 || max_speed < min_speed) throw ConfigError("bubble speed range is invalid");
  if (min_amplitude <= 0 || max_amplitude < min_amplitude) throw ConfigError("bubble amplitude range is invalid");
  if (min_lifetime < 1 || max_lifetime < min_lifetime) throw ConfigError("bubble lifetime range is invalid");
  for (double s : psf_sigma)
    if (!(s > 0)) throw ConfigError("PSF sigma must be > 0");
  if (separation < 0) throw ConfigError("separation must be >= 0");
  if (!(hidden_fraction >= 0 && hidden_fraction < 1)) throw ConfigError("hidden fraction must lie in [0, 1)");
}

void ClutterSim::validate() const {
  if (modes < 0) throw ConfigError("clutter modes must be >= 0");
  if (max_spatial_frequency < 0 || max_drift < 0 || motion < 0) throw ConfigError("clutter rates must be >= 0");
  if (!(noise_fraction >= 0 && noise_fraction <= 1)) throw ConfigError("noise fraction must lie in [0, 1]");
  if (modes == 0 && noise_fraction < 1) throw ConfigError("clutter without modes needs noise fraction 1");
}

namespace {

bool inside(const Point3& p, const Shape4& shape) {
  for (int a = 0; a < 3; ++a)
    if (p[a] < -0.5 || p[a] >= static_cast<double>(shape[a]) - 0.5) return false;
  return true;
}

void check_shape(const Shape4& shape) {
  for (Index e : shape)
    if (e < 1) throw ShapeError("volume extents must be >= 1");
}

}  // namespace

BubbleField render_bubbles(const std::vector<Bubble>& bubbles, const Shape4& shape, const Point3& psf_sigma) {
  check_shape(shape);
  BubbleField field;
  field.all = ComplexVolumeF(shape);
  field.visible = ComplexVolumeF(shape);
  field.bubbles = bubbles;
  for (const Bubble& b : bubbles) {
    for (Index t = std::max<Index>(b.birth, 0); t < std::min(b.death, shape[3]); ++t) {
      const Point3 c = b.position(t);
      if (inside(c, shape))
        field.tracks.push_back({b.id, t, c, b.amplitude, b.hidden});
      std::array<Index, 3> lo{}, hi{};
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<Index>(0, static_cast<Index>(std::floor(c[a] - 4 * psf_sigma[a])));
        hi[a] = std::min<Index>(shape[a] - 1, static_cast<Index>(std::ceil(c[a] + 4 * psf_sigma[a])));
      }
      const double age = static_cast<double>(t - b.birth);
      const std::complex<double> carrier = std::polar(b.amplitude, b.phase + b.phase_rate * age);
      for (Index x = lo[0]; x <= hi[0]; ++x)
        for (Index y = lo[1]; y <= hi[1]; ++y)
          for (Index z = lo[2]; z <= hi[2]; ++z) {
            const double dx = (x - c[0]) / psf_sigma[0], dy = (y - c[1]) / psf_sigma[1];
            const double dz = (z - c[2]) / psf_sigma[2];
            const std::complex<float> value(carrier * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz)));
            field.all(x, y, z, t) += value;
            if (!b.hidden) field.visible(x, y, z, t) += value;
          }
    }
  }
  std::sort(field.tracks.begin(), field.tracks.end(), [](const TrackPoint& a, const TrackPoint& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.bubble_id < b.bubble_id;
  });
  return field;
}

BubbleField simulate_bubbles(const BubbleSim& cfg, const Shape4& shape, std::uint64_t seed) {
  cfg.validate();
  check_shape(shape);
  if (shape[3] < 2) throw ShapeError("bubble simulation needs at least 2 frames");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Bubble> bubbles;
  std::vector<std::size_t> slots;  // index into bubbles of each slot's current bubble
  int next_id = 0;

  auto spawn = [&](Index frame) {
    Bubble b;
    b.id = next_id++;
    b.birth = frame;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      for (int a = 0; a < 3; ++a) b.origin[a] = unit(rng) * static_cast<double>(shape[a] - 1);
      placed = true;
      for (std::size_t s : slots) {
        const Bubble& o = bubbles[s];
        if (frame < o.birth || frame >= o.death) continue;
        const Point3 p = o.position(frame);
        const double d = std::hypot(p[0] - b.origin[0], p[1] - b.origin[1], p[2] - b.origin[2]);
        if (d < cfg.separation) {
          placed = false;
          break;
        }
      }
    }
    if (!placed)
      throw ConfigError("cannot place " + std::to_string(cfg.count) + " bubbles with separation " +
                        std::to_string(cfg.separation) + " in this volume");
    const double speed = cfg.min_speed + (cfg.max_speed - cfg.min_speed) * unit(rng);
    Point3 dir{gauss(rng), gauss(rng), gauss(rng)};
    const double norm = std::max(1e-12, std::hypot(dir[0], dir[1], dir[2]));
    for (int a = 0; a < 3; ++a) b.velocity[a] = speed * dir[a] / norm;
    b.amplitude = cfg.min_amplitude + (cfg.max_amplitude - cfg.min_amplitude) * unit(rng);
    b.phase = 2 * std::numbers::pi * unit(rng);
    b.phase_rate = cfg.doppler * b.velocity[2];
    const Index lifetime = std::uniform_int_distribution<Index>(cfg.min_lifetime, cfg.max_lifetime)(rng);
    b.hidden = unit(rng) < cfg.hidden_fraction;
    b.death = frame + 1;
    while (b.death < frame + lifetime && b.death < shape[3] && inside(b.position(b.death), shape)) ++b.death;
    bubbles.push_back(b);
    return bubbles.size() - 1;
  };

  for (Index t = 0; t < shape[3]; ++t) {
    if (t == 0) {
      for (Index i = 0; i < cfg.count; ++i) slots.push_back(spawn(0));
      continue;
    }
    for (std::size_t& s : slots)
      if (bubbles[s].death <= t) s = spawn(t);
  }
  return render_bubbles(bubbles, shape, cfg.psf_sigma);
}

ComplexVolumeF simulate_clutter(const ClutterSim& cfg, const Shape4& shape, std::uint64_t seed) {
  cfg.validate();
  check_shape(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Index voxels = shape[0] * shape[1] * shape[2], frames = shape[3];
  const double two_pi = 2 * std::numbers::pi;

  Point3 drift_dir{gauss(rng), gauss(rng), gauss(rng)};
  const double dn = std::max(1e-12, std::hypot(drift_dir[0], drift_dir[1], drift_dir[2]));
  for (double& d : drift_dir) d *= cfg.motion / dn;

  using CMat = Eigen::MatrixXcd;
  CMat spatial(voxels, cfg.modes), temporal(cfg.modes, frames);
  for (Index m = 0; m < cfg.modes; ++m) {
    Point3 k{};
    for (double& c : k) c = two_pi * cfg.max_spatial_frequency * (2 * unit(rng) - 1);
    const std::complex<double> weight(gauss(rng), gauss(rng));
    const double omega = cfg.max_drift * (2 * unit(rng) - 1) + k[0] * drift_dir[0] + k[1] * drift_dir[1] +
                         k[2] * drift_dir[2];
    for (Index x = 0, r = 0; x < shape[0]; ++x)
      for (Index y = 0; y < shape[1]; ++y)
        for (Index z = 0; z < shape[2]; ++z, ++r)
          spatial(r, m) = weight * std::polar(1.0, k[0] * x + k[1] * y + k[2] * z);
    for (Index t = 0; t < frames; ++t) temporal(m, t) = std::polar(1.0, -omega * static_cast<double>(t));
  }
  CMat smooth = spatial * temporal;
  CMat noise(voxels, frames);
  for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = {gauss(rng), gauss(rng)};

  const double n = static_cast<double>(voxels * frames);
  const double smooth_energy = smooth.squaredNorm(), noise_energy = noise.squaredNorm();
  const double smooth_scale = smooth_energy > 0 ? std::sqrt((1 - cfg.noise_fraction) * n / smooth_energy) : 0.0;
  const double noise_scale = noise_energy > 0 ? std::sqrt(cfg.noise_fraction * n / noise_energy) : 0.0;
  const CMat field = smooth_scale * smooth + noise_scale * noise;

  ComplexVolumeF out(shape);
  for (Index r = 0; r < voxels; ++r)
    for (Index t = 0; t < frames; ++t) out.array()[r * frames + t] = std::complex<float>(field(r, t));
  // Exact unit RMS after rounding to float.
  const double scale = 1.0 / rms(out);
  out.array() *= static_cast<float>(scale);
  return out;
}

ComplexVolumeF mix_composite(const ComplexVolumeF& bubbles, const ComplexVolumeF& clutter, double lambda) {
  if (bubbles.shape() != clutter.shape()) throw ShapeError("mix_composite: bubble and clutter shapes differ");
  if (!(lambda >= 0)) throw ConfigError("mixing coefficient must be >= 0");
  ComplexVolumeF out(clutter.shape());
  out.array() = static_cast<float>(lambda) * bubbles.array() + clutter.array();
  return out;
}

double rms(const ComplexVolumeF& v) {
  if (v.size() == 0) return 0.0;
  return std::sqrt(v.array().template cast<std::complex<double>>().abs2().sum() / static_cast<double>(v.size()));
}

Tensor6D make_channels(const ComplexVolumeF& v, double noise_rms, double kappa) {
  if (!(noise_rms > 0) || !(kappa > 0)) throw ConfigError("make_channels: noise RMS and kappa must be > 0");
  const auto& s = v.shape();
  const Index frames = s[3], series = v.voxels_per_frame();
  Tensor6D out({1, 4, s[0], s[1], s[2], frames});
  const Index plane = series * frames;
  const double floor = kappa * noise_rms * noise_rms;
  for (Index r = 0; r < series; ++r)
    for (Index t = 0; t < frames; ++t) {
      const Index i = r * frames + t;
      const std::complex<double> cur(v.array()[i]);
      const double power = std::norm(cur);
      out.data()[i] = static_cast<float>(power / (power + floor));
      out.data()[plane + i] = static_cast<float>(std::sqrt(power));
      float c = 1.0f, sn = 0.0f;
      if (t > 0) {
        const std::complex<double> prev(v.array()[i - 1]);
        const std::complex<double> turn = cur * std::conj(prev);
        if (std::abs(turn) > 0) {
          const double dphi = std::arg(turn);
          c = static_cast<float>(std::cos(dphi));
          sn = static_cast<float>(std::sin(dphi));
        }
      }
      out.data()[2 * plane + i] = c;
      out.data()[3 * plane + i] = sn;
    }
  return out;
}

void write_tracks_csv(const std::filesystem::path& path, const std::vector<TrackPoint>& tracks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bubble_id,frame,x,y,z,amplitude\n";
  for (const auto& p : tracks)
    out << p.bubble_id << ',' << p.frame << ',' << format_double(p.position[0]) << ','
        << format_double(p.position[1]) << ',' << format_double(p.position[2]) << ',' << format_double(p.amplitude)
        << '\n';
}

std::vector<TrackPoint> read_tracks_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("no such file: " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<TrackPoint> tracks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    TrackPoint p;
    if (!(ss >> p.bubble_id >> p.frame >> p.position[0] >> p.position[1] >> p.position[2] >> p.amplitude))
      throw FormatError(path.string() + ": malformed track row: " + line);
    tracks.push_back(p);
  }
  return tracks;
}

}  // namespace clutter4d
