#include "clutter4d/inference_eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "clutter4d/io.hpp"

namespace clutter4d {

PatchModel unet_patch_model(const UNet4D<float>& model) {
  return [&model](const Tensor6D& batch) { return forward(model, batch, NormMode::kEval); };
}

template <typename Scalar>
Tensor6<Scalar> blend_weights(const Extent4& extent, double sigma_fraction) {
  if (!(sigma_fraction > 0)) throw ConfigError("blend sigma fraction must be > 0");
  std::array<std::vector<double>, 4> g;
  for (int a = 0; a < 4; ++a) {
    if (extent[a] < 1) throw ShapeError("blend extent must be >= 1");
    const double c = 0.5 * static_cast<double>(extent[a] - 1), s = sigma_fraction * static_cast<double>(extent[a]);
    for (Index i = 0; i < extent[a]; ++i) g[a].push_back(std::exp(-0.5 * (i - c) * (i - c) / (s * s)));
  }
  Tensor6<Scalar> w({1, 1, extent[0], extent[1], extent[2], extent[3]});
  for (Index x = 0; x < extent[0]; ++x)
    for (Index y = 0; y < extent[1]; ++y)
      for (Index z = 0; z < extent[2]; ++z)
        for (Index t = 0; t < extent[3]; ++t) w(0, 0, x, y, z, t) = static_cast<Scalar>(g[0][x] * g[1][y] * g[2][z] * g[3][t]);
  return w;
}

void InferenceConfig::validate() const {
  for (int a = 0; a < 4; ++a)
    if (extent[a] < 1 || overlap[a] < 0 || overlap[a] >= extent[a]) throw ConfigError("overlap must lie in [0, extent)");
  if (batch < 1) throw ConfigError("inference batch must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(sigma_fraction > 0)) throw ConfigError("blend sigma fraction must be > 0");
}

Tensor6D infer_volume(const PatchModel& model, const Tensor6D& channels, const InferenceConfig& cfg) {
  cfg.validate();
  const Extent4 vol = volume_extent(channels);
  const auto grid = overlap_grid(vol, cfg.extent, cfg.overlap);
  const Tensor6<double> w = blend_weights<double>(cfg.extent, cfg.sigma_fraction);
  const Index per_patch = w.size();

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < grid.size(); i += static_cast<std::size_t>(cfg.batch)) {
    std::vector<std::size_t> b;
    for (std::size_t j = i; j < std::min(grid.size(), i + static_cast<std::size_t>(cfg.batch)); ++j) b.push_back(j);
    batches.push_back(std::move(b));
  }

  Tensor6<double> acc({1, 1, vol[0], vol[1], vol[2], vol[3]}), wsum(acc.shape());
  auto accumulate = [&](const Tensor6D& out, const std::vector<std::size_t>& b) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      const auto& s = grid[b[k]];
      for (Index i = 0; i < s.extent[0]; ++i)
        for (Index j = 0; j < s.extent[1]; ++j)
          for (Index l = 0; l < s.extent[2]; ++l) {
            const Index dst = acc.index(0, 0, s.origin[0] + i, s.origin[1] + j, s.origin[2] + l, s.origin[3]);
            const Index src = out.index(static_cast<Index>(k), 0, i, j, l, 0), ws = w.index(0, 0, i, j, l, 0);
            for (Index t = 0; t < s.extent[3]; ++t) {
              acc.data()[dst + t] += w.data()[ws + t] * out.data()[src + t];
              wsum.data()[dst + t] += w.data()[ws + t];
            }
          }
    }
  };
  auto run = [&](const std::vector<std::size_t>& b) {
    std::vector<Tensor6D> items;
    items.reserve(b.size());
    for (std::size_t j : b) items.push_back(crop(channels, grid[j].origin, grid[j].extent));
    std::vector<const Tensor6D*> ptrs;
    for (const auto& it : items) ptrs.push_back(&it);
    Tensor6D out = model(stack_batch<float>(ptrs));
    if (out.extent(kBatch) != static_cast<Index>(b.size()) || out.extent(kChannel) != 1 ||
        out.size() != static_cast<Index>(b.size()) * per_patch)
      throw ShapeError("patch model must return (B, 1) outputs of the patch extent");
    return out;
  };

  // Chunks of `threads` batches run concurrently; accumulation stays in grid order.
  const std::size_t step = static_cast<std::size_t>(cfg.threads);
  for (std::size_t first = 0; first < batches.size(); first += step) {
    const std::size_t n = std::min(step, batches.size() - first);
    std::vector<Tensor6D> outs(n);
    if (n == 1) {
      outs[0] = run(batches[first]);
    } else {
      std::vector<std::exception_ptr> errors(n);
      std::vector<std::thread> pool;
      for (std::size_t k = 0; k < n; ++k)
        pool.emplace_back([&, k] {
          try {
            outs[k] = run(batches[first + k]);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (std::size_t k = 0; k < n; ++k) accumulate(outs[k], batches[first + k]);
  }
  Tensor6D result(acc.shape());
  result.array() = (acc.array() / wsum.array()).cast<float>();
  return result;
}

void EvalConfig::validate() const {
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("detection threshold must lie in (0, 1)");
  if (border < 0) throw ConfigError("border must be >= 0");
  if (!(match_radius > 0)) throw ConfigError("match radius must be > 0");
}

bool inside_border(const Point3& p, const Extent3& volume, Index border) {
  for (int a = 0; a < 3; ++a)
    if (p[a] < static_cast<double>(border) || p[a] > static_cast<double>(volume[a] - 1 - border)) return false;
  return true;
}

FramePoints detect_model_output(const Tensor6D& output, const EvalConfig& cfg) {
  cfg.validate();
  DetectionParams p;
  p.diameter = cfg.diameter;
  p.separation = cfg.separation;
  p.threshold = cfg.threshold;
  p.minmass = std::numeric_limits<double>::min();
  const Extent3 vol{output.extent(kX), output.extent(kY), output.extent(kZ)};
  FramePoints out;
  for (const auto& frame : detect_per_frame(output, p)) {
    std::vector<Point3> pts;
    for (const auto& d : frame)
      if (inside_border(d.position, vol, cfg.border)) pts.push_back(d.position);
    out.push_back(std::move(pts));
  }
  return out;
}

FramePoints truth_points(const std::vector<TrackPoint>& tracks, const Extent4& volume, Index border) {
  FramePoints out(static_cast<std::size_t>(volume[3]));
  const Extent3 vol{volume[0], volume[1], volume[2]};
  for (const auto& t : tracks)
    if (t.frame >= 0 && t.frame < volume[3] && inside_border(t.position, vol, border))
      out[static_cast<std::size_t>(t.frame)].push_back(t.position);
  return out;
}

void DetectionReport::finalize() {
  precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  f1 = precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

DetectionReport& DetectionReport::operator+=(const DetectionReport& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  finalize();
  return *this;
}

DetectionReport score_detections(const FramePoints& detections, const FramePoints& truths, double match_radius) {
  if (!(match_radius > 0)) throw ConfigError("match radius must be > 0");
  DetectionReport r;
  r.match_radius = match_radius;
  const std::size_t frames = std::max(detections.size(), truths.size());
  static const std::vector<Point3> none;
  for (std::size_t f = 0; f < frames; ++f) {
    const auto& d = f < detections.size() ? detections[f] : none;
    const auto& g = f < truths.size() ? truths[f] : none;
    struct Pair {
      double dist;
      Point3 a, b;
      std::size_t i, j;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < g.size(); ++j) {
        const double dd = std::hypot(d[i][0] - g[j][0], d[i][1] - g[j][1], d[i][2] - g[j][2]);
        if (dd <= match_radius) pairs.push_back({dd, d[i], g[j], i, j});
      }
    // ties resolved by coordinates so the input order never matters
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
      if (x.dist != y.dist) return x.dist < y.dist;
      if (x.a != y.a) return x.a < y.a;
      return x.b < y.b;
    });
    std::vector<char> dused(d.size(), 0), gused(g.size(), 0);
    Index matched = 0;
    for (const auto& p : pairs)
      if (!dused[p.i] && !gused[p.j]) {
        dused[p.i] = gused[p.j] = 1;
        ++matched;
      }
    r.tp += matched;
    r.fp += static_cast<Index>(d.size()) - matched;
    r.fn += static_cast<Index>(g.size()) - matched;
  }
  r.finalize();
  return r;
}

std::vector<DetectionReport> lambda_sweep(std::span<const double> lambdas, std::span<const std::uint64_t> seeds,
                                          const SweepEvaluator& evaluate) {
  if (seeds.empty()) throw ConfigError("lambda sweep needs at least one seed");
  std::vector<DetectionReport> out;
  for (double lambda : lambdas) {
    if (!(lambda > 0)) throw ConfigError("sweep lambdas must be > 0");
    DetectionReport total;
    bool first = true;
    for (std::uint64_t seed : seeds) {
      const DetectionReport r = evaluate(lambda, seed);
      if (first) {
        total = r;
        first = false;
      } else {
        if (r.threshold != total.threshold) throw ConfigError("threshold must stay fixed across a sweep");
        total += r;
      }
    }
    total.lambda = lambda;
    total.seed_count = static_cast<Index>(seeds.size());
    total.finalize();
    out.push_back(total);
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<DetectionReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "lambda,tp,fp,fn,precision,recall,f1,threshold,seed_count\n";
  for (const auto& r : reports)
    out << format_double(r.lambda) << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << format_double(r.precision)
        << ',' << format_double(r.recall) << ',' << format_double(r.f1) << ',' << format_double(r.threshold) << ','
        << r.seed_count << '\n';
}

std::vector<DetectionReport> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("no such file: " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<DetectionReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    DetectionReport r;
    if (!(ss >> r.lambda >> r.tp >> r.fp >> r.fn >> r.precision >> r.recall >> r.f1 >> r.threshold >> r.seed_count))
      throw FormatError(path.string() + ": malformed sweep row");
    out.push_back(r);
  }
  return out;
}

double calibrate_threshold(std::span<const CalibrationSample> samples, std::span<const double> candidates,
                           const EvalConfig& cfg) {
  if (candidates.empty()) throw ConfigError("calibration needs at least one threshold");
  double best = candidates.front(), best_f1 = -1;
  for (double th : candidates) {
    EvalConfig c = cfg;
    c.threshold = th;
    DetectionReport total;
    total.tp = total.fp = total.fn = 0;
    for (const auto& s : samples) total += score_detections(detect_model_output(s.output, c), s.truths, c.match_radius);
    total.finalize();
    if (total.f1 > best_f1) {
      best_f1 = total.f1;
      best = th;
    }
  }
  return best;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("spearman needs two equal series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const Eigen::Map<const Eigen::VectorXd> a(rx.data(), static_cast<Index>(rx.size())),
      b(ry.data(), static_cast<Index>(ry.size()));
  const Eigen::VectorXd da = a.array() - a.mean(), db = b.array() - b.mean();
  const double den = da.norm() * db.norm();
  if (den == 0) return 0.0;
  return da.dot(db) / den;
}

Eigen::MatrixXd max_intensity_projection(const Tensor6D& v) {
  volume_extent(v);
  Eigen::MatrixXd img = Eigen::MatrixXd::Constant(v.extent(kX), v.extent(kY), -std::numeric_limits<double>::infinity());
  for (Index c = 0; c < v.extent(kChannel); ++c)
    for (Index x = 0; x < v.extent(kX); ++x)
      for (Index y = 0; y < v.extent(kY); ++y)
        for (Index z = 0; z < v.extent(kZ); ++z)
          for (Index t = 0; t < v.extent(kTime); ++t) img(x, y) = std::max<double>(img(x, y), v(0, c, x, y, z, t));
  return img;
}

void write_pgm16(const std::filesystem::path& path, const Eigen::MatrixXd& image, double lo, double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  // rows are image y, columns image x
  out << "P5\n" << image.rows() << ' ' << image.cols() << "\n65535\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (Index y = 0; y < image.cols(); ++y)
    for (Index x = 0; x < image.rows(); ++x) {
      const double u = std::clamp((image(x, y) - lo) / span, 0.0, 1.0);
      const auto s = static_cast<std::uint16_t>(std::lround(u * 65535.0));
      const char be[2] = {static_cast<char>(s >> 8), static_cast<char>(s & 0xff)};
      out.write(be, 2);
    }
}

void write_pgm16(const std::filesystem::path& path, const Eigen::MatrixXd& image) {
  write_pgm16(path, image, image.minCoeff(), image.maxCoeff());
}

double track_contrast(const Tensor6D& map, const std::vector<TrackPoint>& tracks, double radius) {
  const Extent4 vol = volume_extent(map);
  Eigen::Array<bool, Eigen::Dynamic, 1> on = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(vol[0] * vol[1] * vol[2], false);
  const Index r = static_cast<Index>(std::ceil(radius));
  for (const auto& p : tracks) {
    const Index cx = std::lround(p.position[0]), cy = std::lround(p.position[1]), cz = std::lround(p.position[2]);
    for (Index x = std::max<Index>(0, cx - r); x <= std::min(vol[0] - 1, cx + r); ++x)
      for (Index y = std::max<Index>(0, cy - r); y <= std::min(vol[1] - 1, cy + r); ++y)
        for (Index z = std::max<Index>(0, cz - r); z <= std::min(vol[2] - 1, cz + r); ++z)
          if (std::hypot(x - p.position[0], y - p.position[1], z - p.position[2]) <= radius)
            on[(x * vol[1] + y) * vol[2] + z] = true;
  }
  double s_on = 0, s_off = 0, n_on = 0, n_off = 0;
  for (Index x = 0; x < vol[0]; ++x)
    for (Index y = 0; y < vol[1]; ++y)
      for (Index z = 0; z < vol[2]; ++z) {
        double v = 0;
        for (Index t = 0; t < vol[3]; ++t) v += map(0, 0, x, y, z, t) / static_cast<double>(vol[3]);
        if (on[(x * vol[1] + y) * vol[2] + z]) {
          s_on += v;
          ++n_on;
        } else {
          s_off += v;
          ++n_off;
        }
      }
  if (n_on == 0 || n_off == 0) throw ConfigError("contrast needs both on-track and off-track voxels");
  const double off = s_off / n_off;
  if (!(off > 0)) throw NumericError("off-track mean is not positive; contrast undefined");
  return (s_on / n_on) / off;
}

template Tensor6<float> blend_weights(const Extent4&, double);
template Tensor6<double> blend_weights(const Extent4&, double);

}  // namespace clutter4d
