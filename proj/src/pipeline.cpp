#include "clutter4d/pipeline.hpp"

#include "clutter4d/io.hpp"

namespace clutter4d {

std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void SynthConfig::validate() const {
  for (Index e : shape)
    if (e < 1) throw ConfigError("synthetic shape extents must be >= 1");
  if (shape[3] < 2) throw ConfigError("synthetic volumes need at least 2 frames");
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (highpass_window < 1 || highpass_window % 2 == 0 || highpass_window > shape[3])
    throw ConfigError("high-pass window must be odd and no longer than the volume");
  if (!(kappa > 0)) throw ConfigError("kappa must be > 0");
  bubbles.validate();
  clutter.validate();
}

SynthVolume make_synth(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SynthVolume v;
  v.field = simulate_bubbles(cfg.bubbles, cfg.shape, split_seed(seed, 1));
  v.clutter = simulate_clutter(cfg.clutter, cfg.shape, split_seed(seed, 2));
  v.composite = mix_composite(v.field.visible, v.clutter, cfg.lambda);
  v.filtered = highpass_rolling_mean(v.composite, cfg.highpass_window);
  v.noise_rms = rms(highpass_rolling_mean(v.clutter, cfg.highpass_window));
  v.channels = make_channels(v.filtered, v.noise_rms, cfg.kappa);
  return v;
}

void write_synth(const std::filesystem::path& dir, const SynthVolume& v) {
  ensure_directory(dir);
  write_t6d(dir / "channels.t6d", v.channels);
  write_complex(dir / "composite", v.composite);
  write_complex(dir / "bubbles", v.field.all);
  write_complex(dir / "clutter", v.clutter);
  write_tracks_csv(dir / "tracks.csv", v.field.tracks);
}

LabeledVolume label_volume(const Tensor6D& channels, const Tensor6D& bubble_magnitude, const LabelingConfig& cfg) {
  LabeledVolume out;
  DetectionParams det = cfg.detection;
  if (!cfg.minmass_candidates.empty()) det.minmass = select_minmass_by_elbow(bubble_magnitude, det, cfg.minmass_candidates);
  out.minmass = det.minmass;
  out.trajectories =
      filter_short(link_trajectories(detect_per_frame(bubble_magnitude, det), cfg.max_disp), cfg.min_length);
  const Tensor6D fp = render_footprints(bubble_magnitude, out.trajectories, cfg.label.diameter);
  out.patches = crop_patches(channels, Tensor6D(), patch_grid(volume_extent(channels), cfg.patch, cfg.stride));
  for (auto& p : out.patches) p.target = label_patch(fp, out.trajectories, p.spec, cfg.label);
  return out;
}

Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  if (cfg.volumes < 1 || cfg.lambdas.empty()) throw ConfigError("corpus needs volumes and lambdas");
  Corpus c;
  std::vector<Tensor6D> raw;
  for (Index i = 0; i < cfg.volumes; ++i) {
    SynthConfig s = cfg.synth;
    s.lambda = cfg.lambdas[static_cast<std::size_t>(i) % cfg.lambdas.size()];
    const SynthVolume v = make_synth(s, split_seed(seed, static_cast<std::uint64_t>(i)));
    LabeledVolume lv = label_volume(v.channels, v.field.all.magnitude(), cfg.labeling);
    for (auto& p : lv.patches) {
      c.records.push_back({"", "", "volume" + std::to_string(i), p.spec.origin});
      raw.push_back(std::move(p.input));
      c.data.targets.push_back(std::move(p.target));
    }
  }
  c.stats = compute_channel_stats(raw);
  for (auto& r : raw) c.data.inputs.push_back(standardize(r, c.stats));
  return c;
}

PairTransform<float> augmentation_transform() {
  return [](Tensor6D& input, Tensor6D& target, std::uint64_t seed) { augment(input, target, seed); };
}

SyntheticEvaluation evaluate_synthetic(const PatchModel& model, const ChannelStats& stats, const EvalSetup& setup,
                                       double lambda, std::uint64_t seed) {
  SynthConfig s = setup.synth;
  s.lambda = lambda;
  SyntheticEvaluation ev;
  ev.volume = make_synth(s, seed);
  ev.output = infer_volume(model, standardize(ev.volume.channels, stats), setup.inference);
  const FramePoints truths = truth_points(ev.volume.field.tracks, volume_extent(ev.output), setup.eval.border);
  ev.report = score_detections(detect_model_output(ev.output, setup.eval), truths, setup.eval.match_radius);
  ev.report.lambda = lambda;
  ev.report.threshold = setup.eval.threshold;
  ev.report.border = setup.eval.border;
  return ev;
}

AccumulationMaps accumulation_maps(const SynthVolume& v, const Tensor6D& model_output, const SvdFilterOptions& svd,
                                   Index block) {
  AccumulationMaps m;
  m.highpass = temporal_accumulate_std(v.filtered.magnitude(), block);
  m.svd = temporal_accumulate_std(svd_clutter_filter(v.composite, svd).magnitude(), block);
  m.model = temporal_accumulate_std(model_output, block);
  return m;
}

}  // namespace clutter4d
