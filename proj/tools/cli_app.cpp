#include "cli_app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "clutter4d/io.hpp"
#include "clutter4d/pipeline.hpp"

namespace clutter4d {
namespace {

namespace fs = std::filesystem;

struct Option {
  std::string key;
  std::string fallback;
  std::string help;
};

/// Resolved key-value configuration with typed accessors.
class Resolved {
 public:
  explicit Resolved(KeyValueFile kv) : kv_(std::move(kv)) {}

  const KeyValueFile& file() const { return kv_; }
  std::string str(const std::string& k) const { return kv_.get(k); }
  double num(const std::string& k) const { return kv_.get_double(k); }
  long long integer(const std::string& k) const { return kv_.get_int(k); }
  std::uint64_t seed(const std::string& k) const {
    const long long v = integer(k);
    if (v < 0) throw ConfigError(k + " must be >= 0");
    return static_cast<std::uint64_t>(v);
  }
  bool flag(const std::string& k) const {
    const std::string v = str(k);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(k + " expects true or false, got '" + v + "'");
  }
  std::vector<std::string> list(const std::string& k) const {
    std::vector<std::string> out;
    std::stringstream ss(str(k));
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.push_back(item);
    return out;
  }
  std::vector<double> numbers(const std::string& k) const {
    std::vector<double> out;
    for (const auto& s : list(k)) out.push_back(to_double(k, s));
    return out;
  }
  template <std::size_t N>
  std::array<Index, N> extent(const std::string& k) const {
    const auto v = numbers(k);
    if (v.size() != N) throw ConfigError(k + " expects " + std::to_string(N) + " comma-separated integers");
    std::array<Index, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
      out[i] = static_cast<Index>(v[i]);
      if (static_cast<double>(out[i]) != v[i] || out[i] < 1) throw ConfigError(k + " entries must be positive integers");
    }
    return out;
  }
  fs::path out_dir() const {
    const std::string d = str("out-dir");
    if (d.empty()) throw ConfigError("--out-dir is required");
    return d;
  }

  static double to_double(const std::string& k, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(k + ": '" + s + "' is not a number");
  }

 private:
  KeyValueFile kv_;
};

using Runner = std::function<void(const Resolved&, std::ostream&)>;

struct Command {
  std::string name;
  std::string help;
  std::vector<Option> options;
  Runner run;
};

std::vector<Option> synth_options() {
  return {
      {"shape", "32,32,32,64", "volume extents x,y,z,t"},
      {"bubbles", "6", "bubbles alive at once"},
      {"hidden-fraction", "0", "share of bubbles kept out of the mixture but in the ground truth"},
      {"min-speed", "1", "voxels per frame"},
      {"max-speed", "3", "voxels per frame"},
      {"psf-sigma", "1.2", "bubble PSF sigma in voxels"},
      {"separation", "7", "minimum bubble distance at birth"},
      {"clutter-modes", "24", "drifting clutter modes"},
      {"noise-fraction", "0.06", "share of clutter energy in the white floor"},
      {"highpass-window", "11", "rolling-mean window in frames"},
      {"kappa", "1", "contrast channel noise weight"},
  };
}

SynthConfig synth_config(const Resolved& r) {
  SynthConfig s;
  const auto shape = r.extent<4>("shape");
  s.shape = {shape[0], shape[1], shape[2], shape[3]};
  s.bubbles.count = r.integer("bubbles");
  s.bubbles.hidden_fraction = r.num("hidden-fraction");
  s.bubbles.min_speed = r.num("min-speed");
  s.bubbles.max_speed = r.num("max-speed");
  const double sigma = r.num("psf-sigma");
  s.bubbles.psf_sigma = {sigma, sigma, sigma};
  s.bubbles.separation = r.num("separation");
  s.clutter.modes = r.integer("clutter-modes");
  s.clutter.noise_fraction = r.num("noise-fraction");
  s.highpass_window = r.integer("highpass-window");
  s.kappa = r.num("kappa");
  return s;
}

std::vector<Option> eval_options() {
  return {
      {"threshold", "0.5", "absolute peak threshold on the model output"},
      {"border", "3", "voxels excluded at every spatial face"},
      {"match-radius", "2", "TP matching distance in voxels"},
      {"overlap", "6", "spatial patch overlap"},
      {"batch", "4", "patches per forward pass"},
      {"threads", "1", "concurrent forward passes"},
  };
}

EvalSetup eval_setup(const Resolved& r) {
  EvalSetup e;
  e.synth = synth_config(r);
  e.eval.threshold = r.num("threshold");
  e.eval.border = r.integer("border");
  e.eval.match_radius = r.num("match-radius");
  const Index ov = r.integer("overlap");
  e.inference.overlap = {ov, ov, ov, 0};
  e.inference.batch = r.integer("batch");
  e.inference.threads = static_cast<int>(r.integer("threads"));
  e.eval.validate();
  e.inference.validate();
  return e;
}

struct LoadedModel {
  UNet4D<float> model;
  ChannelStats stats;
};

LoadedModel load_model(const fs::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  return {std::move(ck.model), load_channel_stats(dir / "stats.txt")};
}

std::vector<std::uint64_t> seeds_of(const Resolved& r, const std::string& key) {
  std::vector<std::uint64_t> out;
  for (double v : r.numbers(key)) {
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) throw ConfigError(key + " must list integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw ConfigError(key + " must not be empty");
  return out;
}

fs::path channels_path(const fs::path& input) {
  return fs::is_directory(input) ? input / "channels.t6d" : input;
}

// ---- subcommands ----

void run_synth(const Resolved& r, std::ostream& out) {
  SynthConfig s = synth_config(r);
  s.lambda = r.num("lambda");
  const SynthVolume v = make_synth(s, r.seed("seed"));
  write_synth(r.out_dir(), v);
  out << "synthetic volume with " << v.field.tracks.size() << " track points written to " << r.out_dir().string()
      << "\n";
}

void run_label(const Resolved& r, std::ostream& out) {
  LabelingConfig cfg;
  cfg.detection.diameter = r.extent<3>("diameter");
  cfg.detection.separation = r.extent<3>("separation");
  if (r.str("minmass") == "auto") {
    cfg.minmass_candidates = r.numbers("minmass-candidates");
  } else {
    cfg.detection.minmass = Resolved::to_double("minmass", r.str("minmass"));
  }
  cfg.detection.validate();
  cfg.max_disp = r.num("max-disp");
  cfg.min_length = r.integer("min-len");
  cfg.label.diameter = cfg.detection.diameter;
  cfg.label.margin = r.integer("margin");
  const std::string policy = r.str("edge-policy");
  if (policy == "per-frame") {
    cfg.label.edge = EdgePolicy::kPerFrame;
  } else if (policy == "whole-patch") {
    cfg.label.edge = EdgePolicy::kWholePatch;
  } else {
    throw ConfigError("edge-policy must be per-frame or whole-patch");
  }
  cfg.patch = r.extent<4>("patch");
  cfg.stride = r.extent<4>("stride");

  const auto inputs = r.list("inputs");
  if (inputs.empty()) throw ConfigError("--inputs needs at least one synth directory");
  const fs::path dir = r.out_dir();
  ensure_directory(dir / "patches");
  std::vector<PatchRecord> records;
  std::vector<Tensor6D> raw;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const fs::path in = inputs[i];
    const Tensor6D channels = read_t6d(in / "channels.t6d");
    const Tensor6D bubbles = read_complex(in / "bubbles").magnitude();
    const LabeledVolume lv = label_volume(channels, bubbles, cfg);
    const std::string vol = "volume" + std::to_string(i);
    ensure_directory(dir / vol);
    write_trajectories_csv(dir / vol / "tracks.csv", lv.trajectories);
    for (std::size_t k = 0; k < lv.patches.size(); ++k) {
      const auto& p = lv.patches[k];
      const std::string stem = "patches/" + vol + "_" + std::to_string(k);
      write_t6d(dir / (stem + "_in.t6d"), p.input);
      write_t6d(dir / (stem + "_gt.t6d"), p.target);
      records.push_back({stem + "_in.t6d", stem + "_gt.t6d", vol, p.spec.origin});
      raw.push_back(p.input);
    }
    out << vol << ": " << lv.trajectories.size() << " trajectories, minmass " << format_double(lv.minmass) << ", "
        << lv.patches.size() << " patches\n";
  }
  write_patch_manifest(dir / "manifest.csv", records);
  save_channel_stats(dir / "stats.txt", compute_channel_stats(raw));
}

void run_train(const Resolved& r, std::ostream& out) {
  const fs::path data = r.str("data");
  const auto records = read_patch_manifest(data / "manifest.csv");
  const ChannelStats stats = load_channel_stats(data / "stats.txt");
  PatchDataset<float> ds;
  for (const auto& rec : records) {
    ds.inputs.push_back(standardize(read_t6d(data / rec.input), stats));
    ds.targets.push_back(read_t6d(data / rec.target));
  }
  UNet4DConfig mc;
  mc.levels = static_cast<int>(r.integer("levels"));
  mc.base_channels = r.integer("base-channels");
  mc.validate();
  TrainConfig tc;
  tc.epochs = static_cast<int>(r.integer("epochs"));
  tc.batch_size = r.integer("batch");
  tc.adam.learning_rate = r.num("lr");
  tc.adam.weight_decay = r.num("weight-decay");
  tc.plateau_patience = static_cast<int>(r.integer("patience"));
  tc.plateau_factor = r.num("factor");
  tc.validation_fraction = r.num("validation");
  const std::uint64_t seed = r.seed("seed");
  tc.seed = split_seed(seed, 1);
  tc.validate();

  UNet4D<float> model = build_unet<float>(mc, split_seed(seed, 0));
  const auto result = train(model, ds, tc, r.flag("augment") ? augmentation_transform() : PairTransform<float>{},
                            [&](const EpochRecord& e) {
                              out << "epoch " << e.epoch << " train_mse " << format_double(e.train_mse) << " val_mse "
                                  << format_double(e.val_mse) << " lr " << format_double(e.learning_rate) << "\n"
                                  << std::flush;
                            });
  const fs::path dir = r.out_dir();
  save_checkpoint(dir, model, &result.optimizer);
  save_channel_stats(dir / "stats.txt", stats);
  write_loss_history(dir / "loss_history.csv", result.history);
}

void run_infer(const Resolved& r, std::ostream& out) {
  const LoadedModel m = load_model(r.str("model"));
  InferenceConfig ic;
  const Index ov = r.integer("overlap");
  ic.overlap = {ov, ov, ov, 0};
  ic.batch = r.integer("batch");
  ic.threads = static_cast<int>(r.integer("threads"));
  const Tensor6D channels = read_t6d(channels_path(r.str("input")));
  const Tensor6D output = infer_volume(unet_patch_model(m.model), standardize(channels, m.stats), ic);
  ensure_directory(r.out_dir());
  write_t6d(r.out_dir() / "output.t6d", output);
  out << "model output written to " << (r.out_dir() / "output.t6d").string() << "\n";
}

void run_baseline(const Resolved& r, std::ostream& out) {
  const ComplexVolumeF composite = read_complex(fs::path(r.str("input")) / "composite");
  const std::string filter = r.str("filter");
  Tensor6D filtered;
  if (filter == "highpass") {
    filtered = highpass_rolling_mean(composite, r.integer("window")).magnitude();
  } else if (filter == "svd") {
    filtered = svd_clutter_filter(composite, SvdFilterOptions{r.integer("cutoff"), r.integer("block")}).magnitude();
  } else {
    throw ConfigError("filter must be highpass or svd");
  }
  ensure_directory(r.out_dir());
  write_t6d(r.out_dir() / "filtered.t6d", filtered);
  out << filter << " output written to " << (r.out_dir() / "filtered.t6d").string() << "\n";
}

void run_accumulate(const Resolved& r, std::ostream& out) {
  const Tensor6D v = read_t6d(r.str("input"));
  const Tensor6D s = temporal_accumulate_std(v, r.integer("block"));
  ensure_directory(r.out_dir());
  write_t6d(r.out_dir() / "std.t6d", s);
  out << "std accumulation written to " << (r.out_dir() / "std.t6d").string() << "\n";
}

void run_eval(const Resolved& r, std::ostream& out) {
  const LoadedModel m = load_model(r.str("model"));
  const EvalSetup setup = eval_setup(r);
  const auto lambdas = r.numbers("lambdas");
  const auto seeds = seeds_of(r, "seeds");
  const PatchModel pm = unet_patch_model(m.model);
  const auto reports = lambda_sweep(lambdas, seeds, [&](double lambda, std::uint64_t seed) {
    return evaluate_synthetic(pm, m.stats, setup, lambda, seed).report;
  });
  ensure_directory(r.out_dir());
  write_sweep_csv(r.out_dir() / "sweep.csv", reports);
  for (const auto& rep : reports)
    out << "lambda " << format_double(rep.lambda) << " precision " << format_double(rep.precision) << " recall "
        << format_double(rep.recall) << " f1 " << format_double(rep.f1) << "\n";
}

void run_calibrate(const Resolved& r, std::ostream& out) {
  const LoadedModel m = load_model(r.str("model"));
  const EvalSetup setup = eval_setup(r);
  const PatchModel pm = unet_patch_model(m.model);
  std::vector<CalibrationSample> samples;
  for (std::uint64_t seed : seeds_of(r, "seeds")) {
    const auto ev = evaluate_synthetic(pm, m.stats, setup, r.num("lambda"), seed);
    samples.push_back({ev.output, truth_points(ev.volume.field.tracks, volume_extent(ev.output), setup.eval.border)});
  }
  const double th = calibrate_threshold(samples, r.numbers("candidates"), setup.eval);
  KeyValueFile kv;
  kv.set("threshold", th);
  ensure_directory(r.out_dir());
  kv.save(r.out_dir() / "calibration.txt");
  out << "calibrated threshold " << format_double(th) << "\n";
}

void run_report(const Resolved& r, std::ostream& out) {
  const fs::path dir = r.out_dir();
  ensure_directory(dir);
  for (const auto& in : r.list("inputs")) {
    const fs::path p = in;
    const Tensor6D v = read_t6d(p);
    // parent directory in the name: several inputs are often all called std.t6d
    const std::string parent = p.has_parent_path() ? p.parent_path().filename().string() : "";
    const fs::path img = dir / ((parent.empty() ? "" : parent + "_") + p.stem().string() + "_mip.pgm");
    write_pgm16(img, max_intensity_projection(v));
    out << "wrote " << img.string() << "\n";
  }
  const std::string sweep = r.str("sweep");
  if (!sweep.empty()) {
    const auto reports = read_sweep_csv(sweep);
    std::ofstream csv(dir / "curves.csv");
    if (!csv) throw IoError("cannot write " + (dir / "curves.csv").string());
    csv << "lambda,precision,recall,f1\n";
    for (const auto& rep : reports)
      csv << format_double(rep.lambda) << ',' << format_double(rep.precision) << ',' << format_double(rep.recall) << ','
          << format_double(rep.f1) << '\n';
    out << "wrote " << (dir / "curves.csv").string() << "\n";
  }
}

std::vector<Command> commands() {
  std::vector<Command> cmds;
  auto with = [](std::vector<Option> a, const std::vector<Option>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  cmds.push_back({"synth", "simulate a bubble + clutter volume and its network channels",
                  with({{"out-dir", "", "output directory"}, {"lambda", "5", "bubble gain"}, {"seed", "1", "root seed"}},
                       synth_options()),
                  run_synth});
  cmds.push_back({"label", "track bubbles and cut labeled training patches",
                  {{"out-dir", "", "output directory"},
                   {"inputs", "", "comma-separated synth directories"},
                   {"diameter", "5,5,5", "detection window"},
                   {"separation", "7,7,7", "minimum detection distance"},
                   {"minmass", "2", "detection mass floor, or auto for elbow selection"},
                   {"minmass-candidates", "0.5,1,2,4,8,16,32", "elbow candidates for --minmass auto"},
                   {"max-disp", "4", "linking radius in voxels"},
                   {"min-len", "2", "shortest kept trajectory"},
                   {"margin", "2", "edge-bubble margin"},
                   {"edge-policy", "per-frame", "per-frame or whole-patch"},
                   {"patch", "16,16,16,8", "patch extent x,y,z,t"},
                   {"stride", "16,16,16,8", "patch stride x,y,z,t"}},
                  run_label});
  cmds.push_back({"train", "train the 4D U-Net on labeled patches",
                  {{"out-dir", "", "checkpoint directory"},
                   {"data", "", "label output directory"},
                   {"levels", "2", "U-Net levels"},
                   {"base-channels", "4", "channels at the first level"},
                   {"epochs", "10", "training epochs"},
                   {"batch", "4", "batch size"},
                   {"lr", "0.003", "Adam learning rate"},
                   {"weight-decay", "0.0001", "L2 weight decay"},
                   {"patience", "5", "plateau patience in epochs"},
                   {"factor", "0.5", "plateau decay factor"},
                   {"validation", "0.1", "validation share"},
                   {"augment", "true", "random axis swaps and flips"},
                   {"seed", "1", "root seed"}},
                  run_train});
  cmds.push_back({"infer", "run a trained model over a volume",
                  {{"out-dir", "", "output directory"},
                   {"model", "", "checkpoint directory"},
                   {"input", "", "synth directory or channel T6D file"},
                   {"overlap", "6", "spatial patch overlap"},
                   {"batch", "4", "patches per forward pass"},
                   {"threads", "1", "concurrent forward passes"}},
                  run_infer});
  cmds.push_back({"baseline", "classical clutter filter on a synth volume",
                  {{"out-dir", "", "output directory"},
                   {"input", "", "synth directory"},
                   {"filter", "svd", "highpass or svd"},
                   {"window", "11", "high-pass window"},
                   {"cutoff", "20", "SVD components removed"},
                   {"block", "256", "SVD block length in frames"}},
                  run_baseline});
  cmds.push_back({"accumulate", "per-voxel std accumulation of a T6D volume",
                  {{"out-dir", "", "output directory"}, {"input", "", "T6D file"}, {"block", "8", "frames per block"}},
                  run_accumulate});
  cmds.push_back({"eval", "precision / recall / F1 over a lambda sweep",
                  with(with({{"out-dir", "", "output directory"},
                             {"model", "", "checkpoint directory"},
                             {"lambdas", "0.03,0.06,0.12,0.25,0.5,1,2", "bubble gains"},
                             {"seeds", "1001,1002", "test volume seeds"}},
                            eval_options()),
                       synth_options()),
                  run_eval});
  cmds.push_back({"calibrate", "choose the detection threshold on validation volumes",
                  with(with({{"out-dir", "", "output directory"},
                             {"model", "", "checkpoint directory"},
                             {"lambda", "1", "bubble gain"},
                             {"seeds", "2001", "validation volume seeds"},
                             {"candidates", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "thresholds to scan"}},
                            eval_options()),
                       synth_options()),
                  run_calibrate});
  cmds.push_back({"report", "maximum-intensity projections and sweep curves",
                  {{"out-dir", "", "output directory"},
                   {"inputs", "", "comma-separated T6D files"},
                   {"sweep", "", "sweep.csv to summarize"}},
                  run_report});
  // shape defaults differ for evaluation volumes
  for (auto& c : cmds)
    if (c.name == "eval" || c.name == "calibrate")
      for (auto& o : c.options)
        if (o.key == "shape") o.fallback = "32,32,32,32";
  return cmds;
}

std::string env_name(const std::string& key) {
  std::string s = "C4D_";
  for (char c : key) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto cmds = commands();
  CLI::App app{"4D U-Net clutter filtering pipeline", "clutter4d"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::string>> given;
  std::map<std::string, std::map<std::string, CLI::Option*>> handles;
  std::map<std::string, std::string> config_paths;
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    subs[c.name] = sub;
    sub->add_option("--config", config_paths[c.name], "resolved config file of an earlier run");
    for (const auto& o : c.options) {
      const std::string help = o.help + (o.fallback.empty() ? "" : " [" + o.fallback + "]");
      handles[c.name][o.key] = sub->add_option("--" + o.key, given[c.name][o.key], help);
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Command* cmd = nullptr;
  for (const auto& c : cmds)
    if (subs[c.name]->parsed()) cmd = &c;

  try {
    KeyValueFile file;
    const std::string& cfg_path = config_paths[cmd->name];
    if (!cfg_path.empty()) {
      file = KeyValueFile::load(cfg_path);
      if (file.contains("subcommand") && file.get("subcommand") != cmd->name)
        throw ConfigError(cfg_path + " belongs to subcommand " + file.get("subcommand"));
      for (const auto& k : file.keys()) {
        if (k == "subcommand") continue;
        const bool known = std::any_of(cmd->options.begin(), cmd->options.end(),
                                       [&](const Option& o) { return o.key == k; });
        if (!known) throw ConfigError(cfg_path + ": unknown key '" + k + "'");
      }
    }
    KeyValueFile resolved;
    resolved.set("subcommand", cmd->name);
    for (const auto& o : cmd->options) {
      std::string value = o.fallback;
      if (handles[cmd->name][o.key]->count() > 0) {
        value = given[cmd->name][o.key];
      } else if (const char* env = std::getenv(env_name(o.key).c_str())) {
        value = env;
      } else if (file.contains(o.key)) {
        value = file.get(o.key);
      }
      resolved.set(o.key, value);
    }
    const Resolved r(resolved);
    const fs::path dir = r.out_dir();
    ensure_directory(dir);
    resolved.save(dir / "config.txt");
    cmd->run(r, out);
    return kExitOk;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace clutter4d
