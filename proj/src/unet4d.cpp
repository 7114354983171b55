#include "clutter4d/unet4d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace clutter4d {

void UNet4DConfig::validate() const {
  if (levels < 1) throw ConfigError("unet: levels must be >= 1");
  if (base_channels < 1 || in_channels < 1 || out_channels < 1)
    throw ConfigError("unet: channel counts must be >= 1");
  for (int a = 0; a < 4; ++a) {
    if (kernel[a] < 1 || kernel[a] % 2 == 0) throw ConfigError("unet: kernel extents must be odd");
    if (pool[a] < 1) throw ConfigError("unet: pool window must be >= 1");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("unet: leaky slope must lie in (0, 1)");
}

void UNet4DConfig::require_patch(const Shape6& shape) const {
  if (shape[kChannel] != in_channels)
    throw ShapeError("unet: expected " + std::to_string(in_channels) + " input channels, got " +
                     to_string(shape));
  for (int a = 0; a < 4; ++a) {
    Index div = 1;
    for (int l = 0; l < levels; ++l) div *= pool[a];
    if (shape[kX + a] < div || shape[kX + a] % div != 0)
      throw ShapeError("unet: patch " + to_string(shape) + " is not divisible by " + std::to_string(div) +
                       " on every spatial and temporal axis");
  }
}

template <typename Scalar>
std::string UNet4D<Scalar>::block_name(Index i) const {
  const Index enc = 2 * config.levels;
  const char which = static_cast<char>('a' + i % 2);
  if (i < enc) return "enc" + std::to_string(i / 2) + which;
  if (i < enc + 2) return std::string("bottleneck") + which;
  const Index level = config.levels - 1 - (i - enc - 2) / 2;
  return "dec" + std::to_string(level) + which;
}

namespace {

template <typename Scalar>
Conv4DLayer<Scalar> he_conv(Index in, Index out, const Window4& kernel, std::mt19937_64& rng) {
  Conv4DLayer<Scalar> layer(in, out, kernel);
  const double fan_in = static_cast<double>(in * kernel[0] * kernel[1] * kernel[2] * kernel[3]);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = static_cast<Scalar>(dist(rng));
  layer.bias.setZero();
  return layer;
}

template <typename Scalar>
ConvBlock<Scalar> make_block(const UNet4DConfig& cfg, Index in, Index out, std::mt19937_64& rng) {
  ConvBlock<Scalar> block{he_conv<Scalar>(in, out, cfg.kernel, rng), BatchNorm4DLayer<Scalar>(out)};
  block.norm.momentum = cfg.bn_momentum;
  block.norm.epsilon = cfg.bn_epsilon;
  return block;
}

template <typename Scalar>
Tensor6<Scalar> block_forward(const ConvBlock<Scalar>& block, const Tensor6<Scalar>& x, NormMode mode,
                              Scalar slope, GradTape<Scalar>* tape) {
  auto norm = batchnorm4d(conv4d_forward(x, block.conv), block.norm, mode);
  Tensor6<Scalar> out = leaky_relu(norm.output, slope);
  if (tape) tape->blocks.push_back({x, std::move(norm)});
  return out;
}

// Returns the gradient with respect to the block input and stores parameter
// gradients at grads[4 * index ...].
template <typename Scalar>
Tensor6<Scalar> block_backward(const ConvBlock<Scalar>& block, const BlockCache<Scalar>& cache,
                               const Tensor6<Scalar>& grad_out, Scalar slope, std::vector<Vector<Scalar>>& grads,
                               Index index) {
  const auto g_norm = batchnorm4d_backward(leaky_relu_backward(grad_out, cache.norm.output, slope), cache.norm,
                                           block.norm);
  auto g_conv = conv4d_backward(g_norm.input, cache.input, block.conv);
  grads[4 * index + 0] = g_conv.weights.array();
  grads[4 * index + 1] = g_conv.bias;
  grads[4 * index + 2] = g_norm.gamma;
  grads[4 * index + 3] = g_norm.beta;
  return std::move(g_conv.input);
}

}  // namespace

template <typename Scalar>
UNet4D<Scalar> build_unet(const UNet4DConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  UNet4D<Scalar> model;
  model.config = cfg;
  Index in = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    model.blocks.push_back(make_block<Scalar>(cfg, in, cfg.channels_at(l), rng));
    model.blocks.push_back(make_block<Scalar>(cfg, cfg.channels_at(l), cfg.channels_at(l), rng));
    in = cfg.channels_at(l);
  }
  const Index deep = cfg.channels_at(cfg.levels);
  model.blocks.push_back(make_block<Scalar>(cfg, in, deep, rng));
  model.blocks.push_back(make_block<Scalar>(cfg, deep, deep, rng));
  in = deep;
  for (int l = cfg.levels - 1; l >= 0; --l) {
    model.blocks.push_back(make_block<Scalar>(cfg, in + cfg.channels_at(l), cfg.channels_at(l), rng));
    model.blocks.push_back(make_block<Scalar>(cfg, cfg.channels_at(l), cfg.channels_at(l), rng));
    in = cfg.channels_at(l);
  }
  model.head = he_conv<Scalar>(in, cfg.out_channels, {1, 1, 1, 1}, rng);
  return model;
}

template <typename Scalar>
std::vector<ParamSlot<Scalar>> parameters(UNet4D<Scalar>& model) {
  std::vector<ParamSlot<Scalar>> out;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    auto& b = model.blocks[i];
    const std::string name = model.block_name(static_cast<Index>(i));
    out.push_back({name + "_conv_w", b.conv.weights.data(), b.conv.weights.size()});
    out.push_back({name + "_conv_b", b.conv.bias.data(), b.conv.bias.size()});
    out.push_back({name + "_bn_gamma", b.norm.gamma.data(), b.norm.gamma.size()});
    out.push_back({name + "_bn_beta", b.norm.beta.data(), b.norm.beta.size()});
  }
  out.push_back({"head_conv_w", model.head.weights.data(), model.head.weights.size()});
  out.push_back({"head_conv_b", model.head.bias.data(), model.head.bias.size()});
  return out;
}

template <typename Scalar>
Index parameter_count(const UNet4D<Scalar>& model) {
  Index n = model.head.weights.size() + model.head.bias.size();
  for (const auto& b : model.blocks)
    n += b.conv.weights.size() + b.conv.bias.size() + b.norm.gamma.size() + b.norm.beta.size();
  return n;
}

template <typename Scalar>
Tensor6<Scalar> forward(const UNet4D<Scalar>& model, const Tensor6<Scalar>& x, NormMode mode,
                        GradTape<Scalar>* tape) {
  const auto& cfg = model.config;
  cfg.require_patch(x.shape());
  if (tape) *tape = GradTape<Scalar>{};
  const Scalar slope = static_cast<Scalar>(cfg.leaky_slope);

  std::vector<Tensor6<Scalar>> skips;
  Tensor6<Scalar> h = x;
  for (int l = 0; l < cfg.levels; ++l) {
    h = block_forward(model.blocks[model.encoder_block(l, 0)], h, mode, slope, tape);
    h = block_forward(model.blocks[model.encoder_block(l, 1)], h, mode, slope, tape);
    skips.push_back(h);
    auto pooled = maxpool4d(h, cfg.pool);
    h = pooled.output;
    if (tape) tape->pools.push_back(std::move(pooled));
  }
  h = block_forward(model.blocks[model.bottleneck_block(0)], h, mode, slope, tape);
  h = block_forward(model.blocks[model.bottleneck_block(1)], h, mode, slope, tape);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    h = concat_channels(upsample4d(h, cfg.pool), skips[l]);
    h = block_forward(model.blocks[model.decoder_block(l, 0)], h, mode, slope, tape);
    h = block_forward(model.blocks[model.decoder_block(l, 1)], h, mode, slope, tape);
  }
  Tensor6<Scalar> y = sigmoid(conv4d_forward(h, model.head));
  if (tape) {
    tape->head_input = std::move(h);
    tape->output = y;
  }
  return y;
}

template <typename Scalar>
void backward(const UNet4D<Scalar>& model, GradTape<Scalar>& tape, const Tensor6<Scalar>& grad_output) {
  const auto& cfg = model.config;
  if (tape.blocks.size() != model.blocks.size() || grad_output.shape() != tape.output.shape())
    throw ShapeError("unet backward: tape does not match this model and output");
  const Scalar slope = static_cast<Scalar>(cfg.leaky_slope);
  tape.grads.assign(4 * model.blocks.size() + 2, Vector<Scalar>());

  auto g_head = conv4d_backward(sigmoid_backward(grad_output, tape.output), tape.head_input, model.head);
  tape.grads[4 * model.blocks.size()] = g_head.weights.array();
  tape.grads[4 * model.blocks.size() + 1] = g_head.bias;
  Tensor6<Scalar> g = std::move(g_head.input);

  auto step = [&](Index i) {
    g = block_backward(model.blocks[i], tape.blocks[i], g, slope, tape.grads, i);
  };

  std::vector<Tensor6<Scalar>> skip_grads(cfg.levels);
  for (int l = 0; l < cfg.levels; ++l) {
    step(model.decoder_block(l, 1));
    step(model.decoder_block(l, 0));
    const Index up_channels = g.extent(kChannel) - cfg.channels_at(l);
    skip_grads[l] = slice_channels(g, up_channels, cfg.channels_at(l));
    g = upsample4d_backward(slice_channels(g, 0, up_channels), cfg.pool);
  }
  step(model.bottleneck_block(1));
  step(model.bottleneck_block(0));
  for (int l = cfg.levels - 1; l >= 0; --l) {
    g = maxpool4d_backward(g, tape.pools[l]);
    g.array() += skip_grads[l].array();
    step(model.encoder_block(l, 1));
    step(model.encoder_block(l, 0));
  }
}

template <typename Scalar>
void update_running_stats(UNet4D<Scalar>& model, const GradTape<Scalar>& tape) {
  if (tape.blocks.size() != model.blocks.size()) throw ShapeError("running stats: tape does not match model");
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& in = tape.blocks[i].norm.output;
    const Index count = in.extent(kBatch) * in.block_size();
    update_running_stats(model.blocks[i].norm, tape.blocks[i].norm, count);
  }
}

template <typename Scalar>
void adam_step(const std::vector<ParamSlot<Scalar>>& params, const std::vector<Vector<Scalar>>& grads,
               AdamState<Scalar>& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size) throw ShapeError("adam: gradient shape mismatch for " + params[i].name);
    if (!grads[i].allFinite()) throw NumericError("adam: non-finite gradient in " + params[i].name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Vector<Scalar>::Zero(p.size));
      state.v.push_back(Vector<Scalar>::Zero(p.size));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: optimizer state does not match parameters");

  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate), wd = static_cast<Scalar>(cfg.weight_decay);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  const Scalar inv_c1 = static_cast<Scalar>(1.0 / c1), inv_c2 = static_cast<Scalar>(1.0 / c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Vector<Scalar>> p(params[i].data, params[i].size);
    const Vector<Scalar> g = grads[i] + wd * p;
    state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * g.square();
    p -= lr * (state.m[i] * inv_c1) / ((state.v[i] * inv_c2).sqrt() + eps);
  }
}

PlateauScheduler::PlateauScheduler(double learning_rate, double factor, int patience, int constant_epochs,
                                   double min_learning_rate)
    : lr_(learning_rate),
      factor_(factor),
      min_lr_(min_learning_rate),
      patience_(patience),
      constant_epochs_(constant_epochs),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
}

double PlateauScheduler::observe(double loss) {
  ++epoch_;
  // Relative improvement threshold 1e-4, as in the common reduce-on-plateau rule.
  if (loss < best_ - 1e-4 * std::abs(best_) || !std::isfinite(best_)) {
    best_ = loss;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
  }
  if (epoch_ > constant_epochs_ && bad_epochs_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    ++reductions_;
    bad_epochs_ = 0;
  }
  return lr_;
}

void TrainConfig::validate() const {
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (adam.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (plateau_patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
}

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,step,train_mse,val_mse,lr\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.step << ',' << format_double(r.train_mse) << ',' << format_double(r.val_mse) << ','
        << format_double(r.learning_rate) << '\n';
}

namespace {

template <typename Scalar>
Tensor6<Scalar> gather(const std::vector<Tensor6<Scalar>>& items, std::span<const std::size_t> idx) {
  std::vector<const Tensor6<Scalar>*> ptrs;
  for (std::size_t i : idx) ptrs.push_back(&items[i]);
  return stack_batch(std::span<const Tensor6<Scalar>* const>(ptrs.data(), ptrs.size()));
}

// Per-item squared-error means of a batch, so epoch sums can be formed in a
// fixed item order.
template <typename Scalar>
std::vector<double> item_mse(const Tensor6<Scalar>& pred, const Tensor6<Scalar>& target) {
  const Index b = pred.extent(kBatch), n = pred.size() / std::max<Index>(b, 1);
  std::vector<double> out(b);
  for (Index i = 0; i < b; ++i) {
    double acc = 0;
    for (Index k = 0; k < n; ++k) {
      const double d = static_cast<double>(pred.data()[i * n + k]) - target.data()[i * n + k];
      acc += d * d;
    }
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train(UNet4D<Scalar>& model, const PatchDataset<Scalar>& data, const TrainConfig& cfg,
                          const PairTransform<Scalar>& transform,
                          const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("train: empty dataset");
  if (data.targets.size() != data.inputs.size()) throw ShapeError("train: input/target count mismatch");
  for (Index i = 0; i < data.size(); ++i) {
    if (data.inputs[i].extent(kBatch) != 1) throw ShapeError("train: dataset items must have B = 1");
    Shape6 want = data.inputs[i].shape();
    want[kChannel] = model.config.out_channels;
    if (data.targets[i].shape() != want)
      throw ShapeError("train: target " + to_string(data.targets[i].shape()) + " does not match input " +
                       to_string(data.inputs[i].shape()));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * data.size()));
  if (n_val >= order.size()) n_val = order.size() - 1;
  std::vector<std::size_t> val(order.end() - n_val, order.end());
  std::vector<std::size_t> tr(order.begin(), order.end() - n_val);
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());

  TrainResult<Scalar> result;
  PlateauScheduler plateau(cfg.adam.learning_rate, cfg.plateau_factor, cfg.plateau_patience, cfg.constant_epochs);
  AdamConfig adam = cfg.adam;
  auto params = parameters(model);
  GradTape<Scalar> tape;
  long long steps = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> perm = tr;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> losses(data.size(), 0.0);
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(perm.data() + start, stop - start);
      Tensor6<Scalar> x = gather(data.inputs, idx), y = gather(data.targets, idx);
      if (transform) {
        const Index in_n = x.size() / x.extent(kBatch), out_n = y.size() / y.extent(kBatch);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          Tensor6<Scalar> xi = data.inputs[idx[k]], yi = data.targets[idx[k]];
          transform(xi, yi, rng());
          x.array().segment(static_cast<Index>(k) * in_n, in_n) = xi.array();
          y.array().segment(static_cast<Index>(k) * out_n, out_n) = yi.array();
        }
      }
      const Tensor6<Scalar> pred = forward(model, x, NormMode::kTrain, &tape);
      const auto loss = mse_loss(pred, y);
      if (!std::isfinite(loss.loss))
        throw TrainingDiverged("train: loss became non-finite at epoch " + std::to_string(epoch),
                               result.history);
      const auto per_item = item_mse(pred, y);
      for (std::size_t k = 0; k < idx.size(); ++k) losses[idx[k]] = per_item[k];
      backward(model, tape, loss.grad);
      adam_step(params, tape.grads, result.optimizer, adam);
      update_running_stats(model, tape);
      ++steps;
    }

    double train_sum = 0;
    for (std::size_t i : tr) train_sum += losses[i];
    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = steps;
    rec.train_mse = train_sum / static_cast<double>(tr.size());
    if (!val.empty()) {
      double val_sum = 0;
      for (std::size_t start = 0; start < val.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(val.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::span<const std::size_t> idx(val.data() + start, stop - start);
        for (double l : item_mse(forward(model, gather(data.inputs, idx), NormMode::kEval), gather(data.targets, idx)))
          val_sum += l;
      }
      rec.val_mse = val_sum / static_cast<double>(val.size());
    } else {
      rec.val_mse = rec.train_mse;
    }
    rec.learning_rate = adam.learning_rate;
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.val_mse))
      throw TrainingDiverged("train: epoch loss is non-finite at epoch " + std::to_string(epoch), result.history);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    adam.learning_rate = plateau.observe(rec.val_mse);
  }
  result.learning_rate = adam.learning_rate;
  return result;
}

namespace {

Tensor6D vector_tensor(const Vector<float>& v) { return Tensor6D({v.size(), 1, 1, 1, 1, 1}, v); }

Vector<float> read_vector(const std::filesystem::path& path, Index expected) {
  const Tensor6D t = read_t6d(path);
  if (t.size() != expected) throw FormatError(path.string() + ": expected " + std::to_string(expected) + " values");
  return t.array();
}

std::string window_text(const Window4& w) {
  return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," +
         std::to_string(w[3]);
}

Window4 parse_window(const std::string& text) {
  Window4 w{};
  std::size_t pos = 0;
  for (int a = 0; a < 4; ++a) {
    const std::size_t end = text.find(',', pos);
    if ((a < 3) != (end != std::string::npos)) throw ConfigError("window needs four comma-separated values: " + text);
    try {
      w[a] = std::stoll(text.substr(pos, end - pos));
    } catch (const std::exception&) {
      throw ConfigError("bad window value: " + text);
    }
    pos = end + 1;
  }
  return w;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const UNet4D<float>& model, const AdamState<float>* optimizer,
                     const KeyValueFile& extra) {
  ensure_directory(dir);
  const auto& cfg = model.config;
  KeyValueFile manifest;
  manifest.set("format", "clutter4d-unet4d-1");
  manifest.set("levels", cfg.levels);
  manifest.set("base_channels", static_cast<long long>(cfg.base_channels));
  manifest.set("in_channels", static_cast<long long>(cfg.in_channels));
  manifest.set("out_channels", static_cast<long long>(cfg.out_channels));
  manifest.set("kernel", window_text(cfg.kernel));
  manifest.set("pool", window_text(cfg.pool));
  manifest.set("leaky_slope", cfg.leaky_slope);
  manifest.set("bn_momentum", cfg.bn_momentum);
  manifest.set("bn_epsilon", cfg.bn_epsilon);
  std::string layers;
  for (std::size_t i = 0; i < model.blocks.size(); ++i)
    layers += model.block_name(static_cast<Index>(i)) + ":conv4d+batchnorm4d+leaky_relu,";
  manifest.set("layers", layers + "head:conv4d+sigmoid");

  UNet4D<float>& m = const_cast<UNet4D<float>&>(model);
  const auto params = parameters(m);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& b = model.blocks[i];
    const std::string name = model.block_name(static_cast<Index>(i));
    write_t6d(dir / (name + "_conv_w.t6d"), b.conv.weights);
    write_t6d(dir / (name + "_conv_b.t6d"), vector_tensor(b.conv.bias));
    write_t6d(dir / (name + "_bn_gamma.t6d"), vector_tensor(b.norm.gamma));
    write_t6d(dir / (name + "_bn_beta.t6d"), vector_tensor(b.norm.beta));
    write_t6d(dir / (name + "_bn_mean.t6d"), vector_tensor(b.norm.running_mean));
    write_t6d(dir / (name + "_bn_var.t6d"), vector_tensor(b.norm.running_var));
  }
  write_t6d(dir / "head_conv_w.t6d", model.head.weights);
  write_t6d(dir / "head_conv_b.t6d", vector_tensor(model.head.bias));

  manifest.set("optimizer", optimizer && !optimizer->m.empty() ? "adam" : "none");
  if (optimizer && !optimizer->m.empty()) {
    manifest.set("adam_step", optimizer->step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_t6d(dir / ("adam_m_" + params[i].name + ".t6d"), vector_tensor(optimizer->m[i]));
      write_t6d(dir / ("adam_v_" + params[i].name + ".t6d"), vector_tensor(optimizer->v[i]));
    }
  }
  for (const auto& k : extra.keys()) manifest.set(k, extra.get(k));
  manifest.save(dir / "manifest.txt");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.manifest = KeyValueFile::load(dir / "manifest.txt");
  const auto& mf = ck.manifest;
  if (mf.get("format") != "clutter4d-unet4d-1") throw FormatError(dir.string() + ": unknown checkpoint format");
  UNet4DConfig cfg;
  cfg.levels = static_cast<int>(mf.get_int("levels"));
  cfg.base_channels = mf.get_int("base_channels");
  cfg.in_channels = mf.get_int("in_channels");
  cfg.out_channels = mf.get_int("out_channels");
  cfg.kernel = parse_window(mf.get("kernel"));
  cfg.pool = parse_window(mf.get("pool"));
  cfg.leaky_slope = mf.get_double("leaky_slope");
  cfg.bn_momentum = mf.get_double("bn_momentum");
  cfg.bn_epsilon = mf.get_double("bn_epsilon");

  ck.model = build_unet<float>(cfg, 0);
  auto& model = ck.model;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    auto& b = model.blocks[i];
    const std::string name = model.block_name(static_cast<Index>(i));
    const Tensor6D w = read_t6d(dir / (name + "_conv_w.t6d"));
    if (w.shape() != b.conv.weights.shape()) throw FormatError(name + ": weight shape does not match manifest");
    b.conv.weights = w;
    b.conv.bias = read_vector(dir / (name + "_conv_b.t6d"), b.conv.bias.size());
    b.norm.gamma = read_vector(dir / (name + "_bn_gamma.t6d"), b.norm.gamma.size());
    b.norm.beta = read_vector(dir / (name + "_bn_beta.t6d"), b.norm.beta.size());
    b.norm.running_mean = read_vector(dir / (name + "_bn_mean.t6d"), b.norm.running_mean.size());
    b.norm.running_var = read_vector(dir / (name + "_bn_var.t6d"), b.norm.running_var.size());
  }
  const Tensor6D hw = read_t6d(dir / "head_conv_w.t6d");
  if (hw.shape() != model.head.weights.shape()) throw FormatError("head: weight shape does not match manifest");
  model.head.weights = hw;
  model.head.bias = read_vector(dir / "head_conv_b.t6d", model.head.bias.size());

  if (mf.get_or("optimizer", "none") == "adam") {
    const auto params = parameters(model);
    ck.optimizer.step = mf.get_int("adam_step");
    for (const auto& p : params) {
      ck.optimizer.m.push_back(read_vector(dir / ("adam_m_" + p.name + ".t6d"), p.size));
      ck.optimizer.v.push_back(read_vector(dir / ("adam_v_" + p.name + ".t6d"), p.size));
    }
    ck.has_optimizer = true;
  }
  return ck;
}

#define CLUTTER4D_INSTANTIATE(S)                                                                              \
  template struct UNet4D<S>;                                                                                \
  template UNet4D<S> build_unet<S>(const UNet4DConfig&, std::uint64_t);                                     \
  template std::vector<ParamSlot<S>> parameters(UNet4D<S>&);                                                \
  template Index parameter_count(const UNet4D<S>&);                                                         \
  template Tensor6<S> forward(const UNet4D<S>&, const Tensor6<S>&, NormMode, GradTape<S>*);                 \
  template void backward(const UNet4D<S>&, GradTape<S>&, const Tensor6<S>&);                                \
  template void update_running_stats(UNet4D<S>&, const GradTape<S>&);                                       \
  template void adam_step(const std::vector<ParamSlot<S>>&, const std::vector<Vector<S>>&, AdamState<S>&,   \
                          const AdamConfig&);                                                               \
  template TrainResult<S> train(UNet4D<S>&, const PatchDataset<S>&, const TrainConfig&,                     \
                                const PairTransform<S>&, const std::function<void(const EpochRecord&)>&);

CLUTTER4D_INSTANTIATE(float)
CLUTTER4D_INSTANTIATE(double)

}  // namespace clutter4d
