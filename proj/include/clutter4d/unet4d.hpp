#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "clutter4d/io.hpp"
#include "clutter4d/ops4d.hpp"

namespace clutter4d {

struct UNet4DConfig {
  int levels = 2;
  Index base_channels = 8;
  Index in_channels = 4;
  Index out_channels = 1;
  Window4 kernel{3, 3, 3, 3};
  Window4 pool{2, 2, 2, 2};
  double leaky_slope = 0.01;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const;
  /// Throws ShapeError unless every (x, y, z, t) extent divides by pool^levels.
  void require_patch(const Shape6& shape) const;
  Index channels_at(int level) const { return base_channels << level; }
};

/// conv4d -> batchnorm4d -> leaky_relu
template <typename Scalar>
struct ConvBlock {
  Conv4DLayer<Scalar> conv;
  BatchNorm4DLayer<Scalar> norm;
};

/// Blocks are stored encoder first (two per level), then the two bottleneck
/// blocks, then the decoder from the deepest level up (two per level).
template <typename Scalar>
struct UNet4D {
  UNet4DConfig config;
  std::vector<ConvBlock<Scalar>> blocks;
  Conv4DLayer<Scalar> head;

  Index encoder_block(int level, int which) const { return 2 * level + which; }
  Index bottleneck_block(int which) const { return 2 * config.levels + which; }
  Index decoder_block(int level, int which) const {
    return 2 * config.levels + 2 + 2 * (config.levels - 1 - level) + which;
  }
  std::string block_name(Index i) const;
};

template <typename Scalar>
UNet4D<Scalar> build_unet(const UNet4DConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
UNet4D<To> cast(const UNet4D<From>& model) {
  UNet4D<To> out;
  out.config = model.config;
  for (const auto& b : model.blocks) out.blocks.push_back({cast<To>(b.conv), cast<To>(b.norm)});
  out.head = cast<To>(model.head);
  return out;
}

/// Mutable view of one trainable array.
template <typename Scalar>
struct ParamSlot {
  std::string name;
  Scalar* data = nullptr;
  Index size = 0;
};

/// Conv weights, conv bias, BN gamma, BN beta for every block, then the head.
template <typename Scalar>
std::vector<ParamSlot<Scalar>> parameters(UNet4D<Scalar>& model);

template <typename Scalar>
Index parameter_count(const UNet4D<Scalar>& model);

template <typename Scalar>
struct BlockCache {
  Tensor6<Scalar> input;
  BatchNormResult<Scalar> norm;  // norm.output is the pre-activation
};

/// Forward activations kept for backward, and the parameter gradients it
/// produces (one flat array per ParamSlot, same order).
template <typename Scalar>
struct GradTape {
  std::vector<BlockCache<Scalar>> blocks;
  std::vector<PoolResult<Scalar>> pools;
  Tensor6<Scalar> head_input;
  Tensor6<Scalar> output;
  std::vector<Vector<Scalar>> grads;
};

/// Returns sigmoid probabilities of shape (B, out_channels, Lx, Ly, Lz, T).
/// The model is read-only; pass a tape to record what backward needs.
template <typename Scalar>
Tensor6<Scalar> forward(const UNet4D<Scalar>& model, const Tensor6<Scalar>& x, NormMode mode,
                        GradTape<Scalar>* tape = nullptr);

/// Fills tape.grads from the loss gradient with respect to the output.
template <typename Scalar>
void backward(const UNet4D<Scalar>& model, GradTape<Scalar>& tape, const Tensor6<Scalar>& grad_output);

/// Folds the batch statistics of a train-mode tape into the running stats.
template <typename Scalar>
void update_running_stats(UNet4D<Scalar>& model, const GradTape<Scalar>& tape);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

template <typename Scalar>
struct AdamState {
  std::vector<Vector<Scalar>> m;
  std::vector<Vector<Scalar>> v;
  long long step = 0;
};

/// g' = g + weight_decay * p; bias-corrected Adam moments. Throws
/// NumericError before touching anything if a gradient is not finite.
template <typename Scalar>
void adam_step(const std::vector<ParamSlot<Scalar>>& params, const std::vector<Vector<Scalar>>& grads,
               AdamState<Scalar>& state, const AdamConfig& cfg);

/// Reduce-on-plateau. The rate is held during the first `constant_epochs`
/// epochs; afterwards it is multiplied by `factor` whenever the monitored loss
/// has not improved for `patience` epochs in a row, and the count restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double learning_rate, double factor, int patience, int constant_epochs = 0,
                   double min_learning_rate = 0.0);

  /// Records one epoch's monitored loss and returns the rate for the next.
  double observe(double loss);
  double learning_rate() const { return lr_; }
  int reductions() const { return reductions_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double lr_, factor_, min_lr_;
  int patience_, constant_epochs_;
  int epoch_ = 0, bad_epochs_ = 0, reductions_ = 0;
  double best_;
};

struct TrainConfig {
  AdamConfig adam;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  int constant_epochs = 0;
  int epochs = 10;
  Index batch_size = 4;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  long long step = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double learning_rate = 0.0;
};

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

/// Single-item (B = 1) input/target pairs.
template <typename Scalar>
struct PatchDataset {
  std::vector<Tensor6<Scalar>> inputs;
  std::vector<Tensor6<Scalar>> targets;
  Index size() const { return static_cast<Index>(inputs.size()); }
};

/// In-place random transform of one training pair, seeded per draw.
template <typename Scalar>
using PairTransform = std::function<void(Tensor6<Scalar>&, Tensor6<Scalar>&, std::uint64_t)>;

template <typename Scalar>
struct TrainResult {
  std::vector<EpochRecord> history;
  AdamState<Scalar> optimizer;
  double learning_rate = 0.0;
};

/// Carries the epochs completed before the loss became non-finite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochRecord> history)
      : NumericError(what), history(std::move(history)) {}
  std::vector<EpochRecord> history;
};

/// Mini-batch Adam on MSE. A fixed fraction of the pairs (chosen by the seed)
/// is held out and monitored by the plateau rule in eval mode.
template <typename Scalar>
TrainResult<Scalar> train(UNet4D<Scalar>& model, const PatchDataset<Scalar>& data, const TrainConfig& cfg,
                          const PairTransform<Scalar>& transform = {},
                          const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Directory with `manifest.txt`, one T6D file per parameter and running
/// statistic, and `adam_m_*` / `adam_v_*` files when an optimizer is given.
void save_checkpoint(const std::filesystem::path& dir, const UNet4D<float>& model,
                     const AdamState<float>* optimizer = nullptr, const KeyValueFile& extra = {});

struct Checkpoint {
  UNet4D<float> model;
  AdamState<float> optimizer;
  bool has_optimizer = false;
  KeyValueFile manifest;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace clutter4d
