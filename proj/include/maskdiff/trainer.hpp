#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/unet.hpp"

namespace maskdiff {

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 8;
  int accumulation_steps = 1;
  double ema_decay = 0.995;
  int patience_epochs = 10;
  int max_epochs = 100;
  // Optimizer-step cap; 0 means unlimited.
  int64_t max_steps = 0;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamHyper {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::map<std::string, std::vector<float>> first_moment;
  std::map<std::string, std::vector<float>> second_moment;
  int64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

// Bias-corrected Adam update using each parameter's accumulated gradient.
// Parameters without a gradient are treated as having zero gradient. Throws
// std::runtime_error naming the parameter if any gradient is non-finite; the
// parameters and state are left untouched in that case.
void adam_step(DenoiserParams& params, OptimizerState& state, const AdamHyper& hyper);

// ema <- decay * ema + (1 - decay) * params.
void ema_update(DenoiserParams& ema, const DenoiserParams& params, double decay);

/// Patience counter over per-epoch validation losses.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  // Records one epoch; returns true when training should stop.
  bool update(double val_loss);

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_seen() const { return epochs_; }

 private:
  int patience_;
  int epochs_ = 0;
  int since_improvement_ = 0;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// One conditioning pair: image in [-1, 1], binary mask, both image_size^2.
struct TrainingPair {
  std::string id;
  std::string category;
  std::vector<float> image;
  std::vector<float> mask;
};

TrainBatch make_batch(const std::vector<TrainingPair>& pairs, std::span<const size_t> indices, int image_size);

struct Checkpoint {
  DenoiserParams params;
  DenoiserParams ema_params;
  OptimizerState optimizer;
  UNetConfig unet;
  TrainConfig train;
  // Length of the cosine diffusion chain the model was trained with.
  int diffusion_steps = 1000;
  int epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<double> val_history;
  std::vector<double> train_history;
  std::string category;  // empty for the all-category model

  // Content hash of the tensor blob, 16 hex digits.
  std::string id() const;
};

// Directory layout: tensors.txt (name, shape, byte offset, count per line),
// tensors.bin (little-endian float32), meta.txt (key=value).
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct TrainHooks {
  // Replaces the built-in validation loss (evaluated on the EMA weights).
  std::function<double(const DenoiserParams& ema, int epoch)> validator;
  std::function<void(int epoch, double train_loss, double val_loss)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  int epochs_run = 0;
  int64_t optimizer_steps = 0;
  bool aborted = false;
  std::string abort_reason;
  std::vector<double> train_history;  // mean micro-batch loss per epoch
  std::vector<double> val_history;
};

// Mean noise-prediction loss over `pairs` using fixed per-sample draws from `seed`.
double validation_loss(const DenoiserParams& params, const UNetConfig& unet, const std::vector<TrainingPair>& pairs,
                       const NoiseSchedule& sched, uint64_t seed, int batch_size);

TrainResult train(const std::vector<TrainingPair>& train_set, const std::vector<TrainingPair>& val_set,
                  const UNetConfig& unet, const TrainConfig& config, const NoiseSchedule& sched,
                  const TrainHooks& hooks = {});

// Continues from the base weights with a fresh optimizer, restricted to pairs
// whose category matches. Throws when the category has no training pairs.
TrainResult finetune(const Checkpoint& base, const std::string& category, const std::vector<TrainingPair>& train_set,
                     const std::vector<TrainingPair>& val_set, const TrainConfig& config, const NoiseSchedule& sched,
                     const TrainHooks& hooks = {});

std::vector<TrainingPair> filter_category(const std::vector<TrainingPair>& pairs, const std::string& category);

}  // namespace maskdiff
