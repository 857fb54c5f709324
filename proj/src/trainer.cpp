#include "maskdiff/trainer.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace maskdiff {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (accumulation_steps < 1) fail("accumulation_steps must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must be in [0, 1)");
  if (patience_epochs < 1) fail("patience_epochs must be >= 1");
  if (max_epochs < 0) fail("max_epochs must be >= 0");
  if (max_steps < 0) fail("max_steps must be >= 0");
}

void adam_step(DenoiserParams& params, OptimizerState& state, const AdamHyper& hyper) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient in " + name);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    const auto n = static_cast<size_t>(t.numel());
    if (m.size() != n) m.assign(n, 0.0f);
    if (v.size() != n) v.assign(n, 0.0f);
    auto w = t.mutable_data();
    const bool has_grad = t.has_grad();
    const std::span<const float> grad = has_grad ? t.grad() : std::span<const float>{};
    for (size_t i = 0; i < n; ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = hyper.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + hyper.eps);
      w[i] = static_cast<float>(w[i] - update);
    }
  }
}

void ema_update(DenoiserParams& ema, const DenoiserParams& params, double decay) {
  ema.check_compatible(params);
  for (auto& [name, e] : ema) {
    auto dst = e.mutable_data();
    auto src = params.at(name).data();
    for (size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<float>(decay * dst[i] + (1.0 - decay) * src[i]);
    }
  }
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw std::invalid_argument("EarlyStopping: patience must be >= 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epochs_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    since_improvement_ = 0;
    return false;
  }
  ++since_improvement_;
  return since_improvement_ >= patience_;
}

TrainBatch make_batch(const std::vector<TrainingPair>& pairs, std::span<const size_t> indices, int image_size) {
  const auto per = static_cast<size_t>(image_size) * static_cast<size_t>(image_size);
  const auto n = static_cast<int64_t>(indices.size());
  std::vector<float> images, masks;
  images.reserve(per * indices.size());
  masks.reserve(per * indices.size());
  TrainBatch batch;
  for (size_t idx : indices) {
    const TrainingPair& p = pairs.at(idx);
    if (p.image.size() != per || p.mask.size() != per) {
      throw std::invalid_argument("pair " + p.id + " does not match image size " + std::to_string(image_size));
    }
    images.insert(images.end(), p.image.begin(), p.image.end());
    masks.insert(masks.end(), p.mask.begin(), p.mask.end());
    batch.categories.push_back(p.category);
  }
  batch.images = Tensor::from_data({n, 1, image_size, image_size}, std::move(images));
  batch.masks = Tensor::from_data({n, 1, image_size, image_size}, std::move(masks));
  return batch;
}

std::vector<TrainingPair> filter_category(const std::vector<TrainingPair>& pairs, const std::string& category) {
  std::vector<TrainingPair> out;
  for (const auto& p : pairs)
    if (p.category == category) out.push_back(p);
  return out;
}

namespace {

std::vector<size_t> iota_indices(size_t n) {
  std::vector<size_t> v(n);
  std::iota(v.begin(), v.end(), size_t{0});
  return v;
}

struct ValidationSet {
  std::vector<std::vector<size_t>> chunks;
  std::vector<NoiseDraw> draws;
};

ValidationSet fixed_validation_draws(const std::vector<TrainingPair>& pairs, const UNetConfig& unet,
                                     const NoiseSchedule& sched, uint64_t seed, int batch_size) {
  ValidationSet vs;
  RngStream rng = RngStream(seed).substream("val-noise");
  const std::vector<size_t> all = iota_indices(pairs.size());
  for (size_t start = 0; start < all.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(all.size(), start + static_cast<size_t>(batch_size));
    vs.chunks.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(start),
                           all.begin() + static_cast<std::ptrdiff_t>(end));
    const Shape shape{static_cast<int64_t>(end - start), 1, unet.image_size, unet.image_size};
    vs.draws.push_back(draw_noise(shape, sched, rng));
  }
  return vs;
}

double evaluate(const DenoiserParams& params, const UNetConfig& unet, const std::vector<TrainingPair>& pairs,
                const ValidationSet& vs, const NoiseSchedule& sched) {
  const NoisePredictor predictor = make_predictor(params, unet);
  double total = 0.0;
  size_t count = 0;
  for (size_t c = 0; c < vs.chunks.size(); ++c) {
    const TrainBatch batch = make_batch(pairs, vs.chunks[c], unet.image_size);
    const double loss = noise_prediction_loss(predictor, batch, vs.draws[c], sched).item();
    total += loss * static_cast<double>(vs.chunks[c].size());
    count += vs.chunks[c].size();
  }
  return count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

DenoiserParams frozen_copy(const DenoiserParams& params) {
  DenoiserParams out = params.clone();
  for (auto& [_, t] : out) t.set_requires_grad(false);
  return out;
}

DenoiserParams trainable_copy(const DenoiserParams& params) {
  DenoiserParams out = params.clone();
  for (auto& [_, t] : out) t.set_requires_grad(true);
  return out;
}

TrainResult run_training(DenoiserParams params, DenoiserParams ema, const std::vector<TrainingPair>& train_set,
                         const std::vector<TrainingPair>& val_set, const UNetConfig& unet,
                         const TrainConfig& config, const NoiseSchedule& sched, const TrainHooks& hooks,
                         const std::string& category) {
  const RngStream root(config.seed);
  const RngStream shuffle_root = root.substream("shuffle");
  const RngStream noise_root = root.substream("noise");
  const ValidationSet val_draws = fixed_validation_draws(val_set, unet, sched, config.seed, config.batch_size);

  OptimizerState state;
  const AdamHyper hyper{config.learning_rate, 0.9, 0.999, 1e-8};
  EarlyStopping stopper(config.patience_epochs);

  TrainResult result;
  auto snapshot = [&](int epoch, double best_val) {
    Checkpoint c;
    c.params = frozen_copy(params);
    c.ema_params = frozen_copy(ema);
    c.optimizer = state;
    c.unet = unet;
    c.train = config;
    c.diffusion_steps = sched.steps;
    c.epoch = epoch;
    c.best_val_loss = best_val;
    c.val_history = result.val_history;
    c.train_history = result.train_history;
    c.category = category;
    return c;
  };
  result.best = snapshot(0, std::numeric_limits<double>::infinity());

  const double inv_acc = 1.0 / config.accumulation_steps;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<size_t> order = iota_indices(train_set.size());
    RngStream shuffle = shuffle_root.substream(static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_int(i)]);
    RngStream noise = noise_root.substream(static_cast<uint64_t>(epoch));

    double epoch_loss = 0.0;
    int micro_batches = 0;
    int pending = 0;
    bool step_cap_hit = false;
    params.zero_grad();
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      const TrainBatch batch =
          make_batch(train_set, std::span<const size_t>(order.data() + start, end - start), unet.image_size);
      const Tensor loss = training_loss(params, unet, batch, sched, noise);
      if (!std::isfinite(loss.item())) {
        result.aborted = true;
        result.abort_reason = "non-finite training loss at epoch " + std::to_string(epoch);
        return result;
      }
      scale(loss, static_cast<float>(inv_acc)).backward();
      epoch_loss += loss.item();
      ++micro_batches;
      ++pending;
      const bool last = end == order.size();
      if (pending == config.accumulation_steps || last) {
        if (pending < config.accumulation_steps) {
          // Short final group: renormalize so grads are the mean over `pending`.
          const float fix = static_cast<float>(config.accumulation_steps) / static_cast<float>(pending);
          for (auto& [_, t] : params)
            if (t.has_grad())
              for (float& g : t.mutable_grad()) g *= fix;
        }
        try {
          adam_step(params, state, hyper);
        } catch (const std::runtime_error& e) {
          result.aborted = true;
          result.abort_reason = e.what();
          return result;
        }
        params.zero_grad();
        ema_update(ema, params, config.ema_decay);
        ++result.optimizer_steps;
        pending = 0;
        if (config.max_steps > 0 && result.optimizer_steps >= config.max_steps) {
          step_cap_hit = true;
          break;
        }
      }
    }
    params.zero_grad();
    if (!params.all_finite() || !ema.all_finite()) {
      result.aborted = true;
      result.abort_reason = "non-finite parameters after epoch " + std::to_string(epoch);
      return result;
    }

    const double train_loss = micro_batches ? epoch_loss / micro_batches : 0.0;
    const double val_loss =
        hooks.validator ? hooks.validator(ema, epoch) : evaluate(ema, unet, val_set, val_draws, sched);
    result.train_history.push_back(train_loss);
    result.val_history.push_back(val_loss);
    result.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch(epoch, train_loss, val_loss);
    if (!std::isfinite(val_loss)) {
      result.aborted = true;
      result.abort_reason = "non-finite validation loss at epoch " + std::to_string(epoch);
      return result;
    }
    const bool improved = val_loss < stopper.best();
    const bool stop = stopper.update(val_loss);
    if (improved) result.best = snapshot(epoch, val_loss);
    if (stop || step_cap_hit) break;
  }
  // Histories cover every epoch run, including those after the best one.
  result.best.val_history = result.val_history;
  result.best.train_history = result.train_history;
  return result;
}

}  // namespace

double validation_loss(const DenoiserParams& params, const UNetConfig& unet, const std::vector<TrainingPair>& pairs,
                       const NoiseSchedule& sched, uint64_t seed, int batch_size) {
  if (pairs.empty()) throw std::invalid_argument("validation_loss: empty set");
  const ValidationSet vs = fixed_validation_draws(pairs, unet, sched, seed, batch_size);
  return evaluate(params, unet, pairs, vs, sched);
}

TrainResult train(const std::vector<TrainingPair>& train_set, const std::vector<TrainingPair>& val_set,
                  const UNetConfig& unet, const TrainConfig& config, const NoiseSchedule& sched,
                  const TrainHooks& hooks) {
  config.validate();
  unet.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  if (val_set.empty() && !hooks.validator) throw std::invalid_argument("train: empty validation split");
  RngStream init_rng = RngStream(config.seed).substream("init");
  DenoiserParams params = init_params(unet, init_rng);
  DenoiserParams ema = frozen_copy(params);
  return run_training(std::move(params), std::move(ema), train_set, val_set, unet, config, sched, hooks, "");
}

TrainResult finetune(const Checkpoint& base, const std::string& category, const std::vector<TrainingPair>& train_set,
                     const std::vector<TrainingPair>& val_set, const TrainConfig& config, const NoiseSchedule& sched,
                     const TrainHooks& hooks) {
  config.validate();
  if (sched.steps != base.diffusion_steps) {
    throw std::invalid_argument("finetune: schedule has " + std::to_string(sched.steps) +
                                " steps but the base model was trained with " + std::to_string(base.diffusion_steps));
  }
  const std::vector<TrainingPair> cat_train = filter_category(train_set, category);
  if (cat_train.empty()) throw std::invalid_argument("finetune: no training pairs for category '" + category + "'");
  std::vector<TrainingPair> cat_val = filter_category(val_set, category);
  if (cat_val.empty() && !hooks.validator) {
    throw std::invalid_argument("finetune: no validation pairs for category '" + category + "'");
  }
  TrainResult r = run_training(trainable_copy(base.params), frozen_copy(base.ema_params), cat_train, cat_val,
                               base.unet, config, sched, hooks, category);
  return r;
}

}  // namespace maskdiff
