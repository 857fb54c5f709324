#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/tensor.hpp"
#include "maskdiff/unet.hpp"

namespace maskdiff {

/// Image/mask pairs: images in [-1, 1], masks exactly {0, 1}, both [N,1,H,W].
struct TrainBatch {
  Tensor images;
  Tensor masks;
  std::vector<std::string> categories;

  int64_t size() const { return images.dim(0); }
  // Throws when shapes disagree or a mask value is not 0/1.
  void validate() const;
};

// Anything that maps (concat(x_t, mask), timesteps) to a noise prediction.
using NoisePredictor = std::function<Tensor(const Tensor& x_and_mask, std::span<const int> timesteps)>;

NoisePredictor make_predictor(const DenoiserParams& params, const UNetConfig& config);

/// Timesteps and Gaussian noise for one batch.
struct NoiseDraw {
  std::vector<int> timesteps;
  Tensor eps;
};

// Draws, per sample in order, a uniform timestep followed by that sample's noise.
NoiseDraw draw_noise(const Shape& image_shape, const NoiseSchedule& sched, RngStream& rng);

// Mean squared error between predicted and true noise for a fixed draw.
Tensor noise_prediction_loss(const NoisePredictor& predictor, const TrainBatch& batch,
                             const NoiseDraw& draw, const NoiseSchedule& sched);

Tensor training_loss(const NoisePredictor& predictor, const TrainBatch& batch, const NoiseSchedule& sched,
                     RngStream& rng);
Tensor training_loss(const DenoiserParams& params, const UNetConfig& config, const TrainBatch& batch,
                     const NoiseSchedule& sched, RngStream& rng);

struct SamplerOptions {
  // Clip the clean image implied by each noise prediction to [-1, 1] and feed
  // posterior_step the matching noise. Without it, prediction errors at the
  // last steps of a clipped-beta schedule are amplified by 1/sqrt(alpha_t).
  bool clip_denoised = true;
};

// Ancestral sampling for a batch of masks [N,1,H,W], sample k drawing all of
// its noise from streams[k]. Output clamped to [-1, 1].
Tensor sample_masks(const NoisePredictor& predictor, const Tensor& masks, const NoiseSchedule& sched,
                    std::span<RngStream> streams, const SamplerOptions& options = {});

// Single-mask sampler: mask [1,1,H,W].
Tensor sample(const NoisePredictor& predictor, const Tensor& mask, const NoiseSchedule& sched, RngStream& rng,
              const SamplerOptions& options = {});

// `per_mask` samples for each mask; sample j of mask i uses
// rng.substream(i * per_mask + j). Result order is mask-major.
// Work is batched in chunks of `chunk` chains, which does not change results.
std::vector<Tensor> sample_batch(const NoisePredictor& predictor, const std::vector<Tensor>& masks, int per_mask,
                                 const NoiseSchedule& sched, const RngStream& rng, int chunk = 16,
                                 const SamplerOptions& options = {});

// Replaces eps_hat with the noise consistent with the clipped clean-image
// estimate clamp((x_t - sqrt(1 - ab) eps_hat) / sqrt(ab), -1, 1). Elements
// whose estimate is already in range keep their value.
Tensor clip_noise_prediction(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

// Stacks [1,C,H,W] tensors (or [C,H,W]) into [N,C,H,W].
Tensor stack_images(const std::vector<Tensor>& images);

// Maps 8-bit pixels to [-1, 1] with a per-image min-max stretch. A constant
// image maps to all zeros.
std::vector<float> normalize_minmax(std::span<const uint8_t> pixels);
// [-1, 1] -> [0, 255] with rounding; values outside are clamped.
std::vector<uint8_t> to_uint8(std::span<const float> values);

}  // namespace maskdiff
