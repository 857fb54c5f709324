#pragma once

#include <string>
#include <vector>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/unet.hpp"

namespace maskdiff::testing {

// Smallest config that still exercises every block: two levels, a channel
// change, group norm with two groups.
inline UNetConfig tiny_config() {
  UNetConfig c;
  c.image_size = 8;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.time_embed_dim = 8;
  c.groups = 2;
  return c;
}

// Initialized parameters with every tensor (including the zero-initialized
// output convolution, biases and norm affines) perturbed, so that no gradient
// path is trivially zero.
inline DenoiserParams randomized_params(const UNetConfig& config, RngStream& rng, float scale = 0.2f) {
  DenoiserParams p = init_params(config, rng);
  for (auto& [name, t] : p) {
    for (float& v : t.mutable_data()) v += scale * static_cast<float>(rng.normal());
  }
  return p;
}

// Random images in [-1, 1] with random binary masks.
inline TrainBatch random_batch(int n, int size, RngStream& rng) {
  const auto count = static_cast<size_t>(n) * static_cast<size_t>(size) * static_cast<size_t>(size);
  std::vector<float> img(count), mask(count);
  for (size_t i = 0; i < count; ++i) {
    img[i] = static_cast<float>(2.0 * rng.uniform() - 1.0);
    mask[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
  }
  TrainBatch b;
  b.images = Tensor::from_data({n, 1, size, size}, std::move(img));
  b.masks = Tensor::from_data({n, 1, size, size}, std::move(mask));
  return b;
}

}  // namespace maskdiff::testing
