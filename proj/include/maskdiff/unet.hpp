#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/tensor.hpp"

namespace maskdiff {

struct UNetConfig {
  int image_size = 32;
  int image_channels = 1;
  // Image channels plus mask channels.
  int in_channels = 2;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 2};
  int time_embed_dim = 128;
  int groups = 8;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int stage_channels(int level) const { return base_channels * channel_multipliers.at(level); }
  int bottleneck_channels() const { return stage_channels(levels() - 1); }

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  bool operator==(const UNetConfig&) const = default;
};

/// Named parameter set. Iteration order is the lexicographic order of the
/// parameter paths, which fixes the checkpoint layout.
class DenoiserParams {
 public:
  using Map = std::map<std::string, Tensor>;

  void insert(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  size_t size() const { return tensors_.size(); }
  int64_t parameter_count() const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  // Deep copy of values; the copy's leaves require grad like the originals.
  DenoiserParams clone() const;
  void zero_grad();
  bool all_finite() const;
  // Throws if the key sets or shapes differ.
  void check_compatible(const DenoiserParams& other) const;

 private:
  Map tensors_;
};

DenoiserParams init_params(const UNetConfig& config, RngStream& rng);

struct DenoiseOptions {
  // When >= 0, the skip connection from this encoder level is replaced by zeros.
  int zero_skip_level = -1;
};

// Predicts noise from the channel-wise concatenation of noisy image and mask.
// x_and_mask: [N, in_channels, S, S]; one timestep per sample.
Tensor denoise(const DenoiserParams& params, const Tensor& x_and_mask, std::span<const int> timesteps,
               const UNetConfig& config, const DenoiseOptions& options = {});

// Spatially pooled bottleneck activations: [N, bottleneck_channels].
Tensor encode_bottleneck(const DenoiserParams& params, const Tensor& x_and_mask,
                         std::span<const int> timesteps, const UNetConfig& config);

}  // namespace maskdiff
