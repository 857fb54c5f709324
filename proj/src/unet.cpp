#include "maskdiff/unet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace maskdiff {

namespace {

constexpr float kInitStd = 0.02f;

Tensor truncated_normal(Shape shape, RngStream& rng) {
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    v = static_cast<float>(z * kInitStd);
  }
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0f, true); }

void add_conv(DenoiserParams& p, const std::string& name, int in, int out, int k, RngStream& rng) {
  p.insert(name + ".weight", truncated_normal({out, in, k, k}, rng));
  p.insert(name + ".bias", zeros_param({out}));
}

void add_norm(DenoiserParams& p, const std::string& name, int channels) {
  p.insert(name + ".gamma", ones_param({channels}));
  p.insert(name + ".beta", zeros_param({channels}));
}

void add_linear(DenoiserParams& p, const std::string& name, int in, int out, RngStream& rng) {
  p.insert(name + ".weight", truncated_normal({out, in}, rng));
  p.insert(name + ".bias", zeros_param({out}));
}

void add_res_block(DenoiserParams& p, const std::string& name, int in, int out, int embed,
                   RngStream& rng) {
  add_norm(p, name + ".norm1", in);
  add_conv(p, name + ".conv1", in, out, 3, rng);
  add_linear(p, name + ".temb", embed, out, rng);
  add_norm(p, name + ".norm2", out);
  add_conv(p, name + ".conv2", out, out, 3, rng);
  if (in != out) add_conv(p, name + ".skip", in, out, 1, rng);
}

class Forward {
 public:
  Forward(const DenoiserParams& p, const UNetConfig& c) : p_(p), c_(c) {}

  Tensor conv(const std::string& name, const Tensor& x, int stride = 1) const {
    const Tensor& w = p_.at(name + ".weight");
    const int pad = static_cast<int>(w.dim(2) / 2);
    return conv2d(x, w, p_.at(name + ".bias"), stride, pad);
  }

  Tensor norm(const std::string& name, const Tensor& x) const {
    return group_norm(x, c_.groups, p_.at(name + ".gamma"), p_.at(name + ".beta"));
  }

  Tensor dense(const std::string& name, const Tensor& x) const {
    return linear(x, p_.at(name + ".weight"), p_.at(name + ".bias"));
  }

  Tensor res_block(const std::string& name, const Tensor& x, const Tensor& temb_act) const {
    Tensor h = conv(name + ".conv1", silu(norm(name + ".norm1", x)));
    h = add_channel_bias(h, dense(name + ".temb", temb_act));
    h = conv(name + ".conv2", silu(norm(name + ".norm2", h)));
    const Tensor skip = p_.contains(name + ".skip.weight") ? conv(name + ".skip", x) : x;
    return add(skip, h);
  }

  // Returns the noise prediction; `bottleneck` receives the middle block output.
  Tensor run(const Tensor& input, std::span<const int> timesteps, const DenoiseOptions& options,
             Tensor* bottleneck, bool stop_at_bottleneck) const {
    const int levels = c_.levels();
    const Tensor emb = timestep_embedding(timesteps, c_.time_embed_dim);
    const Tensor temb = dense("time.fc2", silu(dense("time.fc1", emb)));
    const Tensor temb_act = silu(temb);

    Tensor h = conv("conv_in", input);
    std::vector<Tensor> skips;
    for (int i = 0; i < levels; ++i) {
      const std::string name = "down." + std::to_string(i);
      h = res_block(name + ".res", h, temb_act);
      skips.push_back(h);
      if (i + 1 < levels) h = conv(name + ".downsample", h, 2);
    }
    h = res_block("mid.res", h, temb_act);
    if (bottleneck) *bottleneck = h;
    if (stop_at_bottleneck) return h;

    for (int i = levels - 1; i >= 0; --i) {
      const std::string name = "up." + std::to_string(i);
      Tensor skip = skips[static_cast<size_t>(i)];
      if (options.zero_skip_level == i) skip = Tensor::zeros(skip.shape());
      h = res_block(name + ".res", concat_channels(h, skip), temb_act);
      if (i > 0) h = conv(name + ".upsample", upsample_nearest(h, 2));
    }
    return conv("out.conv", silu(norm("out.norm", h)));
  }

 private:
  const DenoiserParams& p_;
  const UNetConfig& c_;
};

void check_input(const Tensor& x, std::span<const int> timesteps, const UNetConfig& config) {
  if (x.rank() != 4 || x.dim(1) != config.in_channels || x.dim(2) != config.image_size ||
      x.dim(3) != config.image_size) {
    throw std::invalid_argument("denoise: input " + shape_str(x.shape()) + " does not match config [N," +
                                std::to_string(config.in_channels) + "," +
                                std::to_string(config.image_size) + "," +
                                std::to_string(config.image_size) + "]");
  }
  if (static_cast<int64_t>(timesteps.size()) != x.dim(0)) {
    throw std::invalid_argument("denoise: " + std::to_string(timesteps.size()) + " timesteps for batch of " +
                                std::to_string(x.dim(0)));
  }
}

}  // namespace

void UNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("UNetConfig: " + msg); };
  if (channel_multipliers.empty()) fail("channel_multipliers must not be empty");
  if (image_channels < 1) fail("image_channels must be >= 1");
  if (in_channels < 2 || in_channels <= image_channels) fail("in_channels must cover image + mask channels");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) fail("time_embed_dim must be even");
  if (groups < 1) fail("groups must be >= 1");
  const int factor = 1 << (levels() - 1);
  if (image_size < factor || image_size % factor != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by " + std::to_string(factor));
  }
  for (int i = 0; i < levels(); ++i) {
    if (channel_multipliers[static_cast<size_t>(i)] < 1) fail("channel multipliers must be >= 1");
    // Group norm sees the stage width and, in the decoder, stage width plus skip.
    const int c = stage_channels(i);
    for (int n : {c, 2 * c}) {
      if (n % groups != 0) fail(std::to_string(n) + " channels not divisible by groups " + std::to_string(groups));
    }
  }
}

void DenoiserParams::insert(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw std::invalid_argument("duplicate parameter " + name);
  }
}

const Tensor& DenoiserParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

Tensor& DenoiserParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

int64_t DenoiserParams::parameter_count() const {
  int64_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

DenoiserParams DenoiserParams::clone() const {
  DenoiserParams out;
  for (const auto& [name, t] : tensors_) {
    Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    out.insert(name, std::move(c));
  }
  return out;
}

void DenoiserParams::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

bool DenoiserParams::all_finite() const {
  for (const auto& [_, t] : tensors_)
    for (float v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

void DenoiserParams::check_compatible(const DenoiserParams& other) const {
  if (size() != other.size()) {
    throw std::invalid_argument("parameter sets differ in size: " + std::to_string(size()) + " vs " +
                                std::to_string(other.size()));
  }
  for (const auto& [name, t] : tensors_) {
    if (!other.contains(name)) throw std::invalid_argument("parameter " + name + " missing from other set");
    if (other.at(name).shape() != t.shape()) {
      throw std::invalid_argument("parameter " + name + " shape " + shape_str(t.shape()) + " vs " +
                                  shape_str(other.at(name).shape()));
    }
  }
}

DenoiserParams init_params(const UNetConfig& config, RngStream& rng) {
  config.validate();
  DenoiserParams p;
  const int embed = config.time_embed_dim;
  add_linear(p, "time.fc1", embed, embed, rng);
  add_linear(p, "time.fc2", embed, embed, rng);
  add_conv(p, "conv_in", config.in_channels, config.stage_channels(0), 3, rng);

  const int levels = config.levels();
  int prev = config.stage_channels(0);
  for (int i = 0; i < levels; ++i) {
    const int ch = config.stage_channels(i);
    const std::string name = "down." + std::to_string(i);
    add_res_block(p, name + ".res", prev, ch, embed, rng);
    if (i + 1 < levels) add_conv(p, name + ".downsample", ch, ch, 3, rng);
    prev = ch;
  }
  add_res_block(p, "mid.res", prev, prev, embed, rng);

  int cur = prev;
  for (int i = levels - 1; i >= 0; --i) {
    const int ch = config.stage_channels(i);
    const std::string name = "up." + std::to_string(i);
    add_res_block(p, name + ".res", cur + ch, ch, embed, rng);
    cur = ch;
    if (i > 0) {
      add_conv(p, name + ".upsample", ch, config.stage_channels(i - 1), 3, rng);
      cur = config.stage_channels(i - 1);
    }
  }
  add_norm(p, "out.norm", cur);
  p.insert("out.conv.weight", zeros_param({config.image_channels, cur, 3, 3}));
  p.insert("out.conv.bias", zeros_param({config.image_channels}));
  return p;
}

Tensor denoise(const DenoiserParams& params, const Tensor& x_and_mask, std::span<const int> timesteps,
               const UNetConfig& config, const DenoiseOptions& options) {
  check_input(x_and_mask, timesteps, config);
  return Forward(params, config).run(x_and_mask, timesteps, options, nullptr, false);
}

Tensor encode_bottleneck(const DenoiserParams& params, const Tensor& x_and_mask,
                         std::span<const int> timesteps, const UNetConfig& config) {
  check_input(x_and_mask, timesteps, config);
  Tensor h = Forward(params, config).run(x_and_mask, timesteps, {}, nullptr, true);
  return spatial_mean(h);
}

}  // namespace maskdiff
