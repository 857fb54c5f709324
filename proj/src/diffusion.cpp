#include "maskdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maskdiff {

void TrainBatch::validate() const {
  if (!images.defined() || !masks.defined()) throw std::invalid_argument("TrainBatch: images and masks required");
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw std::invalid_argument("TrainBatch: images must be [N,1,H,W], got " + shape_str(images.shape()));
  }
  if (masks.shape() != images.shape()) {
    throw std::invalid_argument("TrainBatch: masks " + shape_str(masks.shape()) + " not aligned with images " +
                                shape_str(images.shape()));
  }
  for (float v : masks.data()) {
    if (v != 0.0f && v != 1.0f) throw std::invalid_argument("TrainBatch: mask value " + std::to_string(v) + " not in {0,1}");
  }
  if (!categories.empty() && static_cast<int64_t>(categories.size()) != images.dim(0)) {
    throw std::invalid_argument("TrainBatch: category count does not match batch size");
  }
}

NoisePredictor make_predictor(const DenoiserParams& params, const UNetConfig& config) {
  return [&params, config](const Tensor& x, std::span<const int> t) { return denoise(params, x, t, config); };
}

NoiseDraw draw_noise(const Shape& image_shape, const NoiseSchedule& sched, RngStream& rng) {
  if (image_shape.size() != 4) throw std::invalid_argument("draw_noise: expected [N,C,H,W]");
  const int64_t n = image_shape[0];
  const int64_t per = image_shape[1] * image_shape[2] * image_shape[3];
  NoiseDraw draw;
  draw.timesteps.resize(static_cast<size_t>(n));
  std::vector<float> eps(static_cast<size_t>(n * per));
  for (int64_t s = 0; s < n; ++s) {
    draw.timesteps[static_cast<size_t>(s)] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(sched.steps)));
    for (int64_t i = 0; i < per; ++i) eps[s * per + i] = static_cast<float>(rng.normal());
  }
  draw.eps = Tensor::from_data(image_shape, std::move(eps));
  return draw;
}

Tensor noise_prediction_loss(const NoisePredictor& predictor, const TrainBatch& batch, const NoiseDraw& draw,
                             const NoiseSchedule& sched) {
  batch.validate();
  const Shape& shape = batch.images.shape();
  if (draw.eps.shape() != shape || static_cast<int64_t>(draw.timesteps.size()) != shape[0]) {
    throw std::invalid_argument("noise draw does not match batch " + shape_str(shape));
  }
  const int64_t per = shape[1] * shape[2] * shape[3];
  auto x0 = batch.images.data();
  auto eps = draw.eps.data();
  std::vector<float> xt(x0.size());
  for (int64_t s = 0; s < shape[0]; ++s) {
    const int t = draw.timesteps[static_cast<size_t>(s)];
    if (t < 0 || t >= sched.steps) throw std::out_of_range("noise draw timestep outside schedule");
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    for (int64_t i = 0; i < per; ++i) {
      const int64_t k = s * per + i;
      xt[k] = static_cast<float>(a * x0[k] + b * eps[k]);
    }
  }
  const Tensor noisy = Tensor::from_data(shape, std::move(xt));
  const Tensor eps_hat = predictor(concat_channels(noisy, batch.masks), draw.timesteps);
  return mse_loss(eps_hat, draw.eps);
}

Tensor training_loss(const NoisePredictor& predictor, const TrainBatch& batch, const NoiseSchedule& sched,
                     RngStream& rng) {
  batch.validate();
  const NoiseDraw draw = draw_noise(batch.images.shape(), sched, rng);
  return noise_prediction_loss(predictor, batch, draw, sched);
}

Tensor training_loss(const DenoiserParams& params, const UNetConfig& config, const TrainBatch& batch,
                     const NoiseSchedule& sched, RngStream& rng) {
  return training_loss(make_predictor(params, config), batch, sched, rng);
}

Tensor clip_noise_prediction(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.steps) throw std::invalid_argument("clip_noise_prediction: step out of range");
  if (x_t.shape() != eps_hat.shape()) {
    throw std::invalid_argument("clip_noise_prediction: shape mismatch " + shape_str(x_t.shape()) + " vs " +
                                shape_str(eps_hat.shape()));
  }
  const double a = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]);
  auto xs = x_t.data(), es = eps_hat.data();
  std::vector<float> out(es.begin(), es.end());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x0 = (xs[i] - b * es[i]) / a;
    if (x0 > 1.0 || x0 < -1.0) out[i] = static_cast<float>((xs[i] - a * std::clamp(x0, -1.0, 1.0)) / b);
  }
  return Tensor::from_data(x_t.shape(), std::move(out));
}

Tensor sample_masks(const NoisePredictor& predictor, const Tensor& masks, const NoiseSchedule& sched,
                    std::span<RngStream> streams, const SamplerOptions& options) {
  if (masks.rank() != 4 || masks.dim(1) != 1) {
    throw std::invalid_argument("sample: masks must be [N,1,H,W], got " + shape_str(masks.shape()));
  }
  for (float v : masks.data()) {
    if (v != 0.0f && v != 1.0f) throw std::invalid_argument("sample: mask is not binary");
  }
  const int64_t n = masks.dim(0);
  if (static_cast<int64_t>(streams.size()) != n) throw std::invalid_argument("sample: one stream per mask required");
  const int64_t per = masks.dim(2) * masks.dim(3);

  std::vector<float> init(static_cast<size_t>(n * per));
  for (int64_t s = 0; s < n; ++s)
    for (int64_t i = 0; i < per; ++i) init[s * per + i] = static_cast<float>(streams[s].normal());
  Tensor x = Tensor::from_data(masks.shape(), std::move(init));

  std::vector<int> ts(static_cast<size_t>(n));
  for (int t = sched.steps - 1; t >= 0; --t) {
    std::fill(ts.begin(), ts.end(), t);
    Tensor eps_hat = predictor(concat_channels(x, masks), ts).detach();
    if (options.clip_denoised) eps_hat = clip_noise_prediction(x, eps_hat, t, sched);
    // Per-sample posterior step so each chain only consumes its own stream.
    std::vector<float> next(static_cast<size_t>(n * per));
    for (int64_t s = 0; s < n; ++s) {
      auto slice = [&](const Tensor& src) {
        auto d = src.data();
        return Tensor::from_data({1, 1, masks.dim(2), masks.dim(3)},
                                 std::vector<float>(d.begin() + s * per, d.begin() + (s + 1) * per));
      };
      const Tensor stepped = posterior_step(slice(x), slice(eps_hat), t, sched, streams[s]);
      std::copy(stepped.data().begin(), stepped.data().end(), next.begin() + s * per);
    }
    x = Tensor::from_data(masks.shape(), std::move(next));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  for (float& v : out) v = std::clamp(v, -1.0f, 1.0f);
  return Tensor::from_data(masks.shape(), std::move(out));
}

Tensor sample(const NoisePredictor& predictor, const Tensor& mask, const NoiseSchedule& sched, RngStream& rng,
              const SamplerOptions& options) {
  if (mask.rank() != 4 || mask.dim(0) != 1) {
    throw std::invalid_argument("sample: mask must be [1,1,H,W], got " + shape_str(mask.shape()));
  }
  return sample_masks(predictor, mask, sched, std::span<RngStream>(&rng, 1), options);
}

std::vector<Tensor> sample_batch(const NoisePredictor& predictor, const std::vector<Tensor>& masks, int per_mask,
                                 const NoiseSchedule& sched, const RngStream& rng, int chunk,
                                 const SamplerOptions& options) {
  if (per_mask < 1) throw std::invalid_argument("sample_batch: per_mask must be >= 1");
  if (chunk < 1) throw std::invalid_argument("sample_batch: chunk must be >= 1");
  std::vector<Tensor> jobs;
  std::vector<RngStream> streams;
  for (size_t m = 0; m < masks.size(); ++m) {
    for (int j = 0; j < per_mask; ++j) {
      jobs.push_back(masks[m]);
      streams.push_back(rng.substream(static_cast<uint64_t>(m) * static_cast<uint64_t>(per_mask) +
                                      static_cast<uint64_t>(j)));
    }
  }
  std::vector<Tensor> results;
  results.reserve(jobs.size());
  for (size_t start = 0; start < jobs.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(jobs.size(), start + static_cast<size_t>(chunk));
    const std::vector<Tensor> group(jobs.begin() + static_cast<std::ptrdiff_t>(start),
                                    jobs.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor out = sample_masks(predictor, stack_images(group), sched,
                                    std::span<RngStream>(streams.data() + start, end - start), options);
    const int64_t per = out.numel() / out.dim(0);
    for (size_t k = 0; k < end - start; ++k) {
      auto d = out.data();
      results.push_back(Tensor::from_data(
          {1, out.dim(1), out.dim(2), out.dim(3)},
          std::vector<float>(d.begin() + static_cast<int64_t>(k) * per, d.begin() + static_cast<int64_t>(k + 1) * per)));
    }
  }
  return results;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty list");
  Shape item = images.front().shape();
  if (item.size() == 4) {
    if (item[0] != 1) throw std::invalid_argument("stack_images: items must have batch size 1");
    item.erase(item.begin());
  }
  if (item.size() != 3) throw std::invalid_argument("stack_images: items must be [C,H,W] or [1,C,H,W]");
  std::vector<float> data;
  data.reserve(static_cast<size_t>(shape_numel(item)) * images.size());
  for (const Tensor& t : images) {
    if (t.numel() != shape_numel(item)) {
      throw std::invalid_argument("stack_images: inconsistent shapes " + shape_str(t.shape()));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  Shape shape{static_cast<int64_t>(images.size())};
  shape.insert(shape.end(), item.begin(), item.end());
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::vector<float> normalize_minmax(std::span<const uint8_t> pixels) {
  std::vector<float> out(pixels.size(), 0.0f);
  if (pixels.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(pixels.begin(), pixels.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) return out;
  for (size_t i = 0; i < pixels.size(); ++i) {
    out[i] = static_cast<float>(2.0 * (pixels[i] - lo) / (hi - lo) - 1.0);
  }
  return out;
}

std::vector<uint8_t> to_uint8(std::span<const float> values) {
  std::vector<uint8_t> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(values[i]), -1.0, 1.0);
    out[i] = static_cast<uint8_t>(std::lround((v + 1.0) * 127.5));
  }
  return out;
}

}  // namespace maskdiff
