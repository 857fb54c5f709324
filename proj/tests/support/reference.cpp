#include "reference.hpp"

#include <cmath>
#include <stdexcept>

namespace maskdiff::testing::ref {

namespace {

size_t count(const Shape& s) {
  size_t n = 1;
  for (int64_t d : s) n *= static_cast<size_t>(d);
  return n;
}

void same_shape(const Array& a, const Array& b) {
  if (a.shape != b.shape) throw std::invalid_argument("ref: shape mismatch");
}

}  // namespace

Array from(const Tensor& t) { return {t.shape(), {t.data().begin(), t.data().end()}}; }

Array zeros(const Shape& shape) { return {shape, std::vector<double>(count(shape), 0.0)}; }

Array add(const Array& a, const Array& b) {
  same_shape(a, b);
  Array o = a;
  for (size_t i = 0; i < o.v.size(); ++i) o.v[i] += b.v[i];
  return o;
}

Array sub(const Array& a, const Array& b) {
  same_shape(a, b);
  Array o = a;
  for (size_t i = 0; i < o.v.size(); ++i) o.v[i] -= b.v[i];
  return o;
}

Array mul(const Array& a, const Array& b) {
  same_shape(a, b);
  Array o = a;
  for (size_t i = 0; i < o.v.size(); ++i) o.v[i] *= b.v[i];
  return o;
}

Array scale(const Array& a, double f) {
  Array o = a;
  for (double& x : o.v) x *= f;
  return o;
}

Array add_channel_bias(const Array& x, const Array& bias) {
  Array o = x;
  for (int64_t n = 0; n < x.dim(0); ++n)
    for (int64_t c = 0; c < x.dim(1); ++c)
      for (int64_t y = 0; y < x.dim(2); ++y)
        for (int64_t i = 0; i < x.dim(3); ++i) o.at(n, c, y, i) += bias.v[static_cast<size_t>(n * x.dim(1) + c)];
  return o;
}

Array linear(const Array& x, const Array& w, const Array& b) {
  const int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  Array o = zeros({n, out});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t j = 0; j < out; ++j) {
      double acc = b.v[static_cast<size_t>(j)];
      for (int64_t k = 0; k < in; ++k) acc += x.v[static_cast<size_t>(r * in + k)] * w.v[static_cast<size_t>(j * in + k)];
      o.v[static_cast<size_t>(r * out + j)] = acc;
    }
  return o;
}

Array conv2d(const Array& x, const Array& w, const Array& b, int stride, int pad) {
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Array o = zeros({n, cout, oh, ow});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xo = 0; xo < ow; ++xo) {
          double acc = b.v[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = y * stride + ky - pad, ix = xo * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(s, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          o.at(s, co, y, xo) = acc;
        }
  return o;
}

Array silu(const Array& x) {
  Array o = x;
  for (double& v : o.v) v = v / (1.0 + std::exp(-v));
  return o;
}

Array group_norm(const Array& x, int groups, const Array& gamma, const Array& beta, double eps) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), cpg = c / groups;
  Array o = x;
  for (int64_t s = 0; s < n; ++s)
    for (int64_t g = 0; g < groups; ++g) {
      double m = 0.0, m2 = 0.0;
      const double cnt = static_cast<double>(cpg * h * w);
      for (int64_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t i = 0; i < w; ++i) m += x.at(s, ch, y, i) / cnt;
      for (int64_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t i = 0; i < w; ++i) m2 += (x.at(s, ch, y, i) - m) * (x.at(s, ch, y, i) - m) / cnt;
      const double inv = 1.0 / std::sqrt(m2 + eps);
      for (int64_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t i = 0; i < w; ++i)
            o.at(s, ch, y, i) =
                (x.at(s, ch, y, i) - m) * inv * gamma.v[static_cast<size_t>(ch)] + beta.v[static_cast<size_t>(ch)];
    }
  return o;
}

Array upsample_nearest(const Array& x, int factor) {
  Array o = zeros({x.dim(0), x.dim(1), x.dim(2) * factor, x.dim(3) * factor});
  for (int64_t s = 0; s < o.dim(0); ++s)
    for (int64_t c = 0; c < o.dim(1); ++c)
      for (int64_t y = 0; y < o.dim(2); ++y)
        for (int64_t i = 0; i < o.dim(3); ++i) o.at(s, c, y, i) = x.at(s, c, y / factor, i / factor);
  return o;
}

Array concat_channels(const Array& a, const Array& b) {
  Array o = zeros({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (int64_t s = 0; s < o.dim(0); ++s)
    for (int64_t c = 0; c < o.dim(1); ++c)
      for (int64_t y = 0; y < o.dim(2); ++y)
        for (int64_t i = 0; i < o.dim(3); ++i)
          o.at(s, c, y, i) = c < a.dim(1) ? a.at(s, c, y, i) : b.at(s, c - a.dim(1), y, i);
  return o;
}

Array spatial_mean(const Array& x) {
  Array o = zeros({x.dim(0), x.dim(1)});
  const double cnt = static_cast<double>(x.dim(2) * x.dim(3));
  for (int64_t s = 0; s < x.dim(0); ++s)
    for (int64_t c = 0; c < x.dim(1); ++c)
      for (int64_t y = 0; y < x.dim(2); ++y)
        for (int64_t i = 0; i < x.dim(3); ++i) o.v[static_cast<size_t>(s * x.dim(1) + c)] += x.at(s, c, y, i) / cnt;
  return o;
}

double sum(const Array& x) {
  double acc = 0.0;
  for (double v : x.v) acc += v;
  return acc;
}

double mean(const Array& x) { return sum(x) / static_cast<double>(x.v.size()); }

double mse(const Array& a, const Array& b) {
  same_shape(a, b);
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) acc += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
  return acc / static_cast<double>(a.v.size());
}

Array timestep_embedding(std::span<const int> timesteps, int dim) {
  const auto n = static_cast<int64_t>(timesteps.size());
  Array o = zeros({n, dim});
  const int half = dim / 2;
  for (int64_t r = 0; r < n; ++r)
    for (int k = 0; k < half; ++k) {
      const double angle = timesteps[static_cast<size_t>(r)] * std::exp(-std::log(10000.0) * 2.0 * k / dim);
      o.v[static_cast<size_t>(r * dim + k)] = std::sin(angle);
      o.v[static_cast<size_t>(r * dim + half + k)] = std::cos(angle);
    }
  return o;
}

Params from(const DenoiserParams& p) {
  Params out;
  for (const auto& [name, t] : p) out.emplace(name, from(t));
  return out;
}

namespace {

struct Net {
  const Params& p;
  const UNetConfig& c;

  const Array& w(const std::string& name) const { return p.at(name); }

  Array conv(const std::string& name, const Array& x, int stride = 1) const {
    const Array& k = w(name + ".weight");
    return conv2d(x, k, w(name + ".bias"), stride, static_cast<int>(k.dim(2) / 2));
  }
  Array norm(const std::string& name, const Array& x) const {
    return group_norm(x, c.groups, w(name + ".gamma"), w(name + ".beta"));
  }
  Array dense(const std::string& name, const Array& x) const {
    return linear(x, w(name + ".weight"), w(name + ".bias"));
  }
  Array res(const std::string& name, const Array& x, const Array& temb) const {
    Array h = conv(name + ".conv1", silu(norm(name + ".norm1", x)));
    h = add_channel_bias(h, dense(name + ".temb", temb));
    h = conv(name + ".conv2", silu(norm(name + ".norm2", h)));
    return add(p.contains(name + ".skip.weight") ? conv(name + ".skip", x) : x, h);
  }
};

}  // namespace

Array denoise(const Params& p, const Array& input, std::span<const int> timesteps, const UNetConfig& c) {
  const Net net{p, c};
  const Array temb = silu(net.dense("time.fc2", silu(net.dense("time.fc1", timestep_embedding(timesteps, c.time_embed_dim)))));
  Array h = net.conv("conv_in", input);
  std::vector<Array> skips;
  const int levels = c.levels();
  for (int i = 0; i < levels; ++i) {
    const std::string name = "down." + std::to_string(i);
    h = net.res(name + ".res", h, temb);
    skips.push_back(h);
    if (i + 1 < levels) h = net.conv(name + ".downsample", h, 2);
  }
  h = net.res("mid.res", h, temb);
  for (int i = levels - 1; i >= 0; --i) {
    const std::string name = "up." + std::to_string(i);
    h = net.res(name + ".res", concat_channels(h, skips[static_cast<size_t>(i)]), temb);
    if (i > 0) h = net.conv(name + ".upsample", upsample_nearest(h, 2));
  }
  return net.conv("out.conv", silu(net.norm("out.norm", h)));
}

double noise_prediction_loss(const Params& p, const UNetConfig& c, const Array& x0, const Array& mask,
                             const Array& eps, std::span<const int> timesteps, std::span<const double> alpha_bar) {
  Array xt = x0;
  const int64_t per = x0.dim(1) * x0.dim(2) * x0.dim(3);
  for (int64_t s = 0; s < x0.dim(0); ++s) {
    const double ab = alpha_bar[static_cast<size_t>(timesteps[static_cast<size_t>(s)])];
    for (int64_t i = 0; i < per; ++i) {
      const auto k = static_cast<size_t>(s * per + i);
      xt.v[k] = std::sqrt(ab) * x0.v[k] + std::sqrt(1.0 - ab) * eps.v[k];
    }
  }
  return mse(denoise(p, concat_channels(xt, mask), timesteps, c), eps);
}

}  // namespace maskdiff::testing::ref
