#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>

#include "maskdiff/tensor.hpp"

namespace maskdiff {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void require_rank(const std::string& op, const Tensor& t, int64_t rank, const char* name) {
  if (!t.defined()) dim_error(op, std::string(name) + " is undefined");
  if (t.rank() != rank) {
    dim_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got shape " +
                      shape_str(t.shape()));
  }
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    dim_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Input slot i of the node that produced `out`, or nullptr when it needs no grad.
TensorImpl* grad_input(TensorImpl& out, size_t i) {
  TensorImpl* in = out.node->inputs[i].get();
  return in->requires_grad ? in : nullptr;
}

struct ConvGeometry {
  int64_t channels, height, width, kernel_h, kernel_w, out_h, out_w;
  int stride, padding;
  int64_t patch() const { return channels * kernel_h * kernel_w; }
  int64_t out_pixels() const { return out_h * out_w; }
};

void im2col(const float* image, const ConvGeometry& g, float* cols) {
  const int64_t npix = g.out_pixels();
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (int64_t kj = 0; kj < g.kernel_w; ++kj) {
        float* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * npix;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t y = oy * g.stride - g.padding + ki;
          float* dst = row + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = image + (c * g.height + y) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t x = ox * g.stride - g.padding + kj;
            dst[ox] = (x < 0 || x >= g.width) ? 0.0f : src[x];
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const ConvGeometry& g, float* image) {
  const int64_t npix = g.out_pixels();
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (int64_t kj = 0; kj < g.kernel_w; ++kj) {
        const float* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * npix;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t y = oy * g.stride - g.padding + ki;
          if (y < 0 || y >= g.height) continue;
          float* dst = image + (c * g.height + y) * g.width;
          const float* src = row + oy * g.out_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t x = ox * g.stride - g.padding + kj;
            if (x >= 0 && x < g.width) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
    for (size_t k = 0; k < 2; ++k) {
      if (TensorImpl* in = grad_input(o, k)) {
        auto& g = in->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
    if (TensorImpl* in = grad_input(o, 0)) {
      auto& g = in->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (TensorImpl* in = grad_input(o, 1)) {
      auto& g = in->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result("mul", a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
    const auto& xa = o.node->inputs[0]->data;
    const auto& xb = o.node->inputs[1]->data;
    if (TensorImpl* in = grad_input(o, 0)) {
      auto& g = in->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * xb[i];
    }
    if (TensorImpl* in = grad_input(o, 1)) {
      auto& g = in->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * xa[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  auto x = a.data();
  std::vector<float> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor::make_result("scale", a.shape(), std::move(out), {a}, [factor](TensorImpl& o) {
    if (TensorImpl* in = grad_input(o, 0)) {
      auto& g = in->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", x, 4, "x");
  require_rank("add_channel_bias", bias, 2, "bias");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (bias.dim(0) != n || bias.dim(1) != c) {
    dim_error("add_channel_bias", "bias shape " + shape_str(bias.shape()) + " does not match " +
                                      shape_str(x.shape()));
  }
  auto src = x.data();
  auto b = bias.data();
  std::vector<float> out(src.begin(), src.end());
  for (int64_t nc = 0; nc < n * c; ++nc) {
    float* p = out.data() + nc * hw;
    for (int64_t i = 0; i < hw; ++i) p[i] += b[static_cast<size_t>(nc)];
  }
  return Tensor::make_result("add_channel_bias", x.shape(), std::move(out), {x, bias},
                             [nc_total = n * c, hw](TensorImpl& o) {
                               if (TensorImpl* in = grad_input(o, 0)) {
                                 auto& g = in->grad_buffer();
                                 for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                               }
                               if (TensorImpl* in = grad_input(o, 1)) {
                                 auto& g = in->grad_buffer();
                                 for (int64_t k = 0; k < nc_total; ++k) {
                                   double acc = 0.0;
                                   const float* p = o.grad.data() + k * hw;
                                   for (int64_t i = 0; i < hw; ++i) acc += p[i];
                                   g[static_cast<size_t>(k)] += static_cast<float>(acc);
                                 }
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2, "x");
  require_rank("linear", weight, 2, "weight");
  require_rank("linear", bias, 1, "bias");
  const int64_t n = x.dim(0), in_f = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in_f || bias.dim(0) != out_f) {
    dim_error("linear", "x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                            ", bias " + shape_str(bias.shape()) + " are incompatible");
  }
  auto xs = x.data(), ws = weight.data(), bs = bias.data();
  std::vector<float> out(static_cast<size_t>(n * out_f));
  // Row-by-row dot products keep each output row independent of batch size.
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t o = 0; o < out_f; ++o) {
      double acc = bs[o];
      for (int64_t i = 0; i < in_f; ++i) acc += double(xs[r * in_f + i]) * ws[o * in_f + i];
      out[r * out_f + o] = static_cast<float>(acc);
    }
  }
  return Tensor::make_result(
      "linear", {n, out_f}, std::move(out), {x, weight, bias}, [n, in_f, out_f](TensorImpl& o) {
        const auto& xv = o.node->inputs[0]->data;
        const auto& wv = o.node->inputs[1]->data;
        const auto& dy = o.grad;
        if (TensorImpl* in = grad_input(o, 0)) {
          auto& g = in->grad_buffer();
          for (int64_t r = 0; r < n; ++r)
            for (int64_t i = 0; i < in_f; ++i) {
              double acc = 0.0;
              for (int64_t k = 0; k < out_f; ++k) acc += double(dy[r * out_f + k]) * wv[k * in_f + i];
              g[r * in_f + i] += static_cast<float>(acc);
            }
        }
        if (TensorImpl* in = grad_input(o, 1)) {
          auto& g = in->grad_buffer();
          for (int64_t k = 0; k < out_f; ++k)
            for (int64_t i = 0; i < in_f; ++i) {
              double acc = 0.0;
              for (int64_t r = 0; r < n; ++r) acc += double(dy[r * out_f + k]) * xv[r * in_f + i];
              g[k * in_f + i] += static_cast<float>(acc);
            }
        }
        if (TensorImpl* in = grad_input(o, 2)) {
          auto& g = in->grad_buffer();
          for (int64_t k = 0; k < out_f; ++k) {
            double acc = 0.0;
            for (int64_t r = 0; r < n; ++r) acc += dy[r * out_f + k];
            g[k] += static_cast<float>(acc);
          }
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  require_rank("conv2d", input, 4, "input");
  require_rank("conv2d", kernel, 4, "kernel");
  require_rank("conv2d", bias, 1, "bias");
  if (stride < 1) dim_error("conv2d", "stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) dim_error("conv2d", "padding must be >= 0, got " + std::to_string(padding));
  const int64_t n = input.dim(0), filters = kernel.dim(0);
  if (kernel.dim(1) != input.dim(1)) {
    dim_error("conv2d", "input has " + std::to_string(input.dim(1)) + " channels but kernel " +
                            shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  }
  if (bias.dim(0) != filters) {
    dim_error("conv2d", "bias " + shape_str(bias.shape()) + " does not match " +
                            std::to_string(filters) + " filters");
  }
  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), 0, 0,
                 stride, padding};
  const int64_t span_h = g.height + 2 * padding - g.kernel_h;
  const int64_t span_w = g.width + 2 * padding - g.kernel_w;
  if (span_h < 0 || span_w < 0) {
    dim_error("conv2d", "kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                            shape_str(input.shape()));
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;

  const int64_t k = g.patch(), npix = g.out_pixels();
  const int64_t in_stride = g.channels * g.height * g.width;
  std::vector<float> out(static_cast<size_t>(n * filters * npix));
  const float* xin = input.data().data();
  ConstMapMat w(kernel.data().data(), filters, k);
  Eigen::Map<const Eigen::VectorXf> b(bias.data().data(), filters);

#pragma omp parallel
  {
    std::vector<float> cols(static_cast<size_t>(k * npix));
#pragma omp for schedule(static)
    for (int64_t s = 0; s < n; ++s) {
      im2col(xin + s * in_stride, g, cols.data());
      MapMat y(out.data() + s * filters * npix, filters, npix);
      y.noalias() = w * ConstMapMat(cols.data(), k, npix);
      y.colwise() += b;
    }
  }

  return Tensor::make_result(
      "conv2d", {n, filters, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
      [g, n, filters](TensorImpl& o) {
        const int64_t k = g.patch(), npix = g.out_pixels();
        const int64_t in_stride = g.channels * g.height * g.width;
        const TensorImpl& in = *o.node->inputs[0];
        const TensorImpl& ker = *o.node->inputs[1];
        TensorImpl* dx_t = grad_input(o, 0);
        TensorImpl* dw_t = grad_input(o, 1);
        TensorImpl* db_t = grad_input(o, 2);
        float* dx = dx_t ? dx_t->grad_buffer().data() : nullptr;
        ConstMapMat w(ker.data.data(), filters, k);

        // Per-sample weight gradients are reduced in sample order afterwards
        // so the result does not depend on the thread count.
        std::vector<float> dw_parts;
        if (dw_t) dw_parts.assign(static_cast<size_t>(n * filters * k), 0.0f);

#pragma omp parallel
        {
          std::vector<float> cols(static_cast<size_t>(k * npix));
#pragma omp for schedule(static)
          for (int64_t s = 0; s < n; ++s) {
            ConstMapMat dy(o.grad.data() + s * filters * npix, filters, npix);
            if (dw_t) {
              im2col(in.data.data() + s * in_stride, g, cols.data());
              MapMat part(dw_parts.data() + s * filters * k, filters, k);
              part.noalias() = dy * ConstMapMat(cols.data(), k, npix).transpose();
            }
            if (dx) {
              MapMat dcols(cols.data(), k, npix);
              dcols.noalias() = w.transpose() * dy;
              col2im(cols.data(), g, dx + s * in_stride);
            }
          }
        }
        if (dw_t) {
          auto& dw = dw_t->grad_buffer();
          for (int64_t s = 0; s < n; ++s) {
            const float* part = dw_parts.data() + s * filters * k;
            for (int64_t i = 0; i < filters * k; ++i) dw[static_cast<size_t>(i)] += part[i];
          }
        }
        if (db_t) {
          auto& db = db_t->grad_buffer();
          for (int64_t f = 0; f < filters; ++f) {
            double acc = 0.0;
            for (int64_t s = 0; s < n; ++s) {
              const float* p = o.grad.data() + (s * filters + f) * npix;
              for (int64_t i = 0; i < npix; ++i) acc += p[i];
            }
            db[static_cast<size_t>(f)] += static_cast<float>(acc);
          }
        }
      });
}

Tensor silu(const Tensor& x) {
  auto src = x.data();
  std::vector<float> out(src.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const float v = src[i];
    out[i] = v / (1.0f + std::exp(-v));
  }
  return Tensor::make_result("silu", x.shape(), std::move(out), {x}, [](TensorImpl& o) {
    if (TensorImpl* in = grad_input(o, 0)) {
      auto& g = in->grad_buffer();
      const auto& xv = in->data;
      for (size_t i = 0; i < g.size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-xv[i]));
        g[i] += o.grad[i] * s * (1.0f + xv[i] * (1.0f - s));
      }
    }
  });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank("group_norm", x, 4, "x");
  require_rank("group_norm", gamma, 1, "gamma");
  require_rank("group_norm", beta, 1, "beta");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups != 0) {
    dim_error("group_norm", std::to_string(c) + " channels not divisible by " + std::to_string(groups) +
                                " groups");
  }
  if (gamma.dim(0) != c || beta.dim(0) != c) {
    dim_error("group_norm", "gamma/beta must have " + std::to_string(c) + " entries");
  }
  if (!(eps > 0.0f)) dim_error("group_norm", "eps must be positive");
  const int64_t cpg = c / groups, group_size = cpg * hw;
  auto src = x.data();
  auto ga = gamma.data(), be = beta.data();
  std::vector<float> normalized(src.size());
  std::vector<float> inv_std(static_cast<size_t>(n * groups));
  std::vector<float> out(src.size());
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t gi = 0; gi < groups; ++gi) {
      const int64_t base = (s * c + gi * cpg) * hw;
      double mean = 0.0;
      for (int64_t i = 0; i < group_size; ++i) mean += src[base + i];
      mean /= double(group_size);
      double var = 0.0;
      for (int64_t i = 0; i < group_size; ++i) {
        const double d = src[base + i] - mean;
        var += d * d;
      }
      var /= double(group_size);
      const double istd = 1.0 / std::sqrt(var + eps);
      inv_std[s * groups + gi] = static_cast<float>(istd);
      for (int64_t ch = 0; ch < cpg; ++ch) {
        const int64_t cidx = gi * cpg + ch;
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t idx = base + ch * hw + i;
          const float xh = static_cast<float>((src[idx] - mean) * istd);
          normalized[idx] = xh;
          out[idx] = ga[cidx] * xh + be[cidx];
        }
      }
    }
  }
  return Tensor::make_result(
      "group_norm", x.shape(), std::move(out), {x, gamma, beta},
      [n, c, hw, groups, cpg, group_size, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](TensorImpl& o) {
        const auto& ga = o.node->inputs[1]->data;
        const auto& dy = o.grad;
        if (TensorImpl* gin = grad_input(o, 1)) {
          auto& g = gin->grad_buffer();
          for (int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int64_t s = 0; s < n; ++s) {
              const int64_t base = (s * c + ch) * hw;
              for (int64_t i = 0; i < hw; ++i) acc += double(dy[base + i]) * normalized[base + i];
            }
            g[static_cast<size_t>(ch)] += static_cast<float>(acc);
          }
        }
        if (TensorImpl* bin = grad_input(o, 2)) {
          auto& g = bin->grad_buffer();
          for (int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int64_t s = 0; s < n; ++s) {
              const int64_t base = (s * c + ch) * hw;
              for (int64_t i = 0; i < hw; ++i) acc += dy[base + i];
            }
            g[static_cast<size_t>(ch)] += static_cast<float>(acc);
          }
        }
        if (TensorImpl* xin = grad_input(o, 0)) {
          auto& g = xin->grad_buffer();
          for (int64_t s = 0; s < n; ++s) {
            for (int64_t gi = 0; gi < groups; ++gi) {
              const int64_t base = (s * c + gi * cpg) * hw;
              double mean_d = 0.0, mean_dx = 0.0;
              for (int64_t ch = 0; ch < cpg; ++ch) {
                const float gm = ga[gi * cpg + ch];
                for (int64_t i = 0; i < hw; ++i) {
                  const int64_t idx = base + ch * hw + i;
                  const double d = double(dy[idx]) * gm;
                  mean_d += d;
                  mean_dx += d * normalized[idx];
                }
              }
              mean_d /= double(group_size);
              mean_dx /= double(group_size);
              const double istd = inv_std[s * groups + gi];
              for (int64_t ch = 0; ch < cpg; ++ch) {
                const float gm = ga[gi * cpg + ch];
                for (int64_t i = 0; i < hw; ++i) {
                  const int64_t idx = base + ch * hw + i;
                  const double d = double(dy[idx]) * gm;
                  g[idx] += static_cast<float>(istd * (d - mean_d - normalized[idx] * mean_dx));
                }
              }
            }
          }
        }
      });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank("upsample_nearest", x, 4, "x");
  if (factor < 1) dim_error("upsample_nearest", "factor must be >= 1");
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  auto src = x.data();
  std::vector<float> out(static_cast<size_t>(nc * oh * ow));
  for (int64_t p = 0; p < nc; ++p)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx)
        out[(p * oh + y) * ow + xx] = src[(p * h + y / factor) * w + xx / factor];
  return Tensor::make_result("upsample_nearest", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                             [nc, h, w, factor](TensorImpl& o) {
                               TensorImpl* in = grad_input(o, 0);
                               if (!in) return;
                               auto& g = in->grad_buffer();
                               const int64_t oh = h * factor, ow = w * factor;
                               for (int64_t p = 0; p < nc; ++p)
                                 for (int64_t y = 0; y < oh; ++y)
                                   for (int64_t xx = 0; xx < ow; ++xx)
                                     g[(p * h + y / factor) * w + xx / factor] +=
                                         o.grad[(p * oh + y) * ow + xx];
                             });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 4, "a");
  require_rank("concat_channels", b, 4, "b");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    dim_error("concat_channels", "N/H/W mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  auto xa = a.data(), xb = b.data();
  std::vector<float> out(static_cast<size_t>(n * (ca + cb) * hw));
  for (int64_t s = 0; s < n; ++s) {
    std::copy_n(xa.begin() + s * ca * hw, ca * hw, out.begin() + s * (ca + cb) * hw);
    std::copy_n(xb.begin() + s * cb * hw, cb * hw, out.begin() + (s * (ca + cb) + ca) * hw);
  }
  return Tensor::make_result("concat_channels", {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                             [n, ca, cb, hw](TensorImpl& o) {
                               if (TensorImpl* in = grad_input(o, 0)) {
                                 auto& g = in->grad_buffer();
                                 for (int64_t s = 0; s < n; ++s)
                                   for (int64_t i = 0; i < ca * hw; ++i)
                                     g[s * ca * hw + i] += o.grad[s * (ca + cb) * hw + i];
                               }
                               if (TensorImpl* in = grad_input(o, 1)) {
                                 auto& g = in->grad_buffer();
                                 for (int64_t s = 0; s < n; ++s)
                                   for (int64_t i = 0; i < cb * hw; ++i)
                                     g[s * cb * hw + i] += o.grad[(s * (ca + cb) + ca) * hw + i];
                               }
                             });
}

Tensor spatial_mean(const Tensor& x) {
  require_rank("spatial_mean", x, 4, "x");
  const int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  auto src = x.data();
  std::vector<float> out(static_cast<size_t>(nc));
  for (int64_t p = 0; p < nc; ++p) {
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += src[p * hw + i];
    out[p] = static_cast<float>(acc / double(hw));
  }
  return Tensor::make_result("spatial_mean", {x.dim(0), x.dim(1)}, std::move(out), {x},
                             [nc, hw](TensorImpl& o) {
                               TensorImpl* in = grad_input(o, 0);
                               if (!in) return;
                               auto& g = in->grad_buffer();
                               const float inv = 1.0f / static_cast<float>(hw);
                               for (int64_t p = 0; p < nc; ++p)
                                 for (int64_t i = 0; i < hw; ++i) g[p * hw + i] += o.grad[p] * inv;
                             });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return Tensor::make_result("sum", {}, {static_cast<float>(acc)}, {x}, [](TensorImpl& o) {
    if (TensorImpl* in = grad_input(o, 0)) {
      for (float& g : in->grad_buffer()) g += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) dim_error("mean", "empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double count = static_cast<double>(x.numel());
  return Tensor::make_result("mean", {}, {static_cast<float>(acc / count)}, {x}, [count](TensorImpl& o) {
    if (TensorImpl* in = grad_input(o, 0)) {
      const float gv = static_cast<float>(o.grad[0] / count);
      for (float& g : in->grad_buffer()) g += gv;
    }
  });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape("mse_loss", prediction, target);
  if (prediction.numel() == 0) dim_error("mse_loss", "empty tensor");
  auto p = prediction.data(), t = target.data();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = double(p[i]) - double(t[i]);
    acc += d * d;
  }
  const double count = static_cast<double>(p.size());
  return Tensor::make_result(
      "mse_loss", {}, {static_cast<float>(acc / count)}, {prediction, target}, [count](TensorImpl& o) {
        const auto& pv = o.node->inputs[0]->data;
        const auto& tv = o.node->inputs[1]->data;
        const double scale2 = 2.0 * o.grad[0] / count;
        if (TensorImpl* in = grad_input(o, 0)) {
          auto& g = in->grad_buffer();
          for (size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(scale2 * (double(pv[i]) - tv[i]));
        }
        if (TensorImpl* in = grad_input(o, 1)) {
          auto& g = in->grad_buffer();
          for (size_t i = 0; i < g.size(); ++i) g[i] -= static_cast<float>(scale2 * (double(pv[i]) - tv[i]));
        }
      });
}

Tensor timestep_embedding(std::span<const int> timesteps, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw std::invalid_argument("timestep_embedding: dim must be positive and even, got " +
                                std::to_string(dim));
  }
  const int half = dim / 2;
  const auto n = static_cast<int64_t>(timesteps.size());
  std::vector<float> out(static_cast<size_t>(n * dim));
  for (int64_t r = 0; r < n; ++r) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -2.0 * k / dim);
      const double angle = timesteps[r] * freq;
      out[r * dim + k] = static_cast<float>(std::sin(angle));
      out[r * dim + half + k] = static_cast<float>(std::cos(angle));
    }
  }
  return Tensor::from_data({n, dim}, std::move(out));
}

}  // namespace maskdiff
