#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"

namespace maskdiff {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct TensorImpl;

// Backward closure of a graph node. Reads the output gradient from `out`
// and accumulates into the grad buffers of the node's inputs.
using BackwardFn = std::function<void(TensorImpl& out)>;

struct GraphNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::unique_ptr<GraphNode> node;

  // Returns the grad buffer, allocating zeros on first use.
  std::vector<float>& grad_buffer();
};

/// Dense row-major float32 tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Leaves created
/// with `requires_grad` accumulate gradients across backward() calls until
/// zero_grad(); intermediate results are immutable once produced.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor randn(Shape shape, RngStream& rng);
  static Tensor scalar(float value) { return from_data({}, {value}); }

  // Internal: wraps a freshly computed op result and records the graph edge
  // when any input requires grad.
  static Tensor make_result(std::string op, Shape shape, std::vector<float> data,
                            std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t numel() const;

  std::span<const float> data() const;
  // Mutable access is for leaves only (parameters, optimizer updates).
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  // Populates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  // Copy of the values with no graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Shapes are checked; mismatches throw
// std::invalid_argument naming the offending dimensions.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

// x: [N,C,H,W], bias: [N,C]. Adds bias[n,c] to every pixel of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// x: [N,in], weight: [out,in], bias: [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// input: [N,C,H,W], kernel: [F,C,kH,kW], bias: [F].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding);

Tensor silu(const Tensor& x);

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

Tensor upsample_nearest(const Tensor& x, int factor);

Tensor concat_channels(const Tensor& a, const Tensor& b);

// [N,C,H,W] -> [N,C], mean over the spatial axes.
Tensor spatial_mean(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// mean((a - b)^2) over all elements, accumulated in double.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// Sinusoidal embedding rows for a batch of timesteps: [N, dim].
// First half sin(t * w_k), second half cos(t * w_k), w_k = 10000^(-2k/dim).
Tensor timestep_embedding(std::span<const int> timesteps, int dim);

}  // namespace maskdiff
