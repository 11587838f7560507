#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lucf/tensor/tensor.hpp"

/// Differentiable tensor operations. Every function here is pure: it
/// allocates its result and, under grad mode, records a graph node.
namespace lucf {

// Elementwise. Operands must share a shape, or one side must hold a single
// element, which is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
/// log(max(x, floor)); the gradient is zero where the clamp is active.
Tensor log(const Tensor& x, double floor = 0.0);

// Shape manipulation. reshape shares storage; the rest copy.
Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose(const Tensor& x, int a, int b);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
/// out[i] = x.flat[indices[i]]; gradients scatter-add back.
Tensor gather(const Tensor& x, std::span<const std::int64_t> indices);

// Reductions.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
/// Global max; the gradient goes to the first maximal element.
Tensor max(const Tensor& x);
/// Inner product of equal-shape tensors, as a one-element tensor.
Tensor dot(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
/// Softmax over dim 1 of an NCHW tensor.
Tensor softmax_channel(const Tensor& x);

/// [M,K]x[K,N] or batched [B,M,K]x[B,K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N,in] * weight[out,in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Zero-padded cross-correlation. weight is [Cout, Cin/groups, kh, kw].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {}, Conv2dOptions opt = {});

/// Non-overlapping transposed convolution: kernel extent equals stride, so
/// every input pixel is spread into its own stride x stride block.
/// weight is [Cin, Cout, stride, stride].
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride);

/// Half-pixel-centre bilinear resampling. For output row i the source
/// coordinate is (i + 0.5) * H / out_h - 0.5, clamped to [0, H - 1]; the
/// upper neighbour index is clamped to H - 1. Columns likewise.
Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w);

/// Picks the top-left element of every stride x stride window of an NCHW map.
Tensor window_sample(const Tensor& input, int stride);

/// Per-channel normalization of an NCHW tensor. In training mode batch
/// statistics are used and the running buffers are updated in place
/// (running_var stores the unbiased estimate).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

/// Normalizes over the last dimension.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Multiply-accumulate tally fed by conv/linear/matmul/softmax while a
/// FlopCounterScope is alive on this thread. Used to cross-check the
/// analytic FLOP model.
class FlopCounterScope {
 public:
  FlopCounterScope();
  ~FlopCounterScope();
  FlopCounterScope(const FlopCounterScope&) = delete;
  FlopCounterScope& operator=(const FlopCounterScope&) = delete;
  std::int64_t flops() const { return flops_; }

  static void add(std::int64_t flops);

 private:
  std::int64_t flops_ = 0;
  FlopCounterScope* previous_;
};

}  // namespace lucf
