#pragma once

#include <cstdint>

#include "lucf/nn/module.hpp"
#include "lucf/tensor/ops.hpp"

namespace lucf::nn {

enum class NormKind { batch, layer };
enum class Activation { gelu, leaky_relu };

Tensor activate(const Tensor& x, Activation act);

class Conv2d : public Module {
 public:
  Conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng, Conv2dOptions opt = {}, bool bias = true);
  Tensor forward(const Tensor& x) const;

  std::int64_t in_channels, out_channels;
  int kernel;
  Conv2dOptions options;
  Tensor weight, bias;
};

/// Non-overlapping transposed convolution with kernel == stride.
class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(std::int64_t in, std::int64_t out, int stride, Rng& rng);
  Tensor forward(const Tensor& x) const;

  std::int64_t in_channels, out_channels;
  int stride;
  Tensor weight, bias;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);
  /// x is [N, in].
  Tensor forward(const Tensor& x) const;

  std::int64_t in_features, out_features;
  Tensor weight, bias;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(std::int64_t channels);
  Tensor forward(const Tensor& x);

  std::int64_t channels;
  Tensor gamma, beta, running_mean, running_var;
};

/// Normalizes the last dimension.
class LayerNorm : public Module {
 public:
  explicit LayerNorm(std::int64_t features);
  Tensor forward(const Tensor& x) const;

  std::int64_t features;
  Tensor gamma, beta;
};

/// Per-pixel normalization of an NCHW map: batch norm, or layer norm over
/// the channel vector at each site.
class Norm2d : public Module {
 public:
  Norm2d(NormKind kind, std::int64_t channels);
  Tensor forward(const Tensor& x);

  NormKind kind;
  BatchNorm2d bn;
  LayerNorm ln;
};

/// conv (no bias) -> batch norm -> LeakyReLU(0.01).
class ConvBnAct : public Module {
 public:
  ConvBnAct(std::int64_t in, std::int64_t out, Rng& rng, int stride = 1);
  Tensor forward(const Tensor& x);

  Conv2d conv;
  BatchNorm2d bn;
};

/// NCHW <-> [B*H*W, C] token layout.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, const Shape& nchw);

}  // namespace lucf::nn
