#include "lucf/nn/layers.hpp"

#include <stdexcept>
#include <string>

namespace lucf::nn {

Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : leaky_relu(x, 0.01);
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel_, Rng& rng, Conv2dOptions opt, bool with_bias)
    : in_channels(in), out_channels(out), kernel(kernel_), options(opt) {
  if (in % opt.groups != 0 || out % opt.groups != 0) {
    throw std::invalid_argument("Conv2d: groups " + std::to_string(opt.groups) + " must divide " + std::to_string(in) +
                                " and " + std::to_string(out));
  }
  weight = Tensor::zeros({out, in / opt.groups, kernel, kernel});
  kaiming_normal(weight, in / opt.groups * kernel * kernel, rng);
  register_parameter("weight", weight, true);
  if (with_bias) {
    bias = Tensor::zeros({out});
    register_parameter("bias", bias, false);
  }
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels) {
    throw std::invalid_argument("Conv2d: expected [B," + std::to_string(in_channels) + ",H,W] input, got " +
                                shape_str(x.shape()));
  }
  return conv2d(x, weight, bias, options);
}

ConvTranspose2d::ConvTranspose2d(std::int64_t in, std::int64_t out, int stride_, Rng& rng)
    : in_channels(in), out_channels(out), stride(stride_) {
  weight = Tensor::zeros({in, out, stride, stride});
  kaiming_normal(weight, in, rng);
  bias = Tensor::zeros({out});
  register_parameter("weight", weight, true);
  register_parameter("bias", bias, false);
}

Tensor ConvTranspose2d::forward(const Tensor& x) const { return conv_transpose2d(x, weight, bias, stride); }

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias) : in_features(in), out_features(out) {
  weight = Tensor::zeros({out, in});
  kaiming_normal(weight, in, rng);
  register_parameter("weight", weight, true);
  if (with_bias) {
    bias = Tensor::zeros({out});
    register_parameter("bias", bias, false);
  }
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

BatchNorm2d::BatchNorm2d(std::int64_t c) : channels(c) {
  gamma = Tensor::ones({c});
  beta = Tensor::zeros({c});
  running_mean = Tensor::zeros({c});
  running_var = Tensor::ones({c});
  register_parameter("gamma", gamma, false);
  register_parameter("beta", beta, false);
  register_buffer("running_mean", running_mean);
  register_buffer("running_var", running_var);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training());
}

LayerNorm::LayerNorm(std::int64_t f) : features(f) {
  gamma = Tensor::ones({f});
  beta = Tensor::zeros({f});
  register_parameter("gamma", gamma, false);
  register_parameter("beta", beta, false);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

Norm2d::Norm2d(NormKind k, std::int64_t channels) : kind(k), bn(channels), ln(channels) {
  if (kind == NormKind::batch) {
    register_module("bn", bn);
  } else {
    register_module("ln", ln);
  }
}

Tensor Norm2d::forward(const Tensor& x) {
  if (kind == NormKind::batch) return bn.forward(x);
  return from_tokens(ln.forward(to_tokens(x)), x.shape());
}

ConvBnAct::ConvBnAct(std::int64_t in, std::int64_t out, Rng& rng, int stride)
    : conv(in, out, 3, rng, Conv2dOptions{stride, 1, 1}, false), bn(out) {
  register_module("conv", conv);
  register_module("bn", bn);
}

Tensor ConvBnAct::forward(const Tensor& x) { return leaky_relu(bn.forward(conv.forward(x)), 0.01); }

Tensor to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("to_tokens: expected NCHW, got " + shape_str(x.shape()));
  return reshape(permute(x, {0, 2, 3, 1}), {-1, x.dim(1)});
}

Tensor from_tokens(const Tensor& tokens, const Shape& nchw) {
  return permute(reshape(tokens, {nchw[0], nchw[2], nchw[3], nchw[1]}), {0, 3, 1, 2});
}

}  // namespace lucf::nn
