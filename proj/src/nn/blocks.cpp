#include "lucf/nn/blocks.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lucf::nn {

namespace {

void require_channels(const Tensor& x, std::int64_t channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw std::invalid_argument(std::string(who) + ": expected [B," + std::to_string(channels) + ",H,W], got " +
                                shape_str(x.shape()));
  }
}

BlockConfig with_channels(BlockConfig cfg, std::int64_t channels) {
  cfg.channels = channels;
  return cfg;
}

void zero(Tensor& t) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.mutable_data<T>()) v = T(0);
  });
}

}  // namespace

std::int64_t BlockConfig::hidden() const {
  return static_cast<std::int64_t>(std::llround(mlp_ratio * static_cast<double>(channels)));
}

void BlockConfig::validate() const {
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw std::invalid_argument("BlockConfig: channels " + std::to_string(channels) + " not divisible by heads " +
                                std::to_string(heads));
  }
  if (sample_stride < 1) throw std::invalid_argument("BlockConfig: sample stride must be >= 1");
  if (!(mlp_ratio > 0.0) || hidden() < 1) throw std::invalid_argument("BlockConfig: mlp_ratio must be positive");
}

LocalAggregation::LocalAggregation(const BlockConfig& c, Rng& rng)
    : cfg(c),
      pw1(c.channels, c.channels, 1, rng, {}, false),
      norm1(c.norm_kind, c.channels),
      dw(c.channels, c.channels, 3, rng, Conv2dOptions{1, 1, static_cast<int>(c.channels)}, false),
      norm2(c.norm_kind, c.channels),
      pw2(c.channels, c.channels, 1, rng) {
  cfg.validate();
  zero(pw2.weight);
  register_module("pw1", pw1);
  register_module("norm1", norm1);
  register_module("dw", dw);
  register_module("norm2", norm2);
  register_module("pw2", pw2);
}

Tensor LocalAggregation::forward(const Tensor& x) {
  require_channels(x, cfg.channels, "local_aggregation");
  Tensor h = activate(norm1.forward(pw1.forward(x)), cfg.activation);
  h = activate(norm2.forward(dw.forward(h)), cfg.activation);
  return add(pw2.forward(h), x);
}

ConvMlp::ConvMlp(const BlockConfig& c, Rng& rng) : cfg(c), fc1(c.channels, c.hidden(), 1, rng), fc2(c.hidden(), c.channels, 1, rng) {
  cfg.validate();
  zero(fc2.weight);
  register_module("fc1", fc1);
  register_module("fc2", fc2);
}

Tensor ConvMlp::forward(const Tensor& x) {
  require_channels(x, cfg.channels, "cmlp");
  return add(fc2.forward(activate(fc1.forward(x), cfg.activation)), x);
}

GlobalSparseAttention::GlobalSparseAttention(const BlockConfig& c, Rng& rng)
    : cfg(c), norm(c.channels), qkv(c.channels, 3 * c.channels, rng) {
  cfg.validate();
  register_module("norm", norm);
  register_module("qkv", qkv);
}

Tensor GlobalSparseAttention::forward(const Tensor& y) {
  require_channels(y, cfg.channels, "global_sparse_attention");
  const int r = cfg.sample_stride;
  if (y.dim(2) % r != 0 || y.dim(3) % r != 0) {
    throw std::invalid_argument("global_sparse_attention: sample stride " + std::to_string(r) + " does not divide " +
                                std::to_string(y.dim(2)) + "x" + std::to_string(y.dim(3)));
  }
  const Tensor s = r > 1 ? window_sample(y, r) : y;
  const std::int64_t B = s.dim(0), C = s.dim(1), h = s.dim(2), w = s.dim(3);
  const std::int64_t N = h * w, heads = cfg.heads, d = C / heads;
  last_tokens_ = N;

  Tensor packed = reshape(qkv.forward(norm.forward(to_tokens(s))), {B, h, w, 3, heads, d});
  packed = reshape(permute(packed, {3, 0, 4, 1, 2, 5}), {3, B * heads, N, d});
  auto part = [&](int i) { return reshape(slice(packed, 0, i, 1), {B * heads, N, d}); };
  const Tensor q = part(0), k = part(1), v = part(2);

  Tensor att = softmax(mul_scalar(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(d))), 2);
  last_attention_ = att.detach();
  Tensor o = reshape(matmul(att, v), {B, heads, h, w, d});
  return reshape(permute(o, {0, 1, 4, 2, 3}), {B, C, h, w});
}

TransConvSpread::TransConvSpread(const BlockConfig& c, Rng& rng) : cfg(c), up(c.channels, c.channels, c.sample_stride, rng) {
  cfg.validate();
  zero(up.weight);
  register_module("up", up);
}

Tensor TransConvSpread::forward(const Tensor& attended, const Tensor& y) {
  require_channels(y, cfg.channels, "trans_conv_spread");
  const int r = cfg.sample_stride;
  if (attended.rank() != 4 || attended.dim(0) != y.dim(0) || attended.dim(1) != y.dim(1) ||
      attended.dim(2) * r != y.dim(2) || attended.dim(3) * r != y.dim(3)) {
    throw std::invalid_argument("trans_conv_spread: attended " + shape_str(attended.shape()) + " is not " + shape_str(y.shape()) +
                                " reduced by stride " + std::to_string(r));
  }
  return add(up.forward(attended), y);
}

TokenMlp::TokenMlp(const BlockConfig& c, Rng& rng) : cfg(c), fc1(c.channels, c.hidden(), rng), fc2(c.hidden(), c.channels, rng) {
  cfg.validate();
  zero(fc2.weight);
  register_module("fc1", fc1);
  register_module("fc2", fc2);
}

Tensor TokenMlp::forward(const Tensor& z) {
  require_channels(z, cfg.channels, "mlp");
  const Tensor h = fc2.forward(activate(fc1.forward(to_tokens(z)), cfg.activation));
  return add(from_tokens(h, z.shape()), z);
}

LGBlock::LGBlock(const BlockConfig& c, Rng& rng)
    : cfg(c), local(c, rng), cmlp(c, rng), attention(c, rng), spread(c, rng), mlp(c, rng) {
  register_module("local", local);
  register_module("cmlp", cmlp);
  register_module("attention", attention);
  register_module("spread", spread);
  register_module("mlp", mlp);
}

Tensor LGBlock::forward(const Tensor& x_in) {
  const Tensor x = local.forward(x_in);
  const Tensor y = cmlp.forward(x);
  const Tensor z = spread.forward(attention.forward(y), y);
  return mlp.forward(z);
}

EncoderStage::EncoderStage(const StageSpec& s, const BlockConfig& block, Rng& rng)
    : spec(s),
      mid(s.out_channels / 2),
      conv1(s.in_channels, s.out_channels / 2, rng),
      conv2(s.out_channels / 2, s.out_channels / 2, rng),
      down(s.out_channels / 2, s.out_channels, rng, s.downsample ? 2 : 1) {
  if (s.out_channels < 2 || s.out_channels % 2 != 0) {
    throw std::invalid_argument("EncoderStage: out_channels must be even, got " + std::to_string(s.out_channels));
  }
  register_module("conv1", conv1);
  register_module("conv2", conv2);
  register_module("down", down);
  if (s.lg_enabled) {
    lg = std::make_unique<LGBlock>(with_channels(block, s.out_channels), rng);
    register_module("lg", *lg);
  }
}

EncoderOutput EncoderStage::forward(const Tensor& x) {
  require_channels(x, spec.in_channels, "encoder_stage");
  if (spec.downsample && (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)) {
    throw std::invalid_argument("encoder_stage: odd spatial extent " + shape_str(x.shape()));
  }
  EncoderOutput o;
  o.skip = conv2.forward(conv1.forward(x));
  o.out = down.forward(o.skip);
  if (lg) o.out = lg->forward(o.out);
  return o;
}

DecoderStage::DecoderStage(std::int64_t c, Rng& rng) : channels(c), conv1(c + c / 2, c / 2, rng), conv2(c / 2, c / 2, rng) {
  if (c < 2 || c % 2 != 0) throw std::invalid_argument("DecoderStage: channels must be even, got " + std::to_string(c));
  register_module("conv1", conv1);
  register_module("conv2", conv2);
}

Tensor DecoderStage::forward(const Tensor& x, const Tensor& skip) {
  require_channels(x, channels, "decoder_stage");
  if (skip.rank() != 4 || skip.dim(0) != x.dim(0) || skip.dim(1) != channels / 2 || skip.dim(2) != 2 * x.dim(2) ||
      skip.dim(3) != 2 * x.dim(3)) {
    throw std::invalid_argument("decoder_stage: skip " + shape_str(skip.shape()) + " does not match input " +
                                shape_str(x.shape()));
  }
  const Tensor up = bilinear_resize(x, 2 * x.dim(2), 2 * x.dim(3));
  return conv2.forward(conv1.forward(concat({up, skip}, 1)));
}

}  // namespace lucf::nn
